"""Vision/text model backends for the annotation pipeline.

An oracle takes a list of RGB frames (possibly empty) and a text prompt and
returns text. ``HttpOracle`` talks to a chat-style JSON endpoint;
``ScriptedOracle`` answers from a rules file and is what the tests use.

HTTP request body::

    {"model": str | null,
     "messages": [{"role": "user", "content": [
         {"type": "image", "mime_type": "image/png", "data": <base64>}, ...,
         {"type": "text", "text": <prompt>}]}]}

Accepted responses: ``{"text": str}`` or ``{"choices": [{"message": {"content": str}}]}``.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np
import requests

from .imageio import png_base64

TOKEN_ENV = "RMOTKIT_ORACLE_TOKEN"


class OracleError(RuntimeError):
    pass


class OracleTimeout(OracleError):
    pass


class OracleUnavailable(OracleError):
    """The endpoint could not be reached at all."""


class VisionOracle(Protocol):
    def query(self, images: Sequence[np.ndarray], prompt: str) -> str: ...


class HttpOracle:
    def __init__(self, url: str, model: Optional[str] = None, timeout: float = 60.0, token_env: str = TOKEN_ENV):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.token_env = token_env
        self._session = requests.Session()

    def payload(self, images: Sequence[np.ndarray], prompt: str) -> Dict[str, Any]:
        content: List[Dict[str, Any]] = [
            {"type": "image", "mime_type": "image/png", "data": png_base64(img)} for img in images
        ]
        content.append({"type": "text", "text": prompt})
        return {"model": self.model, "messages": [{"role": "user", "content": content}]}

    def query(self, images: Sequence[np.ndarray], prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self._session.post(self.url, json=self.payload(images, prompt), headers=headers, timeout=self.timeout)
        except requests.Timeout as exc:
            raise OracleTimeout(f"{self.url}: timed out after {self.timeout}s") from exc
        except requests.ConnectionError as exc:
            raise OracleUnavailable(f"{self.url}: {exc}") from exc
        if resp.status_code >= 400:
            raise OracleError(f"{self.url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            if "text" in body:
                return str(body["text"])
            return str(body["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise OracleError(f"{self.url}: unexpected response body {resp.text[:200]!r}") from exc


@dataclass
class LoggedRequest:
    images: List[np.ndarray]
    prompt: str
    response: Optional[str]


_ERRORS = {"timeout": OracleTimeout, "unavailable": OracleUnavailable, "error": OracleError}


@dataclass
class ScriptedOracle:
    """Rule-driven mock.

    Script format (JSON)::

        {"rules": [
            {"contains": "...", "regex": "...", "min_images": 1,
             "response": "text with \\1 backrefs", "error": "timeout|unavailable|error",
             "times": 2}],
         "default": "yes" | {"yes_probability": 0.7}}

    The first rule whose ``contains``/``regex``/``min_images`` conditions all
    hold answers. ``times`` limits how often a rule fires. A probabilistic
    default hashes (seed, prompt, image bytes), so answers are reproducible.
    """

    rules: List[Dict[str, Any]] = field(default_factory=list)
    default: Any = "yes"
    seed: int = 0
    log: List[LoggedRequest] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self._fired = [0] * len(self.rules)
        for rule in self.rules:
            if "error" in rule and rule["error"] not in _ERRORS:
                raise ValueError(f"unknown scripted error {rule['error']!r}")
            if "regex" in rule:
                re.compile(rule["regex"])

    @classmethod
    def from_file(cls, path, seed: int = 0) -> "ScriptedOracle":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(rules=list(doc.get("rules", [])), default=doc.get("default", "yes"), seed=seed)

    def _digest(self, images: Sequence[np.ndarray], prompt: str) -> int:
        h = hashlib.sha256(f"{self.seed}\x00{prompt}".encode("utf-8"))
        for img in images:
            h.update(np.ascontiguousarray(img).tobytes())
        return int.from_bytes(h.digest()[:8], "big")

    def _answer(self, images: Sequence[np.ndarray], prompt: str) -> str:
        with self._lock:
            for k, rule in enumerate(self.rules):
                if "contains" in rule and rule["contains"] not in prompt:
                    continue
                if len(images) < rule.get("min_images", 0):
                    continue
                match = None
                if "regex" in rule:
                    match = re.search(rule["regex"], prompt)
                    if match is None:
                        continue
                if "times" in rule and self._fired[k] >= rule["times"]:
                    continue
                self._fired[k] += 1
                if "error" in rule:
                    raise _ERRORS[rule["error"]](f"scripted {rule['error']} (rule {k})")
                response = rule.get("response", "")
                return match.expand(response) if match is not None else response
        if isinstance(self.default, dict):
            p = float(self.default.get("yes_probability", 0.5))
            u = self._digest(images, prompt) / 2.0**64
            return "yes" if u < p else "no"
        return str(self.default)

    def query(self, images: Sequence[np.ndarray], prompt: str) -> str:
        copies = [np.array(img, copy=True) for img in images]
        try:
            response = self._answer(images, prompt)
        except OracleError:
            with self._lock:
                self.log.append(LoggedRequest(copies, prompt, None))
            raise
        with self._lock:
            self.log.append(LoggedRequest(copies, prompt, response))
        return response
