"""Prompt construction and the plain-text tracking output format.

Output grammar (whitespace between tokens is free)::

    Object 1: Frame 1: [x1, y1, x2, y2], Frame 2: [], ...;
    Object 2: Frame 1: ...

Frame numbers are 1-based in text and 0-based in memory; ``[]`` is an absent
box. Anything before the first ``Object <n>:`` header (e.g. a reasoning
preamble) is ignored.

Continuation block appended to a prompt when boxes from the previous clip are
available::

    Previous boxes:
    Object 1: [x1, y1, x2, y2]
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .geometry import BBox, MaybeBox, PredictionSet, Tracklet, natural_key

PROMPT_TEMPLATE = "<video> Please locate all objects in the video based on this expression: {expression}."
CONTINUATION_HEADER = "Previous boxes:"

STRICT = "strict"
LENIENT = "lenient"

_HEADER_RE = re.compile(r"Object\s*(\d+)\s*:")
_FRAME_RE = re.compile(r"Frame\s*(\d+)\s*:\s*\[([^\[\]]*)\]")
_NUM_RE = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")
_INT_RE = re.compile(r"[-+]?\d+")
_FRAME_SEP_RE = re.compile(r"\s*,\s*")
_OBJECT_SEP_RE = re.compile(r"\s*;\s*")
_TAIL_RE = re.compile(r"\s*;?\s*")
_CONT_LINE_RE = re.compile(r"Object\s*(\d+)\s*:\s*\[([^\[\]]*)\]")


class CodecError(ValueError):
    """Raised for unparseable text; ``line`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line
        self.message = message


@dataclass
class PromptSpec:
    expression_text: str
    continuation_boxes: Optional[Dict[str, MaybeBox]] = None

    def __post_init__(self) -> None:
        if not self.expression_text or not self.expression_text.strip():
            raise ValueError("expression text is empty")


@dataclass
class ParseReport:
    prediction: PredictionSet
    warnings: List[Tuple[int, str]] = field(default_factory=list)


def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def format_box(b: MaybeBox) -> str:
    if b is None:
        return "[]"
    return "[" + ", ".join(str(_round_half_away(v)) for v in b.to_list()) + "]"


def build_prompt(spec: PromptSpec) -> str:
    """Render the tracking prompt, with a continuation block when boxes are supplied."""
    expression = spec.expression_text.strip()
    if not expression:
        raise ValueError("expression text is empty")
    prompt = PROMPT_TEMPLATE.format(expression=expression)
    if spec.continuation_boxes:
        lines = [CONTINUATION_HEADER]
        ordered = sorted(spec.continuation_boxes.items(), key=lambda kv: natural_key(kv[0]))
        for i, (_, box) in enumerate(ordered, 1):
            lines.append(f"Object {i}: {format_box(box)}")
        prompt = prompt + "\n" + "\n".join(lines)
    return prompt


def parse_continuation(text: str) -> Dict[str, MaybeBox]:
    """Read a continuation block back into ``obj{i}`` -> box."""
    pos = text.find(CONTINUATION_HEADER)
    if pos < 0:
        return {}
    out: Dict[str, MaybeBox] = {}
    for i, m in enumerate(_CONT_LINE_RE.finditer(text, pos + len(CONTINUATION_HEADER)), 1):
        box, _ = _parse_box_body(m.group(2))
        out[f"obj{i}"] = box
    return out


def serialize_prediction(p: PredictionSet, num_frames: int) -> str:
    """Render ``p`` covering frames ``0..num_frames-1``; objects ordered by track id."""
    chunks = []
    for i, t in enumerate(p.sorted_tracklets(), 1):
        bad = [f for f in t.boxes if f >= num_frames]
        if bad:
            raise ValueError(f"track {t.track_id!r} has frames {bad} >= num_frames {num_frames}")
        frames = ", ".join(f"Frame {f + 1}: {format_box(t.box_at(f))}" for f in range(num_frames))
        chunks.append(f"Object {i}: {frames}")
    return ";\n".join(chunks)


def _parse_box_body(body: str) -> Tuple[MaybeBox, Optional[str]]:
    """Return (box, problem). ``problem`` is None for a strictly valid box."""
    if not body.strip():
        return None, None
    tokens = [t.strip() for t in body.split(",")]
    if len(tokens) != 4 or not all(_NUM_RE.fullmatch(t) for t in tokens):
        return None, f"malformed box [{body}]"
    values = [float(t) for t in tokens]
    if not all(math.isfinite(v) for v in values):
        return None, f"non-finite coordinate in [{body}]"
    problem = None
    if not all(_INT_RE.fullmatch(t) for t in tokens):
        problem = f"non-integer coordinates in [{body}]"
    x1, y1, x2, y2 = values
    if x1 > x2 or y1 > y2:
        problem = f"inverted box [{body}]"
        x1, x2 = min(x1, x2), max(x1, x2)
        y1, y2 = min(y1, y2), max(y1, y2)
    return BBox(x1, y1, x2, y2), problem


class _Issues:
    def __init__(self, text: str, mode: str):
        self.text = text
        self.strict = mode == STRICT
        self.items: List[Tuple[int, str]] = []

    def line(self, pos: int) -> int:
        return self.text.count("\n", 0, pos) + 1

    def __call__(self, pos: int, message: str) -> None:
        line = self.line(pos)
        if self.strict:
            raise CodecError(message, line)
        self.items.append((line, message))


def parse_prediction(
    text: str,
    num_frames: int,
    mode: str = LENIENT,
    video_id: str = "",
    expression_id: str = "",
) -> ParseReport:
    """Parse model output text into a ``PredictionSet``.

    Lenient mode recovers from recoverable irregularities and records one
    warning each; strict mode raises ``CodecError`` on the first one. Both
    modes raise when non-blank text has no ``Object`` header. Blank text is
    the serialization of an empty prediction and parses to one cleanly.
    """
    if mode not in (STRICT, LENIENT):
        raise ValueError(f"unknown parse mode {mode!r}")
    if num_frames < 0:
        raise ValueError("num_frames must be non-negative")
    if not text.strip():
        return ParseReport(PredictionSet(video_id, expression_id, []), [])
    issues = _Issues(text, mode)
    headers = list(_HEADER_RE.finditer(text))
    if not headers:
        raise CodecError("no 'Object <n>:' header found")

    tracklets: List[Tracklet] = []
    for k, header in enumerate(headers):
        index = k + 1
        if int(header.group(1)) != index:
            issues(header.start(), f"object numbered {header.group(1)} at position {index}")
        start = header.end()
        end = headers[k + 1].start() if k + 1 < len(headers) else len(text)
        last = k + 1 == len(headers)

        boxes: Dict[int, MaybeBox] = {}
        seen: List[int] = []
        cursor = start
        reordered = False
        for n, fm in enumerate(_FRAME_RE.finditer(text, start, end)):
            gap = text[cursor:fm.start()]
            if n == 0 or not _FRAME_SEP_RE.fullmatch(gap):
                if gap.strip():
                    issues(cursor, f"unexpected text {gap.strip()[:40]!r}")
                elif n > 0:
                    issues(cursor, "missing ',' between frames")
            cursor = fm.end()

            number = int(fm.group(1))
            box, problem = _parse_box_body(fm.group(2))
            if problem:
                issues(fm.start(), problem)
            if number < 1 or number > num_frames:
                issues(fm.start(), f"frame {number} outside 1..{num_frames}, dropped")
                continue
            if number - 1 in boxes:
                issues(fm.start(), f"duplicate frame {number}, keeping last")
            elif seen and number < seen[-1] and not reordered:
                reordered = True
                issues(fm.start(), "frames out of order, re-sorted")
            seen.append(number)
            boxes[number - 1] = box

        tail = text[cursor:end]
        if last:
            if not _TAIL_RE.fullmatch(tail):
                issues(cursor, f"unexpected trailing text {tail.strip()[:40]!r}")
        elif not _OBJECT_SEP_RE.fullmatch(tail):
            if tail.strip():
                issues(cursor, f"unexpected text {tail.strip()[:40]!r}")
            else:
                issues(cursor, "missing ';' between objects")

        missing = [f for f in range(num_frames) if f not in boxes]
        if missing and boxes:
            issues(header.start(), f"object {index}: {len(missing)} frame(s) missing, treated as absent")
        ordered = {f: boxes[f] for f in sorted(boxes)}
        if not any(b is not None for b in ordered.values()):
            issues(header.start(), f"object {index} has no present box, dropped")
            continue
        tracklets.append(Tracklet(f"obj{index}", ordered))

    return ParseReport(PredictionSet(video_id, expression_id, tracklets), issues.items)
