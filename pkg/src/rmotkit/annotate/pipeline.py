"""Bottom-up expression annotation driven by vision/text oracles.

Stage 1 asks a captioner to describe each ground-truth object on frames with a
red box drawn around it, then asks a verifier three yes/no questions about
the caption: on the overlay frames, on frames blurred outside the box, and on
cropped patches. A caption is kept only if all three answers are yes.

Stage 2 hands the kept captions of one video to a text writer, which proposes
group expressions (one shared attribute covering several objects) and
conjunctions (per-object phrases joined into one sentence). Each proposal is
checked by a validator that sees the raw frames and the box coordinates as
text, never overlays.

Audit log records (one JSON object per line)::

    {"stage": "caption" | "verify" | "caption_result" | "synthesize" | "validate",
     "video_id": str, "object_ids": [str, ...],
     "variant": "overlay" | "blurred" | "cropped" | "raw" | null,
     "attempt": int, "prompt": str | null, "response": str | null,
     "verdict": bool | null, "error": str | null}

``caption_result`` is not an oracle exchange; it records the accept decision
for one caption so the log alone shows which captions survived.
"""

from __future__ import annotations

import json
import logging
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..codec import format_box
from ..dataset import annotations_to_dict, dump_json
from ..geometry import Expression, VideoAnnotation, natural_key
from .imageops import blur_outside, crop_patch, render_overlay
from .oracles import OracleError, OracleUnavailable, VisionOracle

logger = logging.getLogger(__name__)

VARIANTS = ("overlay", "blurred", "cropped")
MAX_OBJECTS = 5
PROMPT_NAMES = ("caption", "verify_overlay", "verify_blurred", "verify_cropped", "synthesize", "validate")


class PipelineAborted(RuntimeError):
    """An oracle stayed unreachable after all retries; nothing further can be annotated."""


@dataclass(frozen=True)
class PipelineConfig:
    blur_sigma: float = 8.0
    overlay_color: Tuple[int, int, int] = (255, 0, 0)
    stroke_width: int = 3
    max_in_flight: int = 4
    retries: int = 2
    retry_backoff: float = 0.5
    seed: int = 0
    frames_per_query: int = 4
    synthesis_rounds: int = 2
    prompt_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.blur_sigma > 0:
            raise ValueError("blur_sigma must be positive")
        if self.stroke_width < 1:
            raise ValueError("stroke_width must be >= 1")
        if len(self.overlay_color) != 3 or not all(0 <= c <= 255 for c in self.overlay_color):
            raise ValueError("overlay_color must be three values in 0..255")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0 or self.retry_backoff < 0:
            raise ValueError("retries and retry_backoff must be non-negative")
        if self.frames_per_query < 1 or self.synthesis_rounds < 1:
            raise ValueError("frames_per_query and synthesis_rounds must be >= 1")


@dataclass
class Oracles:
    captioner: VisionOracle
    verifier: VisionOracle
    writer: VisionOracle
    validator: VisionOracle

    @classmethod
    def single(cls, oracle: VisionOracle) -> "Oracles":
        return cls(oracle, oracle, oracle, oracle)


@dataclass
class CaptionCandidate:
    video_id: str
    object_id: str
    caption: str = ""
    overlay: bool = False
    blurred: bool = False
    cropped: bool = False
    failed: bool = False

    @property
    def accepted(self) -> bool:
        return not self.failed and self.overlay and self.blurred and self.cropped


@dataclass
class ExpressionCandidate:
    video_id: str
    text: str
    object_ids: Tuple[str, ...]
    kind: str
    phrases: Tuple[str, ...] = ()
    validated: bool = False

    def __post_init__(self) -> None:
        self.object_ids = tuple(self.object_ids)
        self.phrases = tuple(self.phrases)
        if not 1 <= len(self.object_ids) <= MAX_OBJECTS:
            raise ValueError(f"expression must reference 1..{MAX_OBJECTS} objects, got {len(self.object_ids)}")
        if len(set(self.object_ids)) != len(self.object_ids):
            raise ValueError(f"repeated object ids {self.object_ids}")
        if not self.text.strip():
            raise ValueError("expression text is empty")
        if self.kind == "group":
            if len(self.phrases) != 1:
                raise ValueError("a group expression carries exactly one shared phrase")
        elif self.kind == "conjunction":
            if len(self.object_ids) < 2 or len(self.phrases) != len(self.object_ids):
                raise ValueError("a conjunction needs one phrase per object and at least two objects")
        else:
            raise ValueError(f"unknown expression kind {self.kind!r}")


# ------------------------------------------------------------------ helpers


def load_prompts(prompt_dir: Optional[str] = None) -> Dict[str, str]:
    """Prompt templates by name; files in ``prompt_dir`` override the packaged ones."""
    out = {}
    packaged = resources.files("rmotkit.annotate").joinpath("prompts")
    for name in PROMPT_NAMES:
        override = Path(prompt_dir, f"{name}.txt") if prompt_dir else None
        if override is not None and override.is_file():
            out[name] = override.read_text(encoding="utf-8")
        else:
            out[name] = packaged.joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return out


def parse_verdict(text: Optional[str]) -> Optional[bool]:
    """Leading yes/no of a reply, case-insensitive; None when neither."""
    if text is None:
        return None
    m = re.match(r"\W*(yes|no)\b", text.strip(), re.IGNORECASE)
    if m is None:
        return None
    return m.group(1).lower() == "yes"


def sample_frames(frames: Sequence[int], k: int) -> List[int]:
    """Up to ``k`` frames spread evenly over ``frames`` (sorted, first and last included)."""
    frames = sorted(frames)
    if len(frames) <= k:
        return frames
    picks = np.linspace(0, len(frames) - 1, k)
    return sorted({frames[int(round(p))] for p in picks})


def join_phrases(phrases: Sequence[str]) -> str:
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + " and " + phrases[-1]


def _record(stage: str, video_id: str, object_ids: Sequence[str], variant: Optional[str], **kw: Any) -> Dict[str, Any]:
    rec = {
        "stage": stage,
        "video_id": video_id,
        "object_ids": list(object_ids),
        "variant": variant,
        "attempt": 0,
        "prompt": None,
        "response": None,
        "verdict": None,
        "error": None,
    }
    rec.update(kw)
    return rec


@dataclass
class _Asker:
    """Runs one question with retries and appends one audit record per attempt."""

    cfg: PipelineConfig
    records: List[Dict[str, Any]] = field(default_factory=list)
    sleep: Callable[[float], None] = time.sleep

    def ask(
        self,
        oracle: VisionOracle,
        images: Sequence[np.ndarray],
        prompt: str,
        stage: str,
        video_id: str,
        object_ids: Sequence[str],
        variant: Optional[str],
        yes_no: bool = False,
    ) -> Tuple[Optional[str], Optional[str]]:
        """Return ``(response, error)``; exactly one of them is None.

        Raises PipelineAborted when the oracle is still unreachable after the
        final retry.
        """
        last_error = None
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                self.sleep(self.cfg.retry_backoff * attempt)
            try:
                response = oracle.query(images, prompt)
            except OracleError as exc:
                last_error = exc
                self.records.append(
                    _record(stage, video_id, object_ids, variant, attempt=attempt, prompt=prompt,
                            error=f"{type(exc).__name__}: {exc}")
                )
                continue
            verdict = parse_verdict(response) if yes_no else None
            self.records.append(
                _record(stage, video_id, object_ids, variant, attempt=attempt, prompt=prompt,
                        response=response, verdict=verdict)
            )
            return response, None
        if isinstance(last_error, OracleUnavailable):
            raise PipelineAborted(f"oracle unreachable during {stage} for {video_id}: {last_error}") from last_error
        logger.error("%s %s %s: giving up after %d attempts: %s", stage, video_id, list(object_ids),
                     self.cfg.retries + 1, last_error)
        return None, f"{type(last_error).__name__}: {last_error}"


FrameLoader = Callable[[VideoAnnotation, int], np.ndarray]


# ------------------------------------------------------------------ stage 1


def _variant_images(video: VideoAnnotation, object_id: str, load: FrameLoader, cfg: PipelineConfig) -> Dict[str, List[np.ndarray]]:
    obj = video.object(object_id)
    present = obj.tracklet.present()
    frames = sample_frames(list(present), cfg.frames_per_query)
    out: Dict[str, List[np.ndarray]] = {v: [] for v in VARIANTS}
    for f in frames:
        img = load(video, f)
        box = present[f]
        out["overlay"].append(render_overlay(img, box, cfg.overlay_color, cfg.stroke_width))
        out["blurred"].append(blur_outside(img, box, cfg.blur_sigma))
        try:
            out["cropped"].append(crop_patch(img, box))
        except ValueError:
            logger.warning("%s/%s frame %d: box has no pixels inside the frame, skipping crop", video.video_id, object_id, f)
    return out


def stage1_caption(
    video: VideoAnnotation,
    object_id: str,
    oracles: Oracles,
    load: FrameLoader,
    cfg: PipelineConfig = PipelineConfig(),
    prompts: Optional[Dict[str, str]] = None,
    asker: Optional[_Asker] = None,
) -> CaptionCandidate:
    """Caption one object from overlay frames, then verify it on all three variants."""
    prompts = prompts or load_prompts(cfg.prompt_dir)
    asker = asker or _Asker(cfg)
    obj = video.object(object_id)
    if not obj.tracklet.has_present():
        raise ValueError(f"{video.video_id}/{object_id} has no present box")
    images = _variant_images(video, object_id, load, cfg)
    cand = CaptionCandidate(video.video_id, object_id)
    ids = [object_id]

    response, error = asker.ask(
        oracles.captioner, images["overlay"], prompts["caption"].format(category=obj.category),
        "caption", video.video_id, ids, "overlay",
    )
    caption = " ".join((response or "").split())
    if error is not None or not caption:
        cand.failed = True
        if error is None:
            asker.records[-1]["error"] = "empty caption"
    else:
        cand.caption = caption
        for variant in VARIANTS:
            prompt = prompts[f"verify_{variant}"].format(caption=caption)
            response, error = asker.ask(
                oracles.verifier, images[variant], prompt, "verify", video.video_id, ids, variant, yes_no=True
            )
            if error is not None:
                cand.failed = True
            setattr(cand, variant, parse_verdict(response) is True)
    asker.records.append(
        _record("caption_result", video.video_id, ids, None, response=cand.caption or None, verdict=cand.accepted,
                error="failed" if cand.failed else None)
    )
    return cand


# ------------------------------------------------------------------ stage 2

_LINE_RE = re.compile(r"^\s*(group|conjunction)\s*:\s*([\d\s,]+)\|\s*(.*?)\s*$", re.IGNORECASE)


def synthesis_subset(video_id: str, n: int, seed: int, round_index: int) -> List[int]:
    """Seeded 1-based caption indices to focus on; size uniform in 2..5, capped at ``n``."""
    rng = random.Random(f"{seed}:{video_id}:{round_index}")
    lo, hi = min(2, n), min(MAX_OBJECTS, n)
    return sorted(rng.sample(range(1, n + 1), rng.randint(lo, hi)))


def parse_synthesis(text: str, captions: Sequence[CaptionCandidate]) -> List[ExpressionCandidate]:
    """Read ``group:`` / ``conjunction:`` lines; other non-blank lines are skipped with a warning."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        m = _LINE_RE.match(line)
        if m is None:
            logger.warning("synthesis line %d not understood: %r", lineno, line)
            continue
        kind = m.group(1).lower()
        try:
            idx = [int(tok) for tok in m.group(2).replace(",", " ").split()]
            if any(not 1 <= i <= len(captions) for i in idx):
                raise ValueError(f"object numbers {idx} outside 1..{len(captions)}")
            ids = tuple(captions[i - 1].object_id for i in idx)
            if kind == "group":
                phrases = (m.group(3).strip(),)
                text_out = phrases[0]
            else:
                phrases = tuple(p.strip() for p in m.group(3).split(";"))
                if any(not p for p in phrases):
                    raise ValueError("empty conjunction phrase")
                text_out = join_phrases(phrases)
            out.append(ExpressionCandidate(captions[0].video_id, text_out, ids, kind, phrases))
        except ValueError as exc:
            logger.warning("synthesis line %d skipped: %s", lineno, exc)
    return out


def stage2_synthesize(
    captions: Sequence[CaptionCandidate],
    oracles: Oracles,
    cfg: PipelineConfig = PipelineConfig(),
    round_index: int = 0,
    prompts: Optional[Dict[str, str]] = None,
    asker: Optional[_Asker] = None,
) -> List[ExpressionCandidate]:
    """One writer query over the accepted captions of a single video."""
    prompts = prompts or load_prompts(cfg.prompt_dir)
    asker = asker or _Asker(cfg)
    kept = sorted((c for c in captions if c.accepted), key=lambda c: natural_key(c.object_id))
    if not kept:
        raise ValueError("stage 2 needs at least one accepted caption")
    video_id = kept[0].video_id
    listing = "\n".join(f"{i}. {c.caption}" for i, c in enumerate(kept, 1))
    subset = synthesis_subset(video_id, len(kept), cfg.seed, round_index)
    prompt = prompts["synthesize"].format(captions=listing, subset=", ".join(map(str, subset)))
    response, error = asker.ask(oracles.writer, [], prompt, "synthesize", video_id, [c.object_id for c in kept], None)
    if error is not None or not response or not response.strip():
        return []
    return parse_synthesis(response, kept)


def stage2_validate(
    cand: ExpressionCandidate,
    video: VideoAnnotation,
    oracles: Oracles,
    load: FrameLoader,
    cfg: PipelineConfig = PipelineConfig(),
    prompts: Optional[Dict[str, str]] = None,
    asker: Optional[_Asker] = None,
) -> ExpressionCandidate:
    """Check the expression against raw frames with boxes given as text."""
    prompts = prompts or load_prompts(cfg.prompt_dir)
    asker = asker or _Asker(cfg)
    tracks = [video.object(oid).tracklet for oid in cand.object_ids]
    frames = sample_frames(sorted(set().union(*(t.present() for t in tracks))), cfg.frames_per_query)
    images = [load(video, f) for f in frames]
    lines = []
    for k, f in enumerate(frames, 1):
        parts = [f"object {j} {format_box(t.box_at(f))}" for j, t in enumerate(tracks, 1)]
        lines.append(f"Image {k}: " + ", ".join(parts))
    prompt = prompts["validate"].format(boxes="\n".join(lines), expression=cand.text)
    response, _ = asker.ask(
        oracles.validator, images, prompt, "validate", video.video_id, cand.object_ids, "raw", yes_no=True
    )
    return replace(cand, validated=parse_verdict(response) is True)


# ------------------------------------------------------------------ driver


@dataclass
class PipelineResult:
    videos: List[VideoAnnotation]
    captions: List[CaptionCandidate]
    candidates: List[ExpressionCandidate]
    records: List[Dict[str, Any]]

    def annotation_json(self) -> str:
        return dump_json(annotations_to_dict(self.videos))

    def audit_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in self.records)


def _run_ordered(pool: ThreadPoolExecutor, jobs: Sequence[Callable[[], Any]]) -> List[Any]:
    futures = [pool.submit(j) for j in jobs]
    try:
        return [f.result() for f in futures]
    except BaseException:
        for f in futures:
            f.cancel()
        raise


def run_pipeline(
    videos: Sequence[VideoAnnotation],
    load: FrameLoader,
    oracles: Oracles,
    cfg: PipelineConfig = PipelineConfig(),
    out_path: Optional[str] = None,
    audit_path: Optional[str] = None,
) -> PipelineResult:
    """Annotate every video; returns new annotations whose expressions are the validated candidates.

    Oracle calls run on ``cfg.max_in_flight`` threads. Each task keeps its
    own audit records and they are concatenated in task order, so the log
    does not depend on thread scheduling.

    Raises PipelineAborted if an oracle stays unreachable; any partial audit
    log gathered so far is still written.
    """
    prompts = load_prompts(cfg.prompt_dir)
    records: List[Dict[str, Any]] = []
    captions: List[CaptionCandidate] = []
    candidates: List[ExpressionCandidate] = []
    out_videos: List[VideoAnnotation] = []

    def flush_audit() -> None:
        if audit_path:
            Path(audit_path).write_text(
                "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records), encoding="utf-8"
            )

    def task(fn: Callable[..., Any], *args: Any) -> Callable[[], Tuple[Any, List[Dict[str, Any]]]]:
        def run():
            asker = _Asker(cfg)
            try:
                return fn(*args, asker=asker), asker.records
            except PipelineAborted as exc:
                exc.records = asker.records  # type: ignore[attr-defined]
                raise

        return run

    def gather(pool: ThreadPoolExecutor, jobs) -> List[Any]:
        try:
            results = _run_ordered(pool, jobs)
        except PipelineAborted as exc:
            records.extend(getattr(exc, "records", []))
            flush_audit()
            raise
        values = []
        for value, recs in results:
            records.extend(recs)
            values.append(value)
        return values

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        # stage 1: every object of every video
        jobs = []
        for v in videos:
            for o in sorted(v.objects, key=lambda o: natural_key(o.object_id)):
                if not o.tracklet.has_present():
                    continue
                jobs.append(task(stage1_caption, v, o.object_id, oracles, load, cfg, prompts))
        captions = gather(pool, jobs)
        by_video: Dict[str, List[CaptionCandidate]] = {v.video_id: [] for v in videos}
        for c in captions:
            by_video[c.video_id].append(c)

        # stage 2a: synthesis rounds per video with at least one accepted caption
        jobs, owners = [], []
        for v in videos:
            kept = [c for c in by_video[v.video_id] if c.accepted]
            if not kept:
                continue
            for r in range(cfg.synthesis_rounds):
                jobs.append(task(stage2_synthesize, kept, oracles, cfg, r, prompts))
                owners.append(v.video_id)
        proposals: Dict[str, List[ExpressionCandidate]] = {v.video_id: [] for v in videos}
        for vid, found in zip(owners, gather(pool, jobs)):
            seen = {(c.text, frozenset(c.object_ids)) for c in proposals[vid]}
            for c in found:
                key = (c.text, frozenset(c.object_ids))
                if key not in seen:
                    seen.add(key)
                    proposals[vid].append(c)

        # stage 2b: validation
        video_by_id = {v.video_id: v for v in videos}
        jobs = [
            task(stage2_validate, c, video_by_id[vid], oracles, load, cfg, prompts)
            for vid in proposals
            for c in proposals[vid]
        ]
        candidates = gather(pool, jobs)

    for v in videos:
        kept = [c for c in candidates if c.video_id == v.video_id and c.validated]
        expressions = [
            Expression(f"{v.video_id}_exp{n}", c.text, tuple(c.object_ids)) for n, c in enumerate(kept, 1)
        ]
        out_videos.append(replace(v, expressions=expressions))

    result = PipelineResult(out_videos, captions, candidates, records)
    if out_path:
        Path(out_path).write_text(result.annotation_json(), encoding="utf-8")
    flush_audit()
    return result
