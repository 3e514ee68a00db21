"""Long-video protocol: cut a video into overlapping clips, then merge per-clip tracklets.

Clip predictions carry global frame indices. Clip ``k+1`` tracklets are
matched to the running global tracklets on IoU around the clip boundary and
inherit their ids when the IoU clears the threshold; the later clip's boxes
win on overlap frames.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve_max_score
from .codec import PromptSpec
from .geometry import BBox, MaybeBox, PredictionSet, Tracklet, iou, natural_key


@dataclass(frozen=True)
class ClipPlan:
    num_frames: int
    clip_length: int
    overlap: int
    ranges: Tuple[Tuple[int, int], ...]


def plan_clips(num_frames: int, clip_length: int = 64, overlap: int = 1) -> ClipPlan:
    """Half-open clip ranges with stride ``clip_length - overlap``; the last one is truncated."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    if clip_length < 1 or not 0 <= overlap < clip_length:
        raise ValueError(f"need 0 <= overlap < clip_length, got overlap={overlap} clip_length={clip_length}")
    stride = clip_length - overlap
    ranges = []
    start = 0
    while True:
        end = min(start + clip_length, num_frames)
        ranges.append((start, end))
        if end >= num_frames:
            break
        start += stride
    return ClipPlan(num_frames, clip_length, overlap, tuple(ranges))


def split_prediction(p: PredictionSet, plan: ClipPlan) -> List[PredictionSet]:
    """Restrict ``p`` to each clip; tracklets with nothing present in a clip are left out."""
    out = []
    for start, end in plan.ranges:
        parts = [t.restricted(start, end) for t in p.tracklets]
        out.append(PredictionSet(p.video_id, p.expression_id, [t for t in parts if t.has_present()]))
    return out


@dataclass(frozen=True)
class StitchConfig:
    boundary_iou_threshold: float = 0.5
    lookback: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.boundary_iou_threshold < 1.0:
            raise ValueError("boundary_iou_threshold must lie in (0, 1)")
        if self.lookback < 1:
            raise ValueError("lookback must be >= 1")


def _last_present(t: Tracklet, lo: int, hi: int) -> Optional[BBox]:
    for f in range(hi - 1, lo - 1, -1):
        b = t.boxes.get(f)
        if b is not None:
            return b
    return None


def _first_present(t: Tracklet, lo: int, hi: int) -> Optional[BBox]:
    for f in range(lo, hi):
        b = t.boxes.get(f)
        if b is not None:
            return b
    return None


@dataclass
class Stitcher:
    """Left fold over clips; ``add`` one clip at a time, ``result`` at any point."""

    plan: ClipPlan
    cfg: StitchConfig = StitchConfig()
    video_id: str = ""
    expression_id: str = ""
    tracks: Dict[str, Dict[int, MaybeBox]] = field(default_factory=dict)
    clips_added: int = 0

    def __post_init__(self) -> None:
        self._ids = itertools.count(len(self.tracks) + 1)

    def _fresh(self) -> str:
        return f"track{next(self._ids)}"

    def boundary_similarity(self, g: Tracklet, c: Tracklet, start: int, prev_end: int) -> float:
        """IoU of a global tracklet and a clip tracklet around the boundary at ``start``.

        Mean IoU over overlap frames where both are present; otherwise the last
        present global box within ``lookback`` frames before ``prev_end``
        against the first present clip box within ``lookback`` frames after
        ``start``.
        """
        shared = [f for f in range(start, prev_end) if g.boxes.get(f) is not None and c.boxes.get(f) is not None]
        if shared:
            return float(np.mean([iou(g.boxes[f], c.boxes[f]) for f in shared]))
        lb = self.cfg.lookback
        gb = _last_present(g, min(start, prev_end) - lb, prev_end)
        cb = _first_present(c, start, max(start, prev_end) + lb)
        return iou(gb, cb)

    def add(self, clip: PredictionSet) -> None:
        k = self.clips_added
        if k >= len(self.plan.ranges):
            raise ValueError(f"plan has {len(self.plan.ranges)} clips, got more")
        start, end = self.plan.ranges[k]
        for t in clip.tracklets:
            bad = [f for f in t.boxes if not start <= f < end]
            if bad:
                raise ValueError(f"clip {k}: track {t.track_id!r} has frames {bad} outside [{start}, {end})")
        if not self.video_id:
            self.video_id, self.expression_id = clip.video_id, clip.expression_id
        self.clips_added += 1
        incoming = sorted((t for t in clip.tracklets if t.has_present()), key=lambda t: natural_key(t.track_id))

        if k == 0:
            for t in incoming:
                self.tracks[self._fresh()] = dict(t.boxes)
            return

        prev_end = self.plan.ranges[k - 1][1]
        lo = min(start, prev_end) - self.cfg.lookback
        gids = [
            gid for gid in sorted(self.tracks, key=natural_key)
            if any(b is not None and lo <= f < prev_end for f, b in self.tracks[gid].items())
        ]
        assigned: Dict[int, str] = {}
        if gids and incoming:
            sim = np.array(
                [[self.boundary_similarity(Tracklet(g, self.tracks[g]), c, start, prev_end) for c in incoming] for g in gids]
            )
            for i, j in solve_max_score(sim, sim >= self.cfg.boundary_iou_threshold):
                assigned[j] = gids[i]
        for j, c in enumerate(incoming):
            gid = assigned.get(j)
            if gid is None:
                self.tracks[self._fresh()] = dict(c.boxes)
                continue
            merged = self.tracks[gid]
            for f in range(start, prev_end):
                merged.pop(f, None)
            merged.update(c.boxes)
            self.tracks[gid] = dict(sorted(merged.items()))

    def result(self) -> PredictionSet:
        tracklets = [Tracklet(gid, dict(self.tracks[gid])) for gid in sorted(self.tracks, key=natural_key)]
        return PredictionSet(self.video_id, self.expression_id, [t for t in tracklets if t.has_present()])


def stitch(clip_preds: Sequence[PredictionSet], plan: ClipPlan, cfg: StitchConfig = StitchConfig()) -> PredictionSet:
    """Merge per-clip predictions into globally consistent tracklets."""
    if len(clip_preds) != len(plan.ranges):
        raise ValueError(f"got {len(clip_preds)} clip predictions for a plan of {len(plan.ranges)} clips")
    s = Stitcher(plan, cfg)
    for clip in clip_preds:
        s.add(clip)
    return s.result()


def continuation_prompt(prev_clip: PredictionSet, plan: ClipPlan, k: int, expression: str) -> PromptSpec:
    """Prompt for clip ``k`` carrying each tracklet's last present box from clip ``k-1``."""
    if k < 1 or k >= len(plan.ranges):
        raise ValueError(f"clip index {k} outside 1..{len(plan.ranges) - 1}")
    start, end = plan.ranges[k - 1]
    boxes: Dict[str, MaybeBox] = {}
    for t in prev_clip.tracklets:
        b = _last_present(t, start, end)
        if b is not None:
            boxes[t.track_id] = b
    return PromptSpec(expression, boxes)
