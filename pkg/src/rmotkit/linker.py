"""Online detection-to-track linker for grounding models that only emit per-frame boxes.

Observation-centric SORT-style association with a deterministic
constant-velocity motion model (no Kalman covariances):

* each active track is extrapolated one step per frame;
* predicted boxes are matched to detections by IoU with a Hungarian solve;
* with recovery enabled, tracks still unmatched get a second chance against
  their last *observed* box, and a track re-found after a gap re-anchors its
  velocity on that observation and back-fills the gap by interpolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .assignment import solve_max_score
from .geometry import BBox, PredictionSet, Tracklet
from .metrics import iou_matrix

VELOCITY_SMOOTHING = 0.5


@dataclass
class FrameDetections:
    frame_index: int
    boxes: List[BBox] = field(default_factory=list)
    scores: Optional[List[float]] = None

    def __post_init__(self) -> None:
        if self.scores is not None and len(self.scores) != len(self.boxes):
            raise ValueError(f"frame {self.frame_index}: {len(self.scores)} scores for {len(self.boxes)} boxes")
        if any(b is None for b in self.boxes):
            raise ValueError(f"frame {self.frame_index}: detections must be present boxes")


@dataclass
class LinkerConfig:
    iou_match_threshold: float = 0.3
    max_age: int = 10
    min_hits: int = 1
    use_observation_centric_recovery: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_match_threshold < 1.0:
            raise ValueError("iou_match_threshold must lie in (0, 1)")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")


def box_to_state(b: BBox) -> np.ndarray:
    """[cx, cy, area, aspect] for a box of positive area."""
    w, h = b.width, b.height
    return np.array([b.x1 + w / 2.0, b.y1 + h / 2.0, w * h, w / h if h > 0 else 1.0])


def state_to_box(z: np.ndarray) -> BBox:
    cx, cy, s, r = (float(v) for v in z)
    w = float(np.sqrt(max(s, 0.0) * r))
    h = s / w if w > 0 else 0.0
    return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


@dataclass
class TrackState:
    track_id: str
    state: np.ndarray  # cx, cy, area, aspect
    velocity: np.ndarray  # per-frame deltas of the same four quantities
    last_box: BBox
    last_frame: int
    age: int = 0
    hits: int = 1
    time_since_update: int = 0
    boxes: Dict[int, BBox] = field(default_factory=dict)

    @classmethod
    def start(cls, track_id: str, box: BBox, frame: int) -> "TrackState":
        return cls(track_id, box_to_state(box), np.zeros(4), box, frame, boxes={frame: box})


def _step(s: TrackState) -> np.ndarray:
    v = s.velocity.copy()
    if s.state[2] + v[2] <= 0:
        v[2] = 0.0
    if s.state[3] + v[3] <= 0:
        v[3] = 0.0
    return s.state + v


def predict_state(s: TrackState) -> BBox:
    """Box one frame ahead under constant velocity.

    An area or aspect velocity that would make the extrapolated value
    non-positive is ignored for the step.
    """
    return state_to_box(_step(s))


class Linker:
    """Stateful online linker; feed frames in increasing order with ``update``."""

    def __init__(self, cfg: LinkerConfig = LinkerConfig()):
        self.cfg = cfg
        self.active: List[TrackState] = []
        self.finished: List[TrackState] = []
        self._ids = itertools.count(1)
        self._frame: Optional[int] = None

    def _advance(self, frame: int) -> None:
        steps = 1 if self._frame is None else frame - self._frame
        for t in self.active:
            for _ in range(steps):
                t.state = _step(t)
                t.age += 1
                t.time_since_update += 1

    def _match(self, boxes: Sequence[BBox], tracks: List[TrackState], dets: List[int], use_last: bool):
        if not tracks or not dets:
            return []
        tb = np.array([(t.last_box if use_last else state_to_box(t.state)).to_list() for t in tracks])
        db = np.array([boxes[d].to_list() for d in dets])
        ious = iou_matrix(tb, db)
        pairs = solve_max_score(ious, ious >= self.cfg.iou_match_threshold)
        return [(tracks[i], dets[j]) for i, j in pairs]

    def _apply(self, t: TrackState, box: BBox, frame: int) -> None:
        z = box_to_state(box)
        gap = frame - t.last_frame
        if self.cfg.use_observation_centric_recovery:
            observed = (z - box_to_state(t.last_box)) / gap
            if gap > 1 or t.hits == 1:
                t.velocity = observed
            else:
                t.velocity = VELOCITY_SMOOTHING * t.velocity + (1 - VELOCITY_SMOOTHING) * observed
            for k in range(1, gap):
                w = k / gap
                a, b = t.last_box, box
                t.boxes[t.last_frame + k] = BBox(
                    a.x1 + w * (b.x1 - a.x1), a.y1 + w * (b.y1 - a.y1),
                    a.x2 + w * (b.x2 - a.x2), a.y2 + w * (b.y2 - a.y2),
                )
        else:
            # velocity from the extrapolated previous-frame state
            observed = z - (t.state - t.velocity)
            if t.hits == 1:
                t.velocity = (z - box_to_state(t.last_box)) / gap
            else:
                t.velocity = VELOCITY_SMOOTHING * t.velocity + (1 - VELOCITY_SMOOTHING) * observed
        t.state = z
        t.last_box = box
        t.last_frame = frame
        t.hits += 1
        t.time_since_update = 0
        t.boxes[frame] = box

    def update(self, det: FrameDetections) -> None:
        frame = det.frame_index
        if self._frame is not None and frame <= self._frame:
            raise ValueError(f"frames must be strictly increasing: got {frame} after {self._frame}")
        self._advance(frame)
        self._frame = frame

        boxes = list(det.boxes)
        dets = list(range(len(boxes)))
        tracks = list(self.active)
        matched = self._match(boxes, tracks, dets, use_last=False)
        if self.cfg.use_observation_centric_recovery:
            used_t = {id(t) for t, _ in matched}
            used_d = {d for _, d in matched}
            rest_t = [t for t in tracks if id(t) not in used_t]
            rest_d = [d for d in dets if d not in used_d]
            matched += self._match(boxes, rest_t, rest_d, use_last=True)

        for t, d in matched:
            self._apply(t, boxes[d], frame)
        used_d = {d for _, d in matched}
        for d in dets:
            if d not in used_d and boxes[d].area > 0:
                self.active.append(TrackState.start(f"track{next(self._ids)}", boxes[d], frame))

        alive = []
        for t in self.active:
            (alive if t.time_since_update <= self.cfg.max_age else self.finished).append(t)
        self.active = alive

    def result(self, video_id: str = "", expression_id: str = "") -> PredictionSet:
        tracks = sorted(self.finished + self.active, key=lambda t: int(t.track_id[5:]))
        kept = [t for t in tracks if t.hits >= self.cfg.min_hits]
        return PredictionSet(
            video_id,
            expression_id,
            [Tracklet(t.track_id, dict(sorted(t.boxes.items()))) for t in kept],
        )


def link(
    detections: Sequence[FrameDetections],
    cfg: LinkerConfig = LinkerConfig(),
    video_id: str = "",
    expression_id: str = "",
) -> PredictionSet:
    """Link per-frame detections into tracklets."""
    linker = Linker(cfg)
    for det in detections:
        linker.update(det)
    return linker.result(video_id, expression_id)
