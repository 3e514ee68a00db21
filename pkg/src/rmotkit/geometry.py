"""Box and tracklet primitives.

A missing observation is represented by ``None`` throughout the package
(the "absent" box). Boxes are half-open real intervals ``[x1, x2) x [y1, y2)``
in pixel coordinates with the origin at the top-left corner.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in xyxy format."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box: {coords}")
        # normalise ints / numpy scalars so equality and hashing behave
        for name, v in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, float(v))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError(f"expected 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    def to_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, factor: float) -> "BBox":
        return BBox(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)


MaybeBox = Optional[BBox]


def iou(a: MaybeBox, b: MaybeBox) -> float:
    """Intersection over union; 0.0 when either box is absent or the union is empty."""
    if a is None or b is None:
        return 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def clamp_to_frame(b: MaybeBox, width: float, height: float) -> MaybeBox:
    """Clip ``b`` into ``[0, width] x [0, height]``; boxes left with zero area become absent."""
    if width <= 0 or height <= 0:
        raise ValueError(f"frame size must be positive, got {width}x{height}")
    if b is None:
        return None
    x1 = min(max(b.x1, 0.0), width)
    y1 = min(max(b.y1, 0.0), height)
    x2 = min(max(b.x2, 0.0), width)
    y2 = min(max(b.y2, 0.0), height)
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2, y2)


_DIGITS = re.compile(r"(\d+)")


def natural_key(s: str) -> Tuple:
    """Sort key that orders ``obj2`` before ``obj10``."""
    parts = _DIGITS.split(s)
    return tuple((0, int(p), p) if p.isdigit() else (1, 0, p) for p in parts)


@dataclass(eq=False)
class Tracklet:
    """One identity's boxes keyed by 0-based frame index.

    ``None`` values mark frames where the identity is explicitly absent.
    Two tracklets compare equal when they share the id and the same present
    boxes; explicit-absent and missing frames are interchangeable.
    """

    track_id: str
    boxes: Dict[int, MaybeBox] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for f in self.boxes:
            if not isinstance(f, int) or isinstance(f, bool) or f < 0:
                raise ValueError(f"tracklet {self.track_id!r}: bad frame index {f!r}")

    def present(self) -> Dict[int, BBox]:
        return {f: b for f, b in sorted(self.boxes.items()) if b is not None}

    def box_at(self, frame: int) -> MaybeBox:
        return self.boxes.get(frame)

    def frames(self) -> List[int]:
        return sorted(f for f, b in self.boxes.items() if b is not None)

    def has_present(self) -> bool:
        return any(b is not None for b in self.boxes.values())

    def restricted(self, start: int, end: int) -> "Tracklet":
        """Copy keeping only frames in ``[start, end)``."""
        return Tracklet(self.track_id, {f: b for f, b in self.boxes.items() if start <= f < end})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tracklet):
            return NotImplemented
        return self.track_id == other.track_id and self.present() == other.present()

    def __repr__(self) -> str:
        return f"Tracklet({self.track_id!r}, {len(self.present())} present boxes)"


@dataclass(frozen=True)
class AnnotatedObject:
    object_id: str
    category: str
    tracklet: Tracklet


@dataclass(frozen=True)
class Expression:
    expression_id: str
    text: str
    object_ids: Tuple[str, ...]


@dataclass
class VideoAnnotation:
    """Ground truth for one video: objects with boxes and the expressions referring to them."""

    video_id: str
    width: int
    height: int
    num_frames: int
    objects: List[AnnotatedObject] = field(default_factory=list)
    expressions: List[Expression] = field(default_factory=list)
    frame_paths: Optional[List[str]] = None

    def object(self, object_id: str) -> AnnotatedObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    def expression(self, expression_id: str) -> Expression:
        for expr in self.expressions:
            if expr.expression_id == expression_id:
                return expr
        raise KeyError(expression_id)

    def validate(self) -> None:
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"video {self.video_id!r}: duplicate object ids")
        known = set(ids)
        expr_ids = [e.expression_id for e in self.expressions]
        if len(set(expr_ids)) != len(expr_ids):
            raise ValueError(f"video {self.video_id!r}: duplicate expression ids")
        for e in self.expressions:
            missing = [o for o in e.object_ids if o not in known]
            if missing:
                raise ValueError(
                    f"video {self.video_id!r}: expression {e.expression_id!r} references unknown objects {missing}"
                )
        for o in self.objects:
            for f in o.tracklet.boxes:
                if f >= self.num_frames:
                    raise ValueError(
                        f"video {self.video_id!r}: object {o.object_id!r} has frame {f} >= num_frames {self.num_frames}"
                    )


@dataclass
class PredictionSet:
    """Tracklets emitted for one (video, expression) pair."""

    video_id: str
    expression_id: str
    tracklets: List[Tracklet] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [t.track_id for t in self.tracklets]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(
                f"prediction ({self.video_id!r}, {self.expression_id!r}) has duplicate track ids {dup}"
            )

    @property
    def key(self) -> Tuple[str, str]:
        return (self.video_id, self.expression_id)

    def sorted_tracklets(self) -> List[Tracklet]:
        return sorted(self.tracklets, key=lambda t: natural_key(t.track_id))


