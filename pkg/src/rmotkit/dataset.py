"""Annotation / prediction JSON files and dataset statistics."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import jsonschema

from .geometry import (
    AnnotatedObject,
    BBox,
    Expression,
    MaybeBox,
    PredictionSet,
    Tracklet,
    VideoAnnotation,
    clamp_to_frame,
)
from .linker import FrameDetections

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

_BOX = {
    "oneOf": [
        {"type": "null"},
        {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
    ]
}
_BOXES = {
    "type": "object",
    "propertyNames": {"pattern": "^(0|[1-9][0-9]*)$"},
    "additionalProperties": _BOX,
}

ANNOTATION_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["videos"],
    "properties": {
        "videos": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["video_id", "width", "height", "num_frames", "objects", "expressions"],
                "properties": {
                    "video_id": {"type": "string"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "num_frames": {"type": "integer", "minimum": 1},
                    "frame_paths": {"type": "array", "items": {"type": "string"}},
                    "objects": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["object_id", "category", "boxes"],
                            "properties": {
                                "object_id": {"type": "string"},
                                "category": {"type": "string"},
                                "boxes": _BOXES,
                            },
                        },
                    },
                    "expressions": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["expression_id", "text", "object_ids"],
                            "properties": {
                                "expression_id": {"type": "string"},
                                "text": {"type": "string"},
                                "object_ids": {"type": "array", "items": {"type": "string"}},
                            },
                        },
                    },
                },
            },
        }
    },
}

PREDICTION_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["predictions"],
    "properties": {
        "predictions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["video_id", "expression_id", "tracklets"],
                "properties": {
                    "video_id": {"type": "string"},
                    "expression_id": {"type": "string"},
                    "tracklets": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["track_id", "boxes"],
                            "properties": {"track_id": {"type": "string"}, "boxes": _BOXES},
                        },
                    },
                },
            },
        }
    },
}


_DETECTION_DOC = {
    "type": "object",
    "required": ["video_id", "expression_id", "frames"],
    "properties": {
        "video_id": {"type": "string"},
        "expression_id": {"type": "string"},
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame", "boxes"],
                "properties": {
                    "frame": {"type": "integer", "minimum": 0},
                    "boxes": {"type": "array", "items": _BOX["oneOf"][1]},
                    "scores": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                },
            },
        },
    },
}

# A detections file holds one document or a list of them.
DETECTIONS_SCHEMA: Dict[str, Any] = {"oneOf": [_DETECTION_DOC, {"type": "array", "items": _DETECTION_DOC}]}


class DatasetError(ValueError):
    """Schema or invariant violation; ``path`` is a JSON path like ``$.videos[0].objects[2]``."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _json_path(parts: Iterable[Any]) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}" if str(p).isidentifier() else f"[{p!r}]"
    return out


def _validate(doc: Any, schema: Dict[str, Any]) -> None:
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise DatasetError(err.message, _json_path(err.absolute_path))


def _read_json(path: PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _box_from_json(value: Optional[List[float]], path: str) -> MaybeBox:
    if value is None:
        return None
    try:
        return BBox.from_list(value)
    except ValueError as exc:
        raise DatasetError(str(exc), path) from exc


def _num(v: float) -> Union[int, float]:
    return int(v) if float(v).is_integer() else float(v)


def _boxes_to_json(boxes: Dict[int, MaybeBox]) -> Dict[str, Optional[List[Union[int, float]]]]:
    return {str(f): (None if b is None else [_num(v) for v in b.to_list()]) for f, b in sorted(boxes.items())}


def annotations_from_dict(doc: Any) -> List[VideoAnnotation]:
    """Validate a parsed annotation document and build ``VideoAnnotation`` objects.

    Boxes are clamped to the frame (logged when that changes them); boxes of
    zero area become absent.
    """
    _validate(doc, ANNOTATION_SCHEMA)
    videos: List[VideoAnnotation] = []
    seen_videos = set()
    for vi, v in enumerate(doc["videos"]):
        vpath = f"$.videos[{vi}]"
        if v["video_id"] in seen_videos:
            raise DatasetError(f"duplicate video_id {v['video_id']!r}", vpath)
        seen_videos.add(v["video_id"])
        frame_paths = v.get("frame_paths")
        if frame_paths is not None and len(frame_paths) != v["num_frames"]:
            raise DatasetError(
                f"{len(frame_paths)} frame_paths for num_frames {v['num_frames']}", vpath + ".frame_paths"
            )
        objects: List[AnnotatedObject] = []
        object_ids = set()
        for oi, o in enumerate(v["objects"]):
            opath = f"{vpath}.objects[{oi}]"
            if o["object_id"] in object_ids:
                raise DatasetError(f"duplicate object_id {o['object_id']!r}", opath)
            object_ids.add(o["object_id"])
            boxes: Dict[int, MaybeBox] = {}
            for key, raw in o["boxes"].items():
                bpath = f"{opath}.boxes[{key!r}]"
                frame = int(key)
                if frame >= v["num_frames"]:
                    raise DatasetError(f"frame {frame} >= num_frames {v['num_frames']}", bpath)
                box = _box_from_json(raw, bpath)
                clamped = clamp_to_frame(box, v["width"], v["height"])
                if box is not None and box.area > 0 and clamped != box:
                    logger.warning("%s: box %s clamped to frame as %s", bpath, box.to_list(),
                                   None if clamped is None else clamped.to_list())
                boxes[frame] = clamped
            if not any(b is not None for b in boxes.values()):
                raise DatasetError(f"object {o['object_id']!r} has no present box", opath)
            objects.append(AnnotatedObject(o["object_id"], o["category"], Tracklet(o["object_id"], dict(sorted(boxes.items())))))
        expressions: List[Expression] = []
        expr_ids = set()
        for ei, e in enumerate(v["expressions"]):
            epath = f"{vpath}.expressions[{ei}]"
            if e["expression_id"] in expr_ids:
                raise DatasetError(f"duplicate expression_id {e['expression_id']!r}", epath)
            expr_ids.add(e["expression_id"])
            for k, ref in enumerate(e["object_ids"]):
                if ref not in object_ids:
                    raise DatasetError(f"unknown object_id {ref!r}", f"{epath}.object_ids[{k}]")
            expressions.append(Expression(e["expression_id"], e["text"], tuple(e["object_ids"])))
        videos.append(
            VideoAnnotation(
                video_id=v["video_id"],
                width=v["width"],
                height=v["height"],
                num_frames=v["num_frames"],
                objects=objects,
                expressions=expressions,
                frame_paths=list(frame_paths) if frame_paths is not None else None,
            )
        )
    return videos


def annotations_to_dict(videos: Sequence[VideoAnnotation]) -> Dict[str, Any]:
    out = []
    for v in videos:
        entry: Dict[str, Any] = {
            "video_id": v.video_id,
            "width": v.width,
            "height": v.height,
            "num_frames": v.num_frames,
        }
        if v.frame_paths is not None:
            entry["frame_paths"] = list(v.frame_paths)
        entry["objects"] = [
            {"object_id": o.object_id, "category": o.category, "boxes": _boxes_to_json(o.tracklet.boxes)}
            for o in v.objects
        ]
        entry["expressions"] = [
            {"expression_id": e.expression_id, "text": e.text, "object_ids": list(e.object_ids)}
            for e in v.expressions
        ]
        out.append(entry)
    return {"videos": out}


def load_annotations(path: PathLike) -> List[VideoAnnotation]:
    return annotations_from_dict(_read_json(path))


def dump_json(doc: Any) -> str:
    """Deterministic JSON text used for every file this package writes."""
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def save_annotations(videos: Sequence[VideoAnnotation], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_json(annotations_to_dict(videos)))


def predictions_from_dict(doc: Any) -> List[PredictionSet]:
    _validate(doc, PREDICTION_SCHEMA)
    preds: List[PredictionSet] = []
    for pi, p in enumerate(doc["predictions"]):
        ppath = f"$.predictions[{pi}]"
        tracklets = []
        track_ids = set()
        for ti, t in enumerate(p["tracklets"]):
            tpath = f"{ppath}.tracklets[{ti}]"
            if t["track_id"] in track_ids:
                raise DatasetError(f"duplicate track_id {t['track_id']!r}", tpath)
            track_ids.add(t["track_id"])
            boxes = {
                int(k): _box_from_json(raw, f"{tpath}.boxes[{k!r}]") for k, raw in t["boxes"].items()
            }
            tracklets.append(Tracklet(t["track_id"], dict(sorted(boxes.items()))))
        preds.append(PredictionSet(p["video_id"], p["expression_id"], tracklets))
    return preds


def predictions_to_dict(preds: Sequence[PredictionSet]) -> Dict[str, Any]:
    return {
        "predictions": [
            {
                "video_id": p.video_id,
                "expression_id": p.expression_id,
                "tracklets": [{"track_id": t.track_id, "boxes": _boxes_to_json(t.boxes)} for t in p.tracklets],
            }
            for p in preds
        ]
    }


def save_predictions(preds: Sequence[PredictionSet], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_json(predictions_to_dict(preds)))


def load_predictions(path: PathLike) -> List[PredictionSet]:
    return predictions_from_dict(_read_json(path))


@dataclass
class DetectionSequence:
    video_id: str
    expression_id: str
    frames: List[FrameDetections]


def detections_from_dict(doc: Any) -> List[DetectionSequence]:
    """Per-frame detections; frames are sorted and must not repeat."""
    _validate(doc, DETECTIONS_SCHEMA)
    docs = doc if isinstance(doc, list) else [doc]
    out = []
    for di, d in enumerate(docs):
        dpath = f"$[{di}]" if isinstance(doc, list) else "$"
        frames = []
        seen = set()
        for fi, fr in enumerate(d["frames"]):
            fpath = f"{dpath}.frames[{fi}]"
            if fr["frame"] in seen:
                raise DatasetError(f"frame {fr['frame']} listed twice", fpath)
            seen.add(fr["frame"])
            try:
                boxes = [BBox.from_list(b) for b in fr["boxes"]]
                frames.append(FrameDetections(fr["frame"], boxes, fr.get("scores")))
            except ValueError as exc:
                raise DatasetError(str(exc), fpath) from None
        frames.sort(key=lambda f: f.frame_index)
        out.append(DetectionSequence(d["video_id"], d["expression_id"], frames))
    return out


def load_detections(path: PathLike) -> List[DetectionSequence]:
    return detections_from_dict(_read_json(path))


@dataclass
class DatasetStats:
    num_expressions: int = 0
    num_words: int = 0
    mean_expression_length: float = 0.0
    num_videos: int = 0
    num_tracked_objects: int = 0
    mean_instances_per_expression: float = 0.0
    num_categories: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def compute_stats(videos: Sequence[VideoAnnotation]) -> DatasetStats:
    """Dataset-level counts. Words are whitespace-separated tokens, punctuation kept."""
    num_expressions = 0
    num_words = 0
    num_instances = 0
    categories = set()
    num_objects = 0
    for v in videos:
        num_objects += len(v.objects)
        categories.update(o.category for o in v.objects)
        for e in v.expressions:
            num_expressions += 1
            num_words += len(e.text.split())
            num_instances += len(e.object_ids)
    return DatasetStats(
        num_expressions=num_expressions,
        num_words=num_words,
        mean_expression_length=num_words / num_expressions if num_expressions else 0.0,
        num_videos=len(videos),
        num_tracked_objects=num_objects,
        mean_instances_per_expression=num_instances / num_expressions if num_expressions else 0.0,
        num_categories=len(categories),
    )


STATS_COLUMNS = [
    ("# Expressions", "num_expressions"),
    ("# Words", "num_words"),
    ("# Length", "mean_expression_length"),
    ("# Videos", "num_videos"),
    ("# Objects", "num_tracked_objects"),
    ("# Instances/Expr", "mean_instances_per_expression"),
    ("# Categories", "num_categories"),
]


def format_stats_table(stats: DatasetStats) -> str:
    cells = []
    for title, key in STATS_COLUMNS:
        value = getattr(stats, key)
        cells.append((title, f"{value:.1f}" if isinstance(value, float) else str(value)))
    widths = [max(len(t), len(c)) for t, c in cells]
    header = " | ".join(t.rjust(w) for (t, _), w in zip(cells, widths))
    row = " | ".join(c.rjust(w) for (_, c), w in zip(cells, widths))
    return header + "\n" + "-" * len(header) + "\n" + row + "\n"
