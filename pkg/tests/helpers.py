"""Scenario builders shared across test modules."""

from __future__ import annotations

import random
from typing import Dict, Optional, Tuple

from rmotkit.geometry import AnnotatedObject, BBox, Expression, PredictionSet, Tracklet, VideoAnnotation

Box = Tuple[int, int, int, int]
Tracks = Dict[str, Dict[int, Box]]


def make_video(gt: Tracks, num_frames: int, video_id: str = "v", expression_id: str = "e",
               width: int = 1000, height: int = 1000) -> VideoAnnotation:
    objects = [
        AnnotatedObject(oid, "thing", Tracklet(oid, {f: BBox(*b) for f, b in sorted(boxes.items())}))
        for oid, boxes in sorted(gt.items())
    ]
    expressions = [Expression(expression_id, "all the things", tuple(sorted(gt)))]
    return VideoAnnotation(video_id, width, height, num_frames, objects, expressions)


def make_prediction(pred: Tracks, video_id: str = "v", expression_id: str = "e") -> PredictionSet:
    return PredictionSet(
        video_id,
        expression_id,
        [Tracklet(tid, {f: BBox(*b) for f, b in sorted(boxes.items())}) for tid, boxes in sorted(pred.items())],
    )


def _rand_box(rng: random.Random, lim: int = 8) -> Box:
    x1, x2 = sorted(rng.sample(range(lim + 1), 2))
    y1, y2 = sorted(rng.sample(range(lim + 1), 2))
    return (x1, y1, x2, y2)


def _jitter(rng: random.Random, b: Box, lim: int = 8) -> Box:
    for _ in range(20):
        c = [v + rng.choice((-1, 0, 0, 1)) for v in b]
        c = [min(max(v, 0), lim) for v in c]
        if c[0] < c[2] and c[1] < c[3]:
            return tuple(c)
    return b


def random_scenario(rng: random.Random, max_gt: int = 3, max_pred: int = 3, max_frames: int = 5,
                    lim: int = 8) -> Tuple[Tracks, Tracks, int]:
    """Small integer-coordinate scenario; predictions mostly follow (possibly swapped) GT objects."""
    T = rng.randint(1, max_frames)
    n_gt = rng.randint(1, max_gt)
    gt: Tracks = {}
    for k in range(n_gt):
        boxes = {t: _rand_box(rng, lim) for t in range(T) if rng.random() < 0.8}
        if not boxes:
            boxes = {rng.randrange(T): _rand_box(rng, lim)}
        gt[f"g{k + 1}"] = boxes
    pred: Tracks = {}
    for k in range(rng.randint(0, max_pred)):
        boxes = {}
        for t in range(T):
            if rng.random() < 0.25:
                continue
            present = [g for g in gt if t in gt[g]]
            if present and rng.random() < 0.8:
                src = gt[rng.choice(present)][t]
                boxes[t] = src if rng.random() < 0.4 else _jitter(rng, src, lim)
            else:
                boxes[t] = _rand_box(rng, lim)
        if boxes:
            pred[f"p{k + 1}"] = boxes
    return gt, pred, T


def swap_fixture() -> Tuple[Tracks, Tracks, int]:
    """One GT object over 4 frames; prediction id a on frames 1-2, id b on frames 3-4, IoU 1."""
    box = (10, 10, 50, 50)
    gt = {"obj": {t: box for t in range(4)}}
    pred = {"a": {0: box, 1: box}, "b": {2: box, 3: box}}
    return gt, pred, 4


def boxes_of(t: Optional[Tracklet]) -> Dict[int, Tuple[float, ...]]:
    return {} if t is None else {f: tuple(b.to_list()) for f, b in t.present().items()}


def metric_mismatches(gt: Tracks, pred: Tracks, T: int, tol: float = 1e-9):
    """Compare every reported metric against the brute-force oracles; returns a list of differences."""
    from fractions import Fraction

    from rmotkit.metrics import MetricConfig, all_pairs, evaluate

    from oracles import clear_oracle, hota_oracle, identity_oracle

    cfg = MetricConfig()
    video = make_video(gt, T)
    report = evaluate(all_pairs([video]), [make_prediction(pred)], cfg)
    alphas = [Fraction(k, 20) for k in range(1, 20)]
    c = clear_oracle(gt, pred, T, Fraction(1, 2))
    i = identity_oracle(gt, pred, T, Fraction(1, 2))
    h = hota_oracle(gt, pred, T, alphas)
    expected = {
        "hota": h["hota"], "deta": h["deta"], "assa": h["assa"], "loca": h["loca"],
        "mota": float(c["mota"]), "idsw": c["idsw"], "tp": c["tp"], "fp": c["fp"], "fn": c["fn"],
        "idf1": float(i["idf1"]), "idp": float(i["idp"]), "idr": float(i["idr"]),
    }
    got = report.to_dict()
    out = [(k, got[k], v) for k, v in expected.items() if abs(got[k] - v) > tol]
    for a, (row, ref) in enumerate(zip(report.per_alpha, h["per_alpha"])):
        for k in ("deta", "assa", "loca", "hota"):
            if abs(getattr(row, k) - float(ref[k])) > tol:
                out.append((f"{k}@{alphas[a]}", getattr(row, k), float(ref[k])))
    return out


def constant_velocity_scene(rng: random.Random, num_objects: int, num_frames: int = 30) -> Tracks:
    """Objects in separate horizontal lanes moving at constant integer velocity; boxes never overlap.

    Speed is capped at a fifth of the box width so consecutive boxes of one
    object keep IoU above 0.6.
    """
    gt: Tracks = {}
    for k in range(num_objects):
        w, h = rng.randint(30, 60), rng.randint(20, 40)
        vx = rng.randint(-(w // 5), w // 5)
        vy = rng.choice((-1, 0, 1))
        x0 = rng.randint(300, 500)
        y0 = 100 * k + 30
        gt[f"g{k + 1}"] = {t: (x0 + vx * t, y0 + vy * t, x0 + vx * t + w, y0 + vy * t + h) for t in range(num_frames)}
    return gt


def smooth_prediction(rng: random.Random, num_frames: int, max_tracks: int = 4) -> Tracks:
    """Tracklets in separate lanes with slow horizontal motion and at most one-frame gaps.

    Each tracklet spans a random sub-interval of the video; inside it a frame
    is dropped only if the previous frame was present.
    """
    tracks: Tracks = {}
    for k in range(rng.randint(1, max_tracks)):
        start = rng.randrange(num_frames)
        end = rng.randint(start + 1, num_frames)
        w, h = rng.randint(36, 60), rng.randint(20, 40)
        vx = rng.randint(-(w // 12), w // 12)
        x0, y0 = rng.randint(400, 600), 100 * k + 20
        boxes = {}
        for t in range(start, end):
            interior = start < t < end - 1
            if interior and (t - 1) in boxes and rng.random() < 0.2:
                continue
            boxes[t] = (x0 + vx * t, y0, x0 + vx * t + w, y0 + h)
        tracks[f"p{k + 1}"] = boxes
    return tracks
