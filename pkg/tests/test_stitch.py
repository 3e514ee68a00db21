import itertools
import random

import pytest

from rmotkit.codec import build_prompt, parse_continuation
from rmotkit.geometry import BBox, PredictionSet, Tracklet
from rmotkit.metrics import all_pairs, evaluate
from rmotkit.stitch import (
    StitchConfig,
    Stitcher,
    continuation_prompt,
    plan_clips,
    split_prediction,
    stitch,
)

from helpers import make_prediction, make_video, smooth_prediction


@pytest.mark.parametrize(
    "T, L, O, expected",
    [
        (10, 4, 1, [(0, 4), (3, 7), (6, 10)]),
        (3, 4, 1, [(0, 3)]),
        (4, 4, 1, [(0, 4)]),
        (8, 4, 0, [(0, 4), (4, 8)]),
        (9, 4, 2, [(0, 4), (2, 6), (4, 8), (6, 9)]),
    ],
)
def test_plan_clips(T, L, O, expected):
    assert list(plan_clips(T, L, O).ranges) == expected


@pytest.mark.parametrize("T, L, O", [(0, 4, 1), (10, 4, 4), (10, 4, -1), (10, 0, 0)])
def test_plan_rejects_invalid(T, L, O):
    with pytest.raises(ValueError):
        plan_clips(T, L, O)


@pytest.mark.parametrize("T", range(1, 30))
@pytest.mark.parametrize("L, O", [(4, 0), (4, 1), (5, 3), (8, 2)])
def test_plan_covers_and_overlaps_exactly(T, L, O):
    ranges = plan_clips(T, L, O).ranges
    assert ranges[0][0] == 0 and ranges[-1][1] == T
    for (s0, e0), (s1, e1) in zip(ranges, ranges[1:]):
        assert e0 - s1 == O
        assert s1 > s0


def _score(original, merged, T):
    pred = PredictionSet("v", "e", merged.tracklets)
    return evaluate(all_pairs([make_video(original, T)]), [pred])


def test_boundary_absent_uses_lookback():
    # object missing exactly at the shared frame 3; still present at 2 and 4
    box = (0, 0, 10, 10)
    original = {"a": {0: box, 1: box, 2: box, 4: box, 5: box}}
    plan = plan_clips(6, 4, 1)
    merged = stitch(split_prediction(make_prediction(original), plan), plan)
    assert len(merged.tracklets) == 1


def test_disjoint_identities_get_fresh_ids():
    plan = plan_clips(8, 4, 0)
    c0 = PredictionSet("v", "e", [Tracklet("x", {f: BBox(0, 0, 10, 10) for f in range(4)})])
    c1 = PredictionSet("v", "e", [Tracklet("y", {f: BBox(50, 50, 60, 60) for f in range(4, 8)})])
    merged = stitch([c0, c1], plan)
    assert [t.track_id for t in merged.tracklets] == ["track1", "track2"]


def test_later_clip_wins_on_overlap():
    plan = plan_clips(6, 4, 2)
    c0 = PredictionSet("v", "e", [Tracklet("x", {f: BBox(0, 0, 10, 10) for f in range(4)})])
    c1 = PredictionSet("v", "e", [Tracklet("y", {f: BBox(1, 0, 11, 10) for f in range(2, 6)})])
    [t] = stitch([c0, c1], plan).tracklets
    assert t.box_at(1) == BBox(0, 0, 10, 10)
    assert t.box_at(2) == BBox(1, 0, 11, 10) and t.box_at(3) == BBox(1, 0, 11, 10)


def test_clip_count_mismatch_raises():
    plan = plan_clips(8, 4, 0)
    with pytest.raises(ValueError):
        stitch([PredictionSet("v", "e", [])], plan)


def test_clip_frames_outside_range_raise():
    plan = plan_clips(8, 4, 0)
    s = Stitcher(plan)
    with pytest.raises(ValueError):
        s.add(PredictionSet("v", "e", [Tracklet("x", {6: BBox(0, 0, 1, 1)})]))


@pytest.mark.parametrize("L, O", list(itertools.product((4, 8, 16), (0, 1, 2))))
def test_split_then_stitch_is_identity_up_to_relabeling(L, O):
    rng = random.Random(L * 10 + O)
    for _ in range(30):
        T = rng.randint(1, 50)
        original = smooth_prediction(rng, T)
        plan = plan_clips(T, L, O)
        merged = stitch(split_prediction(make_prediction(original), plan), plan)
        r = _score(original, merged, T)
        assert r.idf1 == 1.0 and r.idsw == 0
        assert len(merged.tracklets) == len(original)
        covered = sorted(f for t in merged.tracklets for f in t.frames())
        assert covered == sorted(f for b in original.values() for f in b)


def test_fold_matches_batch():
    rng = random.Random(3)
    T = 30
    plan = plan_clips(T, 8, 1)
    clips = split_prediction(make_prediction(smooth_prediction(rng, T)), plan)
    s = Stitcher(plan)
    for c in clips:
        s.add(c)
    assert s.result() == stitch(clips, plan)


def test_continuation_prompt():
    plan = plan_clips(8, 4, 1)
    prev = PredictionSet("v", "e", [
        Tracklet("a", {0: BBox(0, 0, 2, 2), 2: BBox(1, 1, 3, 3), 3: None}),
        Tracklet("b", {1: BBox(5, 5, 9, 9)}),
        Tracklet("c", {3: None}),
    ])
    spec = continuation_prompt(prev, plan, 1, "the dogs")
    assert spec.continuation_boxes == {"a": BBox(1, 1, 3, 3), "b": BBox(5, 5, 9, 9)}
    assert parse_continuation(build_prompt(spec)) == {"obj1": BBox(1, 1, 3, 3), "obj2": BBox(5, 5, 9, 9)}
    with pytest.raises(ValueError):
        continuation_prompt(prev, plan, 0, "the dogs")


def test_stitch_config_validation():
    with pytest.raises(ValueError):
        StitchConfig(boundary_iou_threshold=1.5)
    with pytest.raises(ValueError):
        StitchConfig(lookback=0)
