import json
import logging

import pytest

from rmotkit.dataset import (
    STATS_COLUMNS,
    DatasetError,
    annotations_from_dict,
    annotations_to_dict,
    compute_stats,
    detections_from_dict,
    format_stats_table,
    load_annotations,
    load_predictions,
    predictions_from_dict,
    save_annotations,
    save_predictions,
)
from rmotkit.geometry import BBox, PredictionSet, Tracklet

from helpers import make_video


def minimal_doc():
    return {
        "videos": [
            {
                "video_id": "v1",
                "width": 100,
                "height": 80,
                "num_frames": 3,
                "objects": [{"object_id": "o1", "category": "dog", "boxes": {"0": [1, 2, 30, 40], "2": None}}],
                "expressions": [{"expression_id": "e1", "text": "the dog", "object_ids": ["o1"]}],
            }
        ]
    }


def test_minimal_file_loads(tmp_path):
    path = tmp_path / "a.json"
    path.write_text(json.dumps(minimal_doc()))
    [v] = load_annotations(path)
    assert v.video_id == "v1" and v.num_frames == 3
    assert v.object("o1").tracklet.box_at(0) == BBox(1, 2, 30, 40)
    assert v.object("o1").tracklet.box_at(2) is None
    assert v.expression("e1").object_ids == ("o1",)


def test_annotation_round_trip(tmp_path):
    videos = annotations_from_dict(minimal_doc())
    path = tmp_path / "b.json"
    save_annotations(videos, path)
    again = load_annotations(path)
    assert annotations_to_dict(again) == annotations_to_dict(videos)
    assert path.read_text().endswith("\n")


def test_dangling_reference_names_path():
    doc = minimal_doc()
    doc["videos"][0]["expressions"][0]["object_ids"] = ["o1", "ghost"]
    with pytest.raises(DatasetError) as exc:
        annotations_from_dict(doc)
    assert exc.value.path == "$.videos[0].expressions[0].object_ids[1]"


def test_schema_violation_names_path():
    doc = minimal_doc()
    doc["videos"][0]["width"] = "wide"
    with pytest.raises(DatasetError) as exc:
        annotations_from_dict(doc)
    assert exc.value.path == "$.videos[0].width"


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d["videos"][0]["objects"][0]["boxes"].update({"7": [0, 0, 1, 1]}),
        lambda d: d["videos"][0]["objects"][0].update(boxes={"0": None}),
        lambda d: d["videos"][0]["objects"].append(dict(d["videos"][0]["objects"][0])),
        lambda d: d["videos"][0].update(frame_paths=["a.ppm"]),
        lambda d: d["videos"][0]["objects"][0]["boxes"].update({"0": [5, 5, 1, 1]}),
    ],
    ids=["frame-beyond-length", "no-present-box", "duplicate-object", "frame-paths-length", "inverted-box"],
)
def test_invariant_violations(mutate):
    doc = minimal_doc()
    mutate(doc)
    with pytest.raises(DatasetError):
        annotations_from_dict(doc)


def test_out_of_frame_box_is_clamped_with_warning(caplog):
    doc = minimal_doc()
    doc["videos"][0]["objects"][0]["boxes"]["1"] = [90, 70, 120, 95]
    with caplog.at_level(logging.WARNING, logger="rmotkit.dataset"):
        [v] = annotations_from_dict(doc)
    assert v.object("o1").tracklet.box_at(1) == BBox(90, 70, 100, 80)
    assert any("clamped" in r.message for r in caplog.records)


def test_zero_area_box_becomes_absent_silently(caplog):
    doc = minimal_doc()
    doc["videos"][0]["objects"][0]["boxes"]["1"] = [5, 5, 5, 9]
    with caplog.at_level(logging.WARNING, logger="rmotkit.dataset"):
        [v] = annotations_from_dict(doc)
    assert v.object("o1").tracklet.box_at(1) is None
    assert not caplog.records


def test_prediction_round_trip_preserves_order(tmp_path):
    preds = [
        PredictionSet("v2", "e", [Tracklet("b", {0: BBox(0, 0, 1.5, 1)}), Tracklet("a", {1: None, 2: BBox(1, 1, 2, 2)})]),
        PredictionSet("v1", "e", []),
    ]
    path = tmp_path / "p.json"
    save_predictions(preds, path)
    again = load_predictions(path)
    assert again == preds
    assert [t.track_id for t in again[0].tracklets] == ["b", "a"]


def test_empty_prediction_list(tmp_path):
    path = tmp_path / "p.json"
    save_predictions([], path)
    assert json.loads(path.read_text()) == {"predictions": []}
    assert load_predictions(path) == []


def test_duplicate_track_ids_rejected():
    doc = {"predictions": [{"video_id": "v", "expression_id": "e", "tracklets": [
        {"track_id": "t", "boxes": {}}, {"track_id": "t", "boxes": {}}]}]}
    with pytest.raises(DatasetError):
        predictions_from_dict(doc)


def test_detections_single_and_list():
    doc = {"video_id": "v", "expression_id": "e", "frames": [
        {"frame": 2, "boxes": [[0, 0, 1, 1]]}, {"frame": 0, "boxes": [], "scores": []}]}
    [seq] = detections_from_dict(doc)
    assert [f.frame_index for f in seq.frames] == [0, 2]
    assert len(detections_from_dict([doc, doc])) == 2
    with pytest.raises(DatasetError):
        detections_from_dict({"video_id": "v", "expression_id": "e", "frames": [
            {"frame": 0, "boxes": [[0, 0, 1, 1]], "scores": [0.5, 0.5]}]})


def _stats_fixture():
    gt = {"o1": {0: (0, 0, 1, 1)}, "o2": {0: (2, 2, 3, 3)}}
    v = make_video(gt, 1)
    from rmotkit.geometry import Expression

    v.expressions = [
        Expression("e1", "red car", ("o1",)),
        Expression("e2", "the two cars", ("o1", "o2")),
        Expression("e3", "car on  the left", ("o2",)),
    ]
    return [v]


def test_stats_hand_counted():
    s = compute_stats(_stats_fixture())
    assert (s.num_expressions, s.num_words, s.num_videos, s.num_tracked_objects, s.num_categories) == (3, 9, 1, 2, 1)
    assert s.mean_expression_length == 3.0
    assert s.mean_instances_per_expression == pytest.approx(4 / 3, abs=1e-12)


def test_stats_empty():
    s = compute_stats([])
    assert s.num_expressions == 0 and s.mean_expression_length == 0.0


def test_stats_permutation_invariant():
    videos = _stats_fixture()
    videos[0].expressions.reverse()
    assert compute_stats(videos) == compute_stats(_stats_fixture())


def test_stats_table_column_order():
    header = format_stats_table(compute_stats(_stats_fixture())).splitlines()[0]
    titles = [t.strip() for t in header.split("|")]
    assert titles == [t for t, _ in STATS_COLUMNS]
    assert titles[:3] == ["# Expressions", "# Words", "# Length"]
