import json
import math
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0, make_frame
from dataengine.core import BoundingBox, DatasetManifest
from dataengine.errors import DuplicateFrameId, ParseError, SourceUnreachable, UnknownLabel
from dataengine.ingest import (
    AcquisitionFilter,
    convert_box,
    filter_by_time,
    list_remote_objects,
    load_coco_results,
    load_coco_sidecar,
    load_detections,
    load_manifest,
    manifest_lines,
    save_manifest,
)


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return path


def frame_rec(fid, ts="2024-05-01T12:00:00Z", gt=None, w=1000, h=1000):
    return {"frame_id": fid, "source_id": "cam", "timestamp": ts, "width": w, "height": h, "tags": [], "ground_truth": gt}


HEADER = {"name": "m", "class_set": ["person"], "provenance": "x"}


def test_load_manifest_preserves_order(tmp_path):
    p = write_lines(tmp_path / "m.jsonl", [HEADER, frame_rec("c"), frame_rec("a"), frame_rec("b")])
    m = load_manifest(p)
    assert m.frame_ids == ["c", "a", "b"]
    assert m.class_set == ("person",)


def test_load_manifest_duplicate(tmp_path):
    p = write_lines(tmp_path / "m.jsonl", [HEADER, frame_rec("a"), frame_rec("a")])
    with pytest.raises(DuplicateFrameId):
        load_manifest(p)


def test_load_manifest_unknown_label(tmp_path):
    gt = [{"label": "dog", "box": [0, 0, 5, 5]}]
    p = write_lines(tmp_path / "m.jsonl", [HEADER, frame_rec("a", gt=gt)])
    with pytest.raises(UnknownLabel):
        load_manifest(p)


@pytest.mark.parametrize("content", ["", "not json\n", '{"name": "x"}\n', '[1,2]\n'])
def test_load_manifest_parse_errors(tmp_path, content):
    p = tmp_path / "m.jsonl"
    p.write_text(content)
    with pytest.raises(ParseError):
        load_manifest(p)


def test_ground_truth_is_clamped(tmp_path):
    gt = [{"label": "person", "box": [-10, 990, 30, 1010]}]
    m = load_manifest(write_lines(tmp_path / "m.jsonl", [HEADER, frame_rec("a", gt=gt)]))
    assert m.frames[0].ground_truth[0].box == BoundingBox(0, 990, 30, 1000)


def test_manifest_round_trip_byte_identical(tmp_path, small_manifest):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_manifest(small_manifest, p1)
    save_manifest(load_manifest(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert load_manifest(p1) == small_manifest


def test_unlabeled_and_empty_frames_survive_round_trip(tmp_path):
    m = DatasetManifest("u", (make_frame(0), make_frame(1, gt=[])), ("person",))
    save_manifest(m, tmp_path / "u.jsonl")
    back = load_manifest(tmp_path / "u.jsonl")
    assert back.frames[0].ground_truth is None
    assert back.frames[1].ground_truth == ()


def det_rec(fid, conf=0.9, box=(10, 10, 20, 20), conv="xyxy", label="person", model="m1"):
    x0, y0, x1, y1 = box
    return {"frame_id": fid, "model_id": model, "label": label, "confidence": conf,
            "x_min": x0, "y_min": y0, "x_max": x1, "y_max": y1, "convention": conv}


@pytest.fixture
def manifest_1000(tmp_path):
    return load_manifest(write_lines(tmp_path / "m.jsonl", [HEADER, frame_rec("F"), frame_rec("G")]))


def test_load_detections_groups_by_frame(tmp_path, manifest_1000):
    p = write_lines(tmp_path / "d.jsonl", [det_rec("F", 0.9), det_rec("F", 0.4)])
    ds = load_detections(p, manifest_1000)
    assert list(ds.by_frame) == ["F"]
    assert [d.confidence for d in ds["F"]] == [0.9, 0.4]


def test_load_detections_orphans_counted(tmp_path, manifest_1000):
    p = write_lines(tmp_path / "d.jsonl", [det_rec("F"), det_rec("nope")])
    ds = load_detections(p, manifest_1000)
    assert ds.orphaned == 1
    assert ds.total == 1


def test_load_detections_normalized(tmp_path, manifest_1000):
    p = write_lines(tmp_path / "d.jsonl", [det_rec("F", box=(0.1, 0.1, 0.2, 0.2), conv="xyxyn")])
    (d,) = load_detections(p, manifest_1000)["F"]
    # 0.1 * 1000 = 100, 0.2 * 1000 = 200
    assert d.box == BoundingBox(100, 100, 200, 200)


def test_load_detections_degenerate_dropped(tmp_path, manifest_1000):
    p = write_lines(tmp_path / "d.jsonl", [det_rec("F", box=(1200, 1200, 1300, 1300)), det_rec("F")])
    ds = load_detections(p, manifest_1000)
    assert ds.degenerate == 1
    assert ds.total == 1


def test_load_detections_missing_model_id_uses_default(tmp_path, manifest_1000):
    rec = det_rec("F")
    del rec["model_id"]
    p = write_lines(tmp_path / "d.jsonl", [rec])
    assert load_detections(p, manifest_1000, model_id="owl")["F"][0].model_id == "owl"
    with pytest.raises(ParseError):
        load_detections(p, manifest_1000)


@pytest.mark.parametrize(
    "conv, coords, expected",
    [
        ("xyxy", (1, 2, 3, 4), (1, 2, 3, 4)),
        ("xywh", (1, 2, 3, 4), (1, 2, 4, 6)),
        ("cxcywh", (10, 10, 4, 6), (8, 7, 12, 13)),
        ("xywhn", (0.5, 0.25, 0.1, 0.5), (100, 50, 120, 150)),
        ("cxcywhn", (0.5, 0.5, 0.5, 0.5), (50, 50, 150, 150)),
    ],
)
def test_convert_box(conv, coords, expected):
    assert convert_box(coords, conv, 200, 200) == pytest.approx(expected)


def test_coco_import(tmp_path, manifest_1000):
    results = [
        {"image_id": 7, "category_id": 1, "bbox": [10, 20, 30, 40], "score": 0.8},
        {"image_id": 8, "category_id": 1, "bbox": [10, 20, 30, 40], "score": 0.5},
    ]
    (tmp_path / "r.json").write_text(json.dumps(results))
    (tmp_path / "side.json").write_text(json.dumps({"categories": [{"id": 1, "name": "person"}], "images": {"7": "F"}}))
    cats, images = load_coco_sidecar(tmp_path / "side.json")
    ds = load_coco_results(tmp_path / "r.json", manifest_1000, "gdino", cats, images)
    (d,) = ds["F"]
    assert d.box == BoundingBox(10, 20, 40, 60)
    assert (d.label, d.model_id, d.confidence) == ("person", "gdino", 0.8)
    assert ds.orphaned == 1


def test_coco_unknown_category(tmp_path, manifest_1000):
    (tmp_path / "r.json").write_text(json.dumps([{"image_id": "F", "category_id": 3, "bbox": [0, 0, 1, 1], "score": 1}]))
    with pytest.raises(ParseError):
        load_coco_results(tmp_path / "r.json", manifest_1000, "m", {1: "person"})


def ten_frames():
    return DatasetManifest("t", tuple(make_frame(i) for i in range(10)), ())


def test_filter_stride():
    out = filter_by_time(ten_frames(), AcquisitionFilter(T0, T0 + timedelta(hours=1), 5))
    assert out.frame_ids == ["f000", "f005"]


def test_filter_range_covering_none():
    out = filter_by_time(ten_frames(), AcquisitionFilter(T0 + timedelta(days=1), T0 + timedelta(days=2)))
    assert len(out) == 0


def test_filter_identity():
    m = ten_frames()
    assert filter_by_time(m, AcquisitionFilter(T0, T0 + timedelta(seconds=9), 1)) == m


def test_filter_inclusive_bounds():
    out = filter_by_time(ten_frames(), AcquisitionFilter(T0 + timedelta(seconds=2), T0 + timedelta(seconds=4)))
    assert out.frame_ids == ["f002", "f003", "f004"]


def test_filter_rejects_bad_arguments():
    with pytest.raises(ValueError):
        AcquisitionFilter(stride=0)
    with pytest.raises(ValueError):
        AcquisitionFilter(T0 + timedelta(1), T0)


@settings(max_examples=50)
@given(st.integers(0, 9), st.integers(0, 9), st.integers(1, 7))
def test_filter_properties(lo, hi, stride):
    m = ten_frames()
    flt = AcquisitionFilter(T0 + timedelta(seconds=min(lo, hi)), T0 + timedelta(seconds=max(lo, hi)), stride)
    k = abs(hi - lo) + 1
    assert len(filter_by_time(m, flt)) == math.ceil(k / stride)
    one = AcquisitionFilter(flt.start, flt.end, 1)
    assert filter_by_time(filter_by_time(m, one), one) == filter_by_time(m, one)


def make_bucket(root, keys):
    for k in keys:
        p = root / k
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(b"")
    return root


def test_list_remote_objects_range(tmp_path):
    keys = ["cam/20240501T120000Z.jpg", "cam/20240501T130000Z.jpg", "cam/20240502T120000Z.jpg", "cam/20240503T120000Z.jpg"]
    make_bucket(tmp_path / "b", keys)
    flt = AcquisitionFilter(T0, T0 + timedelta(hours=2))
    assert list_remote_objects(str(tmp_path / "b"), flt).keys == keys[:2]


def test_list_remote_objects_empty(tmp_path):
    (tmp_path / "b").mkdir()
    assert list_remote_objects(str(tmp_path / "b"), AcquisitionFilter()).keys == []


def test_list_remote_objects_stride_and_sorting(tmp_path):
    keys = [f"20240501T12000{i}Z.png" for i in range(6)]
    listing = tmp_path / "listing.txt"
    listing.write_text("\n".join(reversed(keys)) + "\nnotimestamp.png\n")
    out = list_remote_objects(f"listing://{listing}", AcquisitionFilter(stride=3))
    assert out.keys == [keys[0], keys[3]]
    assert out.unparseable == 1


def test_list_remote_objects_custom_pattern(tmp_path):
    listing = tmp_path / "l.txt"
    listing.write_text("a_2024-05-01T12:00:00Z.jpg\nb_2024-06-01T12:00:00Z.jpg\n")
    out = list_remote_objects(str(listing), AcquisitionFilter(end=T0), r"_(?P<ts>[0-9T:\-]+Z)", None)
    assert out.keys == ["a_2024-05-01T12:00:00Z.jpg"]


def test_list_remote_objects_unreachable(tmp_path):
    with pytest.raises(SourceUnreachable):
        list_remote_objects(str(tmp_path / "missing"), AcquisitionFilter())
    with pytest.raises(SourceUnreachable):
        list_remote_objects("s3://bucket/prefix", AcquisitionFilter())


def test_manifest_lines_are_canonical(small_manifest):
    header, *frames = manifest_lines(small_manifest)
    assert json.loads(header) == {"class_set": ["person", "car"], "name": "seed", "provenance": "unit test"}
    assert frames[0].startswith('{"frame_id":"f000"')
