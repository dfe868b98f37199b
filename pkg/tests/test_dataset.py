import io
import json

import numpy as np
import pytest

from maskpipe.dataset import (
    CategoryDef,
    Dataset,
    DatasetError,
    FrameLabel,
    InstanceAnnotation,
    SchemaError,
    VideoMeta,
    empty_rle,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from maskpipe.masks import BBox, bbox_of, rle_area, rle_decode, rle_encode


def make_video(vid=1, length=3, h=8, w=8):
    return VideoMeta(id=vid, length=length, height=h, width=w,
                     frame_names=tuple(f"{vid:04d}/{t:05d}.jpg" for t in range(length)))


def label_from_mask(mask):
    r = rle_encode(mask)
    return FrameLabel(segmentation=r, bbox=bbox_of(mask), area=rle_area(r))


def small_dataset():
    m0 = np.zeros((8, 8), dtype=bool)
    m0[1:4, 2:5] = True
    m1 = np.zeros((8, 8), dtype=bool)
    m1[4:7, 4:8] = True
    ann = InstanceAnnotation(
        id=1, video_id=1, category_id=1,
        frames=[label_from_mask(m0), None, label_from_mask(m1)],
    )
    ann2 = InstanceAnnotation(
        id=2, video_id=1, category_id=2,
        frames=[None, FrameLabel(segmentation=empty_rle(8, 8), bbox=None, area=0), None],
    )
    return Dataset(
        videos=[make_video()],
        categories=[CategoryDef(1, "rectangle"), CategoryDef(2, "ellipse")],
        annotations=[ann, ann2],
    )


def roundtrip(ds):
    buf = io.StringIO()
    save_dataset(ds, buf)
    return load_dataset(io.BytesIO(buf.getvalue().encode())), buf.getvalue()


def test_save_load_identity():
    ds = small_dataset()
    back, _ = roundtrip(ds)
    assert back == ds


def test_save_is_byte_stable_on_canonical_input():
    ds = small_dataset()
    _, text1 = roundtrip(ds)
    back = load_dataset(io.BytesIO(text1.encode()))
    buf = io.StringIO()
    save_dataset(back, buf)
    assert buf.getvalue() == text1


def test_absent_vs_empty_distinction_survives_roundtrip():
    ds = small_dataset()
    back, text = roundtrip(ds)
    obj = json.loads(text)
    ann2 = [a for a in obj["annotations"] if a["id"] == 2][0]
    assert ann2["segmentations"] == [None, None, None]
    assert ann2["areas"] == [None, 0, None]
    got = back.annotation(1, 2)
    assert got.frames[0] is None
    assert got.frames[1] is not None
    assert rle_area(got.frames[1].segmentation) == 0


def test_validate_clean_dataset():
    assert validate_dataset(small_dataset()) == []


def test_validation_rules_fire():
    ds = small_dataset()
    ds.videos.append(make_video(vid=1))  # duplicate video id
    ds.annotations.append(InstanceAnnotation(id=1, video_id=1, category_id=1, frames=[None, None, None]))
    ds.annotations.append(InstanceAnnotation(id=9, video_id=77, category_id=1, frames=[]))
    ds.annotations.append(InstanceAnnotation(id=10, video_id=1, category_id=55, frames=[None]))
    rules = {v.rule for v in validate_dataset(ds)}
    assert "duplicate-video-id" in rules
    assert "duplicate-instance-id" in rules
    assert "video-ref" in rules
    assert "category-ref" in rules
    assert "frame-count" in rules


def test_validation_area_and_bbox_rules():
    ds = small_dataset()
    lab = ds.annotations[0].frames[0]
    lab.area = lab.area + 5
    bad_box = FrameLabel(segmentation=lab.segmentation, bbox=BBox(6, 6, 2, 2), area=lab.area - 5)
    ds.annotations[0].frames[2] = bad_box
    rules = [v.rule for v in validate_dataset(ds)]
    assert "area-mismatch" in rules
    assert "bbox-mask-mismatch" in rules


def test_bbox_tolerance_of_one_pixel():
    m = np.zeros((8, 8), dtype=bool)
    m[2:5, 2:5] = True
    r = rle_encode(m)
    # declared box off by one on each side: tolerated
    lab = FrameLabel(segmentation=r, bbox=BBox(3, 3, 1, 1), area=rle_area(r))
    ds = Dataset(videos=[make_video(length=1)], categories=[CategoryDef(1, "c")],
                 annotations=[InstanceAnnotation(id=1, video_id=1, category_id=1, frames=[lab])])
    assert [v.rule for v in validate_dataset(ds)] == []
    lab.bbox = BBox(4, 4, 1, 1)  # two pixels off
    assert "bbox-mask-mismatch" in [v.rule for v in validate_dataset(ds)]


def test_blank_entry_rule():
    ds = small_dataset()
    ds.annotations[0].frames[1] = FrameLabel(segmentation=None, bbox=None, area=None)
    assert "blank-entry" in [v.rule for v in validate_dataset(ds)]


def test_load_rejects_malformed_json():
    with pytest.raises(DatasetError):
        load_dataset(io.BytesIO(b"{not json"))


def test_load_schema_error_names_annotation_id():
    ds = small_dataset()
    buf = io.StringIO()
    save_dataset(ds, buf)
    obj = json.loads(buf.getvalue())
    obj["annotations"][0]["segmentations"] = obj["annotations"][0]["segmentations"][:2]
    with pytest.raises(SchemaError) as err:
        load_dataset(io.BytesIO(json.dumps(obj).encode()))
    assert "annotation id 1" in str(err.value)
    assert "segmentations" in str(err.value)


def test_load_schema_error_path_for_bad_bbox():
    ds = small_dataset()
    buf = io.StringIO()
    save_dataset(ds, buf)
    obj = json.loads(buf.getvalue())
    obj["annotations"][0]["bboxes"][0] = [1, 2, 3]
    with pytest.raises(SchemaError) as err:
        load_dataset(io.BytesIO(json.dumps(obj).encode()))
    assert "bboxes[0]" in str(err.value)


def test_load_box_only_dataset():
    obj = {
        "videos": [{"id": 1, "length": 2, "height": 4, "width": 4, "file_names": ["a", "b"]}],
        "categories": [{"id": 1, "name": "thing"}],
        "annotations": [{
            "id": 1, "video_id": 1, "category_id": 1,
            "segmentations": [None, None],
            "bboxes": [[0, 0, 2, 2], None],
            "areas": [None, None],
        }],
    }
    ds = load_dataset(io.BytesIO(json.dumps(obj).encode()))
    assert ds.annotations[0].frames[0].bbox == BBox(0, 0, 2, 2)
    assert ds.annotations[0].frames[0].segmentation is None
    assert ds.annotations[0].frames[1] is None


def test_polygon_ingestion_against_shapely():
    shapely = pytest.importorskip("shapely")
    from shapely.geometry import Point, Polygon

    rng = np.random.default_rng(31)
    h = w = 16
    for _ in range(20):
        n = int(rng.integers(3, 7))
        cx, cy = rng.uniform(4, 12, 2)
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radii = rng.uniform(2.0, 5.5, n)
        xs = cx + radii * np.cos(angles)
        ys = cy + radii * np.sin(angles)
        ring = [float(v) for pair in zip(xs, ys) for v in pair]
        obj = {
            "videos": [{"id": 1, "length": 1, "height": h, "width": w, "file_names": ["f"]}],
            "categories": [{"id": 1, "name": "poly"}],
            "annotations": [{
                "id": 1, "video_id": 1, "category_id": 1,
                "segmentations": [[ring]],
                "bboxes": [None],
                "areas": [None],
            }],
        }
        ds = load_dataset(io.BytesIO(json.dumps(obj).encode()), validate=False)
        got = rle_decode(ds.annotations[0].frames[0].segmentation)
        poly = Polygon(zip(xs, ys))
        want = np.zeros((h, w), dtype=bool)
        for r in range(h):
            for c in range(w):
                want[r, c] = poly.contains(Point(c + 0.5, r + 0.5))
        assert np.array_equal(got, want)


def test_polygon_with_hole():
    shapely = pytest.importorskip("shapely")
    from shapely.geometry import Point, Polygon

    shell = [1.2, 1.3, 10.7, 1.1, 10.6, 10.8, 1.4, 10.9]
    hole = [4.1, 4.2, 7.8, 4.3, 7.7, 7.9, 4.2, 7.8]
    obj = {
        "videos": [{"id": 1, "length": 1, "height": 12, "width": 12, "file_names": ["f"]}],
        "categories": [{"id": 1, "name": "poly"}],
        "annotations": [{
            "id": 1, "video_id": 1, "category_id": 1,
            "segmentations": [[shell, hole]],
            "bboxes": [None],
            "areas": [None],
        }],
    }
    ds = load_dataset(io.BytesIO(json.dumps(obj).encode()), validate=False)
    got = rle_decode(ds.annotations[0].frames[0].segmentation)
    poly = Polygon(list(zip(shell[0::2], shell[1::2])), [list(zip(hole[0::2], hole[1::2]))])
    want = np.zeros((12, 12), dtype=bool)
    for r in range(12):
        for c in range(12):
            want[r, c] = poly.contains(Point(c + 0.5, r + 0.5))
    assert np.array_equal(got, want)


def test_polygon_area_recomputed():
    obj = {
        "videos": [{"id": 1, "length": 1, "height": 8, "width": 8, "file_names": ["f"]}],
        "categories": [{"id": 1, "name": "poly"}],
        "annotations": [{
            "id": 1, "video_id": 1, "category_id": 1,
            "segmentations": [[[0.0, 0.0, 4.0, 0.0, 4.0, 4.0, 0.0, 4.0]]],
            "bboxes": [None],
            "areas": [None],
        }],
    }
    ds = load_dataset(io.BytesIO(json.dumps(obj).encode()))
    lab = ds.annotations[0].frames[0]
    assert lab.area == rle_area(lab.segmentation) == 16


def test_load_validate_flag():
    ds = small_dataset()
    ds.annotations[0].frames[0].area += 1
    buf = io.StringIO()
    save_dataset(ds, buf)
    data = buf.getvalue().encode()
    with pytest.raises(SchemaError):
        load_dataset(io.BytesIO(data))
    loose = load_dataset(io.BytesIO(data), validate=False)
    assert "area-mismatch" in [v.rule for v in validate_dataset(loose)]
