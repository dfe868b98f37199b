"""Video-instance annotation data model and its JSON file format.

The on-disk layout mirrors the common video instance segmentation format:
top-level "videos", "categories", and "annotations" arrays, with per-frame
parallel lists "segmentations", "bboxes", and "areas" on each annotation.
A frame where an instance is absent has null in all three lists. A frame
where the instance is present with an empty mask is stored as null
segmentation and bbox with area 0. Segmentations are compressed RLE
strings on disk; polygon lists are accepted on load and rasterized.

Emission is canonical: keys sorted, compact separators, arrays in model
order, one trailing newline. Saving a loaded canonical file reproduces it
byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

import numpy as np

from .masks import BBox, Rle, bbox_of, rle_area, rle_decode, rle_encode, rle_from_string, rle_to_string

__all__ = [
    "CategoryDef",
    "Dataset",
    "DatasetError",
    "FrameLabel",
    "InstanceAnnotation",
    "SchemaError",
    "VideoMeta",
    "Violation",
    "empty_rle",
    "load_dataset",
    "save_dataset",
    "validate_dataset",
]

# how far a declared bbox may disagree with the mask's tight box
INGEST_BBOX_TOLERANCE = 1


class DatasetError(ValueError):
    """The file could not be parsed into a dataset."""


class SchemaError(DatasetError):
    """A field violates the schema; path points at the offender."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class VideoMeta:
    id: int
    length: int
    height: int
    width: int
    frame_names: tuple[str, ...]


@dataclass
class CategoryDef:
    id: int
    name: str


@dataclass
class FrameLabel:
    """Annotation of one instance on one frame it is present in."""

    segmentation: Optional[Rle] = None
    bbox: Optional[BBox] = None
    area: Optional[int] = None

    def mask(self) -> Optional[np.ndarray]:
        if self.segmentation is None:
            return None
        return rle_decode(self.segmentation)


@dataclass
class InstanceAnnotation:
    id: int
    video_id: int
    category_id: int
    frames: list[Optional[FrameLabel]] = field(default_factory=list)

    def mask_at(self, index: int) -> Optional[np.ndarray]:
        label = self.frames[index]
        if label is None:
            return None
        return label.mask()

    def box_at(self, index: int) -> Optional[BBox]:
        label = self.frames[index]
        if label is None:
            return None
        return label.bbox

    def present_frames(self) -> list[int]:
        return [i for i, f in enumerate(self.frames) if f is not None]


@dataclass
class Dataset:
    videos: list[VideoMeta] = field(default_factory=list)
    categories: list[CategoryDef] = field(default_factory=list)
    annotations: list[InstanceAnnotation] = field(default_factory=list)

    def video(self, video_id: int) -> VideoMeta:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(f"no video with id {video_id}")

    def annotations_in(self, video_id: int) -> list[InstanceAnnotation]:
        return [a for a in self.annotations if a.video_id == video_id]

    def annotation(self, video_id: int, instance_id: int) -> Optional[InstanceAnnotation]:
        for a in self.annotations:
            if a.video_id == video_id and a.id == instance_id:
                return a
        return None


@dataclass
class Violation:
    rule: str
    entity: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.entity}: {self.rule}"
        return f"{msg} ({self.detail})" if self.detail else msg


def empty_rle(height: int, width: int) -> Rle:
    return Rle(height, width, (height * width,))


def _require(obj, key, kind, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing field")
    value = obj[key]
    if kind is int:
        # bool is an int subclass; reject it, accept integral floats
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}.{key}", f"expected integer, got {value!r}")
        if isinstance(value, float):
            if value != int(value):
                raise SchemaError(f"{path}.{key}", f"expected integer, got {value!r}")
            value = int(value)
        return value
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _int_or_none(value, path):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected integer or null, got {value!r}")
    if isinstance(value, float) and value != int(value):
        raise SchemaError(path, f"expected integer or null, got {value!r}")
    return int(value)


def _parse_bbox(value, path) -> Optional[BBox]:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise SchemaError(path, f"expected [x, y, w, h], got {value!r}")
    coords = [_int_or_none(v, path) for v in value]
    if any(c is None for c in coords):
        raise SchemaError(path, "bbox coordinates may not be null")
    return BBox(*coords)


def _fill_polygon(rings: list, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill of one or more polygon rings at pixel centers."""
    out = np.zeros((height, width), dtype=bool)
    yy, xx = np.mgrid[0:height, 0:width]
    px = xx + 0.5
    py = yy + 0.5
    for ring in rings:
        vx = np.asarray(ring[0::2], dtype=float)
        vy = np.asarray(ring[1::2], dtype=float)
        n = len(vx)
        if n < 3:
            continue
        inside = np.zeros((height, width), dtype=bool)
        j = n - 1
        for i in range(n):
            x0, y0 = vx[j], vy[j]
            x1, y1 = vx[i], vy[i]
            crosses = (y1 > py) != (y0 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (px < xcross)
            j = i
        out ^= inside
    return out


def _parse_segmentation(value, video: VideoMeta, path) -> Optional[Rle]:
    if value is None:
        return None
    if isinstance(value, dict):
        if "size" not in value or "counts" not in value:
            raise SchemaError(path, "RLE object needs 'size' and 'counts'")
        size = value["size"]
        if not isinstance(size, (list, tuple)) or len(size) != 2:
            raise SchemaError(f"{path}.size", f"expected [h, w], got {size!r}")
        h, w = _int_or_none(size[0], f"{path}.size"), _int_or_none(size[1], f"{path}.size")
        counts = value["counts"]
        if isinstance(counts, str):
            try:
                return rle_from_string(counts, h, w)
            except ValueError as exc:
                raise SchemaError(f"{path}.counts", str(exc)) from exc
        if isinstance(counts, (list, tuple)):
            try:
                return Rle(h, w, tuple(int(c) for c in counts))
            except ValueError as exc:
                raise SchemaError(f"{path}.counts", str(exc)) from exc
        raise SchemaError(f"{path}.counts", "expected string or list")
    if isinstance(value, (list, tuple)):
        for i, ring in enumerate(value):
            if not isinstance(ring, (list, tuple)) or len(ring) < 6 or len(ring) % 2:
                raise SchemaError(f"{path}[{i}]", "polygon ring needs >= 3 (x, y) pairs")
        mask = _fill_polygon(list(value), video.height, video.width)
        return rle_encode(mask)
    raise SchemaError(path, f"expected RLE object, polygon list, or null, got {type(value).__name__}")


def _parse_video(obj, index) -> VideoMeta:
    path = f"videos[{index}]"
    names = _require(obj, "file_names", list, path)
    if not all(isinstance(n, str) for n in names):
        raise SchemaError(f"{path}.file_names", "expected list of strings")
    return VideoMeta(
        id=_require(obj, "id", int, path),
        length=_require(obj, "length", int, path),
        height=_require(obj, "height", int, path),
        width=_require(obj, "width", int, path),
        frame_names=tuple(names),
    )


def _parse_annotation(obj, index, videos_by_id) -> InstanceAnnotation:
    path = f"annotations[{index}]"
    ann_id = _require(obj, "id", int, path)
    video_id = _require(obj, "video_id", int, path)
    category_id = _require(obj, "category_id", int, path)
    segs = _require(obj, "segmentations", list, path)
    boxes = _require(obj, "bboxes", list, path)
    areas = _require(obj, "areas", list, path)
    video = videos_by_id.get(video_id)
    if video is None:
        raise SchemaError(f"{path}.video_id", f"annotation id {ann_id} references unknown video {video_id}")
    for name, lst in (("segmentations", segs), ("bboxes", boxes), ("areas", areas)):
        if len(lst) != video.length:
            raise SchemaError(
                f"{path}.{name}",
                f"length {len(lst)} != video length {video.length} (annotation id {ann_id})",
            )
    frames: list[Optional[FrameLabel]] = []
    for t in range(video.length):
        seg_raw = segs[t]
        was_polygon = isinstance(seg_raw, (list, tuple))
        seg = _parse_segmentation(seg_raw, video, f"{path}.segmentations[{t}]")
        bbox = _parse_bbox(boxes[t], f"{path}.bboxes[{t}]")
        area = _int_or_none(areas[t], f"{path}.areas[{t}]")
        if seg is None and bbox is None and area is None:
            frames.append(None)
            continue
        if seg is not None and (seg.height, seg.width) != (video.height, video.width):
            raise SchemaError(
                f"{path}.segmentations[{t}]",
                f"mask size {seg.height}x{seg.width} != video size {video.height}x{video.width}"
                f" (annotation id {ann_id})",
            )
        if seg is None and area == 0:
            seg = empty_rle(video.height, video.width)
        if was_polygon and area is None:
            area = rle_area(seg)
        frames.append(FrameLabel(segmentation=seg, bbox=bbox, area=area))
    return InstanceAnnotation(id=ann_id, video_id=video_id, category_id=category_id, frames=frames)


def load_dataset(source: Union[str, IO], *, validate: bool = True) -> Dataset:
    """Parse a dataset JSON file; raises SchemaError with a path on bad input."""
    if hasattr(source, "read"):
        raw = source.read()
    else:
        with open(source, "rb") as fh:
            raw = fh.read()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError("$", "top level must be an object")
    for key in ("videos", "categories", "annotations"):
        if key not in obj or not isinstance(obj[key], list):
            raise SchemaError(f"$.{key}", "missing or not a list")
    videos = [_parse_video(v, i) for i, v in enumerate(obj["videos"])]
    videos_by_id = {v.id: v for v in videos}
    categories = [
        CategoryDef(
            id=_require(c, "id", int, f"categories[{i}]"),
            name=_require(c, "name", str, f"categories[{i}]"),
        )
        for i, c in enumerate(obj["categories"])
    ]
    annotations = [_parse_annotation(a, i, videos_by_id) for i, a in enumerate(obj["annotations"])]
    ds = Dataset(videos=videos, categories=categories, annotations=annotations)
    if validate:
        violations = validate_dataset(ds)
        if violations:
            first = "; ".join(str(v) for v in violations[:5])
            raise SchemaError("$", f"{len(violations)} validation failure(s): {first}")
    return ds


def _frame_to_json(label: Optional[FrameLabel]):
    if label is None:
        return None, None, None
    seg = label.segmentation
    if seg is not None and rle_area(seg) == 0:
        seg_json = None
        area = 0
    else:
        seg_json = None if seg is None else {"counts": rle_to_string(seg), "size": [seg.height, seg.width]}
        area = label.area
    bbox_json = None if label.bbox is None else list(label.bbox)
    return seg_json, bbox_json, area


def save_dataset(dataset: Dataset, sink: Union[str, IO]) -> None:
    """Write canonical JSON: sorted keys, compact separators, model order."""
    obj = {
        "videos": [
            {
                "id": v.id,
                "length": v.length,
                "height": v.height,
                "width": v.width,
                "file_names": list(v.frame_names),
            }
            for v in dataset.videos
        ],
        "categories": [{"id": c.id, "name": c.name} for c in dataset.categories],
        "annotations": [],
    }
    for ann in dataset.annotations:
        segs, boxes, areas = [], [], []
        for label in ann.frames:
            s, b, a = _frame_to_json(label)
            segs.append(s)
            boxes.append(b)
            areas.append(a)
        obj["annotations"].append(
            {
                "id": ann.id,
                "video_id": ann.video_id,
                "category_id": ann.category_id,
                "segmentations": segs,
                "bboxes": boxes,
                "areas": areas,
            }
        )
    text = json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="ascii") as fh:
            fh.write(text)


def _check_unique(items: Iterable[int], kind: str, out: list[Violation]) -> None:
    seen = set()
    for item in items:
        if item in seen:
            out.append(Violation(f"duplicate-{kind}-id", f"{kind} {item}"))
        seen.add(item)


def validate_dataset(dataset: Dataset) -> list[Violation]:
    """Referential and bookkeeping checks; returns one Violation per finding."""
    out: list[Violation] = []
    _check_unique((v.id for v in dataset.videos), "video", out)
    _check_unique((c.id for c in dataset.categories), "category", out)
    video_ids = {v.id for v in dataset.videos}
    category_ids = {c.id for c in dataset.categories}
    seen_instances = set()
    for v in dataset.videos:
        ent = f"video {v.id}"
        if v.length < 1:
            out.append(Violation("video-length", ent, f"length {v.length} < 1"))
        if len(v.frame_names) != v.length:
            out.append(
                Violation("frame-names-length", ent, f"{len(v.frame_names)} names for length {v.length}")
            )
        if v.height < 1 or v.width < 1:
            out.append(Violation("video-size", ent, f"{v.height}x{v.width}"))
    for ann in dataset.annotations:
        ent = f"annotation {ann.id}"
        key = (ann.video_id, ann.id)
        if key in seen_instances:
            out.append(Violation("duplicate-instance-id", ent, f"video {ann.video_id}"))
        seen_instances.add(key)
        if ann.video_id not in video_ids:
            out.append(Violation("video-ref", ent, f"unknown video {ann.video_id}"))
            continue
        if ann.category_id not in category_ids:
            out.append(Violation("category-ref", ent, f"unknown category {ann.category_id}"))
        video = dataset.video(ann.video_id)
        if len(ann.frames) != video.length:
            out.append(
                Violation("frame-count", ent, f"{len(ann.frames)} frames, video length {video.length}")
            )
            continue
        for t, label in enumerate(ann.frames):
            if label is None:
                continue
            where = f"{ent} frame {t}"
            if label.segmentation is None and label.bbox is None:
                out.append(Violation("blank-entry", where, "present frame with neither mask nor bbox"))
                continue
            seg = label.segmentation
            if seg is not None:
                if (seg.height, seg.width) != (video.height, video.width):
                    out.append(
                        Violation("mask-size", where, f"{seg.height}x{seg.width} != video {video.height}x{video.width}")
                    )
                    continue
                count = rle_area(seg)
                if label.area is None or label.area != count:
                    out.append(Violation("area-mismatch", where, f"area {label.area}, mask has {count}"))
                if label.bbox is not None:
                    tight = bbox_of(rle_decode(seg))
                    if tight is not None:
                        b = label.bbox
                        tol = INGEST_BBOX_TOLERANCE
                        if (
                            tight.x < b.x - tol
                            or tight.y < b.y - tol
                            or tight.x + tight.w > b.x + b.w + tol
                            or tight.y + tight.h > b.y + b.h + tol
                        ):
                            out.append(
                                Violation("bbox-mask-mismatch", where, f"tight {tuple(tight)} vs declared {tuple(b)}")
                            )
            if label.bbox is not None and (label.bbox.w < 0 or label.bbox.h < 0):
                out.append(Violation("negative-box", where, f"{tuple(label.bbox)}"))
    return out
