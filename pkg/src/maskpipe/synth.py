"""Deterministic synthetic video benchmark generator.

Scenes are simple moving shapes (rectangles and ellipses) rendered as
ground-truth masks plus LAB color frames. A corruption pass then derives
noisy pseudo-mask collections that play the roles of the three real
sources: a promptable segmenter (accurate boundaries, occasional gross
errors), a box-supervised detector (moderate noise, some instances
missing entirely), and a tracker (noise growing with distance from its
seed frame).

Every random draw comes from a generator keyed by
(seed, stream, video, instance, frame), so outputs are reproducible and
independent of iteration order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import IO, Optional, Union

import numpy as np
from scipy import ndimage

from .dataset import CategoryDef, Dataset, FrameLabel, InstanceAnnotation, VideoMeta, empty_rle
from .masks import bbox_of, rle_area, rle_decode, rle_encode

__all__ = [
    "CorruptionSpec",
    "SceneSpec",
    "SourceProfiles",
    "corrupt",
    "default_profiles",
    "gen_video",
    "load_frames",
    "make_three_sources",
    "save_frames",
    "scene_spec_from_json",
    "scene_spec_to_json",
]

# rng stream tags
_SHAPE, _MOTION, _NOISE, _CORRUPT, _DROP, _GROSS, _COLOR = range(1, 8)

_FRAMES_MAGIC = b"LABR"
_FRAMES_VERSION = 1


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(tuple(int(k) for k in key))


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    n_videos: int = 1
    video_length: int = 24
    height: int = 48
    width: int = 48
    n_instances: int = 3
    shapes: tuple[str, ...] = ("rectangle", "ellipse")
    max_speed: float = 1.5
    scale_amplitude: float = 0.2
    occlusion: bool = True
    background_lab: tuple[float, float, float] = (30.0, 0.0, 0.0)
    instance_labs: Optional[tuple[tuple[float, float, float], ...]] = None
    noise_sigma: float = 0.75

    def __post_init__(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ValueError("resolution must be at least 16x16")
        if self.video_length < 1 or self.n_videos < 1 or self.n_instances < 1:
            raise ValueError("counts must be positive")
        bad = set(self.shapes) - {"rectangle", "ellipse"}
        if bad:
            raise ValueError(f"unknown shape kinds {sorted(bad)}")


@dataclass(frozen=True)
class CorruptionSpec:
    seed: int
    dilate_erode: int = 0       # +k dilates, -k erodes, k iterations of a 3x3 square
    jitter: int = 0             # max absolute translation per axis, pixels
    boundary_noise: float = 0.0 # flip probability on the mask boundary band
    drop_rate: float = 0.0      # per instance-frame omission probability

    def __post_init__(self) -> None:
        if not 0.0 <= self.boundary_noise <= 1.0 or not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("rates must be in [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")


@dataclass(frozen=True)
class SourceProfiles:
    """Noise profiles for the three mock sources."""

    seed: int
    hqsam: CorruptionSpec
    boxvis: CorruptionSpec
    track: CorruptionSpec
    hqsam_gross_rate: float = 0.05   # chance of swapping in a distractor blob
    boxvis_instance_drop: float = 0.073  # fraction of instances omitted entirely
    track_noise_growth: float = 0.015    # extra flip probability per frame of distance


def default_profiles(seed: int) -> SourceProfiles:
    return SourceProfiles(
        seed=seed,
        hqsam=CorruptionSpec(seed=seed * 10 + 1, boundary_noise=0.03),
        boxvis=CorruptionSpec(seed=seed * 10 + 2, dilate_erode=1, jitter=1, boundary_noise=0.10),
        track=CorruptionSpec(seed=seed * 10 + 3, boundary_noise=0.02),
    )


def _reflect(value: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return (lo + hi) / 2.0
    period = 2.0 * (hi - lo)
    q = (value - lo) % period
    return lo + (period - q if q > hi - lo else q)


def _shape_mask(kind: str, h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    py = yy + 0.5
    px = xx + 0.5
    if kind == "rectangle":
        return (np.abs(py - cy) <= ry) & (np.abs(px - cx) <= rx)
    return ((py - cy) / ry) ** 2 + ((px - cx) / rx) ** 2 <= 1.0


def gen_video(spec: SceneSpec) -> tuple[Dataset, dict[int, np.ndarray]]:
    """Render ground truth: disjoint instance masks, tight boxes, LAB frames.

    Occluded overlaps resolve by depth (later instances sit on top); a
    fully hidden instance is absent that frame. With occlusion off the
    instances ride in disjoint horizontal lanes.
    """
    h, w, T = spec.height, spec.width, spec.video_length
    kinds = sorted(set(spec.shapes), key=spec.shapes.index)
    categories = [CategoryDef(id=k + 1, name=kind) for k, kind in enumerate(kinds)]
    cat_id = {kind: k + 1 for k, kind in enumerate(kinds)}
    videos = []
    annotations = []
    frames_out: dict[int, np.ndarray] = {}
    for v_idx in range(spec.n_videos):
        video_id = v_idx + 1
        videos.append(
            VideoMeta(
                id=video_id, length=T, height=h, width=w,
                frame_names=tuple(f"{video_id:04d}/{t:05d}.jpg" for t in range(T)),
            )
        )
        shapes_per_frame: list[list[np.ndarray]] = [[] for _ in range(T)]
        colors = []
        inst_kinds = []
        for i_idx in range(spec.n_instances):
            rng = _rng(spec.seed, _SHAPE, v_idx, i_idx)
            kind = spec.shapes[i_idx % len(spec.shapes)]
            inst_kinds.append(kind)
            if spec.occlusion:
                y_lo, y_hi = 0.0, float(h)
            else:
                band = h / spec.n_instances
                y_lo, y_hi = band * i_idx, band * (i_idx + 1)
            max_ry = (y_hi - y_lo) / 2.5 if not spec.occlusion else h / 5.0
            ry = rng.uniform(0.5 * max_ry, max_ry)
            rx = rng.uniform(w / 10.0, w / 5.0)
            cy0 = rng.uniform(y_lo + ry, max(y_lo + ry, y_hi - ry))
            cx0 = rng.uniform(rx, max(rx, w - rx))
            vy = rng.uniform(-spec.max_speed, spec.max_speed)
            vx = rng.uniform(-spec.max_speed, spec.max_speed)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            if spec.instance_labs is not None:
                colors.append(spec.instance_labs[i_idx % len(spec.instance_labs)])
            else:
                crng = _rng(spec.seed, _COLOR, v_idx, i_idx)
                colors.append((crng.uniform(50, 95), crng.uniform(-60, 60), crng.uniform(-60, 60)))
            for t in range(T):
                scale = 1.0 + spec.scale_amplitude * np.sin(2.0 * np.pi * t / max(1, T) + phase)
                ry_t = max(1.0, ry * scale)
                rx_t = max(1.0, rx * scale)
                cy = _reflect(cy0 + vy * t, y_lo + ry_t, y_hi - ry_t)
                cx = _reflect(cx0 + vx * t, rx_t, w - rx_t)
                shapes_per_frame[t].append(_shape_mask(kind, h, w, cy, cx, ry_t, rx_t))
        frames = np.empty((T, h, w, 3), dtype=np.float32)
        for t in range(T):
            canvas = np.empty((h, w, 3), dtype=np.float64)
            canvas[:] = spec.background_lab
            for i_idx in range(spec.n_instances):
                canvas[shapes_per_frame[t][i_idx]] = colors[i_idx]
            noise = _rng(spec.seed, _NOISE, v_idx, t).normal(0.0, spec.noise_sigma, (h, w, 3))
            frames[t] = (canvas + noise).astype(np.float32)
        for i_idx in range(spec.n_instances):
            instance_id = v_idx * spec.n_instances + i_idx + 1
            labels: list[Optional[FrameLabel]] = []
            for t in range(T):
                visible = shapes_per_frame[t][i_idx].copy()
                for above in range(i_idx + 1, spec.n_instances):
                    visible &= ~shapes_per_frame[t][above]
                if not visible.any():
                    labels.append(None)
                    continue
                rle = rle_encode(visible)
                labels.append(FrameLabel(segmentation=rle, bbox=bbox_of(visible), area=rle_area(rle)))
            annotations.append(
                InstanceAnnotation(
                    id=instance_id, video_id=video_id,
                    category_id=cat_id[inst_kinds[i_idx]], frames=labels,
                )
            )
        frames_out[video_id] = frames
    return Dataset(videos=videos, categories=categories, annotations=annotations), frames_out


_STRUCT3 = np.ones((3, 3), dtype=bool)


def _corrupt_mask(
    mask: np.ndarray,
    rng: np.random.Generator,
    dilate_erode: int,
    jitter: int,
    boundary_noise: float,
) -> np.ndarray:
    m = mask.copy()
    if dilate_erode > 0:
        m = ndimage.binary_dilation(m, structure=_STRUCT3, iterations=dilate_erode)
    elif dilate_erode < 0:
        m = ndimage.binary_erosion(m, structure=_STRUCT3, iterations=-dilate_erode)
    dy = int(rng.integers(-jitter, jitter + 1)) if jitter else 0
    dx = int(rng.integers(-jitter, jitter + 1)) if jitter else 0
    if dy or dx:
        shifted = np.zeros_like(m)
        h, w = m.shape
        ys = slice(max(0, dy), min(h, h + dy))
        xs = slice(max(0, dx), min(w, w + dx))
        ys_src = slice(max(0, -dy), min(h, h - dy))
        xs_src = slice(max(0, -dx), min(w, w - dx))
        shifted[ys, xs] = m[ys_src, xs_src]
        m = shifted
    if boundary_noise > 0.0 and m.any():
        band = ndimage.binary_dilation(m, structure=_STRUCT3) & ~ndimage.binary_erosion(m, structure=_STRUCT3)
        flips = band & (rng.random(m.shape) < boundary_noise)
        m = m ^ flips
    return m


def _relabel(mask: np.ndarray) -> FrameLabel:
    if not mask.any():
        return FrameLabel(segmentation=empty_rle(*mask.shape), bbox=None, area=0)
    rle = rle_encode(mask)
    return FrameLabel(segmentation=rle, bbox=bbox_of(mask), area=rle_area(rle))


def corrupt(gt: Dataset, cspec: CorruptionSpec) -> Dataset:
    """Noisy copy of a ground-truth dataset; all-zero settings copy exactly.

    Morphology, jitter, and boundary flips perturb each present nonempty
    mask; drop_rate turns whole instance-frames absent. Boxes and areas
    are recomputed from the corrupted masks.
    """
    annotations = []
    for ann in gt.annotations:
        labels: list[Optional[FrameLabel]] = []
        for t, label in enumerate(ann.frames):
            if label is None or label.segmentation is None or rle_area(label.segmentation) == 0:
                labels.append(label)
                continue
            rng = _rng(cspec.seed, _CORRUPT, ann.video_id, ann.id, t)
            if cspec.drop_rate > 0.0 and rng.random() < cspec.drop_rate:
                labels.append(None)
                continue
            mask = _corrupt_mask(
                rle_decode(label.segmentation), rng,
                cspec.dilate_erode, cspec.jitter, cspec.boundary_noise,
            )
            labels.append(_relabel(mask))
        annotations.append(
            InstanceAnnotation(id=ann.id, video_id=ann.video_id, category_id=ann.category_id, frames=labels)
        )
    return Dataset(videos=list(gt.videos), categories=list(gt.categories), annotations=annotations)


def _gross_errors(ds: Dataset, seed: int, rate: float) -> Dataset:
    """Occasionally swap a mask for a similar-size blob somewhere else."""
    if rate <= 0.0:
        return ds
    for ann in ds.annotations:
        video = ds.video(ann.video_id)
        for t, label in enumerate(ann.frames):
            if label is None or label.segmentation is None or label.area == 0:
                continue
            rng = _rng(seed, _GROSS, ann.video_id, ann.id, t)
            if rng.random() >= rate:
                continue
            box = label.bbox
            ry = max(1.0, box.h / 2.0)
            rx = max(1.0, box.w / 2.0)
            cy = rng.uniform(ry, max(ry, video.height - ry))
            cx = rng.uniform(rx, max(rx, video.width - rx))
            blob = _shape_mask("ellipse", video.height, video.width, cy, cx, ry, rx)
            ann.frames[t] = _relabel(blob)
    return ds


def _drop_instances(ds: Dataset, seed: int, rate: float) -> Dataset:
    """Remove a deterministic round(rate * n) of the instances entirely."""
    n = len(ds.annotations)
    k = int(round(rate * n))
    if k <= 0:
        return ds
    order = sorted(range(n), key=lambda i: (ds.annotations[i].video_id, ds.annotations[i].id))
    chosen = _rng(seed, _DROP).permutation(n)[:k]
    drop = {order[int(i)] for i in chosen}
    ds.annotations = [a for i, a in enumerate(ds.annotations) if i not in drop]
    return ds


def _track_like(gt: Dataset, base: CorruptionSpec, growth: float) -> Dataset:
    """Tracker mock: noise grows with distance from a mid-tube seed frame."""
    annotations = []
    for ann in gt.annotations:
        present = [t for t, f in enumerate(ann.frames) if f is not None and f.area]
        seed_frame = present[len(present) // 2] if present else 0
        labels: list[Optional[FrameLabel]] = []
        for t, label in enumerate(ann.frames):
            if label is None or label.segmentation is None or label.area == 0:
                labels.append(label)
                continue
            rng = _rng(base.seed, _CORRUPT, ann.video_id, ann.id, t)
            if base.drop_rate > 0.0 and rng.random() < base.drop_rate:
                labels.append(None)
                continue
            noise = min(0.5, base.boundary_noise + growth * abs(t - seed_frame))
            mask = _corrupt_mask(rle_decode(label.segmentation), rng, base.dilate_erode, base.jitter, noise)
            labels.append(_relabel(mask))
        annotations.append(
            InstanceAnnotation(id=ann.id, video_id=ann.video_id, category_id=ann.category_id, frames=labels)
        )
    return Dataset(videos=list(gt.videos), categories=list(gt.categories), annotations=annotations)


def make_three_sources(gt: Dataset, profiles: SourceProfiles) -> tuple[Dataset, Dataset, Dataset]:
    """Mock (hqsam-like, boxvis-like, track-like) pseudo-mask collections.

    With every rate and noise level zero the three outputs equal gt.
    """
    hqsam_like = _gross_errors(corrupt(gt, profiles.hqsam), profiles.seed, profiles.hqsam_gross_rate)
    boxvis_like = _drop_instances(corrupt(gt, profiles.boxvis), profiles.seed, profiles.boxvis_instance_drop)
    track_like = _track_like(gt, profiles.track, profiles.track_noise_growth)
    return hqsam_like, boxvis_like, track_like


def save_frames(frames: dict[int, np.ndarray], sink: Union[str, IO]) -> None:
    """Raw raster sidecar: magic, version, count, then per-video records of
    (video id, length, height, width) and float32 row-major LAB values."""
    def write(fh):
        fh.write(_FRAMES_MAGIC)
        fh.write(struct.pack("<II", _FRAMES_VERSION, len(frames)))
        for video_id in sorted(frames):
            arr = np.ascontiguousarray(frames[video_id], dtype="<f4")
            if arr.ndim != 4 or arr.shape[3] != 3:
                raise ValueError(f"frames for video {video_id} must be (t, h, w, 3)")
            fh.write(struct.pack("<IIII", video_id, arr.shape[0], arr.shape[1], arr.shape[2]))
            fh.write(arr.tobytes())

    if hasattr(sink, "write"):
        write(sink)
    else:
        with open(sink, "wb") as fh:
            write(fh)


def load_frames(source: Union[str, IO]) -> dict[int, np.ndarray]:
    def read(fh):
        if fh.read(4) != _FRAMES_MAGIC:
            raise ValueError("not a frame sidecar file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _FRAMES_VERSION:
            raise ValueError(f"unsupported sidecar version {version}")
        out = {}
        for _ in range(count):
            video_id, t, h, w = struct.unpack("<IIII", fh.read(16))
            data = np.frombuffer(fh.read(4 * t * h * w * 3), dtype="<f4")
            out[video_id] = data.reshape(t, h, w, 3).copy()
        return out

    if hasattr(source, "read"):
        return read(source)
    with open(source, "rb") as fh:
        return read(fh)


_SCENE_FIELDS = {
    "seed", "n_videos", "video_length", "height", "width", "n_instances",
    "shapes", "max_speed", "scale_amplitude", "occlusion", "background_lab",
    "instance_labs", "noise_sigma",
}


def scene_spec_from_json(obj: dict) -> SceneSpec:
    unknown = set(obj) - _SCENE_FIELDS
    if unknown:
        raise ValueError(f"unknown scene fields {sorted(unknown)}")
    if "seed" not in obj:
        raise ValueError("scene spec needs a seed")
    kwargs = dict(obj)
    if "shapes" in kwargs:
        kwargs["shapes"] = tuple(kwargs["shapes"])
    if "background_lab" in kwargs:
        kwargs["background_lab"] = tuple(kwargs["background_lab"])
    if kwargs.get("instance_labs") is not None:
        kwargs["instance_labs"] = tuple(tuple(c) for c in kwargs["instance_labs"])
    return SceneSpec(**kwargs)


def scene_spec_to_json(spec: SceneSpec) -> dict:
    return {
        "seed": spec.seed,
        "n_videos": spec.n_videos,
        "video_length": spec.video_length,
        "height": spec.height,
        "width": spec.width,
        "n_instances": spec.n_instances,
        "shapes": list(spec.shapes),
        "max_speed": spec.max_speed,
        "scale_amplitude": spec.scale_amplitude,
        "occlusion": spec.occlusion,
        "background_lab": list(spec.background_lab),
        "instance_labs": None if spec.instance_labs is None else [list(c) for c in spec.instance_labs],
        "noise_sigma": spec.noise_sigma,
    }
