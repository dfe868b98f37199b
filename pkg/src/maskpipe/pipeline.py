"""Mask cleanup, keyframe propagation, fusion, and ground-truth filters.

Stage one takes per-frame candidate masks from two sources, removes
inter-instance overlaps, and clips strays to the annotated boxes. Stage
two picks high-confidence keyframes per instance, propagates their masks
across the video, and fuses the per-frame candidates into one final
collection. The filters then drop ground-truth instances the pseudo
masks cannot support.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .dataset import Dataset, FrameLabel, InstanceAnnotation, empty_rle
from .masks import BBox, bbox_of, box_iou, expand_box, mask_clip, rle_area, rle_encode
from .scoring import ROLE_PRIORITY, assign_tracklets, pair_score, select_best_mask

__all__ = [
    "BoxGuidedPropagator",
    "IdentityPropagator",
    "Keyframe",
    "MaskPropagator",
    "PipelineConfig",
    "PipelineResult",
    "PropagationError",
    "build_track_dataset",
    "clean_dataset",
    "drop_low_iou_instances",
    "drop_missing_instances",
    "fuse_sources",
    "instance_tube_iou",
    "pair_instance_ids",
    "propagate_and_merge",
    "remove_overlaps_and_clip",
    "run_pipeline",
    "select_keyframes",
    "select_keyframes_dataset",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    frames_per_keyframe: int = 10   # one keyframe per this many frames
    doob_margin: int = 0            # clip boundary slack around the box
    tau_ria: float = 0.6            # tube-IoU floor for keeping a gt instance
    min_score: float = 0.05         # assignment threshold
    shqm_enabled: bool = True       # fuse by mutual support vs track passthrough
    multiframe_enabled: bool = True # False pins keyframe count to one

    def __post_init__(self) -> None:
        if self.frames_per_keyframe < 1:
            raise ValueError("frames_per_keyframe must be >= 1")
        if not 0.0 <= self.tau_ria <= 1.0:
            raise ValueError("tau_ria must be in [0, 1]")
        if self.doob_margin < 0:
            raise ValueError("doob_margin must be >= 0")


class PropagationError(RuntimeError):
    """The propagator could not produce masks for an instance."""


def remove_overlaps_and_clip(
    masks: Mapping[int, np.ndarray],
    gtboxes: Mapping[int, BBox],
    margin: int = 0,
) -> dict[int, np.ndarray]:
    """Make one frame's instance masks disjoint and box-contained.

    For every overlapping pair, the overlap's bounding rectangle is
    compared against both instances' annotated boxes; the overlap pixels
    are removed from the instance whose box matches the rectangle worse
    (from both on an exact tie). All removals are decided on the original
    masks and applied at once, so the result does not depend on instance
    order. Each mask is then clipped to its own box grown by margin.

    The output is pairwise disjoint, box-contained, and a fixed point of
    the operation itself.
    """
    ids = sorted(masks)
    for iid in ids:
        if iid not in gtboxes:
            raise KeyError(f"present mask {iid} has no annotated box")
    removals: dict[int, np.ndarray] = {}
    for pos, id_a in enumerate(ids):
        for id_b in ids[pos + 1 :]:
            overlap = masks[id_a] & masks[id_b]
            if not overlap.any():
                continue
            rect = bbox_of(overlap)
            fit_a = box_iou(rect, gtboxes[id_a])
            fit_b = box_iou(rect, gtboxes[id_b])
            losers = [id_a, id_b] if fit_a == fit_b else [id_a if fit_a < fit_b else id_b]
            for loser in losers:
                if loser in removals:
                    removals[loser] = removals[loser] | overlap
                else:
                    removals[loser] = overlap
    out: dict[int, np.ndarray] = {}
    for iid in ids:
        m = masks[iid]
        if iid in removals:
            m = m & ~removals[iid]
        out[iid] = mask_clip(m, gtboxes[iid], margin)
    return out


def clean_dataset(pseudo: Dataset, gt: Dataset, margin: int = 0, threads: int = 1) -> Dataset:
    """Apply per-frame overlap removal and box clipping across a dataset.

    Annotated boxes come from the gt dataset via shared instance ids.
    Masks emptied by the cleanup stay as present-but-empty frames.
    """
    from ._parallel import map_workers

    def clean_video(video) -> list[InstanceAnnotation]:
        anns = sorted(pseudo.annotations_in(video.id), key=lambda a: a.id)
        gt_by_id = {a.id: a for a in gt.annotations_in(video.id)}
        frames: dict[int, list[Optional[FrameLabel]]] = {a.id: [None] * video.length for a in anns}
        for t in range(video.length):
            masks = {}
            boxes = {}
            for ann in anns:
                mask = ann.mask_at(t)
                if mask is None:
                    continue
                masks[ann.id] = mask
                gt_ann = gt_by_id.get(ann.id)
                box = gt_ann.box_at(t) if gt_ann is not None else None
                if box is None:
                    raise KeyError(
                        f"video {video.id} frame {t}: present mask for instance {ann.id} has no annotated box"
                    )
                boxes[ann.id] = box
            if not masks:
                continue
            cleaned = remove_overlaps_and_clip(masks, boxes, margin)
            for iid, mask in cleaned.items():
                rle = rle_encode(mask)
                frames[iid][t] = FrameLabel(segmentation=rle, bbox=bbox_of(mask), area=rle_area(rle))
        return [
            InstanceAnnotation(id=a.id, video_id=a.video_id, category_id=a.category_id, frames=frames[a.id])
            for a in anns
        ]

    per_video = map_workers(clean_video, pseudo.videos, threads)
    return Dataset(
        videos=list(pseudo.videos),
        categories=list(pseudo.categories),
        annotations=[ann for group in per_video for ann in group],
    )


@dataclass(frozen=True)
class Keyframe:
    index: int
    score: float


def select_keyframes(
    boxvis_masks: Sequence[Optional[np.ndarray]],
    hqsam_masks: Sequence[Optional[np.ndarray]],
    gtboxes: Sequence[Optional[BBox]],
    frames_per_keyframe: int = 10,
    multiframe: bool = True,
) -> list[Keyframe]:
    """Rank frames by the two sources' mutual pair score and keep the best.

    The budget is max(1, floor(length / frames_per_keyframe)) frames (one
    when multiframe is off). Only frames with a positive score and a
    present detector mask are eligible; score ties prefer the earlier
    frame. Returns keyframes in increasing frame order.
    """
    length = len(boxvis_masks)
    budget = max(1, length // frames_per_keyframe) if multiframe else 1
    scored = []
    for t in range(length):
        bv = boxvis_masks[t]
        hq = hqsam_masks[t] if t < len(hqsam_masks) else None
        box = gtboxes[t] if t < len(gtboxes) else None
        if bv is None or hq is None or box is None:
            continue
        value = pair_score(bv, hq, box).value
        if value > 0.0:
            scored.append(Keyframe(index=t, score=value))
    scored.sort(key=lambda k: (-k.score, k.index))
    chosen = sorted(scored[:budget], key=lambda k: k.index)
    return chosen


def select_keyframes_dataset(
    boxvis: Dataset, hqsam: Dataset, gt: Dataset, cfg: PipelineConfig = PipelineConfig()
) -> dict[tuple[int, int], list[Keyframe]]:
    """Keyframes per (video id, instance id), driven by the gt instance list."""
    out: dict[tuple[int, int], list[Keyframe]] = {}
    for video in gt.videos:
        bv_by_id = {a.id: a for a in boxvis.annotations_in(video.id)}
        hq_by_id = {a.id: a for a in hqsam.annotations_in(video.id)}
        for gt_ann in sorted(gt.annotations_in(video.id), key=lambda a: a.id):
            bv = bv_by_id.get(gt_ann.id)
            hq = hq_by_id.get(gt_ann.id)
            bv_masks = [bv.mask_at(t) if bv else None for t in range(video.length)]
            hq_masks = [hq.mask_at(t) if hq else None for t in range(video.length)]
            boxes = [gt_ann.box_at(t) for t in range(video.length)]
            out[(video.id, gt_ann.id)] = select_keyframes(
                bv_masks, hq_masks, boxes, cfg.frames_per_keyframe, cfg.multiframe_enabled
            )
    return out


class MaskPropagator(ABC):
    """Carries a seed mask frame by frame toward the video boundary."""

    @abstractmethod
    def propagate(
        self, seed_index: int, seed_mask: np.ndarray, direction: int, length: int
    ) -> list[Optional[np.ndarray]]:
        """Masks for frames seed_index+direction, seed_index+2*direction, ...

        direction is +1 or -1; the list runs to the video boundary and may
        contain None for frames where no mask can be produced.
        """


class IdentityPropagator(MaskPropagator):
    """Copies the seed mask to every frame; useful as a reference."""

    def propagate(self, seed_index, seed_mask, direction, length):
        steps = (length - 1 - seed_index) if direction > 0 else seed_index
        return [seed_mask.copy() for _ in range(steps)]


class BoxGuidedPropagator(MaskPropagator):
    """Warps the seed mask by the box-to-box affine map of each frame.

    The transform translates and axis-scales the seed frame's annotated
    box onto the target frame's box and resamples nearest-pixel. Frames
    with an absent or degenerate box yield absent masks.
    """

    def __init__(self, boxes: Sequence[Optional[BBox]]):
        self.boxes = list(boxes)

    def _warp(self, seed_mask: np.ndarray, src: BBox, dst: BBox) -> np.ndarray:
        h, w = seed_mask.shape
        sx = dst.w / src.w
        sy = dst.h / src.h
        # pixel centers of the target, mapped back into the seed frame
        cols = np.floor(src.x + (np.arange(w) + 0.5 - dst.x) / sx).astype(int)
        rows = np.floor(src.y + (np.arange(h) + 0.5 - dst.y) / sy).astype(int)
        valid_c = (cols >= 0) & (cols < w)
        valid_r = (rows >= 0) & (rows < h)
        out = np.zeros((h, w), dtype=bool)
        if not valid_c.any() or not valid_r.any():
            return out
        rr = rows[valid_r]
        cc = cols[valid_c]
        out[np.ix_(valid_r, valid_c)] = seed_mask[np.ix_(rr, cc)]
        return out

    def propagate(self, seed_index, seed_mask, direction, length):
        if not 0 <= seed_index < len(self.boxes):
            raise PropagationError(f"seed index {seed_index} outside the box track")
        src = self.boxes[seed_index]
        out: list[Optional[np.ndarray]] = []
        degenerate_seed = src is None or src.is_empty()
        t = seed_index + direction
        while 0 <= t < length:
            dst = self.boxes[t] if t < len(self.boxes) else None
            if degenerate_seed or dst is None or dst.is_empty():
                out.append(None)
            else:
                out.append(self._warp(seed_mask, src, dst))
            t += direction
        return out


def propagate_and_merge(
    propagator: MaskPropagator,
    seeds: Sequence[tuple[int, np.ndarray]],
    length: int,
) -> list[Optional[np.ndarray]]:
    """Run every seed both ways and take each frame from its nearest seed.

    Seeds always win on their own frame; distance ties between seeds go
    to the earlier one. With no seeds every frame is absent.
    """
    if not seeds:
        return [None] * length
    ordered = sorted(seeds, key=lambda s: s[0])
    tracks: dict[int, list[Optional[np.ndarray]]] = {}
    for index, seed_mask in ordered:
        if not 0 <= index < length:
            raise PropagationError(f"seed frame {index} outside video of length {length}")
        track: list[Optional[np.ndarray]] = [None] * length
        track[index] = seed_mask
        for direction in (1, -1):
            produced = propagator.propagate(index, seed_mask, direction, length)
            for step, mask in enumerate(produced, start=1):
                track[index + direction * step] = mask
        tracks[index] = track
    seed_indices = [i for i, _ in ordered]
    merged: list[Optional[np.ndarray]] = []
    for t in range(length):
        nearest = min(seed_indices, key=lambda k: (abs(k - t), k))
        merged.append(tracks[nearest][t])
    return merged


def build_track_dataset(
    seed_source: Dataset,
    gt: Dataset,
    keyframes: Mapping[tuple[int, int], Sequence[Keyframe]],
    propagator_factory: Optional[Callable[[list[Optional[BBox]]], MaskPropagator]] = None,
    threads: int = 1,
) -> Dataset:
    """Propagate detector masks from each instance's keyframes.

    Instances with no keyframes, or whose propagator raises, are left out
    of the result entirely (absent track). The default propagator is
    box-guided by the gt boxes.
    """
    from ._parallel import map_workers

    factory = propagator_factory or BoxGuidedPropagator

    def track_video(video) -> list[InstanceAnnotation]:
        out = []
        seed_by_id = {a.id: a for a in seed_source.annotations_in(video.id)}
        for gt_ann in sorted(gt.annotations_in(video.id), key=lambda a: a.id):
            frames_kf = keyframes.get((video.id, gt_ann.id), [])
            source = seed_by_id.get(gt_ann.id)
            if not frames_kf or source is None:
                continue
            seeds = []
            for kf in frames_kf:
                mask = source.mask_at(kf.index)
                if mask is not None:
                    seeds.append((kf.index, mask))
            if not seeds:
                continue
            boxes = [gt_ann.box_at(t) for t in range(video.length)]
            try:
                merged = propagate_and_merge(factory(boxes), seeds, video.length)
            except PropagationError as exc:
                log.warning("instance %d in video %d: propagation failed: %s", gt_ann.id, video.id, exc)
                continue
            labels: list[Optional[FrameLabel]] = []
            for mask in merged:
                if mask is None:
                    labels.append(None)
                    continue
                rle = rle_encode(mask)
                labels.append(FrameLabel(segmentation=rle, bbox=bbox_of(mask), area=rle_area(rle)))
            out.append(
                InstanceAnnotation(
                    id=gt_ann.id, video_id=video.id, category_id=gt_ann.category_id, frames=labels
                )
            )
        return out

    per_video = map_workers(track_video, gt.videos, threads)
    return Dataset(
        videos=list(gt.videos),
        categories=list(gt.categories),
        annotations=[ann for group in per_video for ann in group],
    )


def fuse_sources(
    hqsam: Dataset,
    boxvis: Dataset,
    track: Dataset,
    gt: Dataset,
    cfg: PipelineConfig = PipelineConfig(),
    threads: int = 1,
) -> Dataset:
    """Per frame, keep the most mutually supported of the three candidates.

    With shqm_enabled off this is a passthrough of the track collection.
    Collections are aligned by instance id; frames with no candidate stay
    absent. Chosen masks get recomputed tight boxes and areas.
    """
    from ._parallel import map_workers

    if not cfg.shqm_enabled:
        return Dataset(
            videos=list(track.videos),
            categories=list(track.categories),
            annotations=[
                InstanceAnnotation(a.id, a.video_id, a.category_id, list(a.frames)) for a in track.annotations
            ],
        )

    def fuse_video(video) -> list[InstanceAnnotation]:
        by_role = {
            "hqsam": {a.id: a for a in hqsam.annotations_in(video.id)},
            "boxvis": {a.id: a for a in boxvis.annotations_in(video.id)},
            "track": {a.id: a for a in track.annotations_in(video.id)},
        }
        gt_by_id = {a.id: a for a in gt.annotations_in(video.id)}
        instance_ids = sorted(set().union(*(set(d) for d in by_role.values())))
        fused = []
        for iid in instance_ids:
            labels: list[Optional[FrameLabel]] = []
            for t in range(video.length):
                candidates = {
                    role: (anns[iid].mask_at(t) if iid in anns else None)
                    for role, anns in by_role.items()
                }
                present = {r: m for r, m in candidates.items() if m is not None}
                if not present:
                    labels.append(None)
                    continue
                gt_ann = gt_by_id.get(iid)
                gtbox = gt_ann.box_at(t) if gt_ann is not None else None
                if len(present) == 1:
                    mask = next(iter(present.values()))
                else:
                    role, _ = select_best_mask(candidates, gtbox)
                    mask = candidates[role]
                rle = rle_encode(mask)
                labels.append(FrameLabel(segmentation=rle, bbox=bbox_of(mask), area=rle_area(rle)))
            if all(label is None for label in labels):
                continue
            gt_ann = gt_by_id.get(iid)
            if gt_ann is not None:
                category = gt_ann.category_id
            else:
                category = next(anns[iid].category_id for anns in by_role.values() if iid in anns)
            fused.append(InstanceAnnotation(id=iid, video_id=video.id, category_id=category, frames=labels))
        return fused

    per_video = map_workers(fuse_video, gt.videos, threads)
    return Dataset(
        videos=list(gt.videos),
        categories=list(gt.categories),
        annotations=[ann for group in per_video for ann in group],
    )


def _has_present_frame(ann: InstanceAnnotation) -> bool:
    return any(f is not None for f in ann.frames)


def pair_instance_ids(gt: Dataset, pseudo: Dataset, min_score: float = 0.05) -> dict[tuple[int, int], int]:
    """Map (video id, gt instance id) to the counterpart pseudo instance id.

    When the collections share instance ids (the in-pipeline case) the
    pairing is identity on the shared ids; otherwise tracklets are
    matched against the gt boxes with the gt masks as the reference.
    """
    out: dict[tuple[int, int], int] = {}
    for video in gt.videos:
        gt_anns = gt.annotations_in(video.id)
        ps_anns = [a for a in pseudo.annotations_in(video.id) if _has_present_frame(a)]
        gt_ids = {a.id for a in gt_anns}
        ps_ids = {a.id for a in ps_anns}
        shared = gt_ids & ps_ids
        if shared:
            for iid in sorted(shared):
                out[(video.id, iid)] = iid
            continue
        if not ps_anns:
            continue
        predicted = {a.id: [a.mask_at(t) for t in range(video.length)] for a in ps_anns}
        gt_boxes = {a.id: [a.box_at(t) for t in range(video.length)] for a in gt_anns}
        aux = {a.id: [a.mask_at(t) for t in range(video.length)] for a in gt_anns}
        matched = assign_tracklets(predicted, gt_boxes, aux, min_score)
        for pid, gid in matched.pairs.items():
            out[(video.id, gid)] = pid
    return out


def drop_missing_instances(gt: Dataset, pseudo: Dataset, min_score: float = 0.05) -> Dataset:
    """Remove gt instances that have no pseudo-mask counterpart."""
    paired = pair_instance_ids(gt, pseudo, min_score)
    kept = [a for a in gt.annotations if (a.video_id, a.id) in paired]
    return Dataset(videos=list(gt.videos), categories=list(gt.categories), annotations=kept)


def instance_tube_iou(a: InstanceAnnotation, b: InstanceAnnotation) -> float:
    """Whole-tube IoU: frame intersections and unions summed before dividing.

    Absent frames count as empty masks; a pair of empty tubes scores 0.
    """
    inter = 0
    union = 0
    length = max(len(a.frames), len(b.frames))
    for t in range(length):
        ma = a.mask_at(t) if t < len(a.frames) else None
        mb = b.mask_at(t) if t < len(b.frames) else None
        if ma is None and mb is None:
            continue
        if ma is None:
            union += int(np.count_nonzero(mb))
        elif mb is None:
            union += int(np.count_nonzero(ma))
        else:
            inter += int(np.count_nonzero(ma & mb))
            union += int(np.count_nonzero(ma | mb))
    return inter / union if union else 0.0


def drop_low_iou_instances(
    gt: Dataset, pseudo: Dataset, tau_ria: float = 0.6, min_score: float = 0.05
) -> Dataset:
    """Remove paired gt instances whose pseudo tube IoU falls below tau_ria.

    tau_ria of 0 keeps everything; unpaired instances are left alone
    (pairing gaps are the missing-data filter's concern).
    """
    paired = pair_instance_ids(gt, pseudo, min_score)
    ps_index = {(a.video_id, a.id): a for a in pseudo.annotations}
    kept = []
    for ann in gt.annotations:
        pid = paired.get((ann.video_id, ann.id))
        if pid is None:
            kept.append(ann)
            continue
        counterpart = ps_index.get((ann.video_id, pid))
        if counterpart is None or instance_tube_iou(ann, counterpart) >= tau_ria:
            kept.append(ann)
    return Dataset(videos=list(gt.videos), categories=list(gt.categories), annotations=kept)


@dataclass
class PipelineResult:
    hqsam_clean: Dataset
    boxvis_clean: Dataset
    keyframes: dict[tuple[int, int], list[Keyframe]]
    track: Dataset
    fused: Dataset
    gt_filtered: Dataset


def run_pipeline(
    gt: Dataset,
    hqsam: Dataset,
    boxvis: Dataset,
    cfg: PipelineConfig = PipelineConfig(),
    track: Optional[Dataset] = None,
    threads: int = 1,
) -> PipelineResult:
    """Full pipeline: cleanup, keyframes, propagation, fusion, gt filters.

    A supplied track collection replaces the built-in propagation stage,
    which lets an external tracker slot in by file substitution.
    """
    hqsam_clean = clean_dataset(hqsam, gt, cfg.doob_margin, threads)
    boxvis_clean = clean_dataset(boxvis, gt, cfg.doob_margin, threads)
    keyframes = select_keyframes_dataset(boxvis_clean, hqsam_clean, gt, cfg)
    if track is None:
        track = build_track_dataset(boxvis_clean, gt, keyframes, threads=threads)
    fused = fuse_sources(hqsam_clean, boxvis_clean, track, gt, cfg, threads)
    gt_filtered = drop_missing_instances(gt, fused, cfg.min_score)
    gt_filtered = drop_low_iou_instances(gt_filtered, fused, cfg.tau_ria, cfg.min_score)
    return PipelineResult(
        hqsam_clean=hqsam_clean,
        boxvis_clean=boxvis_clean,
        keyframes=keyframes,
        track=track,
        fused=fused,
        gt_filtered=gt_filtered,
    )
