import hashlib

import numpy as np
import pytest

from maskpipe.masks import BBox, bbox_of, expand_box, mask_iou
from maskpipe.pipeline import (
    BoxGuidedPropagator,
    IdentityPropagator,
    Keyframe,
    PipelineConfig,
    PropagationError,
    build_track_dataset,
    clean_dataset,
    drop_low_iou_instances,
    drop_missing_instances,
    fuse_sources,
    instance_tube_iou,
    pair_instance_ids,
    propagate_and_merge,
    remove_overlaps_and_clip,
    select_keyframes,
    select_keyframes_dataset,
)
from conftest import build_dataset, random_box


def block(h, w, y0, x0, bh, bw):
    m = np.zeros((h, w), dtype=bool)
    m[y0 : y0 + bh, x0 : x0 + bw] = True
    return m


def masks_digest(masks):
    parts = []
    for iid in sorted(masks):
        parts.append(str(iid).encode())
        parts.append(np.packbits(masks[iid]).tobytes())
    return hashlib.sha256(b"".join(parts)).hexdigest()


def test_overlap_removed_from_worse_fitting_instance():
    h = w = 8
    a = block(h, w, 0, 0, 3, 3)
    b = block(h, w, 0, 2, 2, 2)
    boxes = {1: bbox_of(a), 2: bbox_of(b)}
    out = remove_overlaps_and_clip({1: a, 2: b}, boxes)
    # overlap is rows 0-1 x col 2; its rectangle matches b's box far better
    assert not out[1][0:2, 2].any()
    assert np.array_equal(out[2], b)
    assert not (out[1] & out[2]).any()


def test_overlap_tie_removes_from_both():
    h = w = 8
    a = block(h, w, 0, 0, 2, 2)
    b = block(h, w, 0, 1, 2, 2)
    out = remove_overlaps_and_clip({1: a, 2: b}, {1: bbox_of(a), 2: bbox_of(b)})
    assert not out[1][:, 1].any()
    assert not out[2][:, 1].any()
    assert not (out[1] & out[2]).any()


def test_clip_to_expanded_boxes():
    h = w = 10
    stray = block(h, w, 0, 0, 10, 10)
    box = BBox(3, 3, 3, 3)
    out = remove_overlaps_and_clip({1: stray}, {1: box}, margin=1)
    tight = bbox_of(out[1])
    grown = expand_box(box, 1, h, w)
    assert tight == grown


def test_missing_box_for_present_mask_raises():
    with pytest.raises(KeyError):
        remove_overlaps_and_clip({1: block(4, 4, 0, 0, 2, 2)}, {})


def random_frame(rng, n, h, w):
    masks = {}
    boxes = {}
    for iid in range(1, n + 1):
        base = block(
            h, w,
            int(rng.integers(0, h - 4)), int(rng.integers(0, w - 4)),
            int(rng.integers(2, 5)), int(rng.integers(2, 5)),
        )
        boxes[iid] = bbox_of(base)
        noisy = np.roll(base, (int(rng.integers(-2, 3)), int(rng.integers(-2, 3))), axis=(0, 1))
        if rng.random() < 0.5:
            noisy = noisy | block(h, w, int(rng.integers(0, h - 2)), int(rng.integers(0, w - 2)), 2, 2)
        masks[iid] = noisy
    return masks, boxes


def test_overlap_removal_postconditions():
    rng = np.random.default_rng(83)
    for _ in range(50):
        h = w = 16
        n = int(rng.integers(2, 5))
        margin = int(rng.integers(0, 3))
        masks, boxes = random_frame(rng, n, h, w)
        out = remove_overlaps_and_clip(masks, boxes, margin)
        ids = sorted(out)
        for i, ia in enumerate(ids):
            for ib in ids[i + 1 :]:
                assert not (out[ia] & out[ib]).any()
            grown = expand_box(boxes[ia], margin, h, w)
            outside = out[ia] & ~np.zeros((h, w), bool)
            tight = bbox_of(out[ia])
            if tight is not None:
                assert tight.x >= grown.x and tight.y >= grown.y
                assert tight.x + tight.w <= grown.x + grown.w
                assert tight.y + tight.h <= grown.y + grown.h
        again = remove_overlaps_and_clip(out, boxes, margin)
        assert masks_digest(again) == masks_digest(out)
        # permutation invariance: rebuild the dicts in reversed insertion order
        rev_masks = {iid: masks[iid] for iid in reversed(sorted(masks))}
        rev_boxes = {iid: boxes[iid] for iid in reversed(sorted(boxes))}
        assert masks_digest(remove_overlaps_and_clip(rev_masks, rev_boxes, margin)) == masks_digest(out)


def test_clean_dataset_keeps_emptied_masks_present():
    h = w = 8
    inner = block(h, w, 2, 2, 2, 2)
    gt = build_dataset({1: {1: [inner]}}, h, w)
    stray = block(h, w, 6, 6, 2, 2)  # entirely outside the gt box
    pseudo = build_dataset({1: {1: [stray]}}, h, w)
    cleaned = clean_dataset(pseudo, gt)
    label = cleaned.annotation(1, 1).frames[0]
    assert label is not None
    assert label.area == 0
    assert label.bbox is None


def test_clean_dataset_requires_gt_box():
    h = w = 8
    gt = build_dataset({1: {1: [None]}}, h, w)
    pseudo = build_dataset({1: {1: [block(h, w, 1, 1, 2, 2)]}}, h, w)
    with pytest.raises(KeyError):
        clean_dataset(pseudo, gt)


def keyframe_env(h=8, w=8):
    gtbox = BBox(1, 1, 4, 4)
    exact = block(h, w, 1, 1, 4, 4)
    half = block(h, w, 1, 1, 4, 2)
    off = block(h, w, 6, 6, 2, 2)
    return gtbox, exact, half, off


def test_select_keyframes_ranking_and_budget():
    gtbox, exact, half, off = keyframe_env()
    bv = [half, exact, exact, exact]
    hq = [exact, exact, exact, None]
    boxes = [gtbox] * 4
    got = select_keyframes(bv, hq, boxes, frames_per_keyframe=2)
    assert [k.index for k in got] == [1, 2]
    single = select_keyframes(bv, hq, boxes, frames_per_keyframe=2, multiframe=False)
    assert [k.index for k in single] == [1]  # tie on score, earlier frame wins
    assert single[0].score == pytest.approx(1.0)


def test_select_keyframes_eligibility():
    gtbox, exact, half, off = keyframe_env()
    bv = [None, off, exact]
    hq = [exact, exact, exact]
    boxes = [gtbox, gtbox, None]
    # frame 0: no detector mask; frame 1: disjoint masks score 0; frame 2: no box
    assert select_keyframes(bv, hq, boxes, frames_per_keyframe=1) == []


def test_keyframe_budget_formula():
    gtbox, exact, _, _ = keyframe_env()
    bv = [exact] * 24
    hq = [exact] * 24
    boxes = [gtbox] * 24
    assert len(select_keyframes(bv, hq, boxes, frames_per_keyframe=10)) == 2
    assert len(select_keyframes(bv, hq, boxes, frames_per_keyframe=100)) == 1
    assert len(select_keyframes(bv, hq, boxes, frames_per_keyframe=10, multiframe=False)) == 1


def test_propagate_and_merge_nearest_seed():
    h = w = 6
    seed_a = block(h, w, 0, 0, 2, 2)
    seed_b = block(h, w, 3, 3, 2, 2)
    merged = propagate_and_merge(IdentityPropagator(), [(0, seed_a), (9, seed_b)], 10)
    for t in range(10):
        want = seed_a if t <= 4 else seed_b  # frame 5 ties, earlier keyframe wins
        assert np.array_equal(merged[t], want)


def test_propagate_and_merge_no_seeds_and_bad_seed():
    assert propagate_and_merge(IdentityPropagator(), [], 4) == [None] * 4
    with pytest.raises(PropagationError):
        propagate_and_merge(IdentityPropagator(), [(7, np.ones((2, 2), bool))], 4)


def test_box_guided_static_box_is_identity():
    h = w = 10
    seed = block(h, w, 2, 2, 3, 4)
    boxes = [BBox(2, 2, 4, 3)] * 5
    prop = BoxGuidedPropagator(boxes)
    out = prop.propagate(0, seed, +1, 5)
    assert len(out) == 4
    for m in out:
        assert np.array_equal(m, seed)


def test_box_guided_translation_and_scale():
    h = w = 12
    seed = block(h, w, 2, 2, 2, 2)
    moved = BoxGuidedPropagator([BBox(2, 2, 2, 2), BBox(5, 4, 2, 2)]).propagate(0, seed, +1, 2)[0]
    assert np.array_equal(moved, block(h, w, 4, 5, 2, 2))
    doubled = BoxGuidedPropagator([BBox(2, 2, 2, 2), BBox(2, 2, 4, 4)]).propagate(0, seed, +1, 2)[0]
    assert np.array_equal(doubled, block(h, w, 2, 2, 4, 4))


def test_box_guided_absent_and_degenerate_boxes():
    h = w = 8
    seed = block(h, w, 1, 1, 2, 2)
    boxes = [BBox(1, 1, 2, 2), None, BBox(0, 0, 0, 0), BBox(4, 4, 2, 2)]
    out = BoxGuidedPropagator(boxes).propagate(0, seed, +1, 4)
    assert out[0] is None and out[1] is None
    assert np.array_equal(out[2], block(h, w, 4, 4, 2, 2))


def test_build_track_dataset_skips_instances_without_keyframes():
    h = w = 8
    m = block(h, w, 1, 1, 3, 3)
    gt = build_dataset({1: {1: [m, m], 2: [m, m]}}, h, w)
    bv = build_dataset({1: {1: [m, m], 2: [m, m]}}, h, w)
    kf = {(1, 1): [Keyframe(0, 1.0)], (1, 2): []}
    track = build_track_dataset(bv, gt, kf)
    assert track.annotation(1, 1) is not None
    assert track.annotation(1, 2) is None


def test_fuse_prefers_supported_candidate():
    h = w = 10
    good = block(h, w, 2, 2, 4, 4)
    bad = block(h, w, 6, 6, 3, 3)
    gt = build_dataset({1: {1: [good]}}, h, w)
    hq = build_dataset({1: {1: [good]}}, h, w)
    bv = build_dataset({1: {1: [good]}}, h, w)
    tr = build_dataset({1: {1: [bad]}}, h, w)
    fused = fuse_sources(hq, bv, tr, gt)
    got = fused.annotation(1, 1).frames[0].mask()
    assert np.array_equal(got, good)


def test_fuse_single_candidate_and_absent_frames():
    h = w = 8
    m = block(h, w, 1, 1, 3, 3)
    gt = build_dataset({1: {1: [m, m, m]}}, h, w)
    hq = build_dataset({1: {1: [m, None, None]}}, h, w)
    bv = build_dataset({1: {1: [None, None, None]}}, h, w)
    tr = build_dataset({1: {1: [None, None, None]}}, h, w)
    fused = fuse_sources(hq, bv, tr, gt)
    frames = fused.annotation(1, 1).frames
    assert frames[0] is not None and frames[1] is None and frames[2] is None


def test_fuse_passthrough_when_disabled():
    h = w = 8
    a = block(h, w, 1, 1, 3, 3)
    b = block(h, w, 4, 4, 2, 2)
    gt = build_dataset({1: {1: [a]}}, h, w)
    hq = build_dataset({1: {1: [a]}}, h, w)
    bv = build_dataset({1: {1: [a]}}, h, w)
    tr = build_dataset({1: {1: [b]}}, h, w)
    cfg = PipelineConfig(shqm_enabled=False)
    fused = fuse_sources(hq, bv, tr, gt, cfg)
    assert np.array_equal(fused.annotation(1, 1).frames[0].mask(), b)


def test_pairing_by_shared_ids_and_fallback():
    h = w = 10
    m1 = block(h, w, 1, 1, 3, 3)
    m2 = block(h, w, 5, 5, 3, 3)
    gt = build_dataset({1: {1: [m1], 2: [m2]}}, h, w)
    shared = build_dataset({1: {1: [m1], 2: [m2]}}, h, w)
    assert pair_instance_ids(gt, shared) == {(1, 1): 1, (1, 2): 2}
    relabeled = build_dataset({1: {71: [m1], 72: [m2]}}, h, w)
    assert pair_instance_ids(gt, relabeled) == {(1, 1): 71, (1, 2): 72}


def test_drop_missing_instances():
    h = w = 10
    m1 = block(h, w, 1, 1, 3, 3)
    m2 = block(h, w, 5, 5, 3, 3)
    gt = build_dataset({1: {1: [m1], 2: [m2]}}, h, w)
    pseudo = build_dataset({1: {1: [m1], 2: [None]}}, h, w)
    out = drop_missing_instances(gt, pseudo)
    assert [a.id for a in out.annotations] == [1]
    assert out.videos == gt.videos


def test_tube_iou_and_low_iou_filter():
    h = w = 10
    m = block(h, w, 1, 1, 4, 4)
    shifted = block(h, w, 1, 3, 4, 4)
    gt = build_dataset({1: {1: [m, m], 2: [m, m]}}, h, w)
    pseudo = build_dataset({1: {1: [m, m], 2: [shifted, shifted]}}, h, w)
    ann_gt = gt.annotation(1, 2)
    ann_ps = pseudo.annotation(1, 2)
    assert instance_tube_iou(ann_gt, ann_ps) == pytest.approx(mask_iou(m, shifted))
    out = drop_low_iou_instances(gt, pseudo, tau_ria=0.6)
    assert [a.id for a in out.annotations] == [1]
    assert len(drop_low_iou_instances(gt, pseudo, tau_ria=0.0).annotations) == 2


def test_tube_iou_counts_absent_frames_as_empty():
    h = w = 8
    m = block(h, w, 1, 1, 2, 2)
    gt = build_dataset({1: {1: [m, m]}}, h, w)
    pseudo = build_dataset({1: {1: [m, None]}}, h, w)
    got = instance_tube_iou(gt.annotation(1, 1), pseudo.annotation(1, 1))
    assert got == pytest.approx(4 / 8)


def test_select_keyframes_dataset_keys():
    h = w = 8
    m = block(h, w, 1, 1, 4, 4)
    gt = build_dataset({1: {1: [m] * 4}, 2: {5: [m] * 4}}, h, w)
    bv = build_dataset({1: {1: [m] * 4}, 2: {5: [m] * 4}}, h, w)
    hq = build_dataset({1: {1: [m] * 4}, 2: {5: [m] * 4}}, h, w)
    out = select_keyframes_dataset(bv, hq, gt, PipelineConfig(frames_per_keyframe=2))
    assert set(out) == {(1, 1), (2, 5)}
    assert [k.index for k in out[(1, 1)]] == [0, 1]
