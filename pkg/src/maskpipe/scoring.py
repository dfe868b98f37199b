"""Confidence scores for candidate masks and tracklet-to-instance matching.

The pair score of two candidate masks for the same instance multiplies
their mutual mask IoU with each candidate's box IoU against the instance's
annotated box. It is high only when the candidates agree with each other
and both land on the annotated instance, which makes it usable without any
ground-truth mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .masks import BBox, bbox_of, box_iou, mask_iou

__all__ = [
    "ROLES",
    "ROLE_PRIORITY",
    "Assignment",
    "PairScore",
    "PairScoreMatrix",
    "assign_tracklets",
    "match_scores",
    "pair_score",
    "score_candidates",
    "select_best_mask",
    "select_from_matrix",
    "support_scores",
]

# canonical source roles, in matrix index order
ROLES = ("hqsam", "boxvis", "track")
# tie-break preference, strongest first
ROLE_PRIORITY = ("track", "boxvis", "hqsam")


@dataclass(frozen=True)
class PairScore:
    """value = mask_iou * box_iou_a * box_iou_b, each factor in [0, 1]."""

    value: float
    mask_iou: float
    box_iou_a: float
    box_iou_b: float


def pair_score(mask_a: np.ndarray, mask_b: np.ndarray, gtbox: Optional[BBox]) -> PairScore:
    """Mutual-agreement score of two candidate masks for one annotated box.

    Any empty mask or missing/empty box gives value 0.
    """
    if gtbox is None or gtbox.is_empty():
        return PairScore(0.0, mask_iou(mask_a, mask_b), 0.0, 0.0)
    iou = mask_iou(mask_a, mask_b)
    box_a = bbox_of(mask_a)
    box_b = bbox_of(mask_b)
    h_a = 0.0 if box_a is None else box_iou(box_a, gtbox)
    h_b = 0.0 if box_b is None else box_iou(box_b, gtbox)
    # pairwise product grouped so swapping the masks is bitwise symmetric
    return PairScore(iou * (h_a * h_b), iou, h_a, h_b)


@dataclass
class PairScoreMatrix:
    """Symmetric pair scores between the candidate sources of one frame."""

    values: np.ndarray  # (3, 3), zero diagonal
    present: tuple[str, ...]

    def pair(self, role_a: str, role_b: str) -> float:
        return float(self.values[ROLES.index(role_a), ROLES.index(role_b)])


def score_candidates(candidates: Mapping[str, Optional[np.ndarray]], gtbox: Optional[BBox]) -> PairScoreMatrix:
    """Pair scores for every two present candidates; absent pairs score 0."""
    unknown = set(candidates) - set(ROLES)
    if unknown:
        raise ValueError(f"unknown candidate roles {sorted(unknown)}")
    values = np.zeros((3, 3), dtype=float)
    present = tuple(r for r in ROLES if candidates.get(r) is not None)
    for i, role_a in enumerate(ROLES):
        for j in range(i + 1, 3):
            role_b = ROLES[j]
            ma = candidates.get(role_a)
            mb = candidates.get(role_b)
            if ma is None or mb is None:
                continue
            s = pair_score(ma, mb, gtbox).value
            values[i, j] = values[j, i] = s
    return PairScoreMatrix(values=values, present=present)


def support_scores(matrix: PairScoreMatrix) -> dict[str, float]:
    """Per-source sum of pair scores against the other sources."""
    sums = matrix.values.sum(axis=1)
    return {role: float(sums[i]) for i, role in enumerate(ROLES)}


def select_from_matrix(matrix: PairScoreMatrix) -> tuple[str, dict[str, float]]:
    """Pick the present source with the largest support.

    Ties (including the everything-scores-zero case) go to the highest
    priority role: track, then boxvis, then hqsam. With no present source
    there is nothing to select.
    """
    if not matrix.present:
        raise ValueError("no present candidates")
    support = support_scores(matrix)
    best = max(matrix.present, key=lambda r: (support[r], -ROLE_PRIORITY.index(r)))
    return best, support


def select_best_mask(
    candidates: Mapping[str, Optional[np.ndarray]], gtbox: Optional[BBox]
) -> tuple[str, dict[str, float]]:
    """Choose the most mutually supported candidate mask for one frame."""
    return select_from_matrix(score_candidates(candidates, gtbox))


@dataclass
class Assignment:
    pairs: dict[int, int] = field(default_factory=dict)  # predicted id -> gt id
    pair_scores: dict[int, float] = field(default_factory=dict)
    unmatched_predicted: list[int] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)


def tracklet_score(
    pred_masks: Sequence[Optional[np.ndarray]],
    gt_boxes: Sequence[Optional[BBox]],
    aux_masks: Sequence[Optional[np.ndarray]],
) -> float:
    """Mean pair score over frames where mask, box, and reference all exist."""
    total = 0.0
    n = 0
    for mask, box, aux in zip(pred_masks, gt_boxes, aux_masks):
        if mask is None or box is None or aux is None:
            continue
        total += pair_score(mask, aux, box).value
        n += 1
    return total / n if n else 0.0


def match_scores(scores: np.ndarray, min_score: float = 0.05) -> list[tuple[int, int, float]]:
    """Maximize the total score over one-to-one row/column pairings.

    Returns (row, column, score) triples of the optimal matching with
    every pair scoring below min_score dropped afterwards.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return []
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return [(int(i), int(j), float(scores[i, j])) for i, j in zip(rows, cols) if scores[i, j] >= min_score]


def assign_tracklets(
    predicted: Mapping[int, Sequence[Optional[np.ndarray]]],
    gt_boxes: Mapping[int, Sequence[Optional[BBox]]],
    aux_masks: Mapping[int, Sequence[Optional[np.ndarray]]],
    min_score: float = 0.05,
) -> Assignment:
    """Optimal one-to-one matching of predicted tracklets to instances.

    Degenerate inputs produce an empty assignment with everything
    unmatched. Pairs whose mean score falls below min_score are dropped
    back to unmatched rather than forced.
    """
    pred_ids = sorted(predicted)
    gt_ids = sorted(gt_boxes)
    if not pred_ids or not gt_ids:
        return Assignment(unmatched_predicted=pred_ids, unmatched_gt=gt_ids)
    scores = np.zeros((len(pred_ids), len(gt_ids)), dtype=float)
    for i, pid in enumerate(pred_ids):
        for j, gid in enumerate(gt_ids):
            scores[i, j] = tracklet_score(predicted[pid], gt_boxes[gid], aux_masks[gid])
    out = Assignment()
    taken_gt = set()
    for i, j, s in match_scores(scores, min_score):
        out.pairs[pred_ids[i]] = gt_ids[j]
        out.pair_scores[pred_ids[i]] = s
        taken_gt.add(gt_ids[j])
    out.unmatched_predicted = [p for p in pred_ids if p not in out.pairs]
    out.unmatched_gt = [g for g in gt_ids if g not in taken_gt]
    return out
