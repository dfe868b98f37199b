"""Consistency scoring, per-frame source selection, tracklet assignment.

The pair score multiplies three agreement terms: mask-vs-mask IoU and
each mask's box fit against the annotated box. Scores drive both the
per-frame pick among candidate sources and the video-level matching of
anonymous tracklets to instances.
"""
import numpy as np

from maskpipe.masks import bbox_of
from maskpipe.scoring import (
    assign_tracklets,
    pair_score,
    score_candidates,
    select_best_mask,
    select_from_matrix,
)


def rect(h, w, y0, y1, x0, x1):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


# Two imperfect masks of the same object and its annotated box.
a = rect(12, 12, 2, 7, 3, 8)        # a bit short
b = rect(12, 12, 2, 8, 3, 9)        # the true extent
gtbox = bbox_of(b)

s = pair_score(a, b, gtbox)
print("mask IoU        ", round(s.mask_iou, 3))
print("box fit (a, b)  ", round(s.box_iou_a, 3), round(s.box_iou_b, 3))
print("pair score      ", round(s.value, 3))

# Per frame, every present source is scored against every other; the
# one with the largest total support wins. Ties fall to the tracker,
# then the detector, by stability of identity.
candidates = {
    "hqsam": rect(12, 12, 2, 8, 3, 9),
    "boxvis": rect(12, 12, 1, 8, 3, 10),   # overshoots
    "track": rect(12, 12, 2, 8, 4, 9),     # clipped on the left
}
matrix = score_candidates(candidates, gtbox)
role, support = select_from_matrix(matrix)
print("\nsupport per source:", {k: round(v, 3) for k, v in support.items()})
print("selected:", role)
assert select_best_mask(candidates, gtbox)[0] == role

# Tracklets arrive with arbitrary ids; assignment recovers which gt
# instance each one follows. Mask evidence is the gt mask here, as in
# the ground-truth filters.
left = [rect(10, 10, 1, 5, 0, 4)] * 4
right = [rect(10, 10, 5, 9, 6, 10)] * 4
predicted = {901: right, 902: left}
gt_boxes = {1: [bbox_of(m) for m in left], 2: [bbox_of(m) for m in right]}
aux = {1: left, 2: right}
result = assign_tracklets(predicted, gt_boxes, aux)
print("\ntracklet -> instance:", result.pairs)
print("pair scores:", {k: round(v, 3) for k, v in result.pair_scores.items()})
