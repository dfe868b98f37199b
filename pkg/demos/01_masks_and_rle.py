"""Masks, boxes, and the run-length codec.

Walks a small binary mask through every representation the library
uses: dense array, run counts, compressed string, and back.
"""
import numpy as np

from maskpipe.masks import (
    bbox_of,
    box_iou,
    mask_clip,
    mask_iou,
    rle_decode,
    rle_encode,
    rle_from_string,
    rle_to_string,
)

# A tiny scene: an L-shaped blob on an 8x8 canvas.
m = np.zeros((8, 8), dtype=bool)
m[2:6, 2] = True
m[5, 2:5] = True
print("dense mask:")
print(m.astype(int))

# Encoding scans columns top to bottom, left to right; the first run
# counts background pixels.
rle = rle_encode(m)
print("\nrun counts:", list(rle.counts))
print("area:", sum(rle.counts[1::2]), "pixels")

s = rle_to_string(rle)
print("compressed string:", repr(s))

back = rle_decode(rle_from_string(s, 8, 8))
print("round-trip exact:", bool(np.array_equal(back, m)))

# Geometry helpers. Boxes are (x, y, w, h) in pixels.
box = bbox_of(m)
print("\ntight box:", box)

shifted = np.roll(m, 1, axis=1)
print("IoU with a 1px shift:", round(mask_iou(m, shifted), 4))
print("box IoU with its own box:", box_iou(box, bbox_of(shifted)))

# Clipping zeroes everything outside a box, optionally with slack.
clipped = mask_clip(shifted, box, margin=0)
print("pixels escaping the original box after the shift:",
      int(shifted.sum() - clipped.sum()))
