"""Dense and run-length encoded binary mask primitives.

A mask is a plain boolean numpy array of shape (height, width), row-major.
The run-length form and its compressed string codec follow the common
annotation-file convention: pixels are scanned in column-major order and
the first run counts background pixels, so a mask whose first pixel is
foreground starts with a zero-length background run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "BBox",
    "Rle",
    "MaskShapeError",
    "RleError",
    "bbox_of",
    "box_iou",
    "box_mask",
    "expand_box",
    "mask_area",
    "mask_clip",
    "mask_intersect",
    "mask_iou",
    "mask_subtract",
    "rle_area",
    "rle_decode",
    "rle_encode",
    "rle_from_string",
    "rle_to_string",
]

# chars 48..111 encode 6 bits each: 5 value bits plus a continuation flag
_CHAR_BASE = 48
_CHAR_MAX = 111


class MaskShapeError(ValueError):
    """Operands do not share the same (height, width)."""


class RleError(ValueError):
    """Run-length data violates its invariants."""


class BBox(NamedTuple):
    """Axis-aligned pixel box covering columns [x, x+w) and rows [y, y+h)."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def is_empty(self) -> bool:
        return self.w <= 0 or self.h <= 0


@dataclass(frozen=True)
class Rle:
    """Column-major run-length encoding of a binary mask.

    counts alternate background/foreground run lengths, starting with
    background. Construction validates the invariants: counts sum to
    height*width, all counts are non-negative, and no count after the
    first is zero (a leading zero marks a mask whose first pixel is
    foreground).
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise RleError(f"bad mask size {self.height}x{self.width}")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise RleError("empty counts")
        if any(c < 0 for c in counts):
            raise RleError(f"negative run length in {counts[:8]}...")
        if any(c == 0 for c in counts[1:]):
            raise RleError("zero-length run after the first")
        total = sum(counts)
        if total != self.height * self.width:
            raise RleError(
                f"counts sum {total} != {self.height}*{self.width}"
            )


def _as_mask(mask: np.ndarray) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise MaskShapeError(f"mask must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MaskShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def mask_area(mask: np.ndarray) -> int:
    """Number of foreground pixels."""
    return int(np.count_nonzero(_as_mask(mask)))


def bbox_of(mask: np.ndarray) -> Optional[BBox]:
    """Tight bounding box of the foreground, or None for an empty mask."""
    m = _as_mask(mask)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return BBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two masks; 0.0 when the union is empty."""
    ma, mb = _as_mask(a), _as_mask(b)
    _check_same_shape(ma, mb)
    inter = int(np.count_nonzero(ma & mb))
    union = int(np.count_nonzero(ma)) + int(np.count_nonzero(mb)) - inter
    if union == 0:
        return 0.0
    return inter / union


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when either is empty.

    Computed on integer pixel areas, so for integer boxes it matches
    mask_iou of the boxes' rasterizations exactly.
    """
    if a.is_empty() or b.is_empty():
        return 0.0
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def mask_intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ma, mb = _as_mask(a), _as_mask(b)
    _check_same_shape(ma, mb)
    return ma & mb


def mask_subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pixels of a that are not in b."""
    ma, mb = _as_mask(a), _as_mask(b)
    _check_same_shape(ma, mb)
    return ma & ~mb


def expand_box(box: BBox, margin: int, height: int, width: int) -> BBox:
    """Grow box by margin on every side, clamped to the canvas."""
    x0 = max(0, box.x - margin)
    y0 = max(0, box.y - margin)
    x1 = min(width, box.x + box.w + margin)
    y1 = min(height, box.y + box.h + margin)
    return BBox(x0, y0, max(0, x1 - x0), max(0, y1 - y0))


def box_mask(box: BBox, height: int, width: int) -> np.ndarray:
    """Rasterize a box onto an all-background canvas."""
    out = np.zeros((height, width), dtype=bool)
    if box.is_empty():
        return out
    x0 = max(0, box.x)
    y0 = max(0, box.y)
    x1 = min(width, box.x + box.w)
    y1 = min(height, box.y + box.h)
    if x1 > x0 and y1 > y0:
        out[y0:y1, x0:x1] = True
    return out


def mask_clip(mask: np.ndarray, box: BBox, margin: int = 0) -> np.ndarray:
    """Zero out every pixel outside box expanded by margin."""
    m = _as_mask(mask)
    h, w = m.shape
    if box.is_empty():
        return np.zeros_like(m)
    grown = expand_box(box, margin, h, w)
    out = np.zeros_like(m)
    if not grown.is_empty():
        sl = (slice(grown.y, grown.y + grown.h), slice(grown.x, grown.x + grown.w))
        out[sl] = m[sl]
    return out


def rle_encode(mask: np.ndarray) -> Rle:
    """Run-length encode a mask (column-major scan, background first)."""
    m = _as_mask(mask)
    h, w = m.shape
    flat = m.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return Rle(h, w, tuple(int(r) for r in runs))


def rle_decode(rle: Rle) -> np.ndarray:
    """Decode back to a dense boolean mask."""
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.height, rle.width), order="F")


def rle_area(rle: Rle) -> int:
    """Foreground pixel count straight from the run lengths."""
    return int(sum(rle.counts[1::2]))


def rle_to_string(rle: Rle) -> str:
    """Pack run lengths into the compressed printable-character form.

    From the third count on, each count is stored as a delta against the
    count two positions back (runs of the same pixel value), which keeps
    the stored values small. Each value is then emitted in 5-bit chunks,
    low bits first, with bit 0x20 flagging continuation; sign extension
    on decode is driven by bit 0x10 of the final chunk.
    """
    counts = rle.counts
    out: list[str] = []
    for i, count in enumerate(counts):
        x = count if i < 2 else count - counts[i - 2]
        while True:
            chunk = x & 0x1F
            x >>= 5
            more = (x != -1) if (chunk & 0x10) else (x != 0)
            if more:
                chunk |= 0x20
            out.append(chr(_CHAR_BASE + chunk))
            if not more:
                break
    return "".join(out)


def rle_from_string(text: str, height: int, width: int) -> Rle:
    """Inverse of rle_to_string; validates the result's invariants."""
    counts: list[int] = []
    pos = 0
    n = len(text)
    while pos < n:
        x = 0
        shift = 0
        while True:
            if pos >= n:
                raise RleError("truncated chunk sequence")
            code = ord(text[pos])
            if code < _CHAR_BASE or code > _CHAR_MAX:
                raise RleError(f"character {text[pos]!r} out of range at {pos}")
            chunk = code - _CHAR_BASE
            x |= (chunk & 0x1F) << shift
            pos += 1
            shift += 5
            if not chunk & 0x20:
                if chunk & 0x10:
                    x -= 1 << shift
                break
        if len(counts) >= 2:
            x += counts[-2]
        counts.append(x)
    return Rle(height, width, tuple(counts))
