import numpy as np

from maskpipe.dataset import CategoryDef, Dataset, FrameLabel, InstanceAnnotation, VideoMeta
from maskpipe.masks import BBox, bbox_of, rle_area, rle_encode


def build_dataset(video_specs, height, width, categories=None, category_of=None):
    """Assemble a Dataset from per-video {instance id: [mask or None, ...]} dicts."""
    videos = []
    annotations = []
    for vid in sorted(video_specs):
        instances = video_specs[vid]
        length = max(len(track) for track in instances.values())
        videos.append(
            VideoMeta(id=vid, length=length, height=height, width=width,
                      frame_names=tuple(f"{vid:04d}/{t:05d}.jpg" for t in range(length)))
        )
        for iid in sorted(instances):
            frames = []
            for mask in instances[iid]:
                if mask is None:
                    frames.append(None)
                    continue
                rle = rle_encode(mask)
                frames.append(FrameLabel(segmentation=rle, bbox=bbox_of(mask), area=rle_area(rle)))
            frames.extend([None] * (length - len(frames)))
            cat = category_of(iid) if category_of else 1
            annotations.append(InstanceAnnotation(id=iid, video_id=vid, category_id=cat, frames=frames))
    cats = categories or [CategoryDef(1, "thing")]
    return Dataset(videos=videos, categories=cats, annotations=annotations)


def random_mask(rng, h, w):
    """Structured random mask: rectangles, ellipses, noise, edge cases."""
    kind = int(rng.integers(0, 6))
    m = np.zeros((h, w), dtype=bool)
    if kind == 0:
        return m
    if kind == 1:
        return np.ones((h, w), dtype=bool)
    if kind == 2:
        for _ in range(int(rng.integers(1, 4))):
            x0 = int(rng.integers(0, w))
            x1 = int(rng.integers(x0, w + 1))
            y0 = int(rng.integers(0, h))
            y1 = int(rng.integers(y0, h + 1))
            m[y0:y1, x0:x1] = True
        return m
    if kind == 3:
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        ry = rng.uniform(1.0, max(2.0, h / 2))
        rx = rng.uniform(1.0, max(2.0, w / 2))
        yy, xx = np.mgrid[0:h, 0:w]
        return ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0
    if kind == 4:
        density = rng.uniform(0.05, 0.95) if h * w <= 1600 else 0.02
        return rng.random((h, w)) < density
    m[int(rng.integers(0, h)), int(rng.integers(0, w))] = True
    return m


def random_box(rng, h, w, allow_empty=False):
    if allow_empty and rng.random() < 0.1:
        return BBox(int(rng.integers(0, w)), int(rng.integers(0, h)), 0, 0)
    x = int(rng.integers(0, w))
    y = int(rng.integers(0, h))
    bw = int(rng.integers(1, w - x + 1))
    bh = int(rng.integers(1, h - y + 1))
    return BBox(x, y, bw, bh)


def pixel_iou_oracle(a, b):
    """Brute-force per-pixel IoU, no numpy set ops."""
    inter = 0
    union = 0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            pa = bool(a[r, c])
            pb = bool(b[r, c])
            if pa and pb:
                inter += 1
            if pa or pb:
                union += 1
    if union == 0:
        return 0.0
    return inter / union


def column_scan_runs_oracle(mask):
    """Run lengths from a literal column-major pixel walk."""
    runs = []
    current = 0
    length = 0
    for c in range(mask.shape[1]):
        for r in range(mask.shape[0]):
            v = int(mask[r, c])
            if v == current:
                length += 1
            else:
                runs.append(length)
                current = v
                length = 1
    runs.append(length)
    return runs
