"""Dataset quality statistics: IoU histograms, coverage, tube IoU.

Each report comes as a small frozen dataclass plus two renderers, a
human-readable table and a CSV body, so plots can be produced by
external tooling from the CSV.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset
from .masks import mask_iou
from .pipeline import instance_tube_iou, pair_instance_ids

__all__ = [
    "DEFAULT_BINS",
    "CoverageReport",
    "CoverageRow",
    "IouHistogram",
    "TubeIouReport",
    "coverage_csv",
    "coverage_report",
    "coverage_table",
    "frame_ious",
    "histogram_csv",
    "histogram_table",
    "iou_histogram",
    "tube_csv",
    "tube_miou",
    "tube_table",
]

DEFAULT_BINS = (0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class IouHistogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    percentages: tuple[float, ...]
    total: int
    fraction_below_09: float


@dataclass(frozen=True)
class CoverageRow:
    name: str
    count: int
    percent: float


@dataclass(frozen=True)
class CoverageReport:
    gt_count: int
    rows: tuple[CoverageRow, ...]


@dataclass(frozen=True)
class TubeIouReport:
    # (video id, gt instance id, pseudo instance id, tube IoU)
    per_instance: tuple[tuple[int, int, int, float], ...]
    mean: float


def frame_ious(pseudo: Dataset, gt: Dataset, min_score: float = 0.05) -> list[float]:
    """Per-frame mask IoUs for every paired instance.

    One sample per frame where the gt instance is present; a missing
    pseudo mask on such a frame scores zero.
    """
    pairing = pair_instance_ids(gt, pseudo, min_score)
    out: list[float] = []
    for (video_id, gt_id), pseudo_id in sorted(pairing.items()):
        g = gt.annotation(video_id, gt_id)
        p = pseudo.annotation(video_id, pseudo_id)
        for t in g.present_frames():
            pm = p.mask_at(t)
            out.append(0.0 if pm is None else mask_iou(g.mask_at(t), pm))
    return out


def iou_histogram(
    pseudo: Dataset, gt: Dataset, bins: Sequence[float] = DEFAULT_BINS
) -> IouHistogram:
    """Bin per-frame IoUs of paired instances; the last bin is closed."""
    edges = tuple(float(b) for b in bins)
    if len(edges) < 2 or any(lo >= hi for lo, hi in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    if edges[0] != 0.0 or edges[-1] != 1.0:
        raise ValueError("bins must cover [0, 1]")
    values = frame_ious(pseudo, gt)
    counts, _ = np.histogram(values, bins=edges)
    total = int(counts.sum())
    if total:
        percentages = tuple(100.0 * c / total for c in counts)
        below = sum(1 for v in values if v < 0.9) / total
    else:
        percentages = tuple(0.0 for _ in counts)
        below = 0.0
    return IouHistogram(
        edges=edges,
        counts=tuple(int(c) for c in counts),
        percentages=percentages,
        total=total,
        fraction_below_09=below,
    )


def coverage_report(
    sources: Sequence[Dataset], gt: Dataset, names: Optional[Sequence[str]] = None
) -> CoverageReport:
    """Count instances with at least one present frame, relative to gt."""
    if names is None:
        names = [f"source{i + 1}" for i in range(len(sources))]
    if len(names) != len(sources):
        raise ValueError("one name per source")
    gt_count = sum(1 for a in gt.annotations if a.present_frames())
    rows = []
    for name, ds in zip(names, sources):
        count = sum(1 for a in ds.annotations if a.present_frames())
        percent = 100.0 * count / gt_count if gt_count else 0.0
        rows.append(CoverageRow(name=name, count=count, percent=percent))
    return CoverageReport(gt_count=gt_count, rows=tuple(rows))


def tube_miou(pseudo: Dataset, gt: Dataset, min_score: float = 0.05) -> TubeIouReport:
    """Whole-tube IoU per paired instance and the mean over pairs."""
    pairing = pair_instance_ids(gt, pseudo, min_score)
    per = []
    for (video_id, gt_id), pseudo_id in sorted(pairing.items()):
        iou = instance_tube_iou(
            pseudo.annotation(video_id, pseudo_id), gt.annotation(video_id, gt_id)
        )
        per.append((video_id, gt_id, pseudo_id, iou))
    mean = float(np.mean([r[3] for r in per])) if per else 0.0
    return TubeIouReport(per_instance=tuple(per), mean=mean)


def _table(header: list[str], rows: list[list[str]], footer: list[str]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)
    lines.extend(footer)
    return "\n".join(lines) + "\n"


def histogram_table(h: IouHistogram) -> str:
    rows = []
    for i, (count, pct) in enumerate(zip(h.counts, h.percentages)):
        closer = "]" if i == len(h.counts) - 1 else ")"
        rows.append([f"[{h.edges[i]:.2f}, {h.edges[i + 1]:.2f}{closer}", count, f"{pct:.2f}"])
    footer = [
        f"total instance-frames: {h.total}",
        f"fraction below 0.90: {h.fraction_below_09:.4f}",
    ]
    return _table(["iou bin", "count", "percent"], rows, footer)


def histogram_csv(h: IouHistogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["bin_lo", "bin_hi", "count", "percent"])
    for i, (count, pct) in enumerate(zip(h.counts, h.percentages)):
        w.writerow([f"{h.edges[i]:g}", f"{h.edges[i + 1]:g}", count, f"{pct:.6f}"])
    return buf.getvalue()


def coverage_table(r: CoverageReport) -> str:
    rows = [[row.name, row.count, f"{row.percent:.2f}"] for row in r.rows]
    return _table(["source", "instances", "percent of gt"], rows,
                  [f"gt instances: {r.gt_count}"])


def coverage_csv(r: CoverageReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["source", "count", "gt_count", "percent"])
    for row in r.rows:
        w.writerow([row.name, row.count, r.gt_count, f"{row.percent:.6f}"])
    return buf.getvalue()


def tube_table(r: TubeIouReport) -> str:
    rows = [[vid, gid, pid, f"{iou:.4f}"] for vid, gid, pid, iou in r.per_instance]
    return _table(["video", "gt instance", "pseudo instance", "tube iou"], rows,
                  [f"mean tube iou: {r.mean:.4f}"])


def tube_csv(r: TubeIouReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["video_id", "gt_instance_id", "pseudo_instance_id", "tube_iou"])
    for vid, gid, pid, iou in r.per_instance:
        w.writerow([vid, gid, pid, f"{iou:.6f}"])
    return buf.getvalue()
