"""Reference loss kernels for box-supervised mask training.

Every kernel returns (value, gradient) where the gradient is taken with
respect to the soft mask (or probability vector) argument, so the
analytic forms can be checked against finite differences. Inputs are
plain numpy arrays: soft masks are float (h, w) in [0, 1], images are
float (h, w, 3) in LAB space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .masks import BBox, box_mask

__all__ = [
    "EdgeSet",
    "LossConfig",
    "axis_projection",
    "build_edges",
    "combined_loss",
    "dice_loss",
    "finite_difference_gradient",
    "focal_loss",
    "gradient_check_report",
    "pairwise_loss",
    "projection_loss",
]

_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    theta: float = 2.0          # color similarity bandwidth
    tau_color: float = 0.2      # similarity threshold for keeping an edge
    w_box: float = 1.0          # weight of projection + pairwise
    w_mask: float = 0.5         # weight of focal + dice
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_eps: float = 1.0
    pairwise_radius: int = 1
    pairwise_dilation: int = 2

    def __post_init__(self) -> None:
        if self.theta <= 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not 0 <= self.tau_color < 1:
            raise ValueError(f"tau_color must be in [0, 1), got {self.tau_color}")
        if self.dice_eps <= 0:
            raise ValueError(f"dice_eps must be positive, got {self.dice_eps}")
        if self.focal_gamma < 0 or not 0 <= self.focal_alpha <= 1:
            raise ValueError("bad focal parameters")
        if self.pairwise_radius < 1 or self.pairwise_dilation < 1:
            raise ValueError("pairwise radius and dilation must be >= 1")


def axis_projection(m: np.ndarray, axis: str) -> np.ndarray:
    """Max-projection of a mask onto an image axis.

    axis "x" gives the per-column maximum (a width-length vector),
    axis "y" the per-row maximum.
    """
    m = np.asarray(m, dtype=float)
    if axis == "x":
        return m.max(axis=0)
    if axis == "y":
        return m.max(axis=1)
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def dice_loss(p: np.ndarray, g: np.ndarray, eps: float = 1.0) -> tuple[float, np.ndarray]:
    """1 - (2 sum(pg) + eps) / (sum(p^2) + sum(g^2) + eps), with d/dp."""
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    num = 2.0 * float((p * g).sum()) + eps
    den = float((p * p).sum()) + float((g * g).sum()) + eps
    loss = 1.0 - num / den
    grad = (-2.0 * g) / den + (num * 2.0 * p) / (den * den)
    return loss, grad


def projection_loss(m: np.ndarray, box_raster: np.ndarray, eps: float = 1.0) -> tuple[float, np.ndarray]:
    """Dice between per-axis max projections of mask and box rasterization.

    The subgradient of each max routes to the first (lowest-index)
    maximizing pixel of its row or column.
    """
    m = np.asarray(m, dtype=float)
    g = np.asarray(box_raster, dtype=float)
    if m.shape != g.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {g.shape}")
    grad = np.zeros_like(m)
    loss_x, gx = dice_loss(m.max(axis=0), g.max(axis=0), eps)
    rows = m.argmax(axis=0)
    grad[rows, np.arange(m.shape[1])] += gx
    loss_y, gy = dice_loss(m.max(axis=1), g.max(axis=1), eps)
    cols = m.argmax(axis=1)
    grad[np.arange(m.shape[0]), cols] += gy
    return loss_x + loss_y, grad


@dataclass
class EdgeSet:
    """Unordered neighbor pairs kept by the color-similarity threshold.

    a and b are flat row-major pixel indices; sim holds the retained
    similarity values, all in (0, 1].
    """

    a: np.ndarray
    b: np.ndarray
    sim: np.ndarray
    height: int
    width: int
    theta: float
    tau_color: float
    radius: int
    dilation: int

    def __len__(self) -> int:
        return int(self.a.size)


def build_edges(
    image: np.ndarray,
    region: Optional[BBox],
    cfg: LossConfig = LossConfig(),
    radius: Optional[int] = None,
    dilation: Optional[int] = None,
) -> EdgeSet:
    """Neighbor pairs at Chebyshev radius r with step d, filtered by color.

    A pair is considered when at least one endpoint lies inside region
    (None means the whole canvas) and kept when its color similarity
    exp(-||lab_a - lab_b|| / theta) exceeds tau_color. Each unordered
    pair appears exactly once, in a deterministic order.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (h, w, 3), got {img.shape}")
    h, w = img.shape[:2]
    r = cfg.pairwise_radius if radius is None else radius
    d = cfg.pairwise_dilation if dilation is None else dilation
    if r < 1 or d < 1:
        raise ValueError("radius and dilation must be >= 1")
    if region is None:
        in_region = np.ones((h, w), dtype=bool)
    else:
        in_region = box_mask(region, h, w)
    rows, cols = np.mgrid[0:h, 0:w]
    a_parts, b_parts, s_parts = [], [], []
    flat = img.reshape(-1, 3)
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx <= 0:
                continue
            oy, ox = dy * d, dx * d
            y0 = max(0, -oy)
            y1 = min(h, h - oy)
            x0 = max(0, -ox)
            x1 = min(w, w - ox)
            if y1 <= y0 or x1 <= x0:
                continue
            pr = rows[y0:y1, x0:x1]
            pc = cols[y0:y1, x0:x1]
            qr = pr + oy
            qc = pc + ox
            keep = in_region[pr, pc] | in_region[qr, qc]
            if not keep.any():
                continue
            pa = (pr * w + pc)[keep]
            qa = (qr * w + qc)[keep]
            diff = flat[pa] - flat[qa]
            sim = np.exp(-np.sqrt((diff * diff).sum(axis=1)) / cfg.theta)
            similar = sim > cfg.tau_color
            a_parts.append(pa[similar])
            b_parts.append(qa[similar])
            s_parts.append(sim[similar])
    if a_parts:
        a = np.concatenate(a_parts)
        b = np.concatenate(b_parts)
        s = np.concatenate(s_parts)
    else:
        a = np.zeros(0, dtype=int)
        b = np.zeros(0, dtype=int)
        s = np.zeros(0, dtype=float)
    return EdgeSet(a=a, b=b, sim=s, height=h, width=w, theta=cfg.theta,
                   tau_color=cfg.tau_color, radius=r, dilation=d)


def pairwise_loss(m: np.ndarray, edges: EdgeSet) -> tuple[float, np.ndarray]:
    """Mean -log P over the edge set, P = m_a m_b + (1-m_a)(1-m_b).

    P is clamped below at 1e-7; an empty edge set gives loss 0.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (edges.height, edges.width):
        raise ValueError(f"mask shape {m.shape} != edge canvas {(edges.height, edges.width)}")
    grad = np.zeros(m.size, dtype=float)
    n = len(edges)
    if n == 0:
        return 0.0, grad.reshape(m.shape)
    flat = m.ravel()
    ma = flat[edges.a]
    mb = flat[edges.b]
    p = ma * mb + (1.0 - ma) * (1.0 - mb)
    clamped = p < _CLAMP
    pc = np.maximum(p, _CLAMP)
    loss = float(np.mean(-np.log(pc)))
    # d(-log P)/dm_a = -(2 m_b - 1)/P, zero where the clamp is active
    ga = np.where(clamped, 0.0, -(2.0 * mb - 1.0) / pc) / n
    gb = np.where(clamped, 0.0, -(2.0 * ma - 1.0) / pc) / n
    np.add.at(grad, edges.a, ga)
    np.add.at(grad, edges.b, gb)
    return loss, grad.reshape(m.shape)


def focal_loss(
    p: np.ndarray, g: np.ndarray, alpha: float = 0.25, gamma: float = 2.0
) -> tuple[float, np.ndarray]:
    """Mean -alpha_t (1 - p_t)^gamma log(p_t) with class weights alpha/(1-alpha).

    p_t is p on foreground pixels and 1-p elsewhere, clamped at 1e-7.
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    pt = np.where(g, p, 1.0 - p)
    clamped = pt < _CLAMP
    pt = np.maximum(pt, _CLAMP)
    alpha_t = np.where(g, alpha, 1.0 - alpha)
    onemt = 1.0 - pt
    log_pt = np.log(pt)
    loss = float(np.mean(-alpha_t * onemt**gamma * log_pt))
    # d/dpt of -(1-pt)^gamma log(pt), guarding 0^(gamma-1) at pt == 1
    term1 = np.zeros_like(pt)
    if gamma > 0:
        safe = onemt > 0
        term1[safe] = -gamma * onemt[safe] ** (gamma - 1.0) * log_pt[safe]
    dpt = -alpha_t * (term1 + onemt**gamma / pt)
    dpt = np.where(clamped, 0.0, dpt)
    grad = np.where(g, dpt, -dpt) / p.size
    return loss, grad


def combined_loss(
    m: np.ndarray,
    pseudo: np.ndarray,
    box: BBox,
    image: np.ndarray,
    cfg: LossConfig = LossConfig(),
) -> tuple[float, dict[str, float], np.ndarray]:
    """Weighted training loss: w_box (projection + pairwise) + w_mask (focal + dice).

    The box terms supervise against the annotated box and image colors;
    the mask terms supervise against the pseudo mask. Returns
    (total, per-term values, gradient w.r.t. m).
    """
    m = np.asarray(m, dtype=float)
    pseudo_b = np.asarray(pseudo, dtype=bool)
    raster = box_mask(box, m.shape[0], m.shape[1])
    proj, proj_grad = projection_loss(m, raster, cfg.dice_eps)
    edges = build_edges(image, box, cfg)
    pair, pair_grad = pairwise_loss(m, edges)
    foc, foc_grad = focal_loss(m, pseudo_b, cfg.focal_alpha, cfg.focal_gamma)
    dice, dice_grad_flat = dice_loss(m.ravel(), pseudo_b.ravel().astype(float), cfg.dice_eps)
    box_term = proj + pair
    mask_term = foc + dice
    total = cfg.w_box * box_term + cfg.w_mask * mask_term
    grad = cfg.w_box * (proj_grad + pair_grad) + cfg.w_mask * (foc_grad + dice_grad_flat.reshape(m.shape))
    parts = {
        "projection": proj,
        "pairwise": pair,
        "focal": foc,
        "dice": dice,
        "box_term": box_term,
        "mask_term": mask_term,
    }
    return total, parts, grad


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _tie_safe_mask(rng: np.random.Generator, h: int, w: int, gap: float = 2e-3) -> np.ndarray:
    """Soft mask whose row/column maxima are isolated, so the projection
    subgradient is stable under finite-difference probing."""
    while True:
        m = rng.uniform(0.05, 0.95, (h, w))
        ok = True
        for axis in (0, 1):
            if m.shape[axis] < 2:
                continue
            srt = np.sort(m, axis=axis)
            if np.any(srt.take(-1, axis=axis) - srt.take(-2, axis=axis) < gap):
                ok = False
                break
        if ok:
            return m


def gradient_check_report(
    seed: int = 0, trials: int = 20, size: int = 12, tol: float = 1e-4
) -> list[tuple[str, float, bool]]:
    """Compare analytic and finite-difference gradients per loss kernel.

    Returns (kernel name, worst relative error, passed) rows; backs the
    losscheck command.
    """
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = {"projection": 0.0, "pairwise": 0.0, "focal": 0.0, "dice": 0.0, "combined": 0.0}
    for _ in range(trials):
        m = _tie_safe_mask(rng, size, size)
        pseudo = rng.random((size, size)) < 0.5
        box = BBox(int(rng.integers(0, size // 2)), int(rng.integers(0, size // 2)),
                   int(rng.integers(2, size // 2 + 1)), int(rng.integers(2, size // 2 + 1)))
        image = rng.uniform(40, 60, (size, size, 3)) + rng.normal(0, 1.0, (size, size, 3))
        raster = box_mask(box, size, size)
        edges = build_edges(image, box, cfg)
        g = rng.random(size * size)

        cases = {
            "projection": (lambda x: projection_loss(x, raster, cfg.dice_eps)[0],
                           projection_loss(m, raster, cfg.dice_eps)[1], m),
            "pairwise": (lambda x: pairwise_loss(x, edges)[0], pairwise_loss(m, edges)[1], m),
            "focal": (lambda x: focal_loss(x, pseudo, cfg.focal_alpha, cfg.focal_gamma)[0],
                      focal_loss(m, pseudo, cfg.focal_alpha, cfg.focal_gamma)[1], m),
            "dice": (lambda x: dice_loss(x, g, cfg.dice_eps)[0],
                     dice_loss(m.ravel(), g, cfg.dice_eps)[1], m.ravel()),
            "combined": (lambda x: combined_loss(x, pseudo, box, image, cfg)[0],
                         combined_loss(m, pseudo, box, image, cfg)[2], m),
        }
        for name, (f, analytic, x) in cases.items():
            fd = finite_difference_gradient(f, x)
            scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-12)
            err = float(np.linalg.norm(analytic - fd)) / scale
            worst[name] = max(worst[name], err)
    return [(name, err, err < tol) for name, err in worst.items()]
