"""The training loss kernels and their gradients.

Box supervision pulls a soft mask toward the annotated box (projection)
and toward color-consistent neighborhoods (pairwise affinity); pseudo
supervision adds focal and dice terms against a pseudo mask. All four
come with analytic gradients, verified against finite differences.
"""
import numpy as np

from maskpipe.losses import (
    LossConfig,
    build_edges,
    combined_loss,
    dice_loss,
    focal_loss,
    gradient_check_report,
    pairwise_loss,
    projection_loss,
)
from maskpipe.masks import BBox, box_mask

rng = np.random.default_rng(0)
size = 16
box = BBox(4, 3, 8, 9)
raster = box_mask(box, size, size)

# A flat image inside the box, contrasting background outside.
image = np.full((size, size, 3), 45.0)
image[raster] = (70.0, 20.0, -15.0)
image += rng.normal(0, 0.5, image.shape)

pseudo = raster.copy()
cfg = LossConfig()
edges = build_edges(image, box, cfg)
print(f"affinity edges kept inside/around the box: {len(edges)}")

# Compare a blurry guess against the exact box raster.
guess = np.clip(raster * 0.6 + 0.2 + rng.normal(0, 0.05, raster.shape), 0.01, 0.99)
exact = raster.astype(float)

for name, m in [("blurry guess", guess), ("exact raster", exact)]:
    pl = projection_loss(m, raster)[0]
    pw = pairwise_loss(m, edges)[0]
    fl = focal_loss(m, pseudo)[0]
    dl = dice_loss(m, pseudo)[0]
    print(f"{name:13s} projection {pl:.4f}  pairwise {pw:.4f}  "
          f"focal {fl:.4f}  dice {dl:.4f}")

total, parts, grad = combined_loss(guess, pseudo, box, image, cfg)
print("\ncombined:", round(total, 4), "parts:",
      {k: round(v, 4) for k, v in parts.items()})
print("gradient norm:", round(float(np.linalg.norm(grad)), 4))

# One descent step should reduce the loss.
stepped = np.clip(guess - 0.5 * grad, 1e-4, 1 - 1e-4)
print("after one step:", round(combined_loss(stepped, pseudo, box, image, cfg)[0], 4))

# The same check the losscheck command runs.
print("\nfinite-difference verification:")
for name, err, ok in gradient_check_report(seed=1, trials=5, size=10):
    print(f"  {name:10s} worst rel err {err:.2e}  {'pass' if ok else 'FAIL'}")
