"""
Thermal phantoms and ExtremeAug
===============================

Renders one synthetic subject under each cover condition, then runs the
ExtremeAug occlusion chain step by step on the uncovered frame.
Figures land in ``demo_out/`` next to this script.
"""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from inbed_pose.data_io import PhantomConfig, synth_samples
from inbed_pose.extreme_aug import (
    ExtremeAugConfig, add_dark_kernels, dim_below_line, erode, extreme_aug, gaussian_blur,
    sample_rng, select_cover_line,
)

out = Path(__file__).with_name("demo_out")
out.mkdir(exist_ok=True)

# the same pose rendered three ways; labels only differ by cover
frames = {}
for cover in ("none", "thin", "thick"):
    s = synth_samples(PhantomConfig(n_subjects=1, poses_per_subject=1, seed=7, cover=cover))[0]
    frames[cover] = s
    print(f"{cover:8s} mean={s.image.pixels.mean():.3f} max={s.image.pixels.max():.3f}")

fig, axes = plt.subplots(1, 3, figsize=(9, 4))
for ax, (name, s) in zip(axes, frames.items()):
    ax.imshow(s.image.pixels, cmap="inferno", vmin=0, vmax=1)
    x, y = s.keypoints.coords.T
    ax.scatter(x, y, s=8, c="cyan")
    ax.set_title(name)
    ax.axis("off")
fig.savefig(out / "phantoms.png", dpi=100, bbox_inches="tight")

# ExtremeAug by hand, replaying the stream the one-call version uses
img = frames["none"].image
cfg = ExtremeAugConfig(seed=3)
rng = sample_rng(cfg.seed, 0)
row = select_cover_line(rng, img.pixels.shape[0])
factor = rng.uniform(*cfg.dim_factor_range)
n = int(rng.integers(cfg.n_dark_kernels_range[0], cfg.n_dark_kernels_range[1] + 1))
steps = [("input", img)]
steps.append((f"dim below row {row}", dim_below_line(steps[-1][1], row, factor)))
steps.append((f"{n} dark patches", add_dark_kernels(steps[-1][1], rng, n, cfg.dark_kernel_size)))
steps.append(("erosion", erode(steps[-1][1], cfg.erosion_kernel)))
steps.append(("blur", gaussian_blur(steps[-1][1], cfg.blur_kernel, cfg.blur_sigma)))

one_call = extreme_aug(img, cfg, sample_rng(cfg.seed, 0))
print("step-by-step matches extreme_aug:", np.array_equal(one_call.pixels, steps[-1][1].pixels))

fig, axes = plt.subplots(1, len(steps), figsize=(3 * len(steps), 4))
for ax, (title, im) in zip(axes, steps):
    ax.imshow(im.pixels, cmap="inferno", vmin=0, vmax=1)
    ax.set_title(title, fontsize=9)
    ax.axis("off")
fig.savefig(out / "extreme_aug_steps.png", dpi=100, bbox_inches="tight")
print("wrote", out / "phantoms.png", "and", out / "extreme_aug_steps.png")
