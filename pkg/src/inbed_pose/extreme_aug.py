"""Extreme-occlusion augmentation for generated covered images.

The pipeline, applied in order:

1. pick a cover line in the second eighth of the frame (rows ``[H//8, H//4)``),
2. dim every row at or below it,
3. zero out a handful of square patches,
4. grey-scale erosion,
5. Gaussian blur.

Every stage maps [0, 1] images to [0, 1] images and leaves geometry alone, so
keypoint labels pass through untouched.  Randomness is always drawn from an
explicit ``numpy.random.Generator``; :func:`sample_rng` derives independent
per-sample streams so parallel workers reproduce serial output.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, List, Tuple

import numpy as np
from scipy import ndimage

from .core_types import ThermalImage
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ExtremeAugConfig:
    dim_factor_range: Tuple[float, float] = (0.6, 0.9)
    n_dark_kernels_range: Tuple[int, int] = (5, 15)
    dark_kernel_size: int = 20
    erosion_kernel: int = 3
    blur_kernel: int = 5
    blur_sigma: float = 1.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.dim_factor_range
        if not 0 < lo <= hi <= 1:
            raise InvalidArgumentError(f"dim_factor_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        nlo, nhi = self.n_dark_kernels_range
        if not 0 <= nlo <= nhi:
            raise InvalidArgumentError(f"bad n_dark_kernels_range {(nlo, nhi)}")
        if self.dark_kernel_size < 1:
            raise InvalidArgumentError("dark_kernel_size must be >= 1")
        _check_odd(self.erosion_kernel, "erosion_kernel")
        _check_odd(self.blur_kernel, "blur_kernel")
        if not self.blur_sigma > 0:
            raise InvalidArgumentError("blur_sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_odd(k, name):
    if int(k) != k or k < 1 or k % 2 == 0:
        raise InvalidArgumentError(f"{name} must be a positive odd integer, got {k}")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` under global ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def select_cover_line(rng: np.random.Generator, height: int) -> int:
    """Uniform row in ``[height // 8, height // 4)``."""
    if height < 8:
        raise InvalidArgumentError(f"height must be >= 8, got {height}")
    return int(rng.integers(height // 8, height // 4))


def dim_below_line(img: ThermalImage, row: int, factor: float) -> ThermalImage:
    if not 0 < factor <= 1:
        raise InvalidArgumentError(f"factor must lie in (0, 1], got {factor}")
    if not 0 <= row < img.height:
        raise InvalidArgumentError(f"row {row} outside image of height {img.height}")
    out = img.pixels.copy()
    out[row:] *= factor
    return ThermalImage(out)


def add_dark_kernels(img: ThermalImage, rng: np.random.Generator, n: int, size: int = 20) -> ThermalImage:
    """Zero ``n`` square ``size`` patches placed uniformly inside the frame."""
    if n < 0:
        raise InvalidArgumentError("n must be non-negative")
    if size < 1 or size > min(img.height, img.width):
        raise InvalidArgumentError(f"patch size {size} does not fit a {img.dims} image")
    out = img.pixels.copy()
    tops = rng.integers(0, img.height - size + 1, size=n)
    lefts = rng.integers(0, img.width - size + 1, size=n)
    for t, l in zip(tops, lefts):
        out[t:t + size, l:l + size] = 0.0
    return ThermalImage(out)


def erode(img: ThermalImage, kernel: int = 3) -> ThermalImage:
    """Square min-filter with edge replication."""
    _check_odd(kernel, "kernel")
    return ThermalImage(ndimage.grey_erosion(img.pixels, size=(kernel, kernel), mode="nearest"))


def gaussian_kernel1d(kernel: int, sigma: float) -> np.ndarray:
    _check_odd(kernel, "kernel")
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    r = kernel // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-t * t / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_blur(img: ThermalImage, kernel: int = 5, sigma: float = 1.5) -> ThermalImage:
    """Separable Gaussian convolution over a ``kernel`` window, edges replicated."""
    g = gaussian_kernel1d(kernel, sigma)
    out = ndimage.correlate1d(img.pixels, g, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, g, axis=1, mode="nearest")
    return ThermalImage(np.clip(out, 0.0, 1.0))


def extreme_aug(img: ThermalImage, cfg: ExtremeAugConfig = ExtremeAugConfig(), rng: np.random.Generator = None) -> ThermalImage:
    """Run the full occlusion chain on one image.

    Without an explicit ``rng`` the stream for sample index 0 under
    ``cfg.seed`` is used.
    """
    if rng is None:
        rng = sample_rng(cfg.seed, 0)
    row = select_cover_line(rng, img.height)
    lo, hi = cfg.dim_factor_range
    factor = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    nlo, nhi = cfg.n_dark_kernels_range
    n = int(rng.integers(nlo, nhi + 1))
    out = dim_below_line(img, row, factor)
    out = add_dark_kernels(out, rng, n, cfg.dark_kernel_size)
    out = erode(out, cfg.erosion_kernel)
    return gaussian_blur(out, cfg.blur_kernel, cfg.blur_sigma)


def extreme_aug_batch(images: Iterable[ThermalImage], cfg: ExtremeAugConfig = ExtremeAugConfig(),
                      start_index: int = 0) -> List[ThermalImage]:
    """Augment a sequence, giving image ``i`` the stream ``(cfg.seed, start_index + i)``."""
    return [extreme_aug(im, cfg, sample_rng(cfg.seed, start_index + i)) for i, im in enumerate(images)]
