"""Domain types and the heatmap codec.

Coordinates follow image convention throughout: ``x`` is the column, ``y``
the row, origin at the top-left pixel centre.  Heatmap grid point ``(c, r)``
corresponds to image point ``(c * stride, r * stride)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError

# LSP ordering, as used by the SLP annotations.
JOINT_NAMES: Tuple[str, ...] = (
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle",
    "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist",
    "thorax", "head_top",
)
NUM_JOINTS = len(JOINT_NAMES)
THORAX = JOINT_NAMES.index("thorax")
HEAD_TOP = JOINT_NAMES.index("head_top")

DEFAULT_INPUT_DIMS = (256, 256)
DEFAULT_HEATMAP_DIMS = (64, 64)
DEFAULT_SIGMA = 2.0


class DomainTag(str, enum.Enum):
    SOURCE_UNCOVER = "source_uncover"
    TARGET_THIN = "target_thin"
    TARGET_THICK = "target_thick"
    GEN_THIN = "gen_thin"
    GEN_THICK = "gen_thick"
    EXTREME_AUG = "extreme_aug"

    @property
    def labeled(self) -> bool:
        """Whether training samples of this domain carry pose labels."""
        return self in _LABELED_DOMAINS


_LABELED_DOMAINS = frozenset(
    {DomainTag.SOURCE_UNCOVER, DomainTag.GEN_THIN, DomainTag.GEN_THICK, DomainTag.EXTREME_AUG}
)


@dataclass(frozen=True)
class ThermalImage:
    """Single-channel frame with intensities normalised to [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise InvalidArgumentError(f"expected a non-empty 2-D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidArgumentError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class KeypointSet:
    """K joints as an ``(K, 2)`` array of ``(x, y)`` plus a visibility mask."""

    coords: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64).reshape(-1, 2)
        visible = np.array(self.visible, dtype=bool).reshape(-1)
        if len(coords) != len(visible):
            raise InvalidArgumentError("coords and visibility lengths differ")
        coords.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "visible", visible)

    @property
    def K(self) -> int:
        return len(self.visible)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "KeypointSet":
        """Build from ``[[x, y, v], ...]`` rows (the on-disk label format)."""
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2] > 0)

    def to_rows(self) -> list:
        return [[float(x), float(y), int(v)] for (x, y), v in zip(self.coords, self.visible)]

    def within(self, dims: Tuple[int, int]) -> bool:
        """True when every visible joint lies inside an ``(H, W)`` frame."""
        h, w = dims
        c = self.coords[self.visible]
        return bool(np.all((c[:, 0] >= 0) & (c[:, 0] <= w - 1) & (c[:, 1] >= 0) & (c[:, 1] <= h - 1)))


@dataclass(frozen=True)
class HeatmapStack:
    maps: np.ndarray
    stride: float

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 3:
            raise InvalidArgumentError(f"heatmap stack must be (K, h, w), got {maps.shape}")
        object.__setattr__(self, "maps", maps)

    @property
    def K(self) -> int:
        return self.maps.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.maps.shape[1:]


@dataclass(frozen=True)
class Sample:
    image: ThermalImage
    domain: DomainTag
    keypoints: Optional[KeypointSet] = None
    subject_id: str = ""
    frame_id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def labeled(self) -> bool:
        return self.keypoints is not None


def _check_dims(dims, name="dims"):
    if len(dims) != 2 or min(dims) <= 0:
        raise InvalidArgumentError(f"{name} must be two positive sizes, got {dims}")


def gaussian_maps(coords: np.ndarray, visible: np.ndarray, out_dims, stride, sigma) -> np.ndarray:
    """Vectorised encoder over ``(K, 2)`` coordinates; returns ``(K, h, w)``."""
    h, w = out_dims
    centres = np.asarray(coords, dtype=np.float64) / stride
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    dx2 = (cols[None, :] - centres[:, 0:1]) ** 2
    dy2 = (rows[None, :] - centres[:, 1:2]) ** 2
    d2 = dy2[:, :, None] + dx2[:, None, :]
    maps = np.exp(-d2 / (2.0 * sigma * sigma))
    maps[d2 > (3.0 * sigma) ** 2] = 0.0
    # Renormalise so the sampled peak is exactly 1 even off-grid.
    peak = maps.reshape(len(maps), -1).max(axis=1)
    good = np.asarray(visible, dtype=bool) & (peak > 0)
    maps[good] /= peak[good, None, None]
    maps[~good] = 0.0
    return maps


def encode_heatmaps(kps: KeypointSet, out_dims, stride: float, sigma: float = DEFAULT_SIGMA) -> HeatmapStack:
    """Render one truncated Gaussian per visible joint.

    ``sigma`` is measured in heatmap pixels.  Invisible joints, and joints
    whose 3-sigma support misses the grid entirely, give all-zero maps.
    """
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    if not stride > 0:
        raise InvalidArgumentError("stride must be positive")
    _check_dims(out_dims, "out_dims")
    return HeatmapStack(gaussian_maps(kps.coords, kps.visible, out_dims, stride, sigma), float(stride))


def decode_maps(maps: np.ndarray, stride: float, subpixel: bool = True):
    """Decode an ``(..., K, h, w)`` array to ``(..., K, 2)`` coords and visibility."""
    maps = np.asarray(maps, dtype=np.float64)
    lead = maps.shape[:-2]
    h, w = maps.shape[-2:]
    flat = maps.reshape(-1, h, w)
    idx = flat.reshape(len(flat), -1).argmax(axis=1)
    peak = flat.reshape(len(flat), -1).max(axis=1)
    r, c = np.divmod(idx, w)
    x = c.astype(np.float64)
    y = r.astype(np.float64)
    if subpixel:
        n = np.arange(len(flat))
        inner_x = (c > 0) & (c < w - 1)
        inner_y = (r > 0) & (r < h - 1)
        cx = np.clip(c, 1, max(w - 2, 1))
        ry = np.clip(r, 1, max(h - 2, 1))
        if w >= 3:
            dx = flat[n, r, np.minimum(cx + 1, w - 1)] - flat[n, r, cx - 1]
            x = x + np.where(inner_x, 0.25 * np.sign(dx), 0.0)
        if h >= 3:
            dy = flat[n, np.minimum(ry + 1, h - 1), c] - flat[n, ry - 1, c]
            y = y + np.where(inner_y, 0.25 * np.sign(dy), 0.0)
    coords = np.stack([x, y], axis=-1) * stride
    return coords.reshape(*lead, 2), (peak > 0).reshape(lead)


def decode_heatmaps(hm: HeatmapStack, stride: Optional[float] = None, subpixel: bool = True) -> KeypointSet:
    """Argmax decoding with an optional quarter-pixel shift toward the larger neighbour."""
    coords, visible = decode_maps(hm.maps, hm.stride if stride is None else stride, subpixel)
    return KeypointSet(coords, visible)


def rescale_keypoints(kps: KeypointSet, from_dims, to_dims) -> KeypointSet:
    """Map coordinates between frames of ``(H, W)`` sizes; visibility is kept."""
    _check_dims(from_dims, "from_dims")
    _check_dims(to_dims, "to_dims")
    (h0, w0), (h1, w1) = from_dims, to_dims
    scale = np.array([w1 / w0, h1 / h0])
    return KeypointSet(kps.coords * scale, kps.visible)


def resize_pixels(pixels: np.ndarray, dims) -> np.ndarray:
    """Resample a 2-D grid to ``(H', W')`` on the same convention as
    :func:`rescale_keypoints`: output pixel ``i`` reads input position
    ``i * H / H'``.  Downsampling is pre-filtered to limit aliasing.
    """
    _check_dims(dims, "dims")
    px = np.asarray(pixels, dtype=np.float64)
    h0, w0 = px.shape
    h1, w1 = dims
    if (h0, w0) == (h1, w1):
        return px.copy()
    sy, sx = h0 / h1, w0 / w1
    sig = (max(0.0, (sy - 1) / 2), max(0.0, (sx - 1) / 2))
    if max(sig) > 0:
        px = ndimage.gaussian_filter(px, sig, mode="nearest")
    rows = np.arange(h1, dtype=np.float64) * sy
    cols = np.arange(w1, dtype=np.float64) * sx
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(px, [rr, cc], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)
