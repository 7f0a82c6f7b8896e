"""Dataset layout, synthetic thermal phantoms and checkpoint persistence.

On-disk layout::

    root/<split>/<subject_id>/image_000001.png
    root/<split>/<subject_id>/joints.json      # labeled splits only

``joints.json`` holds ``{"joints": [frame, ...]}`` where each frame is a list
of 14 ``[x, y, v]`` rows in image pixels (origin top-left), frame ``i``
belonging to ``image_{i+1:06d}.png``.  A single-frame subject may store the
bare ``[[x, y, v], ...]`` list.  The ``test`` split adds a ``"cover"`` list
(``"thin"``/``"thick"`` per frame).
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .core_types import NUM_JOINTS, DomainTag, KeypointSet, Sample, ThermalImage
from .errors import CheckpointIncompatibleError, InvalidArgumentError, MalformedDatasetError

log = logging.getLogger(__name__)

PRIMARY_SPLITS = ("train_source", "train_thin", "train_thick", "test")
DERIVED_SPLITS = ("gen_thin", "gen_thick", "extreme_aug")
LABELED_SPLITS = {"train_source", "test", *DERIVED_SPLITS}
SPLIT_DOMAIN = {
    "train_source": DomainTag.SOURCE_UNCOVER,
    "train_thin": DomainTag.TARGET_THIN,
    "train_thick": DomainTag.TARGET_THICK,
    "gen_thin": DomainTag.GEN_THIN,
    "gen_thick": DomainTag.GEN_THICK,
    "extreme_aug": DomainTag.EXTREME_AUG,
}
COVER_DOMAIN = {"thin": DomainTag.TARGET_THIN, "thick": DomainTag.TARGET_THICK}
IMAGE_RE = re.compile(r"^image_(\d{6})\.png$")


# --------------------------------------------------------------------------
# images

def read_png(path, normalization: str = "minmax") -> ThermalImage:
    """Load an 8- or 16-bit grayscale PNG as a [0, 1] image.

    ``normalization="minmax"`` stretches each image to its own range;
    ``"fixed"`` divides by the bit depth's full scale.
    """
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise MalformedDatasetError(f"{path}: expected single-channel image, got shape {arr.shape}")
    full = 255.0 if arr.dtype == np.uint8 else 65535.0
    arr = arr.astype(np.float64)
    if normalization == "fixed":
        return ThermalImage(np.clip(arr / full, 0.0, 1.0))
    if normalization != "minmax":
        raise InvalidArgumentError(f"unknown normalization {normalization!r}")
    lo, hi = arr.min(), arr.max()
    return ThermalImage((arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr))


def write_png(path, img: ThermalImage, bits: int = 8) -> None:
    if bits == 8:
        arr = np.round(img.pixels * 255.0).astype(np.uint8)
    elif bits == 16:
        arr = np.round(img.pixels * 65535.0).astype(np.uint16)
    else:
        raise InvalidArgumentError("bits must be 8 or 16")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


# --------------------------------------------------------------------------
# dataset manifest

@dataclass(frozen=True)
class FrameRecord:
    path: Path
    subject_id: str
    frame_id: str
    domain: DomainTag
    keypoints: Optional[KeypointSet] = None


@dataclass
class DatasetManifest:
    root: Path
    splits: Dict[str, List[FrameRecord]] = field(default_factory=dict)

    def subjects(self, split: str) -> List[str]:
        return sorted({r.subject_id for r in self.splits.get(split, [])})

    def counts(self) -> Dict[str, int]:
        return {k: len(v) for k, v in self.splits.items()}

    def load(self, split: str, normalization: str = "minmax", subjects: Optional[Sequence[str]] = None) -> List[Sample]:
        """Materialise one split as :class:`Sample` objects."""
        out = []
        for r in self.splits.get(split, []):
            if subjects is not None and r.subject_id not in subjects:
                continue
            out.append(Sample(read_png(r.path, normalization), r.domain, r.keypoints, r.subject_id, r.frame_id))
        return out


def _parse_labels(path: Path, n_frames: int, split: str):
    try:
        doc = json.loads(path.read_text())
        frames = doc["joints"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise MalformedDatasetError(f"{path}: unreadable label file ({e})") from e
    if frames and not isinstance(frames[0][0], list):
        frames = [frames]
    if len(frames) != n_frames:
        raise MalformedDatasetError(f"{path}: {len(frames)} label frames for {n_frames} images")
    kps = []
    for i, rows in enumerate(frames):
        if len(rows) != NUM_JOINTS or any(len(r) != 3 for r in rows):
            raise MalformedDatasetError(f"{path}: frame {i} needs {NUM_JOINTS} [x, y, v] rows, got {len(rows)}")
        kps.append(KeypointSet.from_rows(rows))
    covers = doc.get("cover")
    if split == "test":
        if covers is None or len(covers) != n_frames or any(c not in COVER_DOMAIN for c in covers):
            raise MalformedDatasetError(f"{path}: test labels need a 'cover' entry (thin/thick) per frame")
    return kps, covers


def load_dataset(root) -> DatasetManifest:
    """Scan ``root`` and validate the split layout and labels."""
    root = Path(root)
    if not root.is_dir():
        raise MalformedDatasetError(f"{root} is not a directory")
    man = DatasetManifest(root)
    for split in PRIMARY_SPLITS + DERIVED_SPLITS:
        sdir = root / split
        if not sdir.is_dir():
            continue
        recs = []
        for subj in sorted(p for p in sdir.iterdir() if p.is_dir()):
            images = sorted(p for p in subj.iterdir() if IMAGE_RE.match(p.name))
            if not images:
                continue
            label_file = subj / "joints.json"
            kps, covers = [None] * len(images), None
            if split in LABELED_SPLITS:
                if not label_file.is_file():
                    raise MalformedDatasetError(f"missing labels {label_file}")
                kps, covers = _parse_labels(label_file, len(images), split)
            elif label_file.exists():
                raise MalformedDatasetError(f"{label_file}: split {split!r} must be unlabeled")
            for i, img in enumerate(images):
                dom = COVER_DOMAIN[covers[i]] if split == "test" else SPLIT_DOMAIN[split]
                recs.append(FrameRecord(img, subj.name, img.stem, dom, kps[i]))
        if recs:
            man.splits[split] = recs
    if not man.splits:
        raise MalformedDatasetError(f"{root}: no images found in any known split")
    # Derived (augmented) splits reuse source subjects by construction.
    owner = {}
    for split in PRIMARY_SPLITS:
        for s in man.subjects(split):
            if s in owner:
                raise MalformedDatasetError(f"subject {s} appears in both {owner[s]} and {split}")
            owner[s] = split
    return man


def write_split(root, split: str, samples: Sequence[Sample], bits: int = 8) -> None:
    """Write samples grouped by subject in the standard layout."""
    by_subj: Dict[str, List[Sample]] = {}
    for s in samples:
        by_subj.setdefault(s.subject_id, []).append(s)
    for subj, group in by_subj.items():
        d = Path(root) / split / subj
        d.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(group):
            write_png(d / f"image_{i + 1:06d}.png", s.image, bits)
        if split in LABELED_SPLITS:
            doc = {"joints": [s.keypoints.to_rows() for s in group]}
            if split == "test":
                doc["cover"] = [s.meta.get("cover") or
                                ("thin" if s.domain == DomainTag.TARGET_THIN else "thick") for s in group]
            (d / "joints.json").write_text(json.dumps(doc))


# --------------------------------------------------------------------------
# synthetic phantoms

@dataclass(frozen=True)
class PhantomConfig:
    n_subjects: int = 90
    poses_per_subject: int = 10
    dims: Tuple[int, int] = (160, 120)
    limb_intensity: float = 0.65
    limb_intensity_jitter: float = 0.1
    background: float = 0.12
    noise: float = 0.015
    cover: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.cover not in ("none", "thin", "thick"):
            raise InvalidArgumentError(f"cover must be none/thin/thick, got {self.cover!r}")
        h, w = self.dims
        if h < 48 or w < 36:
            raise InvalidArgumentError(f"dims {self.dims} too small to fit the skeleton")
        if self.n_subjects < 1 or self.poses_per_subject < 1:
            raise InvalidArgumentError("need at least one subject and pose")

    def to_dict(self) -> dict:
        return asdict(self)


# (joint a, joint b, width as a fraction of body length)
_LIMBS = [
    (0, 1, 0.026), (1, 2, 0.036), (5, 4, 0.026), (4, 3, 0.036),
    (6, 7, 0.020), (7, 8, 0.026), (11, 10, 0.020), (10, 9, 0.026),
    (8, 9, 0.030), (2, 3, 0.040), (12, 13, 0.030),
]
# cover-specific (blur sigma in body fractions, transmission, sheet lift, fold amplitude)
_COVERS = {"thin": (0.012, 0.55, 0.10, 0.04), "thick": (0.03, 0.3, 0.15, 0.06)}


def _rot(v, a):
    c, s = np.cos(a), np.sin(a)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def sample_pose(rng: np.random.Generator, dims, body_scale: float = 1.0) -> np.ndarray:
    """Random supine skeleton as a ``(14, 2)`` array inside ``dims``, head up."""
    h, w = dims
    margin = 3.0
    for _ in range(1000):
        B = 0.78 * h * body_scale * rng.uniform(0.9, 1.02)
        B = min(B, (w - 2 * margin) * 1.9)
        j = np.zeros((14, 2))
        j[12] = (0, 0.0)                                # thorax
        j[13] = (rng.uniform(-0.02, 0.02) * B, -0.14 * B)  # head top
        sh = 0.11 * B
        j[8] = (-sh, 0.02 * B)
        j[9] = (sh, 0.02 * B)
        j[2] = (-0.065 * B, 0.34 * B)
        j[3] = (0.065 * B, 0.34 * B)
        down = np.array([0.0, 1.0])
        for side, (sho, elb, wri) in ((-1, (8, 7, 6)), (1, (9, 10, 11))):
            a = np.deg2rad(rng.uniform(-15, 110)) * side
            j[elb] = j[sho] + _rot(down, a) * 0.16 * B
            bend = np.deg2rad(rng.uniform(-30, 120)) * -side
            j[wri] = j[elb] + _rot(down, a + bend) * 0.14 * B
        for side, (hip, kne, ank) in ((-1, (2, 1, 0)), (1, (3, 4, 5))):
            a = np.deg2rad(rng.uniform(-8, 30)) * side
            j[kne] = j[hip] + _rot(down, a) * 0.24 * B
            bend = np.deg2rad(rng.uniform(-25, 25))
            j[ank] = j[kne] + _rot(down, a + bend) * 0.23 * B
        tilt = np.deg2rad(rng.uniform(-10, 10))
        j = np.array([_rot(p, tilt) for p in j])
        lo, hi = j.min(axis=0), j.max(axis=0)
        span = hi - lo
        if span[0] > w - 2 * margin or span[1] > h - 2 * margin:
            continue
        off = np.array([rng.uniform(margin - lo[0], w - 1 - margin - hi[0]),
                        rng.uniform(margin - lo[1], h - 1 - margin - hi[1])])
        return j + off
    raise InvalidArgumentError(f"could not fit a skeleton into {dims}")


def _segment_dist2(px, py, a, b):
    d = b - a
    L2 = float(d @ d) or 1e-12
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / L2, 0.0, 1.0)
    return (px - a[0] - t * d[0]) ** 2 + (py - a[1] - t * d[1]) ** 2


def render_body(joints: np.ndarray, dims, amplitude: float) -> np.ndarray:
    """Noise-free body heat signal (background excluded)."""
    h, w = dims
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    B = np.linalg.norm(joints[13] - (joints[0] + joints[5]) / 2)
    sig = np.zeros(dims)
    mid_hip = (joints[2] + joints[3]) / 2
    mid_sh = (joints[8] + joints[9]) / 2
    for a, b, wf in _LIMBS:
        s = max(wf * B, 0.8)
        sig = np.maximum(sig, np.exp(-_segment_dist2(px, py, joints[a], joints[b]) / (2 * s * s)))
    # torso: broad trunk between shoulder and hip midpoints
    s = 0.07 * B
    sig = np.maximum(sig, 0.9 * np.exp(-_segment_dist2(px, py, mid_sh, mid_hip) / (2 * s * s)))
    # head: blob midway between head top and thorax
    head_c = joints[13] + 0.4 * (joints[12] - joints[13])
    s = 0.045 * B
    sig = np.maximum(sig, 1.1 * np.exp(-((px - head_c[0]) ** 2 + (py - head_c[1]) ** 2) / (2 * s * s)))
    return amplitude * np.minimum(sig, 1.0)


def _smooth_noise(rng, dims, scale):
    n = rng.standard_normal(dims)
    n = ndimage.gaussian_filter(n, scale, mode="reflect")
    return n / (n.std() + 1e-12)


def render_phantom(joints: np.ndarray, dims, cover: str, rng: np.random.Generator,
                   amplitude: float = 0.65, background: float = 0.12, noise: float = 0.015) -> np.ndarray:
    """Render one frame; ``cover`` in {"none", "thin", "thick"}."""
    body = render_body(joints, dims, amplitude)
    h, w = dims
    if cover != "none":
        blur, trans, lift, fold = _COVERS[cover]
        B = np.linalg.norm(joints[13] - (joints[0] + joints[5]) / 2)
        line = joints[12, 1] + rng.uniform(0.0, 0.05) * B
        rows = np.arange(h, dtype=np.float64)[:, None]
        mask = np.clip((rows - line) / 2.0 + 0.5, 0.0, 1.0) * np.ones((1, w))
        under = trans * ndimage.gaussian_filter(body, blur * B, mode="nearest")
        sheet = lift + fold * _smooth_noise(rng, dims, 6.0)
        body = (1 - mask) * body + mask * (under + sheet)
    img = background + body + noise * rng.standard_normal(dims)
    return np.clip(img, 0.0, 1.0)


def _stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def synth_samples(cfg: PhantomConfig, subject_offset: int = 0, covers=None, domain=None) -> List[Sample]:
    """In-memory phantoms for ``cfg.n_subjects`` subjects.

    Poses depend only on ``(seed, subject, frame)``, so the same pose can be
    rendered under several ``covers`` (default ``(cfg.cover,)``).
    """
    covers = covers or (cfg.cover,)
    if isinstance(covers, str):
        covers = (covers,)
    out = []
    for si in range(subject_offset, subject_offset + cfg.n_subjects):
        srng = _stream(cfg.seed, si, 0)
        amp = cfg.limb_intensity + cfg.limb_intensity_jitter * srng.uniform(-1, 1)
        scale = srng.uniform(0.9, 1.05)
        for fi in range(cfg.poses_per_subject):
            joints = sample_pose(_stream(cfg.seed, si, fi + 1, 1), cfg.dims, scale)
            kps = KeypointSet(joints, np.ones(NUM_JOINTS, dtype=bool))
            for ci, cover in enumerate(covers):
                px = render_phantom(joints, cfg.dims, cover, _stream(cfg.seed, si, fi + 1, 2 + ci),
                                    amp, cfg.background, cfg.noise)
                dom = domain or {"none": DomainTag.SOURCE_UNCOVER, **COVER_DOMAIN}[cover]
                out.append(Sample(ThermalImage(px), dom, kps, f"{si + 1:05d}", f"{fi + 1:06d}",
                                  {"cover": cover}))
    return out


def split_subject_counts(n_subjects: int) -> Dict[str, int]:
    """Distribute subjects over the four primary splits in 30:25:25:10 proportion."""
    if n_subjects < 4:
        raise InvalidArgumentError("need at least 4 subjects (one per split)")
    weights = np.array([30, 25, 25, 10], dtype=np.float64)
    counts = np.maximum(1, np.floor(weights / weights.sum() * n_subjects)).astype(int)
    while counts.sum() < n_subjects:
        counts[np.argmax(weights / weights.sum() * n_subjects - counts)] += 1
    while counts.sum() > n_subjects:
        counts[np.argmax(counts)] -= 1
    return dict(zip(PRIMARY_SPLITS, counts.tolist()))


def gen_phantoms(cfg: PhantomConfig, root) -> DatasetManifest:
    """Write a complete phantom dataset under ``root`` and return its manifest.

    Training source frames are uncovered, ``train_thin``/``train_thick``
    frames are unlabeled covered renders of disjoint subjects, and every test
    pose is rendered under both covers.  ``cfg.cover`` is not used here.
    """
    root = Path(root)
    counts = split_subject_counts(cfg.n_subjects)
    offset = 0
    plan = {"train_source": ("none",), "train_thin": ("thin",), "train_thick": ("thick",), "test": ("thin", "thick")}
    for split in PRIMARY_SPLITS:
        n = counts[split]
        sub = PhantomConfig(**{**cfg.to_dict(), "n_subjects": n})
        samples = synth_samples(sub, offset, covers=plan[split])
        if split in ("train_thin", "train_thick"):
            samples = [Sample(s.image, s.domain, None, s.subject_id, s.frame_id, s.meta) for s in samples]
        write_split(root, split, samples)
        offset += n
    (root / "phantom_config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True))
    return load_dataset(root)


# --------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    """A model with its training metadata, in memory."""

    model: object
    meta: dict = field(default_factory=dict)


def config_hash(cfg) -> str:
    payload = json.dumps(cfg.to_dict(), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _config_from_meta(kind: str, d: dict):
    if kind == "pose_net":
        from .pose_nets import PoseNetConfig
        return PoseNetConfig.from_dict(d)
    if kind == "generator":
        from .cycaug import GeneratorConfig
        return GeneratorConfig.from_dict(d)
    if kind == "discriminator":
        from .cycaug import DiscriminatorConfig
        return DiscriminatorConfig.from_dict(d)
    raise CheckpointIncompatibleError(f"unknown model kind {kind!r}")


def build_model(cfg):
    if cfg.kind == "pose_net":
        from .pose_nets import build_pose_net
        return build_pose_net(cfg)
    if cfg.kind == "generator":
        from .cycaug import Generator
        return Generator(cfg)
    if cfg.kind == "discriminator":
        from .cycaug import PatchDiscriminator
        return PatchDiscriminator(cfg)
    raise CheckpointIncompatibleError(f"unknown model kind {cfg.kind!r}")


def state_digest(state: Dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(state):
        a = np.ascontiguousarray(state[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def model_state_numpy(model) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def save_checkpoint(model, meta: dict, path) -> Path:
    """Write ``<path>.npz`` (parameters) and ``<path>.json`` (metadata).

    Returns the path of the parameter blob.
    """
    path = Path(path)
    blob = path.with_suffix(".npz")
    blob.parent.mkdir(parents=True, exist_ok=True)
    state = model_state_numpy(model)
    cfg = model.config
    side = {
        **{k: v for k, v in meta.items()},
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "param_digest": state_digest(state),
    }
    with open(blob, "wb") as fh:
        np.savez(fh, **state)
    blob.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=_json_default))
    return blob


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set, np.ndarray)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def load_checkpoint(path, expected_config=None):
    """Rebuild the model stored at ``path``; returns ``(model, meta)``.

    With ``expected_config`` the stored architecture must hash identically.
    """
    import torch

    blob = Path(path).with_suffix(".npz")
    meta = json.loads(blob.with_suffix(".json").read_text())
    cfg = _config_from_meta(meta["kind"], meta["config"])
    if config_hash(cfg) != meta["config_hash"]:
        raise CheckpointIncompatibleError(f"{blob}: stored config does not match its recorded hash")
    if expected_config is not None and config_hash(expected_config) != meta["config_hash"]:
        raise CheckpointIncompatibleError(
            f"{blob}: checkpoint architecture {meta['config']} does not match the requested one")
    with np.load(blob) as z:
        state = {k: z[k] for k in z.files}
    if state_digest(state) != meta["param_digest"]:
        raise CheckpointIncompatibleError(f"{blob}: parameter digest mismatch")
    model = build_model(cfg)
    try:
        model.load_state_dict({k: torch.from_numpy(v) for k, v in state.items()}, strict=True)
    except RuntimeError as e:
        raise CheckpointIncompatibleError(str(e)) from e
    model.eval()
    return model, meta
