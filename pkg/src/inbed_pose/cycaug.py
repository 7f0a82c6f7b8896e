"""Unpaired uncovered <-> covered translation used as a label-preserving augmenter.

Two generators are trained jointly for one cover type: ``G`` renders
uncovered frames as covered ones and ``F`` goes back.  The generator
objective is

    L = adv(G, D_Y) + adv(F, D_X) + lambda_cyc * L_cyc + lambda_id * L_id

with L1 terms reduced as a per-pixel mean.  After training only ``G`` is
needed; :func:`translate_samples` applies it to labeled source frames and
carries their keypoints over unchanged.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core_types import DomainTag, Sample, ThermalImage, rescale_keypoints, resize_pixels
from .errors import InvalidArgumentError, TrainingFailureError

log = logging.getLogger(__name__)

ADV_MODES = ("least_squares", "log")


@dataclass(frozen=True)
class GeneratorConfig:
    channels: int = 64
    n_res_blocks: int = 6
    image_dims: Tuple[int, int] = (160, 120)
    direction: str = "uncover_to_cover"
    target_domain: str = "thin"
    kind: str = field(default="generator", init=False)

    def __post_init__(self):
        h, w = self.image_dims
        if h % 4 or w % 4 or h <= 0 or w <= 0:
            raise InvalidArgumentError(f"generator image dims {self.image_dims} must be positive multiples of 4")
        if self.direction not in ("uncover_to_cover", "cover_to_uncover"):
            raise InvalidArgumentError(f"unknown direction {self.direction!r}")

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "kind"}
        d["image_dims"] = tuple(d["image_dims"])
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: int = 64
    n_layers: int = 3
    judged_domain: str = "Y"
    kind: str = field(default="discriminator", init=False)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k != "kind"})

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CycAugTrainConfig:
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    adversarial_mode: str = "least_squares"
    iterations: int = 20000
    batch_size: int = 1
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    image_dims: Tuple[int, int] = (160, 120)
    gen_channels: int = 64
    n_res_blocks: int = 6
    disc_channels: int = 64
    disc_layers: int = 3
    pool_size: int = 50
    log_every: int = 50

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_id < 0:
            raise InvalidArgumentError("loss weights must be non-negative")
        if self.adversarial_mode not in ADV_MODES:
            raise InvalidArgumentError(f"adversarial_mode must be one of {ADV_MODES}")
        if self.iterations < 1 or self.batch_size < 1:
            raise InvalidArgumentError("iterations and batch_size must be positive")

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# networks

class ResidualBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1, padding_mode="reflect"), nn.InstanceNorm2d(ch), nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1, padding_mode="reflect"), nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder (two stride-2 stages), residual trunk, decoder (two x2 stages).

    The decoder predicts a correction added to the input image.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.config = cfg
        c = cfg.channels
        layers = [nn.Conv2d(1, c, 7, padding=3, padding_mode="reflect"), nn.InstanceNorm2d(c), nn.ReLU(inplace=True)]
        for i in range(2):
            layers += [nn.Conv2d(c * 2 ** i, c * 2 ** (i + 1), 3, stride=2, padding=1),
                       nn.InstanceNorm2d(c * 2 ** (i + 1)), nn.ReLU(inplace=True)]
        layers += [ResidualBlock(4 * c) for _ in range(cfg.n_res_blocks)]
        for i in (2, 1):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(c * 2 ** i, c * 2 ** (i - 1), 3, padding=1, padding_mode="reflect"),
                       nn.InstanceNorm2d(c * 2 ** (i - 1)), nn.ReLU(inplace=True)]
        layers += [nn.Conv2d(c, 1, 7, padding=3, padding_mode="reflect"), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return x + self.net(x)


class PatchDiscriminator(nn.Module):
    """Patch critic; ``n_layers=3`` gives the usual 70x70 receptive field."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.config = cfg
        c = cfg.channels
        layers = [nn.Conv2d(1, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        cin = c
        for n in range(1, cfg.n_layers + 1):
            cout = c * min(2 ** n, 8)
            stride = 2 if n < cfg.n_layers else 1
            layers += [nn.Conv2d(cin, cout, 4, stride=stride, padding=1), nn.InstanceNorm2d(cout),
                       nn.LeakyReLU(0.2, inplace=True)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def receptive_field(cfg: DiscriminatorConfig) -> int:
    rf, jump = 1, 1
    strides = [2] + [2 if n < cfg.n_layers else 1 for n in range(1, cfg.n_layers + 1)] + [1]
    for s in strides:
        rf += 3 * jump
        jump *= s
    return rf


# --------------------------------------------------------------------------
# losses

def _nonempty(*ts):
    for t in ts:
        if t.numel() == 0:
            raise InvalidArgumentError("empty batch")


def discriminator_objective(real_scores, fake_scores, mode: str = "least_squares"):
    """Loss the critic minimises, given its raw outputs on real and fake images.

    In ``log`` mode scores are logits and ``sigmoid(score)`` is the
    probability of "real".
    """
    _nonempty(real_scores, fake_scores)
    if mode == "least_squares":
        return ((real_scores - 1) ** 2).mean() + (fake_scores ** 2).mean()
    if mode == "log":
        return (F.binary_cross_entropy_with_logits(real_scores, torch.ones_like(real_scores))
                + F.binary_cross_entropy_with_logits(fake_scores, torch.zeros_like(fake_scores)))
    raise InvalidArgumentError(f"unknown adversarial mode {mode!r}")


def generator_objective(fake_scores, mode: str = "least_squares"):
    """Generator side: squared distance to the "real" label, or the
    non-saturating ``-log D(fake)``."""
    _nonempty(fake_scores)
    if mode == "least_squares":
        return ((fake_scores - 1) ** 2).mean()
    if mode == "log":
        return F.binary_cross_entropy_with_logits(fake_scores, torch.ones_like(fake_scores))
    raise InvalidArgumentError(f"unknown adversarial mode {mode!r}")


def adversarial_loss(gen, disc, real_batch, fake_source_batch, mode: str = "least_squares"):
    """Return ``(gen_loss, disc_loss)`` for one generator/critic pair.

    The critic loss sees the generated batch detached, so it only trains
    ``disc``; the generator loss back-propagates through ``gen``.
    """
    _nonempty(real_batch, fake_source_batch)
    if real_batch.shape[1:] != fake_source_batch.shape[1:]:
        raise InvalidArgumentError("real and source batches must share image dims")
    fake = gen(fake_source_batch)
    gen_loss = generator_objective(disc(fake), mode)
    disc_loss = discriminator_objective(disc(real_batch), disc(fake.detach()), mode)
    return gen_loss, disc_loss


def _l1(a, b):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def cycle_loss(rec_x, x, rec_y, y):
    """Mean |F(G(x)) - x| + mean |G(F(y)) - y|."""
    return _l1(rec_x, x) + _l1(rec_y, y)


def identity_loss(g_of_y, y, f_of_x, x):
    """Mean |G(y) - y| + mean |F(x) - x|."""
    return _l1(g_of_y, y) + _l1(f_of_x, x)


def total_loss(adv_g, adv_f, cyc, idt, lambda_cyc: float = 10.0, lambda_id: float = 5.0):
    if lambda_cyc < 0 or lambda_id < 0:
        raise InvalidArgumentError("loss weights must be non-negative")
    return adv_g + adv_f + lambda_cyc * cyc + lambda_id * idt


# --------------------------------------------------------------------------
# training

class ImagePool:
    """History of generated images; with probability 1/2 a stored image is
    returned in place of the fresh one once the pool is full."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.images: List[torch.Tensor] = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return batch
        out = []
        for img in batch.detach():
            img = img.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(img.clone())
                out.append(img)
            elif self.rng.random() < 0.5:
                j = int(self.rng.integers(len(self.images)))
                out.append(self.images[j].clone())
                self.images[j] = img.clone()
            else:
                out.append(img)
        return torch.cat(out)


@dataclass
class CycleGANRun:
    G: Generator
    F: Generator
    D_X: PatchDiscriminator
    D_Y: PatchDiscriminator
    history: List[dict]


def _pixels(item) -> np.ndarray:
    if isinstance(item, Sample):
        return item.image.pixels
    if isinstance(item, ThermalImage):
        return item.pixels
    return np.asarray(item, dtype=np.float64)


def _as_stack(images, dims) -> torch.Tensor:
    arr = [resize_pixels(_pixels(im), dims) for im in images]
    return torch.from_numpy(np.stack(arr)[:, None].astype(np.float32))


def train_cyclegan(source: Sequence, target: Sequence, cfg: CycAugTrainConfig,
                   target_domain: str = "thin", checkpoint_dir=None, device: str = "cpu") -> CycleGANRun:
    """Fit ``G`` (uncovered -> covered) and ``F`` for one cover type.

    ``source`` and ``target`` are sequences of Samples, ThermalImages or 2-D
    arrays; they are resized to ``cfg.image_dims`` and never paired.  With
    ``checkpoint_dir`` both generators are saved after every epoch (one pass
    over the larger set).
    """
    if len(source) == 0 or len(target) == 0:
        raise InvalidArgumentError("both source and target sets must be non-empty")
    from .data_io import save_checkpoint

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    xs = _as_stack(source, cfg.image_dims)
    ys = _as_stack(target, cfg.image_dims)

    gcfg = GeneratorConfig(cfg.gen_channels, cfg.n_res_blocks, tuple(cfg.image_dims), "uncover_to_cover", target_domain)
    fcfg = GeneratorConfig(cfg.gen_channels, cfg.n_res_blocks, tuple(cfg.image_dims), "cover_to_uncover", target_domain)
    G, Fn = Generator(gcfg), Generator(fcfg)
    D_X = PatchDiscriminator(DiscriminatorConfig(cfg.disc_channels, cfg.disc_layers, "X"))
    D_Y = PatchDiscriminator(DiscriminatorConfig(cfg.disc_channels, cfg.disc_layers, "Y"))
    for m in (G, Fn, D_X, D_Y):
        m.to(device)
    opt_g = torch.optim.Adam(list(G.parameters()) + list(Fn.parameters()), lr=cfg.lr, betas=cfg.betas)
    opt_d = torch.optim.Adam(list(D_X.parameters()) + list(D_Y.parameters()), lr=cfg.lr, betas=cfg.betas)
    pool_x, pool_y = ImagePool(cfg.pool_size, rng), ImagePool(cfg.pool_size, rng)
    mode = cfg.adversarial_mode

    iters_per_epoch = max(1, max(len(xs), len(ys)) // cfg.batch_size)
    last_good = {"G": copy.deepcopy(G.state_dict()), "F": copy.deepcopy(Fn.state_dict())}
    history = []
    for it in range(cfg.iterations):
        x = xs[torch.from_numpy(rng.integers(0, len(xs), cfg.batch_size))].to(device)
        y = ys[torch.from_numpy(rng.integers(0, len(ys), cfg.batch_size))].to(device)

        fake_y, fake_x = G(x), Fn(y)
        adv_g = generator_objective(D_Y(fake_y), mode)
        adv_f = generator_objective(D_X(fake_x), mode)
        cyc = cycle_loss(Fn(fake_y), x, G(fake_x), y)
        idt = identity_loss(G(y), y, Fn(x), x)
        loss_g = total_loss(adv_g, adv_f, cyc, idt, cfg.lambda_cyc, cfg.lambda_id)
        if not torch.isfinite(loss_g):
            _dump_last_good(last_good, gcfg, fcfg, checkpoint_dir, it)
            raise TrainingFailureError(f"generator loss became non-finite at iteration {it}", last_good)
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        d_y = discriminator_objective(D_Y(y), D_Y(pool_y.query(fake_y)), mode)
        d_x = discriminator_objective(D_X(x), D_X(pool_x.query(fake_x)), mode)
        loss_d = d_x + d_y
        if not torch.isfinite(loss_d):
            _dump_last_good(last_good, gcfg, fcfg, checkpoint_dir, it)
            raise TrainingFailureError(f"critic loss became non-finite at iteration {it}", last_good)
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        history.append({"iteration": it, "total": loss_g.item(), "adv_g": adv_g.item(), "adv_f": adv_f.item(),
                        "cyc": cyc.item(), "idt": idt.item(), "d_x": d_x.item(), "d_y": d_y.item()})
        if it % cfg.log_every == 0:
            log.info("cycaug[%s] it %d total %.4f cyc %.4f idt %.4f d %.4f",
                     target_domain, it, loss_g.item(), cyc.item(), idt.item(), loss_d.item())
        if (it + 1) % iters_per_epoch == 0 or it + 1 == cfg.iterations:
            last_good = {"G": copy.deepcopy(G.state_dict()), "F": copy.deepcopy(Fn.state_dict())}
            if checkpoint_dir is not None:
                meta = {"iteration": it + 1, "train_config": cfg.to_dict(), "seed": cfg.seed}
                save_checkpoint(G, meta, Path(checkpoint_dir) / f"G_{target_domain}")
                save_checkpoint(Fn, meta, Path(checkpoint_dir) / f"F_{target_domain}")
    for m in (G, Fn, D_X, D_Y):
        m.cpu().eval()
    return CycleGANRun(G, Fn, D_X, D_Y, history)


def _dump_last_good(state, gcfg, fcfg, checkpoint_dir, it):
    if checkpoint_dir is None:
        return
    from .data_io import save_checkpoint

    for name, cfg in (("G", gcfg), ("F", fcfg)):
        m = Generator(cfg)
        m.load_state_dict(state[name])
        save_checkpoint(m, {"iteration": it, "note": "last finite state before divergence"},
                        Path(checkpoint_dir) / f"{name}_{cfg.target_domain}_last_good")


@torch.no_grad()
def translate(gen: Generator, imgs: Sequence[ThermalImage], batch_size: int = 32) -> List[ThermalImage]:
    """Translate images that already have the generator's training dims."""
    dims = tuple(gen.config.image_dims)
    for im in imgs:
        if tuple(im.dims) != dims:
            raise InvalidArgumentError(f"image dims {im.dims} differ from generator dims {dims}")
    if not imgs:
        return []
    was = gen.training
    gen.eval()
    x = torch.from_numpy(np.stack([im.pixels for im in imgs])[:, None].astype(np.float32))
    dev = next(gen.parameters()).device
    out = torch.cat([gen(x[i:i + batch_size].to(dev)).cpu() for i in range(0, len(x), batch_size)])
    gen.train(was)
    arr = out.clamp(0.0, 1.0).double().numpy()[:, 0]
    return [ThermalImage(a) for a in arr]


def translate_samples(gen: Generator, samples: Sequence[Sample], domain: DomainTag) -> List[Sample]:
    """Resize labeled samples to the generator's dims, translate them and
    re-tag them; keypoints are only rescaled with the frame, never moved."""
    dims = tuple(gen.config.image_dims)
    resized = [ThermalImage(resize_pixels(s.image.pixels, dims)) for s in samples]
    out = translate(gen, resized)
    res = []
    for s, im in zip(samples, out):
        kps = rescale_keypoints(s.keypoints, s.image.dims, dims) if s.keypoints is not None else None
        res.append(Sample(im, domain, kps, s.subject_id, s.frame_id, dict(s.meta)))
    return res
