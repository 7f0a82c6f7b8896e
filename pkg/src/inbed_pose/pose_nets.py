"""Heatmap pose estimators and their supervised training loop.

Two backbones are provided: a stacked hourglass with intermediate
supervision and an encoder/deconvolution "simple baseline".  Both take a
batch of single-channel images ``(B, 1, H, W)``; the hourglass returns
``(B, stacks, K, h, w)`` and the simple baseline ``(B, K, h, w)``.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core_types import (
    DEFAULT_SIGMA, NUM_JOINTS, DomainTag, KeypointSet, Sample, decode_maps, gaussian_maps,
    rescale_keypoints, resize_pixels,
)
from .errors import InvalidArgumentError, TrainingFailureError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoseNetConfig:
    backbone: str = "hourglass"
    n_stacks: int = 2
    channels: int = 128
    hourglass_depth: int = 4
    encoder_depth: int = 2
    deconv_channels: int = 256
    input_dims: Tuple[int, int] = (256, 256)
    heatmap_dims: Tuple[int, int] = (64, 64)
    K: int = NUM_JOINTS
    kind: str = field(default="pose_net", init=False)

    @property
    def stride(self) -> int:
        return self.input_dims[0] // self.heatmap_dims[0]

    def validate(self):
        if self.backbone not in ("hourglass", "simple_baseline"):
            raise InvalidArgumentError(f"unknown backbone {self.backbone!r}")
        (H, W), (h, w) = self.input_dims, self.heatmap_dims
        if min(H, W, h, w) <= 0 or H % h or W % w or H // h != W // w:
            raise InvalidArgumentError(
                f"heatmap dims {self.heatmap_dims} must divide input dims {self.input_dims} by one integer stride")
        s = H // h
        if s & (s - 1):
            raise InvalidArgumentError(f"stride {s} must be a power of two")
        if self.backbone == "hourglass":
            if self.n_stacks < 1 or self.hourglass_depth < 1:
                raise InvalidArgumentError("need at least one stack of depth >= 1")
            if h % 2 ** self.hourglass_depth or w % 2 ** self.hourglass_depth:
                raise InvalidArgumentError(
                    f"heatmap dims {self.heatmap_dims} not divisible by 2**{self.hourglass_depth}")
        else:
            if H % (8 * s) or W % (8 * s):
                raise InvalidArgumentError(f"input dims must be divisible by {8 * s} for the simple baseline")
            if self.encoder_depth < 1:
                raise InvalidArgumentError("encoder_depth must be >= 1")
        if self.K < 1 or self.channels < 2:
            raise InvalidArgumentError("K and channels must be positive")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "PoseNetConfig":
        d = {k: v for k, v in d.items() if k != "kind"}
        for key in ("input_dims", "heatmap_dims"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PoseTrainConfig:
    lr: float = 2.5e-4
    decay_epochs: Tuple[int, ...] = (45, 60)
    decay_factor: float = 0.1
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    sigma: float = DEFAULT_SIGMA
    mix: Dict[str, float] = field(default_factory=lambda: {
        "source_uncover": 0.25, "gen_thin": 0.25, "gen_thick": 0.25, "extreme_aug": 0.25})
    epoch_size: Optional[int] = None

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise InvalidArgumentError("decay_epochs must be strictly increasing")
        if not 0 < self.decay_factor < 1:
            raise InvalidArgumentError("decay_factor must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if abs(sum(self.mix.values()) - 1.0) > 1e-6 or any(v < 0 for v in self.mix.values()):
            raise InvalidArgumentError("augmentation mix weights must be non-negative and sum to 1")
        for k in self.mix:
            DomainTag(k)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# building blocks

class Bottleneck(nn.Module):
    """Pre-activation bottleneck residual used throughout the hourglass."""

    def __init__(self, cin, cout):
        super().__init__()
        mid = max(cout // 2, 1)
        self.body = nn.Sequential(
            nn.BatchNorm2d(cin), nn.ReLU(inplace=True), nn.Conv2d(cin, mid, 1),
            nn.BatchNorm2d(mid), nn.ReLU(inplace=True), nn.Conv2d(mid, mid, 3, padding=1),
            nn.BatchNorm2d(mid), nn.ReLU(inplace=True), nn.Conv2d(mid, cout, 1),
        )
        self.skip = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        return self.body(x) + self.skip(x)


class Hourglass(nn.Module):
    def __init__(self, depth, ch):
        super().__init__()
        self.up = Bottleneck(ch, ch)
        self.low1 = Bottleneck(ch, ch)
        self.low2 = Hourglass(depth - 1, ch) if depth > 1 else Bottleneck(ch, ch)
        self.low3 = Bottleneck(ch, ch)

    def forward(self, x):
        low = self.low3(self.low2(self.low1(F.max_pool2d(x, 2))))
        return self.up(x) + F.interpolate(low, scale_factor=2, mode="nearest")


class StackedHourglass(nn.Module):
    def __init__(self, cfg: PoseNetConfig):
        super().__init__()
        self.config = cfg
        ch, K = cfg.channels, cfg.K
        n_pool = int(math.log2(cfg.stride))
        stem = [nn.Conv2d(1, ch // 2, 7, stride=2 if n_pool else 1, padding=3),
                nn.BatchNorm2d(ch // 2), nn.ReLU(inplace=True), Bottleneck(ch // 2, ch)]
        for _ in range(max(n_pool - 1, 0)):
            stem += [nn.MaxPool2d(2), Bottleneck(ch, ch)]
        self.stem = nn.Sequential(*stem)
        self.hgs = nn.ModuleList(Hourglass(cfg.hourglass_depth, ch) for _ in range(cfg.n_stacks))
        # Two 1x1 rounds after each hourglass: feature projection, then heatmap head.
        self.feats = nn.ModuleList(
            nn.Sequential(Bottleneck(ch, ch), nn.Conv2d(ch, ch, 1), nn.BatchNorm2d(ch), nn.ReLU(inplace=True))
            for _ in range(cfg.n_stacks))
        self.heads = nn.ModuleList(nn.Conv2d(ch, K, 1) for _ in range(cfg.n_stacks))
        self.merge_feat = nn.ModuleList(nn.Conv2d(ch, ch, 1) for _ in range(cfg.n_stacks - 1))
        self.merge_pred = nn.ModuleList(nn.Conv2d(K, ch, 1) for _ in range(cfg.n_stacks - 1))

    def forward(self, x):
        x = self.stem(x)
        outs = []
        for i, hg in enumerate(self.hgs):
            f = self.feats[i](hg(x))
            hm = self.heads[i](f)
            outs.append(hm)
            if i < len(self.hgs) - 1:
                x = x + self.merge_feat[i](f) + self.merge_pred[i](hm)
        return torch.stack(outs, dim=1)


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout),
        )
        self.skip = (nn.Identity() if stride == 1 and cin == cout else
                     nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)))

    def forward(self, x):
        return F.relu(self.body(x) + self.skip(x))


class SimpleBaseline(nn.Module):
    """Residual encoder followed by three x2 deconvolution stages."""

    def __init__(self, cfg: PoseNetConfig):
        super().__init__()
        self.config = cfg
        ch = cfg.channels
        n_pool = int(math.log2(cfg.stride))
        layers = [nn.Conv2d(1, ch, 7, stride=2 if n_pool else 1, padding=3, bias=False),
                  nn.BatchNorm2d(ch), nn.ReLU(inplace=True)]
        layers += [nn.MaxPool2d(2) for _ in range(max(n_pool - 1, 0))]
        cin = ch
        for stage in range(4):
            cout = ch * 2 ** stage
            for b in range(cfg.encoder_depth):
                layers.append(BasicBlock(cin, cout, stride=2 if (stage and b == 0) else 1))
                cin = cout
        self.encoder = nn.Sequential(*layers)
        dec = []
        for _ in range(3):
            dec += [nn.ConvTranspose2d(cin, cfg.deconv_channels, 4, stride=2, padding=1, bias=False),
                    nn.BatchNorm2d(cfg.deconv_channels), nn.ReLU(inplace=True)]
            cin = cfg.deconv_channels
        self.decoder = nn.Sequential(*dec)
        self.head = nn.Conv2d(cin, cfg.K, 1)

    def forward(self, x):
        return self.head(self.decoder(self.encoder(x)))


def build_pose_net(cfg: PoseNetConfig, seed: Optional[int] = None) -> nn.Module:
    cfg.validate()
    if seed is not None:
        torch.manual_seed(seed)
    net = StackedHourglass(cfg) if cfg.backbone == "hourglass" else SimpleBaseline(cfg)
    return net


def final_heatmaps(out: torch.Tensor) -> torch.Tensor:
    """Last-stack heatmaps ``(B, K, h, w)`` from either backbone's output."""
    return out[:, -1] if out.dim() == 5 else out


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


# --------------------------------------------------------------------------
# losses and schedule

def heatmap_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-joint squared L2 over pixels, averaged over joints, batch and stacks.

    ``target`` is ``(B, K, h, w)``; ``pred`` is the same or ``(B, S, K, h, w)``,
    in which case the target is shared by every stack.
    """
    if pred.dim() == 5 and target.dim() == 4:
        if pred.shape[:1] + pred.shape[2:] != target.shape:
            raise InvalidArgumentError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
        target = target.unsqueeze(1)
    elif pred.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    per_joint = ((pred - target) ** 2).sum(dim=(-1, -2))
    return per_joint.mean()


def sup_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Supervised heatmap regression loss."""
    return heatmap_mse(pred, target)


def lr_at_epoch(cfg: PoseTrainConfig, epoch: int) -> float:
    lr = cfg.lr
    for d in cfg.decay_epochs:
        if epoch >= d:
            lr *= cfg.decay_factor
    return lr


# --------------------------------------------------------------------------
# data preparation and inference

def images_to_tensor(images, dims) -> torch.Tensor:
    """Stack ThermalImages (or 2-D arrays) resized to ``dims`` as ``(N, 1, H, W)``."""
    arr = [resize_pixels(getattr(im, "pixels", im), dims) for im in images]
    return torch.from_numpy(np.stack(arr)[:, None].astype(np.float32))


def targets_for(samples: Sequence[Sample], cfg: PoseNetConfig, sigma: float) -> torch.Tensor:
    maps = []
    for s in samples:
        kps = rescale_keypoints(s.keypoints, s.image.dims, cfg.input_dims)
        maps.append(gaussian_maps(kps.coords, kps.visible, cfg.heatmap_dims, cfg.stride, sigma))
    return torch.from_numpy(np.stack(maps).astype(np.float32))


@torch.no_grad()
def predict_heatmaps(net: nn.Module, images, batch_size: int = 32) -> np.ndarray:
    """Final-stack heatmaps ``(N, K, h, w)`` for a list of images, in eval mode."""
    cfg = net.config
    was_training = net.training
    net.eval()
    x = images if torch.is_tensor(images) else images_to_tensor(images, cfg.input_dims)
    dev = next(net.parameters()).device
    outs = [final_heatmaps(net(x[i:i + batch_size].to(dev))).cpu() for i in range(0, len(x), batch_size)]
    net.train(was_training)
    return torch.cat(outs).double().numpy()


def predict_keypoints(net: nn.Module, images, image_dims=None, batch_size: int = 32) -> List[KeypointSet]:
    """Decode predictions and map them back to each image's own frame."""
    cfg = net.config
    maps = predict_heatmaps(net, images, batch_size)
    coords, vis = decode_maps(maps, cfg.stride)
    out = []
    for i in range(len(maps)):
        dims = image_dims[i] if image_dims is not None else images[i].dims
        out.append(rescale_keypoints(KeypointSet(coords[i], vis[i]), cfg.input_dims, dims))
    return out


# --------------------------------------------------------------------------
# training

def sample_plan(domains: np.ndarray, mix: Dict[str, float], n: int, rng: np.random.Generator) -> np.ndarray:
    present = [d for d in mix if mix[d] > 0 and np.any(domains == d)]
    if not present:
        raise InvalidArgumentError("no training samples belong to a domain with positive mix weight")
    w = np.array([mix[d] for d in present], dtype=np.float64)
    picks = rng.choice(len(present), size=n, p=w / w.sum())
    idx = np.empty(n, dtype=np.int64)
    for j, d in enumerate(present):
        pool = np.flatnonzero(domains == d)
        sel = picks == j
        idx[sel] = rng.choice(pool, size=int(sel.sum()))
    return idx


def state_snapshot(net: nn.Module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in net.state_dict().items()}


def train_pose(net: nn.Module, train_set: Sequence[Sample], cfg: PoseTrainConfig,
               val_set: Optional[Sequence[Sample]] = None, on_epoch=None, device: str = "cpu"):
    """Adam training over the extended (source + augmented) input space.

    Each epoch draws ``cfg.epoch_size`` samples (default: the training set
    size), choosing the domain by ``cfg.mix`` and the sample uniformly inside
    it.  When ``val_set`` is given, the epoch with the best validation
    PCKh@0.5 is kept; otherwise the last epoch.  Returns a
    :class:`~inbed_pose.data_io.Checkpoint`.
    """
    from .data_io import Checkpoint, config_hash
    from .evaluation import pckh

    if not train_set:
        raise InvalidArgumentError("empty training set")
    for s in train_set:
        if s.keypoints is None:
            raise InvalidArgumentError(f"unlabeled sample {s.subject_id}/{s.frame_id} in training set")
    if val_set is not None and any(s.keypoints is None for s in val_set):
        raise InvalidArgumentError("validation samples must be labeled")
    ncfg = net.config
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    x_all = images_to_tensor([s.image for s in train_set], ncfg.input_dims)
    y_all = targets_for(train_set, ncfg, cfg.sigma)
    domains = np.array([DomainTag(s.domain).value for s in train_set])
    if val_set:
        x_val = images_to_tensor([s.image for s in val_set], ncfg.input_dims)
        gt_val = [s.keypoints for s in val_set]
        dims_val = [s.image.dims for s in val_set]
    n_epoch = cfg.epoch_size or len(train_set)

    net.to(device)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    history = []
    best = None
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        net.train()
        order = sample_plan(domains, cfg.mix, n_epoch, rng)
        total, seen = 0.0, 0
        for i in range(0, n_epoch, cfg.batch_size):
            b = torch.from_numpy(order[i:i + cfg.batch_size])
            loss = sup_loss(net(x_all[b].to(device)), y_all[b].to(device))
            if not torch.isfinite(loss):
                raise TrainingFailureError(f"non-finite loss at epoch {epoch}",
                                           best["state"] if best else None)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
            seen += len(b)
        rec = {"epoch": epoch, "lr": lr, "loss": total / seen}
        if val_set:
            preds = predict_keypoints(net, x_val, dims_val)
            rec["val_pckh"] = pckh(preds, gt_val).aggregate
        history.append(rec)
        log.info("epoch %d lr %.2e loss %.5f val %s", epoch, lr, rec["loss"], rec.get("val_pckh"))
        if on_epoch is not None:
            on_epoch(rec)
        score = rec.get("val_pckh", 0.0)
        if best is None or (val_set and score > best["score"]) or not val_set:
            best = {"score": score, "epoch": epoch, "state": state_snapshot(net)}

    net.load_state_dict(best["state"])
    net.cpu().eval()
    meta = {
        "backbone": ncfg.backbone,
        "epoch": best["epoch"],
        "val_pckh": best["score"] if val_set else None,
        "config_hash": config_hash(ncfg),
        "seed": cfg.seed,
        "train_config": cfg.to_dict(),
        "history": history,
    }
    return Checkpoint(net, meta)


def clone_model(net: nn.Module) -> nn.Module:
    return copy.deepcopy(net)
