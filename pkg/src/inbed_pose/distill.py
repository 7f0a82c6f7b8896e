"""Self-supervised teacher -> student distillation on unlabeled covered frames.

The student starts as an exact copy of the teacher.  The teacher is frozen
and its heatmaps on covered images are the regression targets; the loss is
the same per-joint squared error as supervised training, with no
temperature or confidence weighting.
"""
from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import torch

from .core_types import DEFAULT_SIGMA, DomainTag, Sample
from .errors import InvalidArgumentError, TrainingFailureError
from .pose_nets import sample_plan, final_heatmaps, heatmap_mse, images_to_tensor, sup_loss, targets_for

log = logging.getLogger(__name__)

TARGET_DOMAINS = (DomainTag.TARGET_THIN.value, DomainTag.TARGET_THICK.value)


@dataclass(frozen=True)
class DistillConfig:
    lr: float = 2.5e-4
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    target_mix: Dict[str, float] = field(default_factory=lambda: {"target_thin": 0.5, "target_thick": 0.5})
    epoch_size: Optional[int] = None
    # >0 mixes the supervised loss on labeled source frames back in; off by default
    sup_weight: float = 0.0
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if abs(sum(self.target_mix.values()) - 1.0) > 1e-6 or any(v < 0 for v in self.target_mix.values()):
            raise InvalidArgumentError("target_mix weights must be non-negative and sum to 1")
        if set(self.target_mix) - set(TARGET_DOMAINS):
            raise InvalidArgumentError(f"target_mix keys must be among {TARGET_DOMAINS}")
        if self.sup_weight < 0:
            raise InvalidArgumentError("sup_weight must be non-negative")

    def to_dict(self):
        return asdict(self)


def kd_loss(student_pred: torch.Tensor, teacher_pred: torch.Tensor) -> torch.Tensor:
    """Squared heatmap distance to the teacher's soft labels.

    ``teacher_pred`` may be a single ``(B, K, h, w)`` stack shared by every
    student stack.
    """
    return heatmap_mse(student_pred, teacher_pred)


def parameter_hash(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(model.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def make_student(teacher: torch.nn.Module) -> torch.nn.Module:
    student = copy.deepcopy(teacher)
    for p in student.parameters():
        p.requires_grad_(True)
    return student


def distill(teacher, unlabeled_target: Sequence[Sample], cfg: DistillConfig,
            labeled_source: Optional[Sequence[Sample]] = None, on_epoch=None, device: str = "cpu"):
    """Train a clone of ``teacher`` to match the frozen teacher on covered frames.

    ``teacher`` is a :class:`~inbed_pose.data_io.Checkpoint` (or bare model).
    Returns the student as a Checkpoint taken after the final epoch.
    """
    from .data_io import Checkpoint, config_hash

    t_model = teacher.model if isinstance(teacher, Checkpoint) else teacher
    if not unlabeled_target:
        raise InvalidArgumentError("no target images to distill on")
    for s in unlabeled_target:
        if DomainTag(s.domain).value not in TARGET_DOMAINS or s.keypoints is not None:
            raise InvalidArgumentError(
                f"sample {s.subject_id}/{s.frame_id} ({DomainTag(s.domain).value}) is not an unlabeled target frame")
    if cfg.sup_weight > 0 and not labeled_source:
        raise InvalidArgumentError("sup_weight > 0 needs labeled source samples")

    t_model.eval()
    for p in t_model.parameters():
        p.requires_grad_(False)
    t_hash = parameter_hash(t_model)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    ncfg = t_model.config
    student = make_student(t_model)

    x_all = images_to_tensor([s.image for s in unlabeled_target], ncfg.input_dims)
    with torch.no_grad():
        soft = torch.cat([final_heatmaps(t_model(x_all[i:i + 64])) for i in range(0, len(x_all), 64)])
        # same batch through both nets: conv kernels can round differently per batch shape
        xb = x_all[:cfg.batch_size]
        student.eval()
        init_loss = kd_loss(student(xb), final_heatmaps(t_model(xb))).item()
    domains = np.array([DomainTag(s.domain).value for s in unlabeled_target])
    if cfg.sup_weight > 0:
        xs = images_to_tensor([s.image for s in labeled_source], ncfg.input_dims)
        ys = targets_for(labeled_source, ncfg, cfg.sigma)
    n_epoch = cfg.epoch_size or len(unlabeled_target)

    student.to(device)
    soft = soft.to(device)
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        student.train()
        order = sample_plan(domains, cfg.target_mix, n_epoch, rng)
        total = 0.0
        for i in range(0, n_epoch, cfg.batch_size):
            b = torch.from_numpy(order[i:i + cfg.batch_size])
            loss = kd_loss(student(x_all[b].to(device)), soft[b.to(device)])
            if cfg.sup_weight > 0:
                sb = torch.from_numpy(rng.integers(0, len(xs), len(b)))
                loss = loss + cfg.sup_weight * sup_loss(student(xs[sb].to(device)), ys[sb].to(device))
            if not torch.isfinite(loss):
                raise TrainingFailureError(f"non-finite distillation loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
        rec = {"epoch": epoch, "lr": cfg.lr, "loss": total / n_epoch}
        history.append(rec)
        log.info("distill epoch %d loss %.6f", epoch, rec["loss"])
        if on_epoch is not None:
            on_epoch(rec)

    if parameter_hash(t_model) != t_hash:
        raise TrainingFailureError("teacher parameters changed during distillation")
    student.cpu().eval()
    meta = {
        "backbone": getattr(ncfg, "backbone", ""),
        "epoch": cfg.epochs - 1,
        "config_hash": config_hash(ncfg),
        "seed": cfg.seed,
        "teacher_hash": t_hash,
        "initial_kd_loss": init_loss,
        "train_config": cfg.to_dict(),
        "history": history,
    }
    return Checkpoint(student, meta)
