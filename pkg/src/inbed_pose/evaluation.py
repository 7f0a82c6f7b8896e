"""PCKh scoring, model evaluation and ablation-table reports."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core_types import HEAD_TOP, THORAX, DomainTag, KeypointSet, Sample
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

# Row order of the ablation table.
METHOD_ROWS = (
    ("source", "Source (Uncover) data only"),
    ("cycaug", "Uncover + CycAug"),
    ("extreme_aug", "Uncover + CycAug + ExtremeAug"),
    ("kd", "Uncover + CycAug + ExtremeAug + Knowledge Distillation"),
)
_DOMAIN_KEY = {DomainTag.TARGET_THIN: "thin", DomainTag.TARGET_THICK: "thick"}


@dataclass
class PCKhReport:
    per_joint: List[Optional[float]]
    aggregate: float
    threshold: float
    n_samples: int
    excluded: int = 0
    correct: int = 0
    counted: int = 0
    per_domain: Dict[str, float] = field(default_factory=dict)
    method: str = ""
    backbone: str = ""

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "backbone": self.backbone,
            "threshold": self.threshold,
            "aggregate": self.aggregate,
            "per_joint": self.per_joint,
            "per_domain": self.per_domain,
            "n_samples": self.n_samples,
            "excluded": self.excluded,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PCKhReport":
        return cls(per_joint=d["per_joint"], aggregate=d["aggregate"], threshold=d["threshold"],
                   n_samples=d["n_samples"], excluded=d.get("excluded", 0), per_domain=d.get("per_domain", {}),
                   method=d.get("method", ""), backbone=d.get("backbone", ""))


def head_norm(kps: KeypointSet) -> Optional[float]:
    """Head-top to thorax distance, or ``None`` when either joint is invisible."""
    if not (kps.visible[HEAD_TOP] and kps.visible[THORAX]):
        return None
    d = kps.coords[HEAD_TOP] - kps.coords[THORAX]
    return float(np.hypot(d[0], d[1]))


def pckh(preds: Sequence[KeypointSet], gts: Sequence[KeypointSet], threshold: float = 0.5,
         fixed_norm: Optional[float] = None, domains: Optional[Sequence[DomainTag]] = None) -> PCKhReport:
    """Percentage of visible ground-truth joints predicted within
    ``threshold * head_norm`` (boundary inclusive).

    Predicted joints flagged invisible count as misses.  Samples whose
    normalisation length is undefined or zero are skipped and counted in
    ``excluded``.  ``fixed_norm`` replaces the head segment with a constant.
    """
    if len(preds) != len(gts):
        raise InvalidArgumentError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not threshold > 0:
        raise InvalidArgumentError("threshold must be positive")
    if domains is not None and len(domains) != len(gts):
        raise InvalidArgumentError("domains must align with samples")
    K = gts[0].K if gts else 0
    correct = np.zeros(K, dtype=np.int64)
    counted = np.zeros(K, dtype=np.int64)
    dom_tally: Dict[str, List[int]] = {}
    excluded = 0
    for i, (p, g) in enumerate(zip(preds, gts)):
        norm = fixed_norm if fixed_norm is not None else head_norm(g)
        if norm is None or not norm > 0:
            excluded += 1
            continue
        dist = np.linalg.norm(p.coords - g.coords, axis=1)
        hit = (dist <= threshold * norm) & p.visible & g.visible
        correct += hit
        counted += g.visible
        if domains is not None:
            key = _DOMAIN_KEY.get(DomainTag(domains[i]), DomainTag(domains[i]).value)
            t = dom_tally.setdefault(key, [0, 0])
            t[0] += int(hit.sum())
            t[1] += int(g.visible.sum())
    if excluded:
        log.warning("%d sample(s) excluded: head segment not measurable", excluded)
    total_c, total_n = int(correct.sum()), int(counted.sum())
    return PCKhReport(
        per_joint=[100.0 * c / n if n else None for c, n in zip(correct.tolist(), counted.tolist())],
        aggregate=100.0 * total_c / total_n if total_n else 0.0,
        threshold=float(threshold),
        n_samples=len(gts),
        excluded=excluded,
        correct=total_c,
        counted=total_n,
        per_domain={k: 100.0 * c / n if n else 0.0 for k, (c, n) in sorted(dom_tally.items())},
    )


def pckh_sweep(preds, gts, thresholds: Sequence[float], **kw) -> List[PCKhReport]:
    return [pckh(preds, gts, t, **kw) for t in thresholds]


def evaluate_model(ckpt, test_set: Sequence[Sample], threshold: float = 0.5, method: str = "",
                   report_path=None, fixed_norm: Optional[float] = None) -> PCKhReport:
    """Run inference on labeled test samples and score the decoded joints.

    ``ckpt`` may be a :class:`~inbed_pose.data_io.Checkpoint`, a model, or a
    path to a saved checkpoint.  With ``report_path`` the JSON report and a
    plain-text summary are written next to each other.
    """
    from .data_io import Checkpoint, load_checkpoint
    from .pose_nets import predict_keypoints

    for s in test_set:
        if s.keypoints is None:
            raise InvalidArgumentError(f"unlabeled test sample {s.subject_id}/{s.frame_id}")
    if isinstance(ckpt, (str, Path)):
        model, _ = load_checkpoint(ckpt)
    elif isinstance(ckpt, Checkpoint):
        model = ckpt.model
    else:
        model = ckpt
    preds = predict_keypoints(model, [s.image for s in test_set])
    rep = pckh(preds, [s.keypoints for s in test_set], threshold, fixed_norm, [s.domain for s in test_set])
    rep.method = method
    rep.backbone = getattr(model.config, "backbone", "")
    if report_path is not None:
        write_report(rep, report_path)
    return rep


def summary_text(rep: PCKhReport) -> str:
    from .core_types import JOINT_NAMES

    names = JOINT_NAMES if len(rep.per_joint) == len(JOINT_NAMES) else [str(i) for i in range(len(rep.per_joint))]
    lines = [f"method: {rep.method or '-'}  backbone: {rep.backbone or '-'}",
             f"PCKh@{rep.threshold:g}: {rep.aggregate:.2f}  ({rep.n_samples} samples, {rep.excluded} excluded)"]
    lines += [f"  {d:<6} {v:6.2f}" for d, v in rep.per_domain.items()]
    lines += [f"  {n:<15} " + ("   n/a" if v is None else f"{v:6.2f}") for n, v in zip(names, rep.per_joint)]
    return "\n".join(lines) + "\n"


def write_report(rep: PCKhReport, path) -> Path:
    """Write ``<path>.json`` and a readable ``<path>.txt``; returns the JSON path."""
    path = Path(path).with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rep.to_json(), indent=2))
    path.with_suffix(".txt").write_text(summary_text(rep))
    return path


def format_table(reports: Dict[str, PCKhReport]) -> str:
    """Plain-text ablation table; rows follow the fixed method order and
    columns are backbones (``reports`` keys are ``method`` or ``method/backbone``)."""
    cells: Dict[str, Dict[str, PCKhReport]] = {}
    for key, rep in reports.items():
        method, _, bb = key.partition("/")
        cells.setdefault(method, {})[bb or rep.backbone or "model"] = rep
    backbones = sorted({bb for row in cells.values() for bb in row})
    width = max(len(label) for _, label in METHOD_ROWS)
    thr = next(iter(reports.values())).threshold if reports else 0.5
    lines = [f"PCKh@{thr:g}".ljust(width) + " | " + " | ".join(f"{b:>15}" for b in backbones)]
    lines.append("-" * len(lines[0]))
    for key, label in METHOD_ROWS:
        if key not in cells:
            continue
        row = cells[key]
        lines.append(label.ljust(width) + " | " + " | ".join(
            f"{row[b].aggregate:15.2f}" if b in row else " " * 15 for b in backbones))
    return "\n".join(lines)

