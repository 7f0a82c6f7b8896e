"""Stage orchestration for the five-step workflow.

Stages, in order: ``synth-gen`` -> ``cycaug-train`` -> ``augment`` ->
``pose-train`` -> ``distill`` -> ``eval`` (-> ``plot``).  Each stage reads
artifacts written by earlier ones under the run's output directory and
records a manifest (config snapshot, seed, input hashes, metrics) in
``<out>/manifests/<stage>.json``.

Output layout::

    <out>/data/                     synthetic dataset (unless data.root is set)
    <out>/cycaug/G_thin.npz ...     translation generators
    <out>/augmented/<split>/...     gen_thin, gen_thick, extreme_aug
    <out>/pose/<method>.npz         source, cycaug, extreme_aug
    <out>/distill/kd.npz
    <out>/eval/<method>.json, table.txt, sweeps.json
    <out>/plots/*.png
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import yaml
from filelock import FileLock, Timeout

from .core_types import DomainTag, Sample
from .cycaug import CycAugTrainConfig, train_cyclegan, translate_samples
from .data_io import (
    Checkpoint, PhantomConfig, gen_phantoms, load_checkpoint, load_dataset, read_png, save_checkpoint,
    write_png, write_split, _json_default,
)
from .distill import DistillConfig, distill
from .errors import InBedPoseError, InvalidArgumentError, MalformedDatasetError, MissingPrerequisiteError
from .evaluation import METHOD_ROWS, PCKhReport, evaluate_model, format_table, pckh_sweep, write_report
from .extreme_aug import ExtremeAugConfig, extreme_aug, sample_rng
from .pose_nets import PoseNetConfig, PoseTrainConfig, build_pose_net, predict_keypoints, train_pose

log = logging.getLogger(__name__)

STAGES = ("synth-gen", "cycaug-train", "augment", "pose-train", "distill", "eval", "plot")
POSE_METHODS = ("source", "cycaug", "extreme_aug")
COVERS = ("thin", "thick")


class ConfigError(InBedPoseError):
    pass


# toy: whole pipeline on one desktop CPU in minutes; full: paper-scale settings
PROFILES = {
    "toy": {
        "data": {"root": None, "normalization": "fixed", "val_fraction": 0.1,
                 "phantom": {"n_subjects": 40, "poses_per_subject": 8, "dims": [160, 120]}},
        "cycaug": {"iterations": 250, "batch_size": 4, "image_dims": [64, 64], "gen_channels": 12,
                   "n_res_blocks": 2, "disc_channels": 16, "disc_layers": 3, "pool_size": 50},
        "extreme_aug": {"dark_kernel_size": 8},
        "pose_net": {"backbone": "hourglass", "n_stacks": 1, "channels": 32, "hourglass_depth": 3,
                     "encoder_depth": 1, "deconv_channels": 32,
                     "input_dims": [64, 64], "heatmap_dims": [16, 16]},
        "pose_train": {"epochs": 30, "decay_epochs": [20, 26], "lr": 1e-3, "batch_size": 8, "epoch_size": 320},
        "distill": {"epochs": 10, "lr": 2.5e-4, "batch_size": 8, "epoch_size": 320},
        "eval": {"threshold": 0.5, "sweep": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5,
                                             0.6, 0.7, 0.8, 0.9, 1.0]},
    },
    "full": {
        "data": {"root": None, "normalization": "minmax", "val_fraction": 0.1,
                 "phantom": {"n_subjects": 90, "poses_per_subject": 15, "dims": [160, 120]}},
        "cycaug": {"iterations": 20000, "batch_size": 1, "image_dims": [160, 120]},
        "extreme_aug": {},
        "pose_net": {"backbone": "hourglass", "n_stacks": 2, "channels": 128,
                     "input_dims": [256, 256], "heatmap_dims": [64, 64]},
        "pose_train": {"epochs": 100, "decay_epochs": [45, 60], "lr": 2.5e-4, "batch_size": 16},
        "distill": {"epochs": 30, "lr": 2.5e-4, "batch_size": 16},
        "eval": {"threshold": 0.5, "sweep": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5,
                                             0.6, 0.7, 0.8, 0.9, 1.0]},
    },
}
_SEEDED = ("phantom", "cycaug", "extreme_aug", "pose_train", "distill")


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _tuplify(d: dict, keys) -> dict:
    return {k: (tuple(v) if k in keys and isinstance(v, list) else v) for k, v in d.items()}


@dataclass
class PipelineConfig:
    profile: str
    seed: int
    out: Path
    device: str
    data: dict
    phantom: PhantomConfig
    cycaug: CycAugTrainConfig
    extreme_aug: ExtremeAugConfig
    pose_net: PoseNetConfig
    pose_train: PoseTrainConfig
    distill: DistillConfig
    eval: dict
    raw: dict = field(default_factory=dict)

    @property
    def data_root(self) -> Path:
        return Path(self.data["root"]) if self.data.get("root") else self.out / "data"

    def snapshot(self) -> dict:
        return json.loads(json.dumps(self.raw, default=_json_default))


def build_config(profile: Optional[str] = None, overrides: Optional[Mapping] = None, seed: Optional[int] = None,
                 out=None) -> PipelineConfig:
    """Profile defaults, then ``overrides`` (a parsed config file), then explicit arguments.

    An explicit ``profile`` beats one named in ``overrides``; the fallback is ``toy``.

    Section seeds default to the global seed.  Environment variables
    ``INBED_POSE_OUT`` and ``INBED_POSE_DEVICE`` fill in the output root and
    device when neither the file nor the arguments set them.
    """
    overrides = dict(overrides or {})
    file_profile = overrides.pop("profile", None)
    profile = profile or file_profile or "toy"
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    raw = _merge(PROFILES[profile], overrides)
    raw["profile"] = profile
    if seed is not None:
        raw["seed"] = int(seed)
    raw.setdefault("seed", 0)
    if out is not None:
        raw["out"] = str(out)
    raw.setdefault("out", os.environ.get("INBED_POSE_OUT", "runs/default"))
    raw.setdefault("device", os.environ.get("INBED_POSE_DEVICE", "cpu"))
    phantom_over = (overrides.get("data") or {}).get("phantom") or {}
    for sec in _SEEDED:
        given = phantom_over if sec == "phantom" else (overrides.get(sec) or {})
        target = raw["data"]["phantom"] if sec == "phantom" else raw.setdefault(sec, {})
        if "seed" not in given:
            target["seed"] = raw["seed"]
    try:
        cfg = PipelineConfig(
            profile=profile,
            seed=int(raw["seed"]),
            out=Path(raw["out"]),
            device=str(raw["device"]),
            data={k: v for k, v in raw["data"].items() if k != "phantom"},
            phantom=PhantomConfig(**_tuplify(raw["data"]["phantom"], {"dims"})),
            cycaug=CycAugTrainConfig(**_tuplify(raw["cycaug"], {"image_dims", "betas"})),
            extreme_aug=ExtremeAugConfig(**_tuplify(raw["extreme_aug"], {"dim_factor_range", "n_dark_kernels_range"})),
            pose_net=PoseNetConfig(**_tuplify(raw["pose_net"], {"input_dims", "heatmap_dims"})).validate(),
            pose_train=PoseTrainConfig(**_tuplify(raw["pose_train"], {"decay_epochs"})),
            distill=DistillConfig(**raw["distill"]),
            eval=dict(raw["eval"]),
            raw=raw,
        )
    except (TypeError, InvalidArgumentError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    if cfg.data.get("normalization") not in ("fixed", "minmax"):
        raise ConfigError("data.normalization must be 'fixed' or 'minmax'")
    if not 0 <= float(cfg.data.get("val_fraction", 0.1)) < 1:
        raise ConfigError("data.val_fraction must lie in [0, 1)")
    return cfg


def load_config_file(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


# --------------------------------------------------------------------------
# helpers

def git_blob_hash(path) -> str:
    """SHA-1 of ``b"blob <size>\\0" + content``, the id git gives a file."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _tree_hash(root: Path) -> str:
    # not git's binary tree format; a sorted listing of (relative path, blob id)
    h = hashlib.sha1()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != ".lock":
            h.update(f"{p.relative_to(root).as_posix()} {git_blob_hash(p)}\n".encode())
    return h.hexdigest()


def _hash_inputs(paths: Sequence[Path]) -> Dict[str, str]:
    out = {}
    for p in paths:
        if p.is_dir():
            out[str(p)] = _tree_hash(p)
        elif p.exists():
            out[str(p)] = git_blob_hash(p)
    return out


def _write_manifest(cfg: PipelineConfig, stage: str, inputs: Sequence[Path], outputs: Sequence, metrics=None):
    man = {
        "stage": stage,
        "profile": cfg.profile,
        "seed": cfg.seed,
        "config": cfg.snapshot(),
        "inputs": _hash_inputs([Path(p) for p in inputs]),
        "outputs": [str(p) for p in outputs],
        "metrics": metrics or {},
    }
    path = cfg.out / "manifests" / f"{stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(man, indent=2, default=_json_default))
    return path


def _require_ckpt(path: Path, stage: str, what: str):
    if not Path(path).with_suffix(".npz").exists():
        raise MissingPrerequisiteError(f"{what} not found at {Path(path).with_suffix('.npz')}: run {stage} first")


def _dataset(cfg: PipelineConfig):
    root = cfg.data_root
    if not root.is_dir():
        raise MissingPrerequisiteError(f"no dataset at {root}: run synth-gen first (or set data.root)")
    return load_dataset(root)


def _split_val(cfg: PipelineConfig, subjects: Sequence[str]):
    subjects = sorted(subjects)
    frac = float(cfg.data.get("val_fraction", 0.1))
    if frac <= 0 or len(subjects) < 2:
        return set(subjects), set()
    n_val = max(1, int(round(frac * len(subjects))))
    perm = np.random.default_rng(cfg.seed).permutation(len(subjects))
    val = {subjects[i] for i in perm[:n_val]}
    return set(subjects) - val, val


# --------------------------------------------------------------------------
# stages

def stage_synth_gen(cfg: PipelineConfig, **_):
    root = cfg.data_root
    man = gen_phantoms(cfg.phantom, root)
    _write_manifest(cfg, "synth-gen", [], [root], {"counts": man.counts()})
    return {"counts": man.counts(), "root": str(root)}


def stage_cycaug_train(cfg: PipelineConfig, **_):
    man = _dataset(cfg)
    norm = cfg.data["normalization"]
    source = man.load("train_source", norm)
    out_dir = cfg.out / "cycaug"
    metrics = {}
    for cover in COVERS:
        split = f"train_{cover}"
        if split not in man.splits:
            raise MalformedDatasetError(f"dataset has no {split} split")
        target = man.load(split, norm)
        run = train_cyclegan(source, target, cfg.cycaug, cover, checkpoint_dir=out_dir, device=cfg.device)
        (out_dir / f"history_{cover}.json").write_text(json.dumps(run.history))
        h = run.history
        k = max(1, min(10, len(h) // 10))
        metrics[cover] = {"total_start": float(np.mean([r["total"] for r in h[:k]])),
                          "total_end": float(np.mean([r["total"] for r in h[-k:]]))}
    _write_manifest(cfg, "cycaug-train", [cfg.data_root], [out_dir], metrics)
    return metrics


def augment_samples(cfg: PipelineConfig, source: Sequence[Sample], generators: Mapping[str, object]) -> Dict[str, List[Sample]]:
    """Translate labeled source frames with each cover generator and run
    ExtremeAug over every translated frame."""
    out = {}
    ext = []
    idx = 0
    for cover in COVERS:
        gen = translate_samples(generators[cover], source, DomainTag(f"gen_{cover}"))
        out[f"gen_{cover}"] = gen
        for s in gen:
            img = extreme_aug(s.image, cfg.extreme_aug, sample_rng(cfg.extreme_aug.seed, idx))
            ext.append(Sample(img, DomainTag.EXTREME_AUG, s.keypoints, s.subject_id, s.frame_id, {"from": cover}))
            idx += 1
    out["extreme_aug"] = ext
    return out


def stage_augment(cfg: PipelineConfig, images=None, dest=None, **_):
    if images is not None:
        return augment_png_dir(cfg, Path(images), Path(dest or cfg.out / "extreme_png"))
    man = _dataset(cfg)
    gens = {}
    for cover in COVERS:
        p = cfg.out / "cycaug" / f"G_{cover}"
        _require_ckpt(p, "cycaug-train", f"{cover}-cover generator")
        gens[cover] = load_checkpoint(p)[0]
    source = man.load("train_source", cfg.data["normalization"])
    aug = augment_samples(cfg, source, gens)
    out_dir = cfg.out / "augmented"
    for split, samples in aug.items():
        write_split(out_dir, split, samples)
    _write_manifest(cfg, "augment", [cfg.data_root, cfg.out / "cycaug"], [out_dir],
                    {k: len(v) for k, v in aug.items()})
    return {k: len(v) for k, v in aug.items()}


def augment_png_dir(cfg: PipelineConfig, src: Path, dest: Path):
    """ExtremeAug every PNG in ``src`` into ``dest``, keeping each file's bit depth."""
    from PIL import Image

    files = sorted(src.glob("*.png"))
    if not files:
        raise MissingPrerequisiteError(f"no PNG files in {src}")
    dest.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(files):
        with Image.open(f) as im:
            bits = 16 if np.array(im).dtype != np.uint8 else 8
        img = read_png(f, "fixed")
        write_png(dest / f.name, extreme_aug(img, cfg.extreme_aug, sample_rng(cfg.extreme_aug.seed, i)), bits)
    _write_manifest(cfg, "augment", [src], [dest], {"n_images": len(files)})
    return {"n_images": len(files)}


def _training_sets(cfg: PipelineConfig, method: str):
    man = _dataset(cfg)
    norm = cfg.data["normalization"]
    train_subj, val_subj = _split_val(cfg, man.subjects("train_source"))
    train = man.load("train_source", norm, subjects=train_subj)
    val = man.load("train_source", norm, subjects=val_subj) if val_subj else None
    if method != "source":
        aug_root = cfg.out / "augmented"
        if not aug_root.is_dir():
            raise MissingPrerequisiteError(f"no augmented data at {aug_root}: run augment first")
        aug = load_dataset(aug_root)
        splits = ["gen_thin", "gen_thick"] + (["extreme_aug"] if method == "extreme_aug" else [])
        for split in splits:
            if split not in aug.splits:
                raise MissingPrerequisiteError(f"augmented split {split} missing: run augment first")
            train += aug.load(split, norm, subjects=train_subj)
    return train, val


def stage_pose_train(cfg: PipelineConfig, method: str = "all", **_):
    methods = POSE_METHODS if method in (None, "all") else (method,)
    metrics = {}
    outputs = []
    for m in methods:
        if m not in POSE_METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {POSE_METHODS}")
        train, val = _training_sets(cfg, m)
        net = build_pose_net(cfg.pose_net, seed=cfg.pose_train.seed)
        ck = train_pose(net, train, cfg.pose_train, val, device=cfg.device)
        ck.meta["method"] = m
        path = save_checkpoint(ck.model, ck.meta, cfg.out / "pose" / m)
        outputs.append(path)
        metrics[m] = {"best_epoch": ck.meta["epoch"], "val_pckh": ck.meta["val_pckh"], "n_train": len(train)}
    _write_manifest(cfg, "pose-train", [cfg.data_root, cfg.out / "augmented"], outputs, metrics)
    return metrics


def stage_distill(cfg: PipelineConfig, teacher=None, target=None, **_):
    tpath = Path(teacher) if teacher else cfg.out / "pose" / "extreme_aug"
    if not tpath.with_suffix(".npz").exists():
        raise MissingPrerequisiteError(f"teacher checkpoint {tpath.with_suffix('.npz')} not found: run pose-train first")
    model, meta = load_checkpoint(tpath)
    troot = Path(target) if target else cfg.data_root
    if not troot.is_dir():
        raise MissingPrerequisiteError(f"no target images at {troot}: run synth-gen first")
    man = load_dataset(troot)
    norm = cfg.data["normalization"]
    unl = man.load("train_thin", norm) + man.load("train_thick", norm)
    labeled = None
    if cfg.distill.sup_weight > 0:
        labeled = man.load("train_source", norm)
    ck = distill(Checkpoint(model, meta), unl, cfg.distill, labeled, device=cfg.device)
    ck.meta["method"] = "kd"
    path = save_checkpoint(ck.model, ck.meta, cfg.out / "distill" / "kd")
    metrics = {"final_loss": ck.meta["history"][-1]["loss"], "initial_kd_loss": ck.meta["initial_kd_loss"]}
    _write_manifest(cfg, "distill", [tpath.with_suffix(".npz"), troot], [path], metrics)
    return metrics


def _method_checkpoints(cfg: PipelineConfig) -> Dict[str, Path]:
    paths = {m: cfg.out / "pose" / m for m in POSE_METHODS}
    paths["kd"] = cfg.out / "distill" / "kd"
    return {m: p for m, p in paths.items() if p.with_suffix(".npz").exists()}


def stage_eval(cfg: PipelineConfig, checkpoint=None, **_):
    man = _dataset(cfg)
    if "test" not in man.splits:
        raise MalformedDatasetError("dataset has no test split")
    test = man.load("test", cfg.data["normalization"])
    ckpts = {Path(checkpoint).stem: Path(checkpoint)} if checkpoint else _method_checkpoints(cfg)
    if not ckpts:
        raise MissingPrerequisiteError("no pose checkpoints found: run pose-train first")
    thr = float(cfg.eval.get("threshold", 0.5))
    sweep = sorted(set(float(t) for t in cfg.eval.get("sweep", [])) | {thr})
    out_dir = cfg.out / "eval"
    reports, sweeps = {}, {}
    gts = [s.keypoints for s in test]
    for method, path in ckpts.items():
        model, meta = load_checkpoint(path)
        rep = evaluate_model(model, test, thr, method=method)
        write_report(rep, out_dir / method)
        reports[method] = rep
        preds = predict_keypoints(model, [s.image for s in test])
        sweeps[method] = [r.to_json() for r in pckh_sweep(preds, gts, sweep)]
    table = format_table(reports)
    (out_dir / "table.txt").write_text(table + "\n")
    (out_dir / "sweeps.json").write_text(json.dumps(sweeps, indent=2))
    ablation = {m: reports[m].aggregate for m, _ in METHOD_ROWS if m in reports}
    (out_dir / "ablation.json").write_text(json.dumps(ablation, indent=2))
    _write_manifest(cfg, "eval", [cfg.data_root] + [p.with_suffix(".npz") for p in ckpts.values()],
                    [out_dir], {"aggregate": ablation,
                                "per_domain": {m: r.per_domain for m, r in reports.items()}})
    log.info("\n%s", table)
    return {"aggregate": ablation, "table": table}


def stage_plot(cfg: PipelineConfig, **_):
    path = cfg.out / "eval" / "sweeps.json"
    if not path.exists():
        raise MissingPrerequisiteError(f"{path} not found: run eval first")
    raw = json.loads(path.read_text())
    series = {m: [PCKhReport.from_json(r) for r in reps] for m, reps in raw.items()}
    files = emit_plots(series, cfg.out / "plots")
    _write_manifest(cfg, "plot", [path], files)
    return {"files": [str(f) for f in files]}


_STAGE_FUNCS = {
    "synth-gen": stage_synth_gen,
    "cycaug-train": stage_cycaug_train,
    "augment": stage_augment,
    "pose-train": stage_pose_train,
    "distill": stage_distill,
    "eval": stage_eval,
    "plot": stage_plot,
}


def run_stage(stage: str, cfg: PipelineConfig, **kwargs):
    """Run one stage under the output directory's lock and return its metrics."""
    if stage not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(cfg.out / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise InBedPoseError(f"another stage is running in {cfg.out}") from None
    try:
        log.info("stage %s (profile %s, seed %d) -> %s", stage, cfg.profile, cfg.seed, cfg.out)
        return _STAGE_FUNCS[stage](cfg, **kwargs)
    finally:
        lock.release()


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str] = STAGES):
    return {s: run_stage(s, cfg) for s in stages}


# --------------------------------------------------------------------------
# plots

Series = Union[PCKhReport, Sequence[PCKhReport], Mapping[str, Union[PCKhReport, Sequence[PCKhReport]]]]


def _normalise_series(series: Series) -> Dict[str, List[PCKhReport]]:
    if isinstance(series, PCKhReport):
        series = {"model": [series]}
    elif not isinstance(series, Mapping):
        series = {"model": list(series)}
    out = {}
    for k, v in series.items():
        reps = [v] if isinstance(v, PCKhReport) else list(v)
        if reps:
            out[k] = sorted(reps, key=lambda r: r.threshold)
    if not out:
        raise InvalidArgumentError("emit_plots needs at least one report")
    return out


def plot_data(series: Series, threshold: float = 0.5):
    """Ordered labels, threshold curves and per-joint values behind the plots.

    Labels follow the ablation-table row order, unknown labels last.
    """
    s = _normalise_series(series)
    order = [m for m, _ in METHOD_ROWS if m in s] + sorted(k for k in s if k not in dict(METHOD_ROWS))
    curves = {k: ([r.threshold for r in s[k]], [r.aggregate for r in s[k]]) for k in order}
    per_joint = {}
    for k in order:
        rep = min(s[k], key=lambda r: abs(r.threshold - threshold))
        per_joint[k] = [np.nan if v is None else v for v in rep.per_joint]
    return order, curves, per_joint


def emit_plots(series: Series, out_dir, threshold: float = 0.5) -> List[Path]:
    """Write ``pckh_curve.png`` and ``per_joint.png``; returns their paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .core_types import JOINT_NAMES

    order, curves, per_joint = plot_data(series, threshold)
    labels = dict(METHOD_ROWS)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(6, 4))
    for k in order:
        t, v = curves[k]
        ax.plot(t, v, marker="o", label=labels.get(k, k))
    ax.set_xlabel("normalised distance threshold")
    ax.set_ylabel("PCKh (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7)
    fig.tight_layout()
    curve_path = out_dir / "pckh_curve.png"
    fig.savefig(curve_path, dpi=100)
    plt.close(fig)

    K = len(next(iter(per_joint.values())))
    names = JOINT_NAMES if K == len(JOINT_NAMES) else [str(i) for i in range(K)]
    fig, ax = plt.subplots(figsize=(10, 5))
    width = 0.8 / len(order)
    x = np.arange(K)
    for i, k in enumerate(order):
        ax.bar(x + i * width - 0.4 + width / 2, per_joint[k], width, label=labels.get(k, k))
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel(f"PCKh@{threshold:g} (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7, loc="upper center", bbox_to_anchor=(0.5, -0.25), ncol=2)
    fig.tight_layout()
    bar_path = out_dir / "per_joint.png"
    fig.savefig(bar_path, dpi=100)
    plt.close(fig)
    return [curve_path, bar_path]
