"""Command-line entry point: ``inbed-pose <stage> [options]``.

Exit codes: 0 success, 1 other error, 2 invalid configuration,
3 missing prerequisite, 4 training failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import (
    CheckpointIncompatibleError, InBedPoseError, InvalidArgumentError, MalformedDatasetError,
    MissingPrerequisiteError, TrainingFailureError,
)
from .pipeline import STAGES, ConfigError, build_config, load_config_file, run_stage

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_TRAINING = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--out", help="output directory (default: $INBED_POSE_OUT or runs/default)")
    common.add_argument("--profile", choices=("toy", "full"), default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="inbed-pose", description="Cross-domain in-bed pose estimation pipeline.")
    sub = p.add_subparsers(dest="stage", required=True)
    sub.add_parser("synth-gen", parents=[common], help="render the synthetic phantom dataset")
    sub.add_parser("cycaug-train", parents=[common], help="fit uncovered->covered translators")
    a = sub.add_parser("augment", parents=[common], help="build gen_thin / gen_thick / extreme_aug splits")
    a.add_argument("--images", help="standalone mode: ExtremeAug every PNG in this directory")
    a.add_argument("--dest", help="output directory for --images mode")
    t = sub.add_parser("pose-train", parents=[common], help="train pose networks")
    t.add_argument("--method", default="all", choices=("all", "source", "cycaug", "extreme_aug"))
    d = sub.add_parser("distill", parents=[common], help="teacher->student adaptation on covered frames")
    d.add_argument("--teacher", help="teacher checkpoint (default: <out>/pose/extreme_aug)")
    d.add_argument("--target", help="dataset root with train_thin/train_thick (default: run dataset)")
    e = sub.add_parser("eval", parents=[common], help="score checkpoints on the covered test split")
    e.add_argument("--checkpoint", help="evaluate only this checkpoint")
    sub.add_parser("plot", parents=[common], help="draw PCKh curves and per-joint bars")
    sub.add_parser("all", parents=[common], help="run every stage in order")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("inbed_pose")
    try:
        overrides = load_config_file(args.config) if args.config else {}
        cfg = build_config(args.profile, overrides, seed=args.seed, out=args.out)
        extra = {k: v for k, v in vars(args).items()
                 if k in ("images", "dest", "method", "teacher", "target", "checkpoint") and v is not None}
        stages = STAGES if args.stage == "all" else (args.stage,)
        for stage in stages:
            result = run_stage(stage, cfg, **(extra if args.stage != "all" else {}))
            summary = result.pop("table", None) if isinstance(result, dict) else None
            print(summary if summary else json.dumps(result, indent=2, default=str))
    except (ConfigError, InvalidArgumentError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except (MissingPrerequisiteError, MalformedDatasetError, CheckpointIncompatibleError) as e:
        log.error("%s", e)
        return EXIT_MISSING
    except TrainingFailureError as e:
        log.error("%s", e)
        return EXIT_TRAINING
    except InBedPoseError as e:
        log.error("%s", e)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
