"""
A shrunken end-to-end run
=========================

Same stages as ``inbed-pose all --profile toy``, with every knob turned down
so the whole chain finishes in about a minute on a laptop CPU.  The numbers
are meaningless at this size; the point is the output layout.

    python demos/mini_pipeline.py [OUT_DIR]
"""
import sys
import time
from pathlib import Path

from inbed_pose.pipeline import STAGES, build_config, run_stage

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("demo_out") / "mini_run"

overrides = {
    "data": {"phantom": {"n_subjects": 8, "poses_per_subject": 2}},
    "cycaug": {"iterations": 30},
    "pose_train": {"epochs": 3, "decay_epochs": [2], "epoch_size": 32},
    "distill": {"epochs": 1, "epoch_size": 32},
}
cfg = build_config("toy", overrides, seed=0, out=out)

for stage in STAGES:
    t0 = time.time()
    run_stage(stage, cfg)
    print(f"{stage:13s} {time.time() - t0:6.1f}s")

print()
print((out / "eval" / "table.txt").read_text())
print("manifests:", sorted(p.name for p in (out / "manifests").iterdir()))
print("plots:    ", sorted(p.name for p in (out / "plots").iterdir()))
