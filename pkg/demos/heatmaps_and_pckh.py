"""
Heatmap codec and PCKh
======================

Encodes phantom joints as Gaussian heatmaps, decodes them back, and scores
progressively noisier predictions with PCKh at several thresholds.
"""
import numpy as np

from inbed_pose.core_types import JOINT_NAMES, KeypointSet, decode_heatmaps, encode_heatmaps
from inbed_pose.data_io import PhantomConfig, synth_samples
from inbed_pose.evaluation import head_norm, pckh, pckh_sweep, summary_text

samples = synth_samples(PhantomConfig(n_subjects=6, poses_per_subject=5, seed=1, cover="thin"))
gts = [s.keypoints for s in samples]
print(f"{len(gts)} labeled frames, {gts[0].K} joints")

# 160x120 frame, heatmaps at stride 4
hm = encode_heatmaps(gts[0], out_dims=(40, 30), stride=4.0)
back = decode_heatmaps(hm)
err = np.linalg.norm(back.coords - gts[0].coords, axis=1)
print(f"codec round trip: worst joint error {err.max():.2f}px (half a stride is 2px)")

# the head segment sets the scale of every threshold
print(f"head segment of frame 0: {head_norm(gts[0]):.1f}px")

rng = np.random.default_rng(0)
for noise in (1.0, 4.0, 8.0):
    preds = [KeypointSet(g.coords + rng.normal(0, noise, g.coords.shape), g.visible) for g in gts]
    curve = pckh_sweep(preds, gts, [0.1, 0.25, 0.5, 1.0])
    print(f"noise {noise:4.1f}px  " + "  ".join(f"@{r.threshold:g}={r.aggregate:5.1f}" for r in curve))

# a prediction flagged invisible is a miss even when it sits on the target
blind = [KeypointSet(g.coords, np.zeros(g.K, bool)) for g in gts]
print("all-invisible predictions:", pckh(blind, gts).aggregate)

rep = pckh(preds, gts, 0.5)
rep.method = "noisy"
print(summary_text(rep))
assert len(rep.per_joint) == len(JOINT_NAMES)
