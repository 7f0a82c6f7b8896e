import numpy as np
import pytest
import torch

from inbed_pose.core_types import DomainTag, KeypointSet, Sample, ThermalImage, encode_heatmaps
from inbed_pose.data_io import PhantomConfig, synth_samples
from inbed_pose.errors import InvalidArgumentError, TrainingFailureError
from inbed_pose.pose_nets import (
    PoseNetConfig, PoseTrainConfig, build_pose_net, count_parameters, final_heatmaps, lr_at_epoch,
    predict_keypoints, sample_plan, sup_loss, train_pose,
)

TOY = PoseNetConfig(n_stacks=1, channels=32, hourglass_depth=3, input_dims=(64, 64), heatmap_dims=(16, 16))
TOY_SB = PoseNetConfig(backbone="simple_baseline", channels=16, encoder_depth=1, deconv_channels=32,
                       input_dims=(64, 64), heatmap_dims=(16, 16))


class TestBuild:
    def test_hourglass_full_shape(self):
        net = build_pose_net(PoseNetConfig(n_stacks=2, channels=32), seed=0).eval()
        with torch.no_grad():
            assert net(torch.zeros(1, 1, 256, 256)).shape == (1, 2, 14, 64, 64)

    def test_simple_baseline_full_shape(self):
        cfg = PoseNetConfig(backbone="simple_baseline", channels=16, encoder_depth=1, deconv_channels=32)
        net = build_pose_net(cfg, seed=0).eval()
        with torch.no_grad():
            assert net(torch.zeros(1, 1, 256, 256)).shape == (1, 14, 64, 64)

    def test_toy_budget(self):
        assert count_parameters(build_pose_net(TOY)) < 2_000_000
        assert count_parameters(build_pose_net(TOY_SB)) < 2_000_000

    def test_seeded_init(self):
        a, b = build_pose_net(TOY, seed=3), build_pose_net(TOY, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    @pytest.mark.parametrize("kw", [dict(input_dims=(64, 64), heatmap_dims=(15, 15)),
                                    dict(input_dims=(64, 48), heatmap_dims=(16, 16)),
                                    dict(input_dims=(96, 96), heatmap_dims=(32, 32)),
                                    dict(backbone="resnet"),
                                    dict(hourglass_depth=5, input_dims=(64, 64), heatmap_dims=(16, 16))])
    def test_inconsistent(self, kw):
        with pytest.raises(InvalidArgumentError):
            build_pose_net(PoseNetConfig(**kw))

    def test_config_round_trip(self):
        assert PoseNetConfig.from_dict(TOY.to_dict()) == TOY


class TestLoss:
    def test_identity(self):
        t = torch.rand(2, 14, 8, 8)
        assert sup_loss(t, t).item() == 0.0

    def test_hand_value(self):
        t = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        p = torch.tensor([[[[1.0, 0.0], [0.0, 1.0]]]], dtype=torch.float64)
        assert sup_loss(p, t).item() == 2.0

    def test_homogeneous(self):
        t, d = torch.rand(3, 4, 5, 5, dtype=torch.float64), torch.randn(3, 4, 5, 5, dtype=torch.float64)
        assert sup_loss(t + 2 * d, t).item() == pytest.approx(4 * sup_loss(t + d, t).item(), rel=1e-12)

    def test_reduction(self):
        p, t = torch.randn(3, 4, 5, 6, dtype=torch.float64), torch.randn(3, 4, 5, 6, dtype=torch.float64)
        expected = sum(((p[b, k] - t[b, k]) ** 2).sum().item() for b in range(3) for k in range(4)) / 12
        assert sup_loss(p, t).item() == pytest.approx(expected, rel=1e-12)

    def test_stacks_averaged(self):
        t = torch.zeros(1, 1, 2, 2)
        p = torch.stack([torch.ones(1, 1, 2, 2), torch.zeros(1, 1, 2, 2)], dim=1)
        assert sup_loss(p, t).item() == 2.0

    def test_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            sup_loss(torch.zeros(1, 14, 8, 8), torch.zeros(1, 14, 8, 7))
        with pytest.raises(InvalidArgumentError):
            sup_loss(torch.zeros(1, 2, 13, 8, 8), torch.zeros(1, 14, 8, 8))


class TestSchedule:
    def test_reference_epochs(self):
        cfg = PoseTrainConfig()
        assert lr_at_epoch(cfg, 0) == 2.5e-4
        assert lr_at_epoch(cfg, 44) == 2.5e-4
        assert lr_at_epoch(cfg, 45) == 2.5e-5
        assert lr_at_epoch(cfg, 59) == 2.5e-5
        assert lr_at_epoch(cfg, 60) == 2.5e-6
        assert lr_at_epoch(cfg, 99) == 2.5e-6

    @pytest.mark.parametrize("kw", [dict(decay_epochs=(60, 45)), dict(decay_factor=1.0), dict(decay_factor=0),
                                    dict(mix={"source_uncover": 0.5}), dict(epochs=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            PoseTrainConfig(**kw)


class TestSamplePlan:
    def test_only_present_domains(self):
        dom = np.array(["source_uncover"] * 5 + ["gen_thin"] * 5)
        idx = sample_plan(dom, PoseTrainConfig().mix, 1000, np.random.default_rng(0))
        frac = np.mean(dom[idx] == "gen_thin")
        assert 0.45 < frac < 0.55

    def test_weights_followed(self):
        dom = np.array(["source_uncover"] * 3 + ["gen_thin"] * 30)
        idx = sample_plan(dom, {"source_uncover": 0.8, "gen_thin": 0.2}, 4000, np.random.default_rng(1))
        assert 0.77 < np.mean(dom[idx] == "source_uncover") < 0.83

    def test_none_present(self):
        with pytest.raises(InvalidArgumentError):
            sample_plan(np.array(["target_thin"]), PoseTrainConfig().mix, 4, np.random.default_rng(0))


def _phantoms(n=20, seed=0):
    return synth_samples(PhantomConfig(n_subjects=n, poses_per_subject=10, seed=seed))


class TestTrain:
    def test_loss_falls(self):
        train = _phantoms()
        cfg = PoseTrainConfig(epochs=10, lr=1e-3, decay_epochs=(), batch_size=16, epoch_size=64)
        ck = train_pose(build_pose_net(TOY, seed=0), train, cfg)
        h = ck.meta["history"]
        assert len(train) == 200
        assert h[-1]["loss"] < h[0]["loss"]
        assert ck.meta["epoch"] == 9

    def test_best_epoch_reproducible(self):
        train, val = _phantoms(6), _phantoms(2, seed=1)
        cfg = PoseTrainConfig(epochs=3, lr=1e-3, decay_epochs=(), batch_size=8, epoch_size=16)
        a = train_pose(build_pose_net(TOY, seed=0), train, cfg, val)
        b = train_pose(build_pose_net(TOY, seed=0), train, cfg, val)
        assert a.meta["epoch"] == b.meta["epoch"]
        assert [r["val_pckh"] for r in a.meta["history"]] == [r["val_pckh"] for r in b.meta["history"]]
        best = max(range(3), key=lambda e: (a.meta["history"][e]["val_pckh"], -e))
        assert a.meta["epoch"] == best

    def test_rejects_unlabeled(self):
        s = _phantoms(1)[0]
        bad = Sample(s.image, DomainTag.TARGET_THIN, None, "x", "y")
        with pytest.raises(InvalidArgumentError):
            train_pose(build_pose_net(TOY), [s, bad], PoseTrainConfig(epochs=1))

    def test_nan_loss(self):
        net = build_pose_net(TOY, seed=0)
        with torch.no_grad():
            next(net.parameters()).fill_(float("nan"))
        with pytest.raises(TrainingFailureError):
            train_pose(net, _phantoms(1), PoseTrainConfig(epochs=1, batch_size=4, epoch_size=4))

    def test_checkpoint_meta(self):
        ck = train_pose(build_pose_net(TOY, seed=0), _phantoms(2), PoseTrainConfig(epochs=1, epoch_size=8, seed=5),
                        _phantoms(1, seed=3))
        for key in ("backbone", "epoch", "val_pckh", "config_hash", "seed"):
            assert key in ck.meta
        assert ck.meta["seed"] == 5


class TestPredict:
    def test_oracle_model_maps_back_to_image_frame(self):
        class Oracle(torch.nn.Module):
            config = TOY

            def __init__(self, maps):
                super().__init__()
                self.dummy = torch.nn.Parameter(torch.zeros(1))
                self.maps = maps

            def forward(self, x):
                return self.maps[: len(x)]

        kps = KeypointSet(np.tile([[32.0, 48.0]], (14, 1)), np.ones(14, bool))
        from inbed_pose.core_types import rescale_keypoints
        in_net = rescale_keypoints(kps, (160, 120), (64, 64))
        maps = torch.from_numpy(encode_heatmaps(in_net, (16, 16), 4).maps[None].astype(np.float32))
        pred = predict_keypoints(Oracle(maps), [ThermalImage(np.zeros((160, 120)))])[0]
        assert np.abs(pred.coords - kps.coords).max() <= 0.5 * 4 * 160 / 64
        assert pred.visible.all()

    def test_final_heatmaps(self):
        assert final_heatmaps(torch.zeros(2, 3, 14, 4, 4)).shape == (2, 14, 4, 4)
        assert final_heatmaps(torch.zeros(2, 14, 4, 4)).shape == (2, 14, 4, 4)
