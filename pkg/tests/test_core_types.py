import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inbed_pose.core_types import (
    HEAD_TOP, JOINT_NAMES, NUM_JOINTS, THORAX, DomainTag, HeatmapStack, KeypointSet, Sample, ThermalImage,
    decode_heatmaps, decode_maps, encode_heatmaps, rescale_keypoints, resize_pixels,
)
from inbed_pose.errors import InvalidArgumentError


def kps_one(x, y, visible=True):
    return KeypointSet([[x, y]], [visible])


class TestTypes:
    def test_lsp_order(self):
        assert NUM_JOINTS == 14
        assert JOINT_NAMES[THORAX] == "thorax"
        assert JOINT_NAMES[HEAD_TOP] == "head_top"

    def test_labeled_domains(self):
        labeled = {d for d in DomainTag if d.labeled}
        assert labeled == {DomainTag.SOURCE_UNCOVER, DomainTag.GEN_THIN, DomainTag.GEN_THICK, DomainTag.EXTREME_AUG}

    @pytest.mark.parametrize("bad", [np.full((4, 4), 1.01), np.full((4, 4), -0.1), np.zeros((0, 3)), np.zeros(5),
                                     np.full((2, 2), np.nan)])
    def test_thermal_image_rejects(self, bad):
        with pytest.raises(InvalidArgumentError):
            ThermalImage(bad)

    def test_thermal_image_is_read_only(self):
        im = ThermalImage(np.zeros((3, 4)))
        assert im.dims == (3, 4)
        with pytest.raises(ValueError):
            im.pixels[0, 0] = 1.0

    def test_keypoint_rows_round_trip(self):
        rows = [[1.5, 2.0, 1], [0.0, 0.0, 0]]
        assert KeypointSet.from_rows(rows).to_rows() == rows

    def test_keypoint_within(self):
        k = KeypointSet([[0, 0], [119, 159], [500, 500]], [True, True, False])
        assert k.within((160, 120))
        assert not KeypointSet([[120, 0]], [True]).within((160, 120))

    def test_sample_labeled(self):
        im = ThermalImage(np.zeros((2, 2)))
        assert not Sample(im, DomainTag.TARGET_THIN).labeled
        assert Sample(im, DomainTag.SOURCE_UNCOVER, kps_one(0, 0)).labeled

    def test_heatmap_stack_shape(self):
        with pytest.raises(InvalidArgumentError):
            HeatmapStack(np.zeros((4, 4)), 1)


class TestEncode:
    def test_peak_at_scaled_coordinate(self):
        hm = encode_heatmaps(kps_one(128, 80), (64, 64), 4, 2.0)
        r, c = np.unravel_index(hm.maps[0].argmax(), (64, 64))
        assert (c, r) == (32, 20)
        assert hm.maps[0].max() == 1.0

    def test_invisible_is_zero(self):
        hm = encode_heatmaps(kps_one(128, 80, False), (64, 64), 4, 2.0)
        assert not hm.maps.any()

    def test_two_pixels_from_peak(self):
        hm =encode_heatmaps(kps_one(10, 10), (32, 32), 1, 2.0)
        assert hm.maps[0][10, 12] == pytest.approx(math.exp(-0.5), abs=1e-12)
        assert hm.maps[0][10, 12] == pytest.approx(0.6065, abs=1e-4)

    def test_truncated_beyond_three_sigma(self):
        m = encode_heatmaps(kps_one(16, 16), (32, 32), 1, 2.0).maps[0]
        yy, xx = np.mgrid[:32, :32]
        d = np.hypot(xx - 16, yy - 16)
        assert not m[d > 6].any()
        assert (m[d <= 6] > 0).all()

    def test_off_grid_peak_is_exactly_one(self):
        m = encode_heatmaps(kps_one(33.3, 17.9), (32, 32), 2, 1.5).maps[0]
        assert m.max() == 1.0
        assert (m >= 0).all()

    @pytest.mark.parametrize("kw", [dict(sigma=0), dict(sigma=-1), dict(out_dims=(0, 4)), dict(stride=0)])
    def test_invalid(self, kw):
        args = dict(out_dims=(8, 8), stride=1, sigma=1.0)
        args.update(kw)
        with pytest.raises(InvalidArgumentError):
            encode_heatmaps(kps_one(1, 1), **args)


class TestDecode:
    def test_one_hot(self):
        maps = np.zeros((1, 64, 64))
        maps[0, 20, 32] = 1.0
        k = decode_heatmaps(HeatmapStack(maps, 4))
        assert np.hypot(*(k.coords[0] - [128, 80])) <= 1.0
        assert k.visible[0]

    def test_all_zero_invisible(self):
        k = decode_heatmaps(HeatmapStack(np.zeros((2, 8, 8)), 4))
        assert not k.visible.any()

    def test_quarter_shift_toward_larger_neighbour(self):
        maps = np.zeros((1, 9, 9))
        maps[0, 4, 4] = 1.0
        maps[0, 4, 5] = 0.5
        maps[0, 3, 4] = 0.5
        k = decode_heatmaps(HeatmapStack(maps, 1))
        np.testing.assert_allclose(k.coords[0], [4.25, 3.75])

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        maps = rng.random((3, 2, 5, 8, 8))
        coords, vis = decode_maps(maps, 4)
        for i in range(3):
            for s in range(2):
                k = decode_heatmaps(HeatmapStack(maps[i, s], 4))
                np.testing.assert_array_equal(coords[i, s], k.coords)

    def test_round_trip_100(self):
        rng = np.random.default_rng(1)
        stride, sigma, h = 4, 2.0, 64
        margin = 3 * sigma * stride
        xy = rng.uniform(margin, h * stride - margin, size=(100, 2))
        k = KeypointSet(xy, np.ones(100, bool))
        back = decode_heatmaps(encode_heatmaps(k, (h, h), stride, sigma))
        assert np.abs(back.coords - xy).max() <= 0.5 * stride


class TestRescale:
    def test_identity(self):
        k = KeypointSet([[3.3, 4.4]], [True])
        np.testing.assert_array_equal(rescale_keypoints(k, (160, 120), (160, 120)).coords, k.coords)

    def test_doubling(self):
        k = KeypointSet([[3.0, 4.0], [7.0, 1.0]], [True, False])
        r = rescale_keypoints(k, (160, 120), (320, 240))
        np.testing.assert_array_equal(r.coords, 2 * k.coords)
        np.testing.assert_array_equal(r.visible, k.visible)

    def test_anisotropic(self):
        r = rescale_keypoints(kps_one(10, 10), (100, 50), (50, 100))
        np.testing.assert_allclose(r.coords[0], [20, 5])

    def test_zero_dims(self):
        with pytest.raises(InvalidArgumentError):
            rescale_keypoints(kps_one(1, 1), (0, 10), (10, 10))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 500), st.integers(1, 500), st.integers(1, 500), st.integers(1, 500),
           st.lists(st.floats(0, 1000), min_size=2, max_size=2))
    def test_round_trip(self, h0, w0, h1, w1, xy):
        k = kps_one(*xy)
        back = rescale_keypoints(rescale_keypoints(k, (h0, w0), (h1, w1)), (h1, w1), (h0, w0))
        np.testing.assert_allclose(back.coords, k.coords, atol=1e-9)


class TestResize:
    def test_same_dims_copy(self):
        px = np.random.default_rng(0).random((5, 6))
        out = resize_pixels(px, (5, 6))
        np.testing.assert_array_equal(out, px)
        assert out is not px

    def test_constant_preserved(self):
        out = resize_pixels(np.full((160, 120), 0.3), (64, 64))
        np.testing.assert_allclose(out, 0.3)

    def test_sample_positions_follow_keypoint_convention(self):
        # a bright dot at (x, y) lands at the rescaled keypoint
        px = np.zeros((40, 40))
        px[20, 10] = 1.0
        out = resize_pixels(px, (80, 80))
        r, c = np.unravel_index(out.argmax(), out.shape)
        k = rescale_keypoints(kps_one(10, 20), (40, 40), (80, 80))
        assert (c, r) == tuple(k.coords[0].astype(int))
