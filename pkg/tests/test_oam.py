import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gacnn.errors import ConfigError
from gacnn.oam import (BBox, bbox_from_mask, box_iou, clip_mask, crop_and_resize, localize_features,
                       map_bbox_to_image, normalize, resize_bilinear, select_channel)
from oracles import min_cover_rectangle, scan_max_channel

ALPHAS = [round(0.1 * i, 1) for i in range(10)]
attention = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                   elements=st.floats(-1e3, 1e3, allow_nan=False))


class TestSelectChannel:
    def test_picks_largest_single_activation(self):
        f = np.zeros((2, 2, 2))
        f[0, 0, 0] = 0.9
        f[1, 1, 1] = 1.5
        assert select_channel(f)[0] == 1

    def test_ties_go_to_channel_zero(self):
        assert select_channel(np.ones((4, 3, 3)))[0] == 0

    def test_matches_scan(self, rng):
        for _ in range(50):
            f = rng.integers(0, 6, size=(5, 3, 3)).astype(float)
            assert select_channel(f)[0] == scan_max_channel(f)

    def test_sum_rule_differs(self):
        f = np.zeros((2, 2, 2))
        f[0, 0, 0] = 2.0
        f[1] = 1.0
        assert select_channel(f, "max")[0] == 0
        assert select_channel(f, "sum")[0] == 1

    def test_unknown_rule(self):
        with pytest.raises(ConfigError):
            select_channel(np.ones((1, 2, 2)), "median")


class TestNormalize:
    def test_example(self):
        np.testing.assert_array_equal(normalize(np.array([[1.0, 3.0], [5.0, 9.0]])), [[0, 0.25], [0.5, 1.0]])

    def test_constant_is_all_ones(self):
        np.testing.assert_array_equal(normalize(np.full((3, 3), 4.2)), 1.0)

    @settings(max_examples=200, deadline=None)
    @given(attention)
    def test_range(self, a):
        n = normalize(a)
        if a.max() > a.min():
            assert n.min() == 0.0 and n.max() == 1.0

    @settings(max_examples=200, deadline=None)
    @given(attention, st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
    def test_positive_affine_invariance(self, a, scale, shift):
        b = scale * a + shift
        if np.ptp(b) <= 1e-9 * (1 + np.abs(b).max()) or np.ptp(a) == 0:
            return  # rounding collapses the spread; not a meaningful case
        np.testing.assert_allclose(normalize(b), normalize(a), atol=1e-6)


class TestClipMask:
    def test_example(self):
        m = clip_mask(np.array([[0, 0.25], [0.5, 1.0]]), 0.3)
        np.testing.assert_array_equal(m, [[0, 0], [1, 1]])

    def test_alpha_zero_marks_positive_cells(self):
        a = np.array([[0.0, 0.2], [0.0, 1.0]])
        np.testing.assert_array_equal(clip_mask(a, 0.0), a > 0)

    def test_all_ones(self):
        assert clip_mask(np.ones((2, 3)), 0.9).all()

    @pytest.mark.parametrize("alpha", [1.0, 1.5, -0.1])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(ConfigError):
            clip_mask(np.ones((2, 2)), alpha)


class TestBBox:
    def test_row_example(self):
        box = bbox_from_mask(np.array([[0, 0], [1, 1]]))
        assert box.as_tuple() == (1, 1, 0, 1)

    def test_single_cell(self):
        m = np.zeros((4, 5), bool)
        m[2, 3] = True
        assert bbox_from_mask(m).as_tuple() == (2, 2, 3, 3)

    def test_empty_mask_errors(self):
        with pytest.raises(ValueError):
            bbox_from_mask(np.zeros((3, 3), bool))

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(200):
            m = rng.random((rng.integers(1, 6), rng.integers(1, 6))) < rng.uniform(0.05, 0.6)
            if not m.any():
                continue
            assert bbox_from_mask(m).as_tuple() == min_cover_rectangle(m)

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            BBox(3, 1, 0, 0, "feature")

    def test_iou(self):
        a = BBox(0, 9, 0, 9, "image")
        assert box_iou(a, a) == 1.0
        assert box_iou(a, BBox(0, 9, 5, 14, "image")) == pytest.approx(50 / 150)
        assert box_iou(a, BBox(20, 29, 20, 29, "image")) == 0.0


@settings(max_examples=200, deadline=None)
@given(attention)
def test_monotone_in_alpha(a):
    n = normalize(a)
    prev_mask, prev_box = None, None
    for alpha in ALPHAS:
        m = clip_mask(n, alpha)
        assert m.any()
        box = bbox_from_mask(m)
        if prev_mask is not None:
            assert not (m & ~prev_mask).any()
            assert prev_box.contains(box)
        prev_mask, prev_box = m, box


class TestMapping:
    def test_block_example(self):
        box = map_bbox_to_image(BBox(1, 2, 0, 1, "feature"), 8, (64, 64))
        assert box.as_tuple() == (8, 23, 0, 15) and box.space == "image"

    def test_full_extent(self):
        assert map_bbox_to_image(BBox(0, 7, 0, 7, "feature"), 8, (64, 64)).as_tuple() == (0, 63, 0, 63)

    def test_factor_one_is_identity(self):
        assert map_bbox_to_image(BBox(1, 3, 2, 4, "feature"), 1, (8, 8)).as_tuple() == (1, 3, 2, 4)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 40), st.integers(1, 40), st.data())
    def test_never_out_of_range(self, f, h, w, data):
        fh, fw = -(-h // f), -(-w // f)
        r0 = data.draw(st.integers(0, fh - 1))
        r1 = data.draw(st.integers(r0, fh - 1))
        c0 = data.draw(st.integers(0, fw - 1))
        c1 = data.draw(st.integers(c0, fw - 1))
        box = map_bbox_to_image(BBox(r0, r1, c0, c1, "feature"), f, (h, w))
        assert 0 <= box.row_min <= box.row_max < h and 0 <= box.col_min <= box.col_max < w
        assert crop_and_resize(np.ones((1, h, w)), box, (5, 5)).shape == (1, 5, 5)


class TestResize:
    def test_identity(self, rng):
        img = rng.normal(size=(3, 7, 5))
        np.testing.assert_array_equal(crop_and_resize(img, BBox(0, 6, 0, 4, "image"), (7, 5)), img)

    def test_single_pixel_replicates(self, rng):
        img = rng.normal(size=(3, 4, 4))
        out = crop_and_resize(img, BBox(2, 2, 1, 1, "image"), (6, 9))
        np.testing.assert_array_equal(out, np.broadcast_to(img[:, 2:3, 1:2], (3, 6, 9)))

    def test_bilinear_example(self):
        out = resize_bilinear(np.array([[[1.0, 2.0], [3.0, 4.0]]]), (3, 3))
        np.testing.assert_allclose(out[0], [[1, 1.5, 2], [2, 2.5, 3], [3, 3.5, 4]])


class TestLocalize:
    def test_constant_features_give_whole_image(self, rng):
        res = localize_features(np.ones((4, 8, 8)), rng.random((3, 64, 64)), 8, 0.3)
        assert res.image_box.as_tuple() == (0, 63, 0, 63)
        np.testing.assert_allclose(res.crop, res.crop)  # finite
        assert res.mask.mask.all()

    def test_hot_region_is_covered(self, rng):
        feats = rng.uniform(0, 0.1, size=(4, 8, 8))
        feats[2, 3:5, 1:4] = 5.0
        res = localize_features(feats, rng.random((3, 64, 64)), 8, 0.3)
        assert res.attention.channel == 2
        assert res.feature_box.as_tuple() == (3, 4, 1, 3)
        assert res.image_box.as_tuple() == (24, 39, 8, 31)

    def test_deterministic(self, rng):
        feats, img = rng.random((4, 8, 8)), rng.random((3, 64, 64))
        a = localize_features(feats, img, 8, 0.3)
        b = localize_features(feats, img, 8, 0.3)
        assert a.image_box == b.image_box
        np.testing.assert_array_equal(a.crop, b.crop)
