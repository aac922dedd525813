"""LBP tests: the hand-evaluated code cases, a brute-force 3x3 sliding
window oracle for the default 8-neighbor operator, and the descriptor's
invariances."""

import numpy as np
import pytest

from utifusion.lbp import (
    DEFAULT_CONFIG,
    LBPConfig,
    LBPFeatures,
    features_from_image,
    lbp_code,
    lbp_histogram,
    lbp_map,
    to_grayscale,
)

# Neighbor order for P=8, R=1, nearest: p=0 east, counter-clockwise.
OFFSETS_8 = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]


def lbp_map_oracle(gray):
    """Brute-force 3x3 sliding window for the default config."""
    h, w = gray.shape
    codes = np.zeros((h, w), dtype=np.int64)
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            code = 0
            for bit, (dr, dc) in enumerate(OFFSETS_8):
                if gray[r + dr, c + dc] >= gray[r, c]:
                    code += 1 << bit
            codes[r, c] = code
    return codes


class TestGrayscale:
    def test_white_point(self):
        img = np.full((3, 4, 4), 255.0)
        np.testing.assert_array_equal(to_grayscale(img), np.full((4, 4), 255.0))

    def test_pure_red_luma(self):
        img = np.zeros((3, 2, 2))
        img[0] = 255.0
        np.testing.assert_allclose(to_grayscale(img), np.full((2, 2), 76.245), atol=1e-12)

    def test_gray_fixed_point(self):
        img = np.full((3, 3, 3), 117.0)
        np.testing.assert_allclose(to_grayscale(img), np.full((3, 3), 117.0), atol=1e-12)

    def test_wrong_channel_count_rejected(self):
        with pytest.raises(ValueError, match=r"\[3,H,W\]"):
            to_grayscale(np.zeros((4, 4, 4)))


class TestLbpCode:
    def test_equal_neighbors_count_as_one(self):
        assert lbp_code(10.0, [10.0] * 8) == 255

    def test_all_below_center(self):
        assert lbp_code(10.0, [9.0] * 8) == 0

    def test_hand_evaluated_case(self):
        # signs 1,0,1,1,0,0,1,0 -> bits 0,2,3,6 -> 1 + 4 + 8 + 64
        assert lbp_code(5.0, [6.0, 2.0, 7.0, 5.0, 3.0, 1.0, 8.0, 4.0]) == 77

    def test_wrong_neighbor_count_rejected(self):
        with pytest.raises(ValueError, match="neighbor"):
            lbp_code(5.0, [1.0, 2.0, 3.0])

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            center = rng.uniform(0, 255)
            neighbors = rng.uniform(0, 255, size=8)
            shift = rng.uniform(-50, 50)
            assert lbp_code(center, neighbors) == lbp_code(center + shift, neighbors + shift)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            center = rng.uniform(1, 255)
            neighbors = rng.uniform(1, 255, size=8)
            scale = rng.uniform(0.1, 10.0)
            assert lbp_code(center, neighbors) == lbp_code(center * scale, neighbors * scale)


class TestLbpMap:
    def test_constant_image_all_255(self):
        codes = lbp_map(np.full((6, 6), 42.0))
        np.testing.assert_array_equal(codes[1:-1, 1:-1], 255)
        assert codes[0].sum() == 0 and codes[-1].sum() == 0

    def test_bright_pixel_neighborhood(self):
        # bright pixel on a dark background: the bright pixel codes to 0
        # (all samples below center) and each touching neighbor codes to
        # 255 (equal background -> 1, the bright sample -> 1).
        gray = np.full((7, 7), 10.0)
        gray[3, 3] = 200.0
        codes = lbp_map(gray)
        assert codes[3, 3] == 0
        for dr, dc in OFFSETS_8:
            assert codes[3 + dr, 3 + dc] == 255

    def test_dark_pixel_neighbors_have_one_zero_bit(self):
        # the mirrored case: each neighbor of a dark pixel sees exactly one
        # sample below its own level, so its code has exactly one zero bit.
        gray = np.full((7, 7), 200.0)
        gray[3, 3] = 10.0
        codes = lbp_map(gray)
        assert codes[3, 3] == 255
        for dr, dc in OFFSETS_8:
            code = int(codes[3 + dr, 3 + dc])
            zero_bits = 8 - bin(code).count("1")
            assert zero_bits == 1, f"neighbor at ({dr},{dc}) has code {code:08b}"

    def test_matches_per_pixel_code_calls(self):
        rng = np.random.default_rng(2)
        gray = rng.integers(0, 256, size=(10, 12)).astype(np.float64)
        codes = lbp_map(gray)
        for r in range(1, 9):
            for c in range(1, 11):
                neighbors = [gray[r + dr, c + dc] for dr, dc in OFFSETS_8]
                assert codes[r, c] == lbp_code(gray[r, c], neighbors)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            gray = rng.integers(0, 256, size=(16, 16)).astype(np.float64)
            np.testing.assert_array_equal(lbp_map(gray), lbp_map_oracle(gray))

    def test_bilinear_constant_image(self):
        codes = lbp_map(np.full((8, 8), 9.0), LBPConfig(p=8, r=1.0, interpolation="bilinear"))
        np.testing.assert_array_equal(codes[1:-1, 1:-1], 255)

    def test_bilinear_r2_runs_and_respects_margin(self):
        rng = np.random.default_rng(4)
        gray = rng.uniform(0, 255, size=(12, 12))
        cfg = LBPConfig(p=8, r=2.0, interpolation="bilinear")
        codes = lbp_map(gray, cfg)
        assert codes[:2].sum() == 0 and codes[:, :2].sum() == 0
        assert np.all(codes[2:-2, 2:-2] >= 0) and np.all(codes[2:-2, 2:-2] < 256)

    def test_image_smaller_than_neighborhood_rejected(self):
        with pytest.raises(ValueError, match="smaller"):
            lbp_map(np.zeros((2, 5)))


class TestLbpHistogram:
    def test_constant_image_single_bin(self):
        feats = lbp_histogram(lbp_map(np.full((6, 6), 3.0)))
        assert feats.histogram[255] == 1.0
        assert feats.histogram.sum() == 1.0

    def test_normalized_sums_to_one(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            gray = rng.integers(0, 256, size=(9, 9)).astype(np.float64)
            feats = lbp_histogram(lbp_map(gray))
            assert abs(feats.histogram.sum() - 1.0) < 1e-9

    def test_unnormalized_mass_equals_interior_count(self):
        rng = np.random.default_rng(6)
        gray = rng.integers(0, 256, size=(11, 8)).astype(np.float64)
        feats = lbp_histogram(lbp_map(gray), normalize=False)
        assert feats.histogram.sum() == 9 * 6

    def test_known_4x4_bin_counts(self):
        gray = np.array(
            [
                [5.0, 3.0, 8.0, 1.0],
                [2.0, 7.0, 4.0, 6.0],
                [9.0, 0.0, 3.0, 8.0],
                [4.0, 6.0, 1.0, 2.0],
            ]
        )
        # interior codes, hand-evaluated via the per-pixel rule:
        # (1,1) center 7: only NE=8 and SW=9 reach it -> 2 + 32 = 34
        codes = lbp_map(gray)
        expected = {
            (1, 1): lbp_code(7.0, [4.0, 8.0, 3.0, 5.0, 2.0, 9.0, 0.0, 3.0]),
            (1, 2): lbp_code(4.0, [6.0, 1.0, 8.0, 3.0, 7.0, 0.0, 3.0, 8.0]),
            (2, 1): lbp_code(0.0, [3.0, 4.0, 7.0, 2.0, 9.0, 4.0, 6.0, 1.0]),
            (2, 2): lbp_code(3.0, [8.0, 6.0, 4.0, 7.0, 0.0, 6.0, 1.0, 2.0]),
        }
        assert expected[(1, 1)] == 34
        for (r, c), code in expected.items():
            assert codes[r, c] == code
        feats = lbp_histogram(codes, normalize=False)
        counts = np.zeros(256)
        for code in expected.values():
            counts[code] += 1
        np.testing.assert_array_equal(feats.histogram, counts)

    def test_out_of_range_code_rejected(self):
        codes = np.zeros((5, 5), dtype=np.int64)
        codes[2, 2] = 256
        with pytest.raises(ValueError, match="out of range"):
            lbp_histogram(codes)

    def test_histogram_length_validates(self):
        with pytest.raises(ValueError, match="2\\^P"):
            LBPFeatures(histogram=np.zeros(100), config=DEFAULT_CONFIG)


class TestConfig:
    def test_p_and_r_bounds(self):
        with pytest.raises(ValueError):
            LBPConfig(p=3)
        with pytest.raises(ValueError):
            LBPConfig(r=0.5)
        with pytest.raises(ValueError):
            LBPConfig(interpolation="cubic")

    def test_features_from_image_roundtrip(self):
        rng = np.random.default_rng(7)
        img = rng.uniform(0, 255, size=(3, 10, 10))
        feats = features_from_image(img)
        assert feats.histogram.shape == (256,)
        assert abs(feats.histogram.sum() - 1.0) < 1e-9
