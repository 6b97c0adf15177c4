import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfsq import (
    FeatureBlock,
    LevelsSpec,
    ParameterError,
    ShapeError,
    bound,
    codebook_stats,
    fsq_dequantize,
    fsq_quantize,
    gen_synthetic,
    quantize_dim,
    ste_jvp,
)


def brute_force_grid(level_count):
    """Independent oracle: the L uniform grid points on [-1, 1]."""
    return [c * 2.0 / (level_count - 1) - 1.0 for c in range(level_count)]


def brute_force_codes(index, levels):
    """Independent oracle: little-endian mixed-radix digits of an index."""
    codes = []
    for lv in levels:
        codes.append(index % lv)
        index //= lv
    return tuple(codes)


class TestLevelsSpec:
    def test_level_below_two_rejected(self):
        with pytest.raises(ParameterError, match="level count must be >= 2"):
            LevelsSpec((8, 1, 8))

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            LevelsSpec(())

    def test_overflow_rejected(self):
        with pytest.raises(ParameterError):
            LevelsSpec((256,) * 8)  # 2**64 does not fit in u64
        LevelsSpec((255,) * 8)  # just below the cap is fine

    @pytest.mark.parametrize(
        "levels,size,rate",
        [
            ((8, 8, 8, 8), 4096, 12.0),
            ((8, 8, 8, 4), 2048, 11.0),
            ((4, 4, 4, 4, 4), 1024, 10.0),
        ],
    )
    def test_codebook_stats(self, levels, size, rate):
        got_size, got_rate = codebook_stats(LevelsSpec(levels))
        assert got_size == size
        assert got_rate == rate

    def test_rate_size_consistency(self):
        for levels in [(2,), (3, 5, 7), (8, 8, 8, 4), (255, 255)]:
            size, rate = codebook_stats(LevelsSpec(levels))
            assert abs(2.0**rate - size) <= 1e-9 * size


class TestBound:
    def test_clamps(self):
        blk = FeatureBlock([[0.5, 1.7, -3.0]])
        got = bound(blk)
        assert got.data.tolist() == [[0.5, 1.0, -1.0]]

    def test_preserves_spatial(self):
        blk = FeatureBlock(np.zeros((4, 2)), spatial=(2, 2))
        assert bound(blk).spatial == (2, 2)


class TestQuantizeDim:
    def test_three_levels(self):
        assert quantize_dim(0.6, 3) == (2, 1.0)

    def test_tie_at_zero_breaks_up(self):
        # grid for L=8 has no zero; 0.0 is equidistant to -1/7 and 1/7
        code, value = quantize_dim(0.0, 8)
        assert code == 4
        assert value == pytest.approx(1.0 / 7.0, abs=1e-15)

    def test_endpoint(self):
        assert quantize_dim(-1.0, 4) == (0, -1.0)

    def test_out_of_range_clamped(self):
        assert quantize_dim(2.5, 3) == (2, 1.0)
        assert quantize_dim(-9.0, 3) == (0, -1.0)

    def test_bad_level_count(self):
        with pytest.raises(ParameterError):
            quantize_dim(0.0, 1)

    def test_non_finite_rejected(self):
        with pytest.raises(ParameterError):
            quantize_dim(math.nan, 4)

    @settings(max_examples=300, deadline=None)
    @given(
        z=st.floats(min_value=-1.0, max_value=1.0),
        level_count=st.integers(min_value=2, max_value=255),
    )
    def test_nearest_grid_point(self, z, level_count):
        _, value = quantize_dim(z, level_count)
        assert abs(z - value) <= 1.0 / (level_count - 1) + 1e-12
        # value must be one of the grid points
        grid = brute_force_grid(level_count)
        assert min(abs(value - g) for g in grid) <= 1e-12

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.floats(min_value=-1.0, max_value=1.0),
        b=st.floats(min_value=-1.0, max_value=1.0),
        level_count=st.integers(min_value=2, max_value=64),
    )
    def test_monotonic(self, a, b, level_count):
        lo, hi = min(a, b), max(a, b)
        assert quantize_dim(lo, level_count)[0] <= quantize_dim(hi, level_count)[0]


class TestFsqQuantize:
    def test_center_block_levels3(self):
        blk = FeatureBlock(np.zeros((5, 4)))
        values, codes = fsq_quantize(blk, LevelsSpec((3, 3, 3, 3)))
        assert np.all(values.data == 0.0)
        # center code (1,1,1,1) -> 1 + 3*(1 + 3*(1 + 3*1)) = 40
        assert all(c.codes == (1, 1, 1, 1) and c.index == 40 for c in codes)

    def test_grid_points_are_fixed_points(self):
        spec = LevelsSpec((8, 8, 8, 4))
        rng = np.random.default_rng(3)
        codes = np.stack(
            [rng.integers(0, lv, size=100) for lv in spec.levels], axis=1
        )
        grid = codes * (2.0 / (np.array(spec.levels) - 1.0)) - 1.0
        values, _ = fsq_quantize(FeatureBlock(grid), spec)
        assert np.array_equal(values.data, grid)

    def test_mean_abs_error_uniform(self):
        # half-cell mean |e| is (2/7)/4 ~ 0.0714 per channel
        blk = gen_synthetic("uniform", 10000, 4, 42, lo=-1, hi=1)
        values, _ = fsq_quantize(blk, LevelsSpec((8, 8, 8, 8)))
        err = np.abs(blk.data - values.data).mean(axis=0)
        assert np.all(err >= 0.060) and np.all(err <= 0.083)

    def test_dimension_mismatch(self):
        blk = FeatureBlock(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            fsq_quantize(blk, LevelsSpec((8, 8)))

    def test_idempotent(self):
        spec = LevelsSpec((5, 7, 2))
        blk = gen_synthetic("gaussian", 200, 3, 11, std=0.8)
        once, codes1 = fsq_quantize(blk, spec)
        twice, codes2 = fsq_quantize(once, spec)
        assert np.array_equal(once.data, twice.data)
        assert [c.index for c in codes1] == [c.index for c in codes2]

    def test_mixed_radix_invariant(self):
        spec = LevelsSpec((3, 4, 5))
        blk = gen_synthetic("uniform", 64, 3, 2, lo=-1, hi=1)
        _, codes = fsq_quantize(blk, spec)
        for c in codes:
            assert c.index == c.codes[0] + 3 * (c.codes[1] + 4 * c.codes[2])
            assert 0 <= c.index < spec.codebook_size


class TestFsqDequantize:
    def test_index_zero(self):
        assert fsq_dequantize(0, LevelsSpec((8, 8, 8, 8))) == [-1.0] * 4

    def test_index_max(self):
        assert fsq_dequantize(4095, LevelsSpec((8, 8, 8, 8))) == [1.0] * 4

    def test_index_209(self):
        spec = LevelsSpec((8, 8, 8, 8))
        assert brute_force_codes(209, spec.levels) == (1, 2, 3, 0)
        got = fsq_dequantize(209, spec)
        expected = [c * 2.0 / 7.0 - 1.0 for c in (1, 2, 3, 0)]
        assert got == expected
        assert got == pytest.approx([-5 / 7, -3 / 7, -1 / 7, -1.0], abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            fsq_dequantize(4096, LevelsSpec((8, 8, 8, 8)))
        with pytest.raises(ParameterError):
            fsq_dequantize(-1, LevelsSpec((8, 8, 8, 8)))

    @pytest.mark.parametrize(
        "levels",
        [(8, 8, 8, 8), (8, 8, 8, 4), (4, 4, 4, 4, 4), (2,) * 16, (3, 5, 7)],
    )
    def test_full_bijection(self, levels):
        spec = LevelsSpec(levels)
        size = spec.codebook_size
        assert size <= 65536
        vectors = np.array([fsq_dequantize(i, spec) for i in range(size)])
        _, codes = fsq_quantize(FeatureBlock(vectors), spec)
        assert [c.index for c in codes] == list(range(size))

    def test_matches_brute_force_enumeration(self):
        levels = (3, 4, 2)
        spec = LevelsSpec(levels)
        # independent oracle: walk the Cartesian product in little-endian order
        expected = []
        for c2, c1, c0 in itertools.product(range(2), range(4), range(3)):
            expected.append(
                [g[c] for g, c in zip(map(brute_force_grid, levels), (c0, c1, c2))]
            )
        got = [fsq_dequantize(i, spec) for i in range(spec.codebook_size)]
        assert got == expected


class TestSteJvp:
    def test_identity_on_ones(self):
        spec = LevelsSpec((8, 8))
        z = gen_synthetic("uniform", 10, 2, 0, lo=-1, hi=1)
        tangent = FeatureBlock(np.ones((10, 2)))
        assert np.array_equal(ste_jvp(z, tangent, spec).data, np.ones((10, 2)))

    def test_tangent_bit_identical(self):
        spec = LevelsSpec((4, 4, 4))
        for seed in range(20):
            z = gen_synthetic("gaussian", 16, 3, seed, std=2.0)
            t = gen_synthetic("gaussian", 16, 3, seed + 1000, std=0.1)
            out = ste_jvp(z, t, spec)
            assert np.array_equal(out.data, t.data)

    def test_shape_mismatch(self):
        spec = LevelsSpec((4, 4))
        z = FeatureBlock(np.zeros((2, 2)))
        t = FeatureBlock(np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            ste_jvp(z, t, spec)
