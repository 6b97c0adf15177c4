import math

import numpy as np
import pytest

from rfsq import (
    FeatureBlock,
    LnState,
    ParameterError,
    ScaleParam,
    ShapeError,
    condition,
    decondition,
    gen_synthetic,
)


class TestScaleParam:
    def test_default_is_one(self):
        assert ScaleParam().alpha == 1.0

    @pytest.mark.parametrize("alpha", [0.0, -1.0, math.inf, math.nan])
    def test_invalid_rejected(self, alpha):
        with pytest.raises(ParameterError):
            ScaleParam(alpha)

    def test_rounded_to_float32(self):
        # single precision keeps encoded streams bit-exact
        a = ScaleParam(1.0 / 3.0)
        assert a.alpha == float(np.float32(1.0 / 3.0))


class TestLnState:
    def test_sigma_must_be_positive(self):
        with pytest.raises(ParameterError):
            LnState(np.zeros(2), np.array([1.0, 0.0]), 1e-5)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            LnState(np.zeros(2), np.ones(3), 1e-5)


class TestCondition:
    def test_none_is_passthrough(self):
        r = gen_synthetic("uniform", 8, 3, 0, lo=-1, hi=1)
        cond, inv = condition(r, "none")
        assert cond is r
        assert inv is None

    def test_scale_multiplies(self):
        r = FeatureBlock([[0.1, -0.3]])
        cond, inv = condition(r, "scale", ScaleParam(2.0))
        assert cond.data.tolist() == [[0.2, -0.6]]
        assert inv.alpha == 2.0

    def test_layernorm_hand_example(self):
        r = FeatureBlock([[1.0, 2.0, 3.0]])
        cond, inv = condition(r, "layernorm", 1e-5)
        expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / math.sqrt(2.0 / 3.0 + 1e-5)
        assert cond.data[0] == pytest.approx(expected, abs=1e-4)
        assert cond.data[0] == pytest.approx([-1.22474, 0.0, 1.22474], abs=1e-4)
        assert inv.mu[0] == pytest.approx(2.0)
        assert inv.sigma[0] == pytest.approx(math.sqrt(2.0 / 3.0 + 1e-5), rel=1e-6)

    def test_unknown_strategy(self):
        r = FeatureBlock([[0.0]])
        with pytest.raises(ParameterError):
            condition(r, "whiten")

    def test_bad_eps(self):
        r = FeatureBlock([[0.0, 1.0]])
        with pytest.raises(ParameterError):
            condition(r, "layernorm", 0.0)

    def test_scale_wants_scale_param(self):
        r = FeatureBlock([[0.0, 1.0]])
        with pytest.raises(ParameterError):
            condition(r, "scale", 2.0)


class TestDecondition:
    def test_scale_divides(self):
        q = FeatureBlock([[0.2, -0.6]])
        got = decondition(q, "scale", ScaleParam(2.0))
        assert got.data.tolist() == [[0.1, -0.3]]

    def test_none_rejects_state(self):
        q = FeatureBlock([[0.0]])
        with pytest.raises(ParameterError):
            decondition(q, "none", ScaleParam(1.0))

    def test_layernorm_batch_mismatch(self):
        r = gen_synthetic("uniform", 4, 3, 0, lo=-1, hi=1)
        _, inv = condition(r, "layernorm")
        q = gen_synthetic("uniform", 5, 3, 1, lo=-1, hi=1)
        with pytest.raises(ShapeError):
            decondition(q, "layernorm", inv)

    def test_layernorm_wrong_state_type(self):
        q = FeatureBlock([[0.0, 1.0]])
        with pytest.raises(ParameterError):
            decondition(q, "layernorm", ScaleParam(1.0))


class TestInvertibility:
    @pytest.mark.parametrize("strategy", ["none", "scale", "layernorm"])
    def test_exact_inverse_random_blocks(self, strategy):
        for seed in range(250):
            m = 1 + seed % 6
            d = 1 + seed % 5 if strategy != "layernorm" else 2 + seed % 5
            r = gen_synthetic("gaussian", m, d, seed, std=0.7)
            param = ScaleParam(0.25 + (seed % 9)) if strategy == "scale" else None
            cond, inv = condition(r, strategy, param)
            back = decondition(cond, strategy, inv)
            assert np.max(np.abs(back.data - r.data)) < 1e-9

    def test_constant_vector_eps_path(self):
        for c in (0.0, 0.5, -3.0):
            r = FeatureBlock(np.full((2, 4), c))
            cond, inv = condition(r, "layernorm")
            assert np.all(cond.data == 0.0)
            back = decondition(cond, "layernorm", inv)
            assert np.max(np.abs(back.data - c)) < 1e-9

    def test_near_constant_vectors(self):
        base = np.full((3, 6), 0.2)
        base[:, 0] += 1e-9
        r = FeatureBlock(base)
        cond, inv = condition(r, "layernorm")
        back = decondition(cond, "layernorm", inv)
        assert np.max(np.abs(back.data - base)) < 1e-9

    def test_scale_alpha_one_bitwise_identity(self):
        r = gen_synthetic("gaussian", 30, 4, 2, std=1.5)
        cond, inv = condition(r, "scale", ScaleParam(1.0))
        assert np.array_equal(cond.data, r.data)
        back = decondition(cond, "scale", inv)
        assert np.array_equal(back.data, r.data)


class TestLayerNormStatistics:
    def test_output_mean_and_std(self):
        eps = 1e-5
        for seed in range(50):
            r = gen_synthetic("uniform", 40, 8, seed, lo=-1, hi=1)
            cond, _ = condition(r, "layernorm", eps)
            means = cond.data.mean(axis=1)
            stds = cond.data.std(axis=1)
            # mu/sigma live on the float32 lattice (streams must decode to
            # identical values), which bounds the centering error near 1e-7
            assert np.max(np.abs(means)) < 5e-7
            # unit std whenever the input std clears the eps floor
            mask = r.data.std(axis=1) >= 10.0 * math.sqrt(eps)
            assert np.all(np.abs(stds[mask] - 1.0) < 1e-3)

    def test_decondition_difference_linear(self):
        # for fixed state, decondition(q1) - decondition(q2) is linear in q1 - q2
        r = gen_synthetic("uniform", 12, 5, 7, lo=-1, hi=1)
        _, inv = condition(r, "layernorm")
        q1 = gen_synthetic("uniform", 12, 5, 8, lo=-1, hi=1)
        q2 = gen_synthetic("uniform", 12, 5, 9, lo=-1, hi=1)
        lhs = decondition(q1, "layernorm", inv).data - decondition(
            q2, "layernorm", inv
        ).data
        rhs = (q1.data - q2.data) * inv.sigma[:, None]
        assert np.max(np.abs(lhs - rhs)) < 1e-12
