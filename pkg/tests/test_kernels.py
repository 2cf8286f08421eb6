"""Covariance-function unit tests: closed-form spot values, Gram matrix
structure, PSD-ness against an eigendecomposition oracle, and the
coregionalized construction against an explicit Kronecker product.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powerhedge.errors import ConfigError
from powerhedge.kernels import (
    COMPOSITE_LEAF_NAMES,
    CoregionalSpec,
    composite_kernel,
    coregional_gram,
    gram_matrix,
    kernel_eval,
    kernel_sum,
    leaf_names,
    matern52,
    periodic,
    rational_quadratic,
    squared_exponential,
    white_noise,
)


class TestSpotValues:
    def test_se_at_zero(self):
        assert kernel_eval(squared_exponential(1.0, 1.0), 0.0) == 1.0

    def test_se_unit_distance(self):
        # sigma=2, ell=1, r=1 -> 4 * e^-1
        got = kernel_eval(squared_exponential(2.0, 1.0), 1.0)
        assert got == pytest.approx(4.0 * math.exp(-1.0), rel=1e-12)

    def test_se_no_half_factor(self):
        # r = ell gives exactly e^-1, not e^-1/2
        got = kernel_eval(squared_exponential(1.0, 3.0), 3.0)
        assert got == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_matern_at_zero(self):
        assert kernel_eval(matern52(1.5, 7.0), 0.0) == pytest.approx(2.25)

    def test_matern_closed_form(self):
        t = math.sqrt(5.0) * 2.0 / 3.0
        want = 4.0 * (1.0 + t + t * t / 3.0) * math.exp(-t)
        assert kernel_eval(matern52(2.0, 3.0), 2.0) == pytest.approx(want, rel=1e-12)

    def test_matern_far_tail_vanishes(self):
        assert kernel_eval(matern52(1.0, 1.0), 100.0) < 1e-30

    def test_periodic_at_multiples_of_period(self):
        k = periodic(1.0, 0.5, 24.0)
        for r in (0.0, 24.0, 48.0, 240.0):
            assert kernel_eval(k, r) == pytest.approx(1.0, abs=1e-12)

    def test_periodic_half_period(self):
        # sin(pi/2) = 1 -> sigma^2 exp(-2/ell^2)
        got = kernel_eval(periodic(1.0, 2.0, 24.0), 12.0)
        assert got == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_rq_closed_form(self):
        # r=2, ell=1, alpha=3 -> (1 + 4/6)^-3
        got = kernel_eval(rational_quadratic(1.0, 1.0, 3.0), 2.0)
        assert got == pytest.approx((1.0 + 4.0 / 6.0) ** -3.0, rel=1e-12)

    def test_white_noise_only_at_zero(self):
        k = white_noise(0.3)
        assert kernel_eval(k, 0.0) == pytest.approx(0.3)
        assert kernel_eval(k, 1e-12) == 0.0
        assert kernel_eval(k, 5.0) == 0.0

    def test_sum_adds(self):
        k = kernel_sum(squared_exponential(1.0, 1.0), white_noise(0.5))
        assert kernel_eval(k, 0.0) == pytest.approx(1.5)
        assert kernel_eval(k, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_vectorized_eval(self):
        k = squared_exponential(1.0, 1.0)
        got = kernel_eval(k, np.array([0.0, 1.0, 2.0]))
        np.testing.assert_allclose(got, np.exp(-np.array([0.0, 1.0, 4.0])))

    def test_rejects_negative_distance(self):
        with pytest.raises(ValueError):
            kernel_eval(squared_exponential(), -1.0)

    def test_rejects_nonfinite_distance(self):
        with pytest.raises(ValueError):
            kernel_eval(squared_exponential(), np.nan)


class TestHyperparameterValidation:
    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
    def test_positive_params_rejected(self, bad):
        with pytest.raises(ConfigError):
            squared_exponential(amplitude=bad)
        with pytest.raises(ConfigError):
            matern52(lengthscale=bad)
        with pytest.raises(ConfigError):
            periodic(period=bad)
        with pytest.raises(ConfigError):
            rational_quadratic(shape=bad)

    def test_white_noise_zero_allowed(self):
        assert kernel_eval(white_noise(0.0), 0.0) == 0.0

    def test_white_noise_negative_rejected(self):
        with pytest.raises(ConfigError):
            white_noise(-0.1)

    def test_sum_needs_two_children(self):
        with pytest.raises(ConfigError):
            kernel_sum(squared_exponential())


class TestGramMatrix:
    def test_two_point_se(self):
        got = gram_matrix(squared_exponential(1.0, 1.0), [0.0, 1.0])
        want = np.array([[1.0, math.exp(-1.0)], [math.exp(-1.0), 1.0]])
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_rectangular(self):
        got = gram_matrix(squared_exponential(1.0, 1.0), [0.0, 1.0], [0.5])
        want = np.exp(-np.array([[0.25], [0.25]]))
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_white_noise_fires_on_exact_equality(self):
        k = kernel_sum(squared_exponential(1.0, 10.0), white_noise(0.7))
        got = gram_matrix(k, [0.0, 1.0], [0.0, 1.0, 2.0])
        # white term only where the coordinate is identical
        assert got[0, 0] == pytest.approx(1.7)
        assert got[1, 1] == pytest.approx(1.7)
        assert got[0, 1] == pytest.approx(math.exp(-0.01), rel=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 200.0, size=30)
        g = gram_matrix(composite_kernel(), x)
        np.testing.assert_allclose(g, g.T, atol=0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gram_matrix(squared_exponential(), [])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_psd_against_eigen_oracle(self, seed):
        # independent oracle: smallest eigenvalue of the Gram must not be
        # meaningfully negative relative to its trace
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(0.0, 500.0, size=25))
        g = gram_matrix(composite_kernel(), x)
        eig = np.linalg.eigvalsh(g)
        assert eig.min() >= -1e-8 * np.trace(g)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 400.0), st.floats(1.0, 300.0))
    def test_stationarity_shift_invariance(self, shift, r):
        k = composite_kernel(drop=("white",))
        a = kernel_eval(k, r)
        g = gram_matrix(k, [shift], [shift + r])
        assert g[0, 0] == pytest.approx(a, rel=1e-12, abs=1e-300)


class TestPeriodicity:
    def test_exact_period_recurrence(self):
        rs = np.linspace(0.0, 300.0, 97)
        for p in (12.0, 24.0, 168.0):
            k = periodic(1.3, 0.7, p)
            np.testing.assert_allclose(
                kernel_eval(k, rs), kernel_eval(k, rs + p), atol=1e-12
            )


class TestRationalQuadraticLimit:
    def test_large_shape_approaches_half_factor_se(self):
        # as alpha -> inf the RQ tends to sigma^2 exp(-r^2 / (2 ell^2))
        rs = np.linspace(0.0, 10.0, 51)
        rq = rational_quadratic(1.0, 2.0, 1e6)
        want = np.exp(-(rs**2) / (2.0 * 4.0))
        np.testing.assert_allclose(kernel_eval(rq, rs), want, atol=1e-4)


class TestComposite:
    def test_default_leaf_names(self):
        k = composite_kernel()
        assert tuple(leaf_names(k)) == COMPOSITE_LEAF_NAMES

    def test_value_at_zero_is_sum_of_leaf_variances(self):
        # each non-white leaf has amplitude 1 -> contributes 1 at r=0;
        # white contributes its variance
        k = composite_kernel()
        assert kernel_eval(k, 0.0) == pytest.approx(6.0 + 1e-2)

    def test_drop_removes_leaves(self):
        k = composite_kernel(drop=("periodic12", "rq"))
        names = leaf_names(k)
        assert "periodic12" not in names and "rq" not in names
        assert len(names) == 5

    def test_drop_all_rejected(self):
        with pytest.raises(ConfigError):
            composite_kernel(drop=COMPOSITE_LEAF_NAMES)

    def test_drop_unknown_rejected(self):
        with pytest.raises(ConfigError):
            composite_kernel(drop=("sausage",))

    def test_single_leaf_composite(self):
        k = composite_kernel(drop=tuple(n for n in COMPOSITE_LEAF_NAMES if n != "se"))
        assert k.is_leaf and k.variant == "squared_exponential"

    def test_init_overrides(self):
        k = composite_kernel(init={"se": {"lengthscale": 48.0}, "white": {"noise_variance": 0.5}})
        by_name = dict(zip(leaf_names(k), k.leaves()))
        assert by_name["se"].lengthscale == 48.0
        assert by_name["white"].noise_variance == 0.5

    def test_init_period_override_rejected(self):
        with pytest.raises(ConfigError):
            composite_kernel(init={"periodic24": {"period": 25.0}})

    def test_init_unknown_param_rejected(self):
        with pytest.raises(ConfigError):
            composite_kernel(init={"se": {"shape": 2.0}})

    def test_duplicate_leaf_names_disambiguated(self):
        k = kernel_sum(squared_exponential(), squared_exponential(2.0))
        assert leaf_names(k) == ["se", "se#2"]


class TestCoregional:
    def test_matrix_construction(self):
        c = CoregionalSpec(2, np.array([[1.0], [2.0]]), np.array([0.5, 0.25]))
        want = np.array([[1.5, 2.0], [2.0, 4.25]])
        np.testing.assert_allclose(c.matrix(), want)

    def test_identity_helper(self):
        np.testing.assert_allclose(CoregionalSpec.identity(3).matrix(), np.eye(3))

    def test_matrix_is_psd(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            w = rng.normal(size=(2, 1))
            kappa = rng.uniform(0.0, 2.0, size=2)
            b = CoregionalSpec(2, w, kappa).matrix()
            assert np.linalg.eigvalsh(b).min() >= -1e-12

    def test_negative_kappa_rejected(self):
        with pytest.raises(ConfigError):
            CoregionalSpec(2, np.zeros((2, 1)), np.array([1.0, -0.1]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            CoregionalSpec(2, np.zeros((3, 1)), np.ones(2))

    def test_task_major_is_kronecker_product(self):
        # oracle: with inputs ordered task-major over a shared grid, the
        # multi-output Gram equals kron(B, K)
        rng = np.random.default_rng(3)
        x = np.sort(rng.uniform(0.0, 100.0, size=12))
        k = composite_kernel(drop=("white",))
        c = CoregionalSpec(2, rng.normal(size=(2, 1)), rng.uniform(0.1, 1.0, size=2))
        tasks = np.repeat([0, 1], x.size)
        xx = np.tile(x, 2)
        got = coregional_gram(c, k, tasks, xx)
        want = np.kron(c.matrix(), gram_matrix(k, x))
        assert np.max(np.abs(got - want)) < 1e-12

    def test_rectangular_cross_covariance(self):
        k = squared_exponential(1.0, 1.0)
        c = CoregionalSpec(2, np.array([[1.0], [0.5]]), np.array([0.0, 0.0]))
        got = coregional_gram(c, k, [0], [0.0], [1], [1.0])
        want = 0.5 * math.exp(-1.0)
        assert got[0, 0] == pytest.approx(want, rel=1e-12)

    def test_out_of_range_task_rejected(self):
        c = CoregionalSpec.identity(2)
        with pytest.raises(ConfigError):
            coregional_gram(c, squared_exponential(), [0, 2], [0.0, 1.0])

    def test_identity_b_decouples_tasks(self):
        c = CoregionalSpec.identity(2)
        k = composite_kernel(drop=("white",))
        got = coregional_gram(c, k, [0, 1], [3.0, 5.0])
        assert got[0, 1] == 0.0 and got[1, 0] == 0.0
