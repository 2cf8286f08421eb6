"""Gaussian-process inference tests: closed-form posteriors, a dense-solve
oracle, sparse-path degeneracy against the exact path, finite-difference
gradient checks, inducing-grid selection, fitting determinism, and scenario
sampling statistics.
"""

import math

import numpy as np
import pytest

from powerhedge.errors import ConfigError, NumericalError, StateError
from powerhedge.gp import (
    GpModel,
    TrainingSet,
    apply_hyperparameters,
    dtc_posterior,
    dump_model,
    exact_posterior,
    fit,
    hyperparameter_names,
    log_marginal_likelihood,
    pack_hyperparameters,
    sample_posterior_scenarios,
    select_inducing,
    single_task_model,
)
from powerhedge.kernels import (
    CoregionalSpec,
    composite_kernel,
    coregional_gram,
    squared_exponential,
)

JITTER = 1e-10


def two_task_train(n_per=25, seed=0, x_max=200.0):
    rng = np.random.default_rng(seed)
    hours = np.sort(rng.choice(np.arange(x_max), size=n_per, replace=False)).astype(float)
    y_price = rng.normal(0.0, 2.0, n_per)
    y_load = rng.normal(0.0, 0.5, n_per)
    return TrainingSet.stacked(hours, [y_price, y_load])


def two_task_model(seed=0, noise=(0.25, 0.04), inducing=None):
    rng = np.random.default_rng(seed)
    coreg = CoregionalSpec(2, rng.normal(0.0, 0.7, (2, 1)), rng.uniform(0.2, 1.0, 2))
    return GpModel(composite_kernel(), coreg, noise, inducing=inducing)


def dense_oracle(model, train, x_test, task_test):
    """Textbook posterior by direct dense solve (same documented jitter)."""
    k = coregional_gram(model.coreg, model.kernel, train.task, train.x)
    noise = np.asarray(model.noise_variance)[train.task]
    c = k + np.diag(noise) + JITTER * np.mean(np.diag(k)) * np.eye(train.n)
    ks = coregional_gram(model.coreg, model.kernel, train.task, train.x, task_test, x_test)
    kss = coregional_gram(model.coreg, model.kernel, task_test, x_test)
    sol = np.linalg.solve(c, train.y)
    mean = ks.T @ sol
    cov = kss - ks.T @ np.linalg.solve(c, ks)
    return mean, cov


class TestExactPosterior:
    def test_noise_free_interpolation(self):
        model = single_task_model(squared_exponential(1.0, 1.0), 0.0)
        train = TrainingSet([0.0], [0], [3.0])
        pred = exact_posterior(model, train, [0.0], [0])
        assert pred.mean[0] == pytest.approx(3.0, abs=1e-8)
        assert pred.variance[0] == pytest.approx(0.0, abs=1e-8)

    def test_single_point_mean_decays_with_kernel(self):
        model = single_task_model(squared_exponential(1.0, 1.0), 0.0)
        train = TrainingSet([0.0], [0], [2.0])
        for r in (0.5, 1.3, 2.0):
            pred = exact_posterior(model, train, [r], [0])
            assert pred.mean[0] == pytest.approx(2.0 * math.exp(-r * r), abs=1e-8)

    def test_matches_dense_solve_oracle(self):
        train = two_task_train(n_per=10, seed=1)
        model = two_task_model(seed=1)
        x_test = np.linspace(-5.0, 205.0, 17)
        task_test = np.tile([0, 1], 9)[:17]
        pred = exact_posterior(model, train, x_test, task_test)
        mean, cov = dense_oracle(model, train, x_test, task_test)
        assert np.max(np.abs(pred.mean - mean)) < 1e-8
        assert np.max(np.abs(pred.cov - cov)) < 1e-8

    def test_diag_only_matches_full(self):
        train = two_task_train(n_per=8, seed=2)
        model = two_task_model(seed=2)
        x_test = np.array([3.0, 50.5, 120.0])
        task_test = np.array([0, 1, 0])
        full = exact_posterior(model, train, x_test, task_test)
        diag = exact_posterior(model, train, x_test, task_test, diag_only=True)
        np.testing.assert_allclose(diag.mean, full.mean, atol=1e-12)
        np.testing.assert_allclose(diag.var, np.diag(full.cov), atol=1e-10)

    def test_sparse_model_rejected(self):
        model = two_task_model(inducing=np.array([0.0, 10.0]))
        train = two_task_train(n_per=5)
        with pytest.raises(ConfigError):
            exact_posterior(model, train, [1.0], [0])

    def test_variance_never_exceeds_prior(self):
        for seed in range(5):
            train = two_task_train(n_per=15, seed=seed)
            model = two_task_model(seed=seed)
            x_test = np.linspace(0.0, 220.0, 40)
            task_test = np.tile([0, 1], 20)
            pred = exact_posterior(model, train, x_test, task_test, diag_only=True)
            b = model.coreg.matrix()
            prior = b[task_test, task_test] * sum(
                leaf.noise_variance if leaf.variant == "white_noise" else leaf.amplitude**2
                for leaf in model.kernel.leaves()
            )
            assert np.all(pred.var <= prior + 1e-8)

    def test_adding_a_point_never_raises_variance(self):
        # information monotonicity of exact GP conditioning
        rng = np.random.default_rng(3)
        model = single_task_model(composite_kernel(), 0.1)
        x = np.sort(rng.uniform(0.0, 100.0, 12))
        y = rng.normal(0.0, 1.0, 12)
        x_star, extra = 50.3, 77.7
        base = exact_posterior(
            model,
            TrainingSet(x, np.zeros(12, int), y),
            [x_star],
            [0],
            diag_only=True,
        )
        xs2 = np.sort(np.append(x, extra))
        ys2 = np.insert(y, np.searchsorted(x, extra), 0.4)
        bigger = exact_posterior(
            model, TrainingSet(xs2, np.zeros(13, int), ys2), [x_star], [0], diag_only=True
        )
        assert bigger.var[0] <= base.var[0] + 1e-8


class TestDtcPosterior:
    def test_inducing_equal_training_matches_exact(self):
        train = two_task_train(n_per=25, seed=4)
        hours = train.hours
        sparse = two_task_model(seed=4, inducing=hours)
        exact = two_task_model(seed=4)
        x_test = np.linspace(0.0, 210.0, 30)
        task_test = np.tile([0, 1], 15)
        a = dtc_posterior(sparse, train, x_test, task_test)
        b = exact_posterior(exact, train, x_test, task_test)
        assert np.max(np.abs(a.mean - b.mean)) < 1e-6
        assert np.max(np.abs(a.cov - b.cov)) < 1e-6

    def test_zero_targets_give_zero_mean(self):
        hours = np.arange(20.0)
        train = TrainingSet.stacked(hours, [np.zeros(20), np.zeros(20)])
        model = two_task_model(seed=5, inducing=hours)
        pred = dtc_posterior(model, train, [3.5, 30.0], [0, 1])
        np.testing.assert_allclose(pred.mean, 0.0, atol=1e-12)

    def test_variance_bounded_by_prior(self):
        rng = np.random.default_rng(6)
        hours = np.arange(200.0)
        train = TrainingSet.stacked(hours, [rng.normal(0, 1, 200), rng.normal(0, 0.3, 200)])
        model = two_task_model(seed=6, inducing=select_inducing(train, 0.1))
        x_test = np.linspace(-10.0, 250.0, 60)
        task_test = np.tile([0, 1], 30)
        pred = dtc_posterior(model, train, x_test, task_test, diag_only=True)
        b = model.coreg.matrix()
        kappa0 = sum(
            leaf.noise_variance if leaf.variant == "white_noise" else leaf.amplitude**2
            for leaf in model.kernel.leaves()
        )
        prior = b[task_test, task_test] * kappa0
        assert np.all(pred.var <= prior + 1e-8)

    def test_more_inducing_than_hours_rejected(self):
        train = two_task_train(n_per=5, seed=7)
        model = two_task_model(seed=7, inducing=np.arange(10.0))
        with pytest.raises(ConfigError):
            dtc_posterior(model, train, [1.0], [0])

    def test_dense_model_rejected(self):
        model = two_task_model(seed=8)
        with pytest.raises(ConfigError):
            dtc_posterior(model, two_task_train(n_per=5), [1.0], [0])

    def test_zero_noise_rejected(self):
        train = two_task_train(n_per=5, seed=9)
        model = GpModel(
            composite_kernel(),
            CoregionalSpec.identity(2),
            (0.0, 0.1),
            inducing=train.hours,
        )
        with pytest.raises(ConfigError):
            dtc_posterior(model, train, [1.0], [0])


class TestCoregionalIndependence:
    def test_identity_b_reduces_to_single_task(self):
        rng = np.random.default_rng(10)
        n = 20
        hours = np.sort(rng.choice(np.arange(150.0), n, replace=False)).astype(float)
        y_price = rng.normal(0.0, 1.5, n)
        y_load = rng.normal(0.0, 0.4, n)
        joint_train = TrainingSet.stacked(hours, [y_price, y_load])
        joint = GpModel(composite_kernel(), CoregionalSpec.identity(2), (0.2, 0.05))
        solo_train = TrainingSet(hours, np.zeros(n, int), y_price)
        solo = single_task_model(composite_kernel(), 0.2)
        x_test = np.linspace(0.0, 160.0, 25)
        a = exact_posterior(joint, joint_train, x_test, np.zeros(25, int))
        b = exact_posterior(solo, solo_train, x_test, np.zeros(25, int))
        assert np.max(np.abs(a.mean - b.mean)) < 1e-8
        assert np.max(np.abs(np.diag(a.cov) - np.diag(b.cov))) < 1e-8


class TestLogMarginalLikelihood:
    def test_univariate_closed_form(self):
        sigma, ell, noise, y = 1.3, 2.0, 0.25, 0.7
        model = single_task_model(squared_exponential(sigma, ell), noise)
        train = TrainingSet([5.0], [0], [y])
        ll, _ = log_marginal_likelihood(model, train)
        v = sigma**2 + noise
        want = -0.5 * math.log(2.0 * math.pi * v) - y * y / (2.0 * v)
        assert ll == pytest.approx(want, abs=1e-8)

    def test_zero_targets_maximize_data_fit(self):
        model = two_task_model(seed=11)
        hours = np.arange(15.0)
        rng = np.random.default_rng(11)
        noisy = TrainingSet.stacked(hours, [rng.normal(0, 1, 15), rng.normal(0, 1, 15)])
        silent = TrainingSet.stacked(hours, [np.zeros(15), np.zeros(15)])
        assert log_marginal_likelihood(model, silent)[0] >= log_marginal_likelihood(model, noisy)[0]

    def test_sparse_equals_dense_when_inducing_cover_inputs(self):
        train = two_task_train(n_per=15, seed=12)
        dense = two_task_model(seed=12)
        sparse = two_task_model(seed=12, inducing=train.hours)
        ll_d = log_marginal_likelihood(dense, train)[0]
        ll_s = log_marginal_likelihood(sparse, train)[0]
        assert ll_s == pytest.approx(ll_d, abs=1e-6)

    @staticmethod
    def fd_gradient(model, train, step=1e-5):
        theta = pack_hyperparameters(model)
        out = np.empty_like(theta)
        for j in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[j] += step
            dn[j] -= step
            ll_up = log_marginal_likelihood(apply_hyperparameters(model, up), train)[0]
            ll_dn = log_marginal_likelihood(apply_hyperparameters(model, dn), train)[0]
            out[j] = (ll_up - ll_dn) / (2.0 * step)
        return out

    def check_gradient(self, model, train):
        _, grad = log_marginal_likelihood(model, train)
        fd = self.fd_gradient(model, train)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(grad)), 1e-8)
        rel = np.abs(grad - fd) / denom
        assert rel.max() < 1e-4, f"gradient mismatch: {rel.max():.2e}"

    def test_gradient_dense_single_task(self):
        rng = np.random.default_rng(13)
        train = TrainingSet(np.sort(rng.uniform(0, 90, 15)), np.zeros(15, int), rng.normal(0, 1, 15))
        self.check_gradient(single_task_model(composite_kernel(), 0.3), train)

    def test_gradient_dense_two_task(self):
        self.check_gradient(two_task_model(seed=14), two_task_train(n_per=15, seed=14))

    def test_gradient_sparse_two_task(self):
        train = two_task_train(n_per=15, seed=15)
        model = two_task_model(seed=15, inducing=select_inducing(train, 0.4))
        self.check_gradient(model, train)


class TestSelectInducing:
    def grid_train(self, n):
        return TrainingSet(np.arange(float(n)), np.zeros(n, int), np.zeros(n))

    def test_ten_percent_of_720(self):
        z = select_inducing(self.grid_train(720), 0.10)
        assert z.size == 72
        np.testing.assert_array_equal(z, np.arange(0.0, 720.0, 10.0))

    def test_full_sparsity_returns_all(self):
        z = select_inducing(self.grid_train(50), 1.0)
        np.testing.assert_array_equal(z, np.arange(50.0))

    def test_one_percent_of_720(self):
        assert select_inducing(self.grid_train(720), 0.01).size == 7

    def test_zero_points_rejected(self):
        with pytest.raises(ConfigError):
            select_inducing(self.grid_train(10), 0.01)

    def test_out_of_range_sparsity_rejected(self):
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ConfigError):
                select_inducing(self.grid_train(10), bad)

    def test_deterministic(self):
        t = self.grid_train(300)
        np.testing.assert_array_equal(select_inducing(t, 0.07), select_inducing(t, 0.07))


class TestFit:
    def se_data(self, n=200, seed=21):
        # draw from a known SE prior plus noise
        rng = np.random.default_rng(seed)
        x = np.linspace(0.0, 100.0, n)
        k = np.exp(-((x[:, None] - x[None, :]) ** 2) / 25.0)
        l = np.linalg.cholesky(k + 1e-10 * np.eye(n))
        y = l @ rng.standard_normal(n) + math.sqrt(0.01) * rng.standard_normal(n)
        return TrainingSet(x, np.zeros(n, int), y)

    def test_recovers_at_least_generating_likelihood(self):
        train = self.se_data()
        model = single_task_model(squared_exponential(1.0, 1.0), 0.1)
        fitted = fit(model, train, restarts=3, seed=0, maxiter=200)
        truth = single_task_model(squared_exponential(1.0, 5.0), 0.01)
        # compare on the same de-meaned targets the fit used
        y_dm = train.y - train.y.mean()
        train_dm = TrainingSet(train.x, train.task, y_dm)
        ll_truth, _ = log_marginal_likelihood(truth, train_dm)
        assert fitted.fit_info["log_marginal_likelihood"] >= ll_truth - 1e-3

    def test_fixed_seed_is_bit_identical(self):
        train = two_task_train(n_per=12, seed=22)
        model = two_task_model(seed=22)
        a = fit(model, train, restarts=1, seed=7, maxiter=40)
        b = fit(model, train, restarts=1, seed=7, maxiter=40)
        np.testing.assert_array_equal(pack_hyperparameters(a), pack_hyperparameters(b))
        assert a.fit_info["log_marginal_likelihood"] == b.fit_info["log_marginal_likelihood"]

    def test_more_restarts_never_worse(self):
        train = two_task_train(n_per=12, seed=23)
        model = two_task_model(seed=23)
        one = fit(model, train, restarts=1, seed=11, maxiter=40)
        five = fit(model, train, restarts=5, seed=11, maxiter=40)
        assert (
            five.fit_info["log_marginal_likelihood"]
            >= one.fit_info["log_marginal_likelihood"] - 1e-12
        )

    def test_fitted_flag_and_means(self):
        train = two_task_train(n_per=10, seed=24)
        fitted = fit(two_task_model(seed=24), train, restarts=1, seed=1, maxiter=20)
        assert fitted.fitted
        assert fitted.train_means[0] == pytest.approx(float(train.y[train.task == 0].mean()))
        assert fitted.train_means[1] == pytest.approx(float(train.y[train.task == 1].mean()))

    def test_restart_zero_shares_prefix(self):
        train = two_task_train(n_per=10, seed=25)
        model = two_task_model(seed=25)
        one = fit(model, train, restarts=1, seed=3, maxiter=30)
        three = fit(model, train, restarts=3, seed=3, maxiter=30)
        d1 = one.fit_info["diagnostics"][0]
        d3 = three.fit_info["diagnostics"][0]
        assert d1["objective"] == d3["objective"]


class TestScenarioSampling:
    def fitted_fixture(self, seed=30, n_per=40):
        rng = np.random.default_rng(seed)
        hours = np.arange(float(n_per))
        y_price = np.sin(hours / 5.0) * 3.0 + rng.normal(0, 0.3, n_per)
        y_load = np.sin(hours / 5.0) * 0.2 + 0.0 + rng.normal(0, 0.05, n_per)
        train = TrainingSet.stacked(hours, [y_price, y_load])
        model = GpModel(
            composite_kernel(),
            CoregionalSpec(2, np.array([[1.0], [0.3]]), np.array([0.3, 0.05])),
            (0.1, 0.01),
            fitted=True,
            train_means=(0.0, 0.0),
        )
        return model, train

    def test_unfitted_rejected(self):
        model, train = self.fitted_fixture()
        bare = GpModel(model.kernel, model.coreg, model.noise_variance)
        with pytest.raises(StateError):
            sample_posterior_scenarios(bare, train, [50.0], n_samples=2)

    def test_deterministic_given_seed(self):
        model, train = self.fitted_fixture()
        a = sample_posterior_scenarios(model, train, [45.0, 46.0], n_samples=16, seed=5)
        b = sample_posterior_scenarios(model, train, [45.0, 46.0], n_samples=16, seed=5)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_sample_mean_within_clt_bound(self):
        model, train = self.fitted_fixture()
        hours = np.array([41.0, 44.0, 47.0])
        n = 100_000
        prices, loads = sample_posterior_scenarios(model, train, hours, n_samples=n, seed=9)
        from powerhedge.gp import _bivariate_blocks

        mean, blocks = _bivariate_blocks(model, train, hours)
        for h in range(3):
            se_p = math.sqrt(blocks[h, 0, 0] / n)
            se_l = math.sqrt(blocks[h, 1, 1] / n)
            assert abs(prices[h].mean() - mean[h, 0]) < 4.0 * se_p + 1e-12
            assert abs(loads[h].mean() - mean[h, 1]) < 4.0 * se_l + 1e-12

    def test_sample_correlation_tracks_posterior(self):
        model, train = self.fitted_fixture()
        hours = np.array([42.0, 55.0])
        n = 100_000
        prices, loads = sample_posterior_scenarios(model, train, hours, n_samples=n, seed=13)
        from powerhedge.gp import _bivariate_blocks

        _, blocks = _bivariate_blocks(model, train, hours)
        for h in range(2):
            want = blocks[h, 0, 1] / math.sqrt(blocks[h, 0, 0] * blocks[h, 1, 1])
            got = np.corrcoef(prices[h], loads[h])[0, 1]
            assert got == pytest.approx(want, abs=0.05)

    def test_degenerate_posterior_collapses_to_mean(self):
        # inducing-free noise-free model evaluated at training hours: the
        # posterior is (numerically) a point mass
        rng = np.random.default_rng(31)
        hours = np.arange(10.0)
        train = TrainingSet.stacked(hours, [rng.normal(0, 1, 10), rng.normal(0, 0.2, 10)])
        model = GpModel(
            composite_kernel(drop=("white",)),
            CoregionalSpec(2, np.array([[1.0], [0.4]]), np.array([0.2, 0.1])),
            (0.0, 0.0),
            fitted=True,
            train_means=(0.0, 0.0),
        )
        prices, loads = sample_posterior_scenarios(model, train, hours[:4], n_samples=50, seed=3)
        from powerhedge.gp import _bivariate_blocks

        mean, _ = _bivariate_blocks(model, train, hours[:4])
        assert np.max(np.abs(prices - mean[:, None, 0])) < 1e-3
        assert np.max(np.abs(loads - mean[:, None, 1])) < 1e-3


class TestPackingAndDump:
    def test_round_trip(self):
        model = two_task_model(seed=40)
        theta = pack_hyperparameters(model)
        again = pack_hyperparameters(apply_hyperparameters(model, theta))
        np.testing.assert_allclose(again, theta, rtol=1e-14)

    def test_names_align_with_vector(self):
        model = two_task_model(seed=41)
        names = hyperparameter_names(model)
        theta = pack_hyperparameters(model)
        assert len(names) == theta.size
        assert names[0] == "kernel.se.amplitude"
        assert "coreg.w[0,0]" in names
        assert "noise_variance[1]" in names

    def test_apply_changes_values(self):
        model = two_task_model(seed=42)
        theta = pack_hyperparameters(model)
        theta[0] = math.log(3.0)
        new = apply_hyperparameters(model, theta)
        assert new.kernel.leaves()[0].amplitude == pytest.approx(3.0)

    def test_wrong_length_rejected(self):
        model = two_task_model(seed=43)
        with pytest.raises(ConfigError):
            apply_hyperparameters(model, np.zeros(3))

    def test_dump_is_flat_name_value_lines(self):
        model = two_task_model(seed=44)
        text = dump_model(model)
        lines = [l for l in text.strip().split("\n")]
        assert all("=" in l for l in lines)
        assert any(l.startswith("kernel.se.amplitude=") for l in lines)
        assert any(l.startswith("kernel.periodic24.period=") for l in lines)

    def test_dump_includes_objective_when_fitted(self):
        train = two_task_train(n_per=8, seed=45)
        fitted = fit(two_task_model(seed=45), train, restarts=1, seed=0, maxiter=10)
        assert "log_marginal_likelihood=" in dump_model(fitted)


class TestModelValidation:
    def test_noise_count_must_match_tasks(self):
        with pytest.raises(ConfigError):
            GpModel(composite_kernel(), CoregionalSpec.identity(2), (0.1,))

    def test_negative_noise_rejected(self):
        with pytest.raises(ConfigError):
            single_task_model(composite_kernel(), -0.1)

    def test_unsorted_inducing_rejected(self):
        with pytest.raises(ConfigError):
            GpModel(
                composite_kernel(),
                CoregionalSpec.identity(1),
                (0.1,),
                inducing=np.array([3.0, 1.0]),
            )

    def test_training_set_checks(self):
        with pytest.raises(ConfigError):
            TrainingSet([], [], [])
        with pytest.raises(ConfigError):
            TrainingSet([0.0, 0.0], [0, 0], [1.0, 2.0])
        with pytest.raises(ConfigError):
            TrainingSet([0.0, 1.0], [0, 0], [1.0, float("nan")])
