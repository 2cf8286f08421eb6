"""Coregionalized Gaussian-process regression over (price, load) with an
exact dense path and a sparse deterministic-training-conditional (DTC) path
built on inducing inputs.

Training inputs are scalar hour indices with an integer task id per point
(task 0 = spot price in GBP/MWh, task 1 = normalized load).  The covariance
between (d, x) and (d', x') is B[d, d'] * kappa(|x - x'|) with B from the
rank-1-plus-diagonal coregionalization and kappa the (composite) base
kernel; observation noise is a per-task variance on the diagonal.

The marginal likelihood carries analytic gradients with respect to the log
of every positive hyperparameter (kernel amplitudes, lengthscales, shapes,
white/noise variances, coregional diagonal) and the raw coregional weight
entries; fitting runs a quasi-Newton optimizer from several seeded random
initializations and keeps the best.

For numerical safety every dense factorization adds a relative diagonal
jitter (escalated x10 up to three retries before NumericalError), and the
jitter's hyperparameter dependence is included in the analytic gradient so
finite-difference checks agree to tight tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import ConfigError, FitError, NumericalError, StateError
from .kernels import (
    CoregionalSpec,
    KernelSpec,
    _leaf_grad,
    _leaf_value,
    kernel_sum,
    leaf_names,
    leaf_param_names,
)

LOG2PI = math.log(2.0 * math.pi)

_JITTER_BASE = 1e-10
_JITTER_RETRIES = 3

# surrogate objective value when a hyperparameter probe fails numerically
_BIG_OBJECTIVE = 1e12

PRICE_TASK = 0
LOAD_TASK = 1


@dataclass(frozen=True)
class TrainingSet:
    """Observed (hour, task, target) triples.

    ``window_length`` is optional metadata (hours in the training window,
    e.g. 720 for one month).
    """

    x: np.ndarray
    task: np.ndarray
    y: np.ndarray
    window_length: int | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        task = np.asarray(self.task, dtype=int)
        y = np.asarray(self.y, dtype=float)
        if not (x.shape == task.shape == y.shape) or x.ndim != 1 or x.size == 0:
            raise ConfigError("training set needs aligned nonempty 1-d x, task, y")
        if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
            raise ConfigError("training inputs and targets must be finite")
        if task.min() < 0:
            raise ConfigError("task ids must be nonnegative")
        for t in np.unique(task):
            xt = x[task == t]
            if np.any(np.diff(xt) <= 0.0):
                raise ConfigError(f"inputs of task {t} must be strictly increasing")
        for arr in (x, task, y):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.size

    @property
    def hours(self):
        """Sorted unique hour indices observed (per-task grid)."""
        return np.unique(self.x)

    @classmethod
    def stacked(cls, hours, per_task_targets, window_length=None):
        """Task-major stack: all of task 0 over ``hours``, then task 1, ..."""
        hours = np.asarray(hours, dtype=float)
        ys = [np.asarray(y, dtype=float) for y in per_task_targets]
        for y in ys:
            if y.shape != hours.shape:
                raise ConfigError("each task's targets must align with the hour grid")
        x = np.tile(hours, len(ys))
        task = np.repeat(np.arange(len(ys)), hours.size)
        return cls(x, task, np.concatenate(ys), window_length=window_length)


@dataclass(frozen=True)
class GpModel:
    """Kernel, coregionalization, per-task noise, and optional inducing grid.

    ``inducing`` absent means exact inference.  ``train_means`` holds the
    per-task empirical means subtracted during fitting; prediction adds
    them back.
    """

    kernel: KernelSpec
    coreg: CoregionalSpec
    noise_variance: tuple
    inducing: np.ndarray | None = None
    fitted: bool = False
    fit_info: dict | None = None
    train_means: tuple | None = None

    def __post_init__(self):
        noise = tuple(float(v) for v in np.atleast_1d(self.noise_variance))
        if len(noise) != self.coreg.num_tasks:
            raise ConfigError(
                f"need one noise variance per task ({self.coreg.num_tasks}), got {len(noise)}"
            )
        if any(not np.isfinite(v) or v < 0.0 for v in noise):
            raise ConfigError("noise variances must be finite and >= 0")
        object.__setattr__(self, "noise_variance", noise)
        if self.inducing is not None:
            z = np.asarray(self.inducing, dtype=float)
            if z.ndim != 1 or z.size == 0:
                raise ConfigError("inducing inputs must be a nonempty 1-d array")
            if np.any(np.diff(z) <= 0.0):
                raise ConfigError("inducing inputs must be strictly increasing")
            z.flags.writeable = False
            object.__setattr__(self, "inducing", z)
        if self.train_means is not None:
            means = tuple(float(v) for v in self.train_means)
            if len(means) != self.coreg.num_tasks:
                raise ConfigError("train_means must have one entry per task")
            object.__setattr__(self, "train_means", means)

    @property
    def is_sparse(self):
        return self.inducing is not None


@dataclass
class PosteriorPrediction:
    """Posterior mean and covariance at test (hour, task) points.

    The covariance is symmetrized and its diagonal clamped at zero; a
    diagonal entry materially below zero (beyond rounding tolerance) raises
    NumericalError.
    """

    x: np.ndarray
    task: np.ndarray
    mean: np.ndarray
    cov: np.ndarray | None = None
    var: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.task = np.asarray(self.task, dtype=int)
        self.mean = np.asarray(self.mean, dtype=float)
        if self.cov is not None:
            self.cov = 0.5 * (np.asarray(self.cov, dtype=float) + np.asarray(self.cov, dtype=float).T)
            d = np.diag(self.cov).copy()
            self.cov[np.diag_indices_from(self.cov)] = self._clamped(d)
        if self.var is not None:
            self.var = self._clamped(np.asarray(self.var, dtype=float))

    @staticmethod
    def _clamped(d):
        tol = 1e-8 * max(1.0, float(np.max(np.abs(d), initial=0.0)))
        if np.any(d < -tol):
            raise NumericalError(f"posterior variance {d.min():.3g} below -{tol:.3g}")
        return np.maximum(d, 0.0)

    @property
    def variance(self):
        if self.var is not None:
            return self.var
        return np.diag(self.cov)


def _chol_jitter(mat, scale):
    """Cholesky with escalating relative diagonal jitter.

    Returns (lower factor, jitter actually added as a fraction of
    ``scale``).  The base jitter is always applied so results and gradients
    share one deterministic definition.
    """
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    eps = _JITTER_BASE
    eye = np.eye(mat.shape[0])
    for _ in range(_JITTER_RETRIES + 1):
        try:
            return cholesky(mat + (eps * scale) * eye, lower=True), eps
        except LinAlgError:
            eps *= 10.0
    raise NumericalError(
        f"covariance factorization failed after jitter escalation to {eps * scale:.3g}"
    )


class _Geometry:
    """Distance/equality structure between two (task, hour) point sets,
    reused across hyperparameter evaluations during fitting."""

    def __init__(self, t1, x1, t2=None, x2=None):
        self.t1 = np.asarray(t1, dtype=int)
        self.x1 = np.asarray(x1, dtype=float)
        if t2 is None:
            self.t2, self.x2 = self.t1, self.x1
        else:
            self.t2 = np.asarray(t2, dtype=int)
            self.x2 = np.asarray(x2, dtype=float)
        self.dist = np.abs(self.x1[:, None] - self.x2[None, :])
        self.eq = self.x1[:, None] == self.x2[None, :]
        self.pre = {}
        self.pattern = (self.t1[:, None], self.t2[None, :])

    def evaluate(self, kernel, coreg):
        """Leaf values, base kernel matrix, and the full coregionalized
        matrix at the current hyperparameters."""
        vals, auxs = [], []
        for leaf in kernel.leaves():
            v, a = _leaf_value(leaf, self.dist, self.eq, pre=self.pre)
            vals.append(v)
            auxs.append(a)
        base = vals[0].copy()
        for v in vals[1:]:
            base += v
        b = coreg.matrix()
        bpat = b[self.pattern]
        return _GramEval(self, kernel, coreg, vals, auxs, base, bpat)


class _GramEval:
    """One evaluation of the coregionalized Gram on a geometry; yields
    per-hyperparameter derivative matrices in packing order."""

    def __init__(self, geo, kernel, coreg, leaf_vals, leaf_auxs, base, bpat):
        self.geo = geo
        self.kernel = kernel
        self.coreg = coreg
        self.leaf_vals = leaf_vals
        self.leaf_auxs = leaf_auxs
        self.base = base
        self.bpat = bpat
        self.full = bpat * base

    def param_derivs(self):
        """Yield d(full)/d(theta_j) for kernel leaves, W entries, and log
        kappa entries, in that order (noise is handled by the caller)."""
        geo = self.geo
        for leaf, val, aux in zip(self.kernel.leaves(), self.leaf_vals, self.leaf_auxs):
            for p in leaf_param_names(leaf):
                yield self.bpat * _leaf_grad(leaf, p, val, aux)
        w = self.coreg.w
        d_tasks, rank = w.shape
        for i in range(d_tasks):
            for j in range(rank):
                e = np.zeros(d_tasks)
                e[i] = 1.0
                bdot = np.outer(e, w[:, j]) + np.outer(w[:, j], e)
                yield bdot[geo.pattern] * self.base
        for d in range(d_tasks):
            bdot = np.zeros((d_tasks, d_tasks))
            bdot[d, d] = self.coreg.kappa_diag[d]
            yield bdot[geo.pattern] * self.base


def _param_entries(model):
    """Packing order: kernel leaf params (log), W entries (raw), log kappa,
    log per-task noise.  Returns (kinds, names)."""
    kinds, names = [], []
    lnames = leaf_names(model.kernel)
    for li, leaf in enumerate(model.kernel.leaves()):
        for p in leaf_param_names(leaf):
            kinds.append(("kernel", li, p))
            names.append(f"kernel.{lnames[li]}.{p}")
    d_tasks, rank = model.coreg.w.shape
    for i in range(d_tasks):
        for j in range(rank):
            kinds.append(("w", i, j))
            names.append(f"coreg.w[{i},{j}]")
    for d in range(d_tasks):
        kinds.append(("kappa", d))
        names.append(f"coreg.kappa[{d}]")
    for t in range(model.coreg.num_tasks):
        kinds.append(("noise", t))
        names.append(f"noise_variance[{t}]")
    return kinds, names


def hyperparameter_names(model):
    """Flat names of the fit parameters, in packing order."""
    return _param_entries(model)[1]


def _leaf_field_values(leaf):
    return {
        "amplitude": leaf.amplitude,
        "lengthscale": leaf.lengthscale,
        "period": leaf.period,
        "shape": leaf.shape,
        "noise_variance": leaf.noise_variance,
    }


def pack_hyperparameters(model):
    """Hyperparameters as the optimizer's flat vector (logs except W)."""
    theta = []
    for kind in _param_entries(model)[0]:
        tag = kind[0]
        if tag == "kernel":
            _, li, p = kind
            value = getattr(model.kernel.leaves()[li], p)
            if value <= 0.0:
                raise ConfigError(f"cannot optimize nonpositive {p} (leaf {li})")
            theta.append(math.log(value))
        elif tag == "w":
            theta.append(float(model.coreg.w[kind[1], kind[2]]))
        elif tag == "kappa":
            value = float(model.coreg.kappa_diag[kind[1]])
            if value <= 0.0:
                raise ConfigError("cannot optimize nonpositive coregional kappa")
            theta.append(math.log(value))
        else:
            value = model.noise_variance[kind[1]]
            if value <= 0.0:
                raise ConfigError("cannot optimize nonpositive noise variance")
            theta.append(math.log(value))
    return np.array(theta)


def apply_hyperparameters(model, theta):
    """Model with the flat vector written back into kernel/coreg/noise."""
    kinds, _ = _param_entries(model)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(kinds),):
        raise ConfigError(f"expected {len(kinds)} hyperparameters, got {theta.shape}")
    leaves = [dict(_leaf_field_values(leaf), variant=leaf.variant) for leaf in model.kernel.leaves()]
    w = np.array(model.coreg.w, dtype=float)
    kappa = np.array(model.coreg.kappa_diag, dtype=float)
    noise = list(model.noise_variance)
    for kind, value in zip(kinds, theta):
        tag = kind[0]
        if tag == "kernel":
            _, li, p = kind
            leaves[li][p] = math.exp(value)
        elif tag == "w":
            w[kind[1], kind[2]] = value
        elif tag == "kappa":
            kappa[kind[1]] = math.exp(value)
        else:
            noise[kind[1]] = math.exp(value)
    specs = [KernelSpec(**fields) for fields in leaves]
    kernel = specs[0] if len(specs) == 1 else kernel_sum(*specs)
    coreg = CoregionalSpec(model.coreg.num_tasks, w, kappa)
    return replace(model, kernel=kernel, coreg=coreg, noise_variance=tuple(noise))


class _LmlEngine:
    """Log marginal likelihood and gradient with geometry cached across
    hyperparameter evaluations (the structure of the model is fixed; only
    the parameter values vary)."""

    def __init__(self, model, train):
        self.template = model
        self.train = train
        self.kinds, _ = _param_entries(model)
        self.noise_masks = [train.task == t for t in range(model.coreg.num_tasks)]
        if model.is_sparse:
            z = model.inducing
            if z.size > train.hours.size:
                raise ConfigError(
                    f"more inducing points ({z.size}) than training hours ({train.hours.size})"
                )
            if any(v <= 0.0 for v in model.noise_variance):
                raise ConfigError("sparse inference requires positive noise variances")
            d_tasks = model.coreg.num_tasks
            tu = np.repeat(np.arange(d_tasks), z.size)
            xu = np.tile(z, d_tasks)
            self.geo_uf = _Geometry(tu, xu, train.task, train.x)
            self.geo_uu = _Geometry(tu, xu)
        else:
            self.geo_ff = _Geometry(train.task, train.x)

    def at(self, theta):
        return apply_hyperparameters(self.template, theta)

    def value_and_grad(self, theta):
        model = self.at(theta)
        if model.is_sparse:
            return self._sparse(model)
        return self._dense(model)

    # dense path: C = K + Sigma_n (+ jitter), gradient via alpha alpha^T - C^-1
    def _dense(self, model):
        y = self.train.y
        n = y.size
        ev = self.geo_ff.evaluate(model.kernel, model.coreg)
        noise_diag = np.asarray(model.noise_variance)[self.train.task]
        k_diag_mean = float(np.mean(np.diag(ev.full)))
        c = ev.full + np.diag(noise_diag)
        l, eps = _chol_jitter(c, k_diag_mean)
        alpha = cho_solve((l, True), y)
        ll = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(l)))) - 0.5 * n * LOG2PI

        cinv = cho_solve((l, True), np.eye(n))
        mmat = np.outer(alpha, alpha) - cinv
        tr_mmat = float(np.trace(mmat))
        mdiag = np.diag(mmat)

        grads = []
        for dk in ev.param_derivs():
            # jitter is eps * mean(diag(K)) * I, so its derivative adds
            # eps * mean(diag(dK)) on the diagonal
            g = 0.5 * (float(np.sum(mmat * dk)) + eps * float(np.mean(np.diag(dk))) * tr_mmat)
            grads.append(g)
        for t, mask in enumerate(self.noise_masks):
            grads.append(0.5 * model.noise_variance[t] * float(np.sum(mdiag[mask])))
        return ll, np.array(grads)

    # sparse path: C = Kfu Kuu'^-1 Kuf + Sigma_n via the low-rank identities
    def _sparse(self, model):
        y = self.train.y
        n = y.size
        ev_uf = self.geo_uf.evaluate(model.kernel, model.coreg)
        ev_uu = self.geo_uu.evaluate(model.kernel, model.coreg)
        kuf, kuu = ev_uf.full, ev_uu.full
        m_dim = kuu.shape[0]
        uu_diag_mean = float(np.mean(np.diag(kuu)))
        lu, eps = _chol_jitter(kuu, uu_diag_mean)

        sn = np.asarray(model.noise_variance)[self.train.task]
        isqrt = 1.0 / np.sqrt(sn)
        r = solve_triangular(lu, kuf, lower=True)
        a = r * isqrt[None, :]
        mmat = np.eye(m_dim) + a @ a.T
        try:
            lm = cholesky(mmat, lower=True)
        except LinAlgError as exc:
            raise NumericalError(f"inner low-rank factorization failed: {exc}") from None
        ytil = y * isqrt
        ay = a @ ytil
        beta = cho_solve((lm, True), ay)
        cval = solve_triangular(lm, ay, lower=True)
        ll = -0.5 * (
            float(ytil @ ytil)
            - float(cval @ cval)
            + float(np.sum(np.log(sn)))
            + n * LOG2PI
        ) - float(np.sum(np.log(np.diag(lm))))

        # alpha = C^-1 y through the Woodbury identity
        alpha = isqrt * (ytil - a.T @ beta)
        g_mat = solve_triangular(lu, r, trans="T", lower=True)  # Kuu'^-1 Kuf
        ga = g_mat @ alpha

        # G C^-1 = G Sigma^-1 - Lu^-T (A A^T) M^-1 (A Sigma^-1/2)
        t_mat = a * isqrt[None, :]
        minv_t = cho_solve((lm, True), t_mat)
        gc = g_mat * (isqrt * isqrt)[None, :] - solve_triangular(
            lu, (mmat - np.eye(m_dim)) @ minv_t, trans="T", lower=True
        )
        gp = np.outer(ga, alpha) - gc
        gpg = gp @ g_mat.T

        s_mat = solve_triangular(lm, a, lower=True)
        diag_cinv = (1.0 - np.sum(s_mat * s_mat, axis=0)) * (isqrt * isqrt)
        tr_gpg = float(np.trace(gpg))

        grads = []
        for duf, duu in zip(ev_uf.param_derivs(), ev_uu.param_derivs()):
            term_uf = 2.0 * float(np.sum(gp * duf))
            term_uu = float(np.sum(gpg * duu)) + eps * float(np.mean(np.diag(duu))) * tr_gpg
            grads.append(0.5 * (term_uf - term_uu))
        for t, mask in enumerate(self.noise_masks):
            s2 = model.noise_variance[t]
            grads.append(0.5 * s2 * float(np.sum(alpha[mask] ** 2 - diag_cinv[mask])))
        return ll, np.array(grads)


def log_marginal_likelihood(model, train):
    """Log density of the targets under the model (exact or DTC), and its
    gradient with respect to the packed hyperparameters."""
    engine = _LmlEngine(model, train)
    return engine.value_and_grad(pack_hyperparameters(model))


def _adjusted_targets(model, train):
    if model.train_means is None:
        return train.y, np.zeros(model.coreg.num_tasks)
    means = np.asarray(model.train_means)
    return train.y - means[train.task], means


def _exact_train_factors(model, train):
    """Cholesky factor of the noisy training covariance and its solve
    against the (de-meaned) targets."""
    y, means = _adjusted_targets(model, train)
    geo_ff = _Geometry(train.task, train.x)
    ev = geo_ff.evaluate(model.kernel, model.coreg)
    noise_diag = np.asarray(model.noise_variance)[train.task]
    l, _ = _chol_jitter(ev.full + np.diag(noise_diag), float(np.mean(np.diag(ev.full))))
    alpha = cho_solve((l, True), y)
    return l, alpha, means


def exact_posterior(model, train, x_test, task_test, diag_only=False):
    """Dense posterior at test (hour, task) points.

    Uses the noise-augmented training covariance through a Cholesky
    factorization; never forms an explicit inverse.
    """
    if model.is_sparse:
        raise ConfigError("model carries inducing inputs; use dtc_posterior")
    x_test = np.asarray(x_test, dtype=float)
    task_test = np.asarray(task_test, dtype=int)
    l, alpha, means = _exact_train_factors(model, train)

    geo_sf = _Geometry(train.task, train.x, task_test, x_test)
    ksf = geo_sf.evaluate(model.kernel, model.coreg).full
    mean = ksf.T @ alpha + means[task_test]
    v = solve_triangular(l, ksf, lower=True)
    if diag_only:
        b = model.coreg.matrix()
        prior_diag = b[task_test, task_test] * _base_kappa_zero(model.kernel)
        var = prior_diag - np.sum(v * v, axis=0)
        return PosteriorPrediction(x_test, task_test, mean, var=var)
    kss = _Geometry(task_test, x_test).evaluate(model.kernel, model.coreg).full
    cov = kss - v.T @ v
    return PosteriorPrediction(x_test, task_test, mean, cov=cov)


def _base_kappa_zero(kernel):
    """kappa(0) including any white-noise leaf."""
    total = 0.0
    for leaf in kernel.leaves():
        v, _ = _leaf_value(leaf, np.float64(0.0), np.True_)
        total += float(v)
    return total


def _dtc_train_factors(model, train):
    """Inducing-side factorizations shared by prediction paths: Cholesky of
    K_uu, the inner low-rank factor, and the weight vector for means."""
    y, means = _adjusted_targets(model, train)
    engine_geo = _LmlEngine(model, train)  # validates m <= hours, noise > 0
    ev_uf = engine_geo.geo_uf.evaluate(model.kernel, model.coreg)
    ev_uu = engine_geo.geo_uu.evaluate(model.kernel, model.coreg)
    lu, _ = _chol_jitter(ev_uu.full, float(np.mean(np.diag(ev_uu.full))))

    sn = np.asarray(model.noise_variance)[train.task]
    isqrt = 1.0 / np.sqrt(sn)
    r = solve_triangular(lu, ev_uf.full, lower=True)
    a = r * isqrt[None, :]
    m_dim = a.shape[0]
    mmat = np.eye(m_dim) + a @ a.T
    try:
        lm = cholesky(mmat, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"inner low-rank factorization failed: {exc}") from None
    beta = cho_solve((lm, True), a @ (y * isqrt))
    return lu, lm, beta, engine_geo.geo_uu.t1, engine_geo.geo_uu.x1, means


def dtc_posterior(model, train, x_test, task_test, diag_only=False):
    """Sparse posterior through the inducing variables, cost O(n m^2).

    Inducing variables live on (task, hour) pairs over the model's inducing
    hour grid across all tasks.
    """
    if not model.is_sparse:
        raise ConfigError("model has no inducing inputs; use exact_posterior")
    x_test = np.asarray(x_test, dtype=float)
    task_test = np.asarray(task_test, dtype=int)
    lu, lm, beta, tu, xu, means = _dtc_train_factors(model, train)
    kus = _Geometry(tu, xu, task_test, x_test).evaluate(model.kernel, model.coreg).full
    v = solve_triangular(lu, kus, lower=True)
    mean = v.T @ beta + means[task_test]
    w = solve_triangular(lm, v, lower=True)
    if diag_only:
        b = model.coreg.matrix()
        prior_diag = b[task_test, task_test] * _base_kappa_zero(model.kernel)
        var = prior_diag - np.sum(v * v, axis=0) + np.sum(w * w, axis=0)
        return PosteriorPrediction(x_test, task_test, mean, var=var)
    kss = _Geometry(task_test, x_test).evaluate(model.kernel, model.coreg).full
    cov = kss - v.T @ v + w.T @ w
    return PosteriorPrediction(x_test, task_test, mean, cov=cov)


def posterior(model, train, x_test, task_test, diag_only=False):
    """Dispatch to the exact or sparse posterior on the model's shape."""
    if model.is_sparse:
        return dtc_posterior(model, train, x_test, task_test, diag_only=diag_only)
    return exact_posterior(model, train, x_test, task_test, diag_only=diag_only)


def select_inducing(train, sparsity):
    """Uniform-stride subset of the training hour grid.

    Size is round(sparsity * hours); deterministic.  720 hours at 10%
    sparsity gives the 72 hours {0, 10, ..., 710}.
    """
    if not (0.0 < sparsity <= 1.0):
        raise ConfigError(f"sparsity must lie in (0, 1], got {sparsity}")
    hours = train.hours
    m = int(math.floor(sparsity * hours.size + 0.5))
    if m < 1:
        raise ConfigError(f"sparsity {sparsity} yields zero inducing points for {hours.size} hours")
    stride = hours.size // m
    return hours[::stride][:m]


def _init_theta(rng, kinds, amp_scale, pooled_var, task_vars):
    """One restart's initial parameter vector; consumes a fixed number of
    rng draws so restart k's start is the same for any total restart count."""

    def log_uniform(lo, hi):
        return math.exp(rng.uniform(math.log(lo), math.log(hi)))

    theta = []
    for kind in kinds:
        tag = kind[0]
        if tag == "kernel":
            p = kind[2]
            if p == "amplitude":
                theta.append(math.log(log_uniform(1e-2, 1e1) * amp_scale))
            elif p == "lengthscale":
                theta.append(math.log(log_uniform(1e-2, 1e1) * 24.0))
            elif p == "shape":
                theta.append(math.log(log_uniform(0.1, 10.0)))
            else:  # white-noise leaf variance
                theta.append(math.log(log_uniform(1e-2, 1e1) * 0.1 * pooled_var))
        elif tag == "w":
            theta.append(0.5 * rng.standard_normal())
        elif tag == "kappa":
            theta.append(math.log(log_uniform(0.1, 10.0) * 0.5))
        else:
            theta.append(math.log(0.1 * task_vars[kind[1]]))
    return np.array(theta)


def fit(model, train, restarts=5, seed=0, maxiter=150):
    """Maximize the log marginal likelihood over the packed hyperparameters
    with L-BFGS from ``restarts`` seeded random initializations.

    Targets are de-meaned per task before optimization; the means are
    stored on the returned model and re-added by the posterior operations.
    Deterministic given ``seed``; raises FitError (with per-restart
    diagnostics) only when every restart fails numerically.
    """
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    d_tasks = model.coreg.num_tasks
    means = np.zeros(d_tasks)
    task_vars = np.ones(d_tasks)
    for t in range(d_tasks):
        mask = train.task == t
        if mask.any():
            means[t] = float(np.mean(train.y[mask]))
            v = float(np.var(train.y[mask]))
            task_vars[t] = v if v > 0.0 else 1.0
    y_dm = train.y - means[train.task]
    pooled_var = float(np.var(y_dm))
    if pooled_var <= 0.0:
        pooled_var = 1.0
    amp_scale = math.sqrt(pooled_var)

    train_dm = TrainingSet(train.x, train.task, y_dm, window_length=train.window_length)
    engine = _LmlEngine(model, train_dm)
    kinds = engine.kinds

    def objective(theta):
        try:
            ll, grad = engine.value_and_grad(theta)
        except (NumericalError, ConfigError, FloatingPointError, OverflowError):
            return _BIG_OBJECTIVE, np.zeros_like(theta)
        if not np.isfinite(ll) or not np.all(np.isfinite(grad)):
            return _BIG_OBJECTIVE, np.zeros_like(theta)
        return -ll, -grad

    bounds = [(-100.0, 100.0) if k[0] == "w" else (-23.0, 23.0) for k in kinds]
    rng = np.random.default_rng(seed)
    best = None
    diagnostics = []
    for k in range(restarts):
        theta0 = _init_theta(rng, kinds, amp_scale, pooled_var, task_vars)
        try:
            res = minimize(
                objective,
                theta0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": maxiter},
            )
        except (NumericalError, np.linalg.LinAlgError) as exc:
            diagnostics.append({"restart": k, "error": str(exc)})
            continue
        ok = np.isfinite(res.fun) and res.fun < _BIG_OBJECTIVE
        diagnostics.append(
            {
                "restart": k,
                "objective": float(res.fun),
                "iterations": int(res.nit),
                "status": int(res.status),
                "error": None if ok else "no finite objective reached",
            }
        )
        if ok and (best is None or res.fun < best[0]):
            best = (float(res.fun), np.array(res.x), k)
    if best is None:
        raise FitError("all fit restarts failed", diagnostics=diagnostics)

    fitted = apply_hyperparameters(model, best[1])
    info = {
        "restarts": restarts,
        "seed": seed,
        "log_marginal_likelihood": -best[0],
        "best_restart": best[2],
        "maxiter": maxiter,
        "diagnostics": diagnostics,
    }
    return replace(
        fitted, fitted=True, fit_info=info, train_means=tuple(float(v) for v in means)
    )


def _pair_gram(v, h):
    """Per-hour 2x2 blocks of V^T V for V with columns ordered
    (hour0 task0, hour0 task1, hour1 task0, ...)."""
    v3 = v.reshape(v.shape[0], h, 2)
    return np.einsum("nhi,nhj->hij", v3, v3, optimize=True)


def _bivariate_blocks(model, train, hours):
    """Posterior means (H, 2) and per-hour 2x2 covariance blocks (H, 2, 2)
    for (price, load) at each delivery hour.

    Never forms the full test-test covariance: the prior block at distance
    zero is the same coregional matrix (scaled by kappa(0)) at every hour,
    and the data corrections reduce to per-hour outer products.
    """
    hours = np.asarray(hours, dtype=float)
    h = hours.size
    x_test = np.repeat(hours, 2)
    task_test = np.tile(np.array([PRICE_TASK, LOAD_TASK]), h)
    b = model.coreg.matrix()
    prior = b[:2, :2] * _base_kappa_zero(model.kernel)
    if model.is_sparse:
        lu, lm, beta, tu, xu, means = _dtc_train_factors(model, train)
        kus = _Geometry(tu, xu, task_test, x_test).evaluate(model.kernel, model.coreg).full
        v = solve_triangular(lu, kus, lower=True)
        mean = (v.T @ beta + means[task_test]).reshape(h, 2)
        w = solve_triangular(lm, v, lower=True)
        blocks = prior[None, :, :] - _pair_gram(v, h) + _pair_gram(w, h)
    else:
        l, alpha, means = _exact_train_factors(model, train)
        ksf = _Geometry(train.task, train.x, task_test, x_test).evaluate(model.kernel, model.coreg).full
        mean = (ksf.T @ alpha + means[task_test]).reshape(h, 2)
        v = solve_triangular(l, ksf, lower=True)
        blocks = prior[None, :, :] - _pair_gram(v, h)
    return mean, blocks


def sample_posterior_scenarios(model, train, hours, n_samples=1000, seed=0):
    """Draw joint (price, load) samples from the per-hour bivariate
    posterior marginals at each delivery hour.

    Cross-hour posterior covariance is deliberately unused: the hedge loss
    is a sum of per-hour expectations, so only the per-hour joint law
    matters.  Each 2x2 block is eigen-clamped at zero before sampling.
    Returns (prices, loads) of shape (hours, n_samples); deterministic
    given ``seed``.
    """
    if not model.fitted:
        raise StateError("model must be fitted before sampling scenarios")
    if model.coreg.num_tasks < 2:
        raise ConfigError("scenario sampling needs a price and a load task")
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    mean, blocks = _bivariate_blocks(model, train, hours)
    vals, vecs = np.linalg.eigh(blocks)
    vals = np.maximum(vals, 0.0)
    roots = vecs * np.sqrt(vals)[:, None, :]
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((mean.shape[0], n_samples, 2))
    draws = mean[:, None, :] + np.einsum("hij,hsj->hsi", roots, z)
    return draws[:, :, 0], draws[:, :, 1]


def dump_model(model):
    """Diagnostic flat text: one name=value per line, plus the final
    objective when the model has been fitted."""
    lines = []
    kinds, names = _param_entries(model)
    for kind, name in zip(kinds, names):
        tag = kind[0]
        if tag == "kernel":
            value = getattr(model.kernel.leaves()[kind[1]], kind[2])
        elif tag == "w":
            value = float(model.coreg.w[kind[1], kind[2]])
        elif tag == "kappa":
            value = float(model.coreg.kappa_diag[kind[1]])
        else:
            value = model.noise_variance[kind[1]]
        lines.append(f"{name}={value!r}")
    for li, leaf in enumerate(model.kernel.leaves()):
        if leaf.variant == "periodic":
            lines.append(f"kernel.{leaf_names(model.kernel)[li]}.period={leaf.period!r}")
    if model.train_means is not None:
        for t, m in enumerate(model.train_means):
            lines.append(f"train_mean[{t}]={m!r}")
    if model.fit_info is not None:
        lines.append(f"log_marginal_likelihood={model.fit_info['log_marginal_likelihood']!r}")
    return "\n".join(lines) + "\n"


def single_task_model(kernel, noise_variance, inducing=None):
    """Convenience: one-task model with B = [[1]]."""
    return GpModel(
        kernel,
        CoregionalSpec.identity(1),
        (noise_variance,),
        inducing=None if inducing is None else np.asarray(inducing, dtype=float),
    )
