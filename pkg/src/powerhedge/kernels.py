"""Stationary covariance functions, additive composition, and the
coregionalized (multi-output) kernel construction.

All kernels are functions of the absolute time distance r = |x - x'| between
scalar hour indices, with a uniform sigma^2 amplitude prefactor:

    se        : sigma^2 * exp(-r^2 / ell^2)
    matern52  : sigma^2 * (1 + sqrt(5) r/ell + 5 r^2/(3 ell^2)) * exp(-sqrt(5) r/ell)
    periodic  : sigma^2 * exp(-2 sin^2(pi r / p) / ell^2)
    rq        : sigma^2 * (1 + r^2 / (2 alpha ell^2))^(-alpha)
    white     : v on exact input identity, 0 elsewhere

Composite kernels are sums of leaves.  Multi-output covariance across tasks
d, d' is B[d, d'] * kappa(r) with B = W W^T + diag(kappa_diag) positive
semi-definite by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SQRT5 = math.sqrt(5.0)

#: leaf names of the full composite kernel, in canonical order
COMPOSITE_LEAF_NAMES = (
    "se",
    "matern52",
    "periodic12",
    "periodic24",
    "periodic168",
    "rq",
    "white",
)

_LEAF_PARAMS = {
    "squared_exponential": ("amplitude", "lengthscale"),
    "matern52": ("amplitude", "lengthscale"),
    "periodic": ("amplitude", "lengthscale"),
    "rational_quadratic": ("amplitude", "lengthscale", "shape"),
    "white_noise": ("noise_variance",),
}


def _require_positive(name, value):
    if value is None or not np.isfinite(value) or value <= 0.0:
        raise ConfigError(f"kernel hyperparameter {name!r} must be a positive finite real, got {value!r}")


@dataclass(frozen=True)
class KernelSpec:
    """Declarative covariance-function tree.

    A node is either a leaf (one of the stationary kernels above) or a
    ``sum`` over two or more children.  Instances are immutable and safe to
    share across threads.
    """

    variant: str
    amplitude: float | None = None
    lengthscale: float | None = None
    period: float | None = None
    shape: float | None = None
    noise_variance: float | None = None
    children: tuple["KernelSpec", ...] = field(default=())

    def __post_init__(self):
        v = self.variant
        if v == "sum":
            if len(self.children) < 2:
                raise ConfigError("sum kernel needs at least two children")
            return
        if v not in _LEAF_PARAMS:
            raise ConfigError(f"unknown kernel variant {v!r}")
        if v == "white_noise":
            nv = self.noise_variance
            if nv is None or not np.isfinite(nv) or nv < 0.0:
                raise ConfigError(f"noise_variance must be finite and >= 0, got {nv!r}")
            return
        _require_positive("amplitude", self.amplitude)
        _require_positive("lengthscale", self.lengthscale)
        if v == "periodic":
            _require_positive("period", self.period)
        if v == "rational_quadratic":
            _require_positive("shape", self.shape)

    @property
    def is_leaf(self):
        return self.variant != "sum"

    def leaves(self):
        """Flattened tuple of leaf nodes, in tree order."""
        if self.is_leaf:
            return (self,)
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return tuple(out)


def squared_exponential(amplitude=1.0, lengthscale=1.0):
    return KernelSpec("squared_exponential", amplitude=amplitude, lengthscale=lengthscale)


def matern52(amplitude=1.0, lengthscale=1.0):
    return KernelSpec("matern52", amplitude=amplitude, lengthscale=lengthscale)


def periodic(amplitude=1.0, lengthscale=1.0, period=24.0):
    return KernelSpec("periodic", amplitude=amplitude, lengthscale=lengthscale, period=period)


def rational_quadratic(amplitude=1.0, lengthscale=1.0, shape=1.0):
    return KernelSpec("rational_quadratic", amplitude=amplitude, lengthscale=lengthscale, shape=shape)


def white_noise(noise_variance=1e-2):
    return KernelSpec("white_noise", noise_variance=noise_variance)


def kernel_sum(*children):
    return KernelSpec("sum", children=tuple(children))


def _leaf_value(leaf, r, exact_eq, pre=None):
    """Evaluate one leaf on a distance array.

    ``exact_eq`` is the boolean mask of exact input identity, used by the
    white-noise leaf (same hour stamp, not merely r == 0 within rounding).
    Returns ``(value, aux)`` where ``aux`` holds intermediates reused by the
    analytic gradients.  ``pre`` optionally caches the hyperparameter-free
    intermediates (squared distances, per-period sines) across repeated
    evaluations on the same distance matrix.
    """
    if pre is None:
        pre = {}
    v = leaf.variant
    if v == "squared_exponential":
        r2 = pre.get("r2")
        if r2 is None:
            r2 = pre["r2"] = r * r
        s2 = leaf.amplitude**2
        u = r2 / leaf.lengthscale**2
        val = s2 * np.exp(-u)
        return val, {"u": u}
    if v == "matern52":
        s2 = leaf.amplitude**2
        t = SQRT5 * r / leaf.lengthscale
        e = np.exp(-t)
        val = s2 * (1.0 + t + t * t / 3.0) * e
        return val, {"t": t, "e": e, "s2": s2}
    if v == "periodic":
        key = ("sin2", leaf.period)
        sin2 = pre.get(key)
        if sin2 is None:
            s = np.sin((np.pi / leaf.period) * r)
            sin2 = pre[key] = s * s
        s2 = leaf.amplitude**2
        w = 2.0 * sin2 / leaf.lengthscale**2
        val = s2 * np.exp(-w)
        return val, {"w": w}
    if v == "rational_quadratic":
        r2 = pre.get("r2")
        if r2 is None:
            r2 = pre["r2"] = r * r
        s2 = leaf.amplitude**2
        a = leaf.shape
        q = r2 / (2.0 * a * leaf.lengthscale**2)
        lq = np.log1p(q)
        val = s2 * np.exp(-a * lq)
        return val, {"q": q, "lq": lq, "a": a}
    if v == "white_noise":
        val = np.where(exact_eq, leaf.noise_variance, 0.0)
        return val, {}
    raise ConfigError(f"unknown kernel variant {v!r}")


def _leaf_grad(leaf, param, value, aux):
    """d(value)/d(log param) for one leaf, reusing cached intermediates."""
    v = leaf.variant
    if param == "amplitude":
        return 2.0 * value
    if param == "noise_variance":
        return value
    if param == "lengthscale":
        if v == "squared_exponential":
            return value * 2.0 * aux["u"]
        if v == "matern52":
            t = aux["t"]
            return aux["s2"] * aux["e"] * t * t * (1.0 + t) / 3.0
        if v == "periodic":
            return value * 2.0 * aux["w"]
        if v == "rational_quadratic":
            q = aux["q"]
            return value * 2.0 * aux["a"] * q / (1.0 + q)
    if param == "shape" and v == "rational_quadratic":
        q = aux["q"]
        return aux["a"] * value * (q / (1.0 + q) - aux["lq"])
    raise ConfigError(f"leaf {v!r} has no hyperparameter {param!r}")


def kernel_eval(spec, r):
    """Evaluate kappa(r) for scalar or array distance r >= 0.

    The white-noise leaf contributes exactly where r == 0; for distance
    evaluation that is the only notion of input identity available.
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("kernel distance must be finite")
    if np.any(r < 0.0):
        raise ValueError("kernel distance must be nonnegative")
    eq = r == 0.0
    total = np.zeros_like(r)
    for leaf in spec.leaves():
        total = total + _leaf_value(leaf, r, eq)[0]
    if total.ndim == 0:
        return float(total)
    return total


def gram_matrix(spec, x, x2=None):
    """Covariance matrix with element (i, j) = kappa(|x_i - x2_j|).

    ``x`` and ``x2`` are 1-d arrays of scalar time indices (hours since the
    window start).  With ``x2`` omitted the matrix is the symmetric Gram of
    ``x`` with itself.  White-noise leaves fire on exact coordinate
    equality.
    """
    x = np.asarray(x, dtype=float)
    x2 = x if x2 is None else np.asarray(x2, dtype=float)
    if x.size == 0 or x2.size == 0:
        raise ValueError("gram_matrix needs nonempty input sets")
    dist = np.abs(x[:, None] - x2[None, :])
    eq = x[:, None] == x2[None, :]
    total = np.zeros_like(dist)
    for leaf in spec.leaves():
        total = total + _leaf_value(leaf, dist, eq)[0]
    return total


_COMPOSITE_BUILDERS = {
    "se": lambda: squared_exponential(1.0, 72.0),
    "matern52": lambda: matern52(1.0, 24.0),
    "periodic12": lambda: periodic(1.0, 1.0, 12.0),
    "periodic24": lambda: periodic(1.0, 1.0, 24.0),
    "periodic168": lambda: periodic(1.0, 1.0, 168.0),
    "rq": lambda: rational_quadratic(1.0, 24.0, 1.0),
    "white": lambda: white_noise(1e-2),
}


def composite_kernel(drop=(), init=None):
    """Build the default additive kernel: broad-trend SE, rough Matern-5/2,
    12/24/168-hour periodics, rational quadratic, and a white-noise term.

    ``drop`` removes named leaves (see COMPOSITE_LEAF_NAMES) for ablation
    runs; at least one leaf must remain.  ``init`` optionally overrides
    initial hyperparameters, e.g. ``{"se": {"lengthscale": 48.0}}``.
    Periodic periods are fixed and cannot be overridden.
    """
    drop = set(drop)
    unknown = drop - set(COMPOSITE_LEAF_NAMES)
    if unknown:
        raise ConfigError(f"unknown composite leaves to drop: {sorted(unknown)}")
    keep = [name for name in COMPOSITE_LEAF_NAMES if name not in drop]
    if not keep:
        raise ConfigError("kernel ablation removed every leaf")
    init = dict(init or {})
    unknown = set(init) - set(COMPOSITE_LEAF_NAMES)
    if unknown:
        raise ConfigError(f"kernel init for unknown leaves: {sorted(unknown)}")
    leaves = []
    for name in keep:
        leaf = _COMPOSITE_BUILDERS[name]()
        overrides = dict(init.get(name, {}))
        if overrides:
            if "period" in overrides:
                raise ConfigError("periodic periods are fixed")
            allowed = set(_LEAF_PARAMS[leaf.variant])
            bad = set(overrides) - allowed
            if bad:
                raise ConfigError(f"leaf {name!r} has no hyperparameter {sorted(bad)}")
            fields = {
                "amplitude": leaf.amplitude,
                "lengthscale": leaf.lengthscale,
                "period": leaf.period,
                "shape": leaf.shape,
                "noise_variance": leaf.noise_variance,
            }
            fields.update(overrides)
            leaf = KernelSpec(leaf.variant, **fields)
        leaves.append(leaf)
    if len(leaves) == 1:
        return leaves[0]
    return kernel_sum(*leaves)


def leaf_names(spec):
    """Stable short names for the leaves of a kernel, for reporting."""
    short = {
        "squared_exponential": "se",
        "matern52": "matern52",
        "rational_quadratic": "rq",
        "white_noise": "white",
    }
    names = []
    for leaf in spec.leaves():
        if leaf.variant == "periodic":
            base = f"periodic{leaf.period:g}"
        else:
            base = short[leaf.variant]
        n = sum(1 for existing in names if existing == base or existing.startswith(base + "#"))
        names.append(base if n == 0 else f"{base}#{n + 1}")
    return names


def leaf_param_names(leaf):
    return _LEAF_PARAMS[leaf.variant]


@dataclass(frozen=True)
class CoregionalSpec:
    """Cross-task covariance B = W W^T + diag(kappa_diag), PSD by construction."""

    num_tasks: int
    w: np.ndarray
    kappa_diag: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        kappa = np.asarray(self.kappa_diag, dtype=float)
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if w.shape[0] != self.num_tasks:
            raise ConfigError(f"W must have {self.num_tasks} rows, got shape {w.shape}")
        if kappa.shape != (self.num_tasks,):
            raise ConfigError(f"kappa_diag must have length {self.num_tasks}")
        if np.any(~np.isfinite(w)) or np.any(~np.isfinite(kappa)) or np.any(kappa < 0.0):
            raise ConfigError("coregional parameters must be finite with kappa_diag >= 0")
        w.flags.writeable = False
        kappa.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "kappa_diag", kappa)

    @property
    def rank(self):
        return self.w.shape[1]

    def matrix(self):
        """The D x D coregionalization matrix B."""
        return self.w @ self.w.T + np.diag(self.kappa_diag)

    @classmethod
    def identity(cls, num_tasks):
        """B = I: independent tasks with unit scale."""
        return cls(num_tasks, np.zeros((num_tasks, 1)), np.ones(num_tasks))


def coregional_gram(coreg, spec, task, x, task2=None, x2=None):
    """Multi-output covariance matrix over (task, input) pairs.

    Element for ((d, x), (d', x')) is B[d, d'] * kappa(|x - x'|); for inputs
    ordered task-major this equals the Kronecker product of B with the base
    Gram matrix.
    """
    task = np.asarray(task, dtype=int)
    x = np.asarray(x, dtype=float)
    if task2 is None:
        task2, x2 = task, x
    else:
        task2 = np.asarray(task2, dtype=int)
        x2 = np.asarray(x2, dtype=float)
    for t in (task, task2):
        if t.size and (t.min() < 0 or t.max() >= coreg.num_tasks):
            raise ConfigError(f"task ids must lie in [0, {coreg.num_tasks})")
    base = gram_matrix(spec, x, x2)
    b = coreg.matrix()
    return b[task[:, None], task2[None, :]] * base
