"""Bifurcating Markov chain models, tree simulation and transition operators.

Two model families are provided:

* :class:`GaussianBAR`, the (possibly asymmetric) bifurcating autoregressive
  process ``X_{2u} = a0 X_u + b0 + e0``, ``X_{2u+1} = a1 X_u + b1 + e1`` with
  jointly Gaussian noise;
* :class:`FiniteBMC`, a finite state space with an explicit transition tensor
  ``P[x, y, z]`` on which every moment identity can be computed exactly.

Operators on continuous models act on :class:`GridFunction` values and use
Gauss-Hermite quadrature for the noise integrals.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.polynomial.hermite import hermgauss

from . import rng
from .tree import generation_size, tree_size

GRID_POINTS = 4096
GRID_WIDTH = 8.0  # stationary standard deviations on each side
HERMITE_ORDER = 64
COVERAGE_SDS = 6.0


class ModelError(ValueError):
    """Invalid model parameters or an operation the model does not support."""


class NonConvergenceError(RuntimeError):
    """An iterative solver failed to converge (reducible or periodic chain)."""


@dataclass(frozen=True)
class ErgodicityProfile:
    alpha: float
    M: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ModelError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.M > 0.0:
            raise ModelError(f"M must be positive, got {self.M}")


class GaussianParams(NamedTuple):
    mean: float
    var: float


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A function sampled on the equispaced grid ``lo, lo + step, ..., hi``.

    Evaluation interpolates linearly and extends the two end segments linearly
    beyond the grid, which keeps affine functions exact everywhere.
    """

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a grid function needs at least two values")
        if not self.hi > self.lo:
            raise ValueError("grid bounds must satisfy hi > lo")
        object.__setattr__(self, "values", values)

    @property
    def step(self):
        return (self.hi - self.lo) / (self.values.size - 1)

    @property
    def x(self):
        return np.linspace(self.lo, self.hi, self.values.size)

    @classmethod
    def from_callable(cls, f, lo, hi, num=GRID_POINTS):
        xs = np.linspace(lo, hi, num)
        return cls(lo, hi, np.broadcast_to(np.asarray(f(xs), dtype=float), xs.shape).copy())

    def with_values(self, values):
        return GridFunction(self.lo, self.hi, values)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        v = self.values
        t = (y - self.lo) / self.step
        i = np.clip(np.floor(t).astype(np.int64), 0, v.size - 2)
        frac = t - i
        return v[i] + frac * (v[i + 1] - v[i])

    def integral(self):
        """Trapezoidal integral over the grid."""
        v = self.values
        return self.step * (v.sum() - 0.5 * (v[0] + v[-1]))


@dataclass(frozen=True)
class InitialDistribution:
    """Law of the root state: ``point``, ``stationary``, ``gaussian`` or ``vector``."""

    kind: str = "stationary"
    value: float = 0.0
    mean: float = 0.0
    var: float = 1.0
    probs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("point", "stationary", "gaussian", "vector"):
            raise ModelError(f"unknown initial distribution {self.kind!r}")
        if self.kind == "gaussian" and self.var < 0:
            raise ModelError("initial variance must be non-negative")

    @classmethod
    def point(cls, value):
        return cls("point", value=value)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "point":
            out["value"] = self.value
        elif self.kind == "gaussian":
            out.update(mean=self.mean, var=self.var)
        elif self.kind == "vector":
            out["probs"] = list(self.probs)
        return out


def _robust_cholesky(cov):
    c = np.asarray(cov, dtype=float)
    l00 = np.sqrt(c[0, 0])
    l10 = c[1, 0] / l00 if l00 > 0 else 0.0
    l11 = np.sqrt(max(c[1, 1] - l10**2, 0.0))
    return l00, l10, l11


class GaussianBAR:
    """Bifurcating autoregressive model with jointly Gaussian child noise."""

    variant = "gaussian_bar"
    continuous = True

    def __init__(self, a0, a1, b0=0.0, b1=0.0, noise_cov=((1.0, 0.0), (0.0, 1.0)), ergodicity=None):
        cov = np.array(noise_cov, dtype=float)
        if cov.shape != (2, 2):
            raise ModelError("noise_cov must be 2x2")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ModelError("noise_cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ModelError("noise_cov must be positive semi-definite")
        self.a0, self.a1, self.b0, self.b1 = float(a0), float(a1), float(b0), float(b1)
        self.noise_cov = cov
        self.ergodicity = ergodicity
        self._chol = _robust_cholesky(cov)

    @classmethod
    def symmetric(cls, a, b=0.0, noise_var=1.0, noise_corr=0.0, ergodicity=None):
        c = noise_corr * noise_var
        return cls(a, a, b, b, ((noise_var, c), (c, noise_var)), ergodicity)

    @property
    def is_symmetric(self):
        return self.a0 == self.a1 and self.b0 == self.b1 and self.noise_cov[0, 0] == self.noise_cov[1, 1]

    @property
    def noise_sd(self):
        return np.sqrt(np.diag(self.noise_cov))

    @property
    def alpha(self):
        """Ergodicity rate: the user-supplied one, else ``max(|a0|, |a1|)``."""
        if self.ergodicity is not None:
            return self.ergodicity.alpha
        return max(abs(self.a0), abs(self.a1))

    def stationary_moments(self):
        """Mean and variance of the invariant law of the random-lineage chain."""
        a0, a1, b0, b1 = self.a0, self.a1, self.b0, self.b1
        abar = 0.5 * (a0 + a1)
        a2bar = 0.5 * (a0**2 + a1**2)
        if abs(abar) >= 1 or a2bar >= 1:
            raise ModelError("the lineage chain is not stable (need |a| < 1)")
        mean = 0.5 * (b0 + b1) / (1 - abar)
        s0, s1 = np.diag(self.noise_cov)
        rest = 0.5 * (2 * a0 * b0 * mean + b0**2 + s0 + 2 * a1 * b1 * mean + b1**2 + s1)
        second = rest / (1 - a2bar)
        return GaussianParams(mean, second - mean**2)

    def default_grid(self, num=GRID_POINTS, width=GRID_WIDTH):
        mean, var = self.stationary_moments()
        sd = np.sqrt(var)
        return mean - width * sd, mean + width * sd, num

    def grid_function(self, f, num=GRID_POINTS):
        lo, hi, num = self.default_grid(num)
        return GridFunction.from_callable(f, lo, hi, num)

    def children(self, parents, seeds, nodes):
        l00, l10, l11 = self._chol
        z0 = rng.normals(seeds, nodes, 0)
        z1 = rng.normals(seeds, nodes, 1)
        c0 = self.a0 * parents + self.b0 + l00 * z0
        c1 = self.a1 * parents + self.b1 + (l10 * z0 + l11 * z1)
        return c0, c1

    def to_dict(self):
        out = {"variant": self.variant, "a0": self.a0, "a1": self.a1, "b0": self.b0, "b1": self.b1,
               "noise_cov": self.noise_cov.tolist()}
        if self.ergodicity is not None:
            out["ergodicity"] = {"alpha": self.ergodicity.alpha, "M": self.ergodicity.M}
        return out

    def __repr__(self):
        return (f"GaussianBAR(a0={self.a0}, a1={self.a1}, b0={self.b0}, b1={self.b1}, "
                f"noise_cov={self.noise_cov.tolist()})")


class FiniteBMC:
    """Finite-state BMC given by the tensor ``P[x, y, z]`` of child-pair probabilities."""

    variant = "finite"
    continuous = False

    def __init__(self, tensor, ergodicity=None):
        p = np.array(tensor, dtype=float)
        if p.ndim != 3 or not (p.shape[0] == p.shape[1] == p.shape[2]):
            raise ModelError("tensor must have shape (m, m, m)")
        if (p < 0).any():
            raise ModelError("transition probabilities must be non-negative")
        if not np.allclose(p.sum(axis=(1, 2)), 1.0, atol=1e-12, rtol=0):
            raise ModelError("each P[x] must sum to 1 over (y, z)")
        p.setflags(write=False)
        self.tensor = p
        self.ergodicity = ergodicity
        self._cum = np.cumsum(p.reshape(self.m, -1), axis=1)

    @classmethod
    def from_q(cls, q):
        """Model whose two children are independent draws from the rows of ``q``."""
        q = np.asarray(q, dtype=float)
        return cls(q[:, :, None] * q[:, None, :])

    @classmethod
    def random(cls, m, generator):
        """Tensor with Dirichlet(1, ..., 1) rows over the ``m * m`` child pairs."""
        rows = generator.dirichlet(np.ones(m * m), size=m)
        return cls(rows.reshape(m, m, m))

    @property
    def m(self):
        return self.tensor.shape[0]

    @property
    def p0(self):
        return self.tensor.sum(axis=2)

    @property
    def p1(self):
        return self.tensor.sum(axis=1)

    @property
    def q_matrix(self):
        return 0.5 * (self.p0 + self.p1)

    def children(self, parents, seeds, nodes):
        u = rng.uniforms(seeds, nodes, 0)
        cum = self._cum[parents]
        idx = np.minimum((u[..., None] >= cum).sum(axis=-1), self.m * self.m - 1)
        return idx // self.m, idx % self.m

    def to_dict(self):
        out = {"variant": self.variant, "tensor": self.tensor.tolist()}
        if self.ergodicity is not None:
            out["ergodicity"] = {"alpha": self.ergodicity.alpha, "M": self.ergodicity.M}
        return out

    def __repr__(self):
        return f"FiniteBMC(m={self.m})"


def model_from_dict(spec):
    """Build a model from its plain key-value description."""
    spec = dict(spec)
    variant = spec.pop("variant", "gaussian_bar")
    erg = spec.pop("ergodicity", None)
    erg = ErgodicityProfile(**erg) if erg else None
    spec.pop("initial", None)
    if variant in ("gaussian_bar", "bar"):
        if "a" in spec:
            return GaussianBAR.symmetric(spec["a"], spec.get("b", 0.0), spec.get("noise_var", 1.0),
                                         spec.get("noise_corr", 0.0), ergodicity=erg)
        return GaussianBAR(spec["a0"], spec["a1"], spec.get("b0", 0.0), spec.get("b1", 0.0),
                           spec.get("noise_cov", ((1.0, 0.0), (0.0, 1.0))), ergodicity=erg)
    if variant == "finite":
        if "tensor" in spec:
            return FiniteBMC(spec["tensor"], ergodicity=erg)
        return FiniteBMC(FiniteBMC.from_q(spec["q"]).tensor, ergodicity=erg)
    raise ModelError(f"unknown model variant {variant!r}")


def initial_from_dict(spec):
    if spec is None:
        return InitialDistribution()
    spec = dict(spec)
    if "probs" in spec:
        spec["probs"] = tuple(spec["probs"])
    return InitialDistribution(**spec)


# -- simulation ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TreeData:
    """One realization over generations ``0..depth``; ``states[u - 1]`` holds ``X_u``."""

    model: object
    depth: int
    states: np.ndarray
    seed: int
    initial: InitialDistribution = field(default_factory=InitialDistribution)

    def state(self, u):
        return self.states[u - 1]

    def generation(self, k):
        if not 0 <= k <= self.depth:
            raise ValueError(f"generation {k} outside 0..{self.depth}")
        g = generation_size(k)
        return self.states[g - 1:2 * g - 1]

    def subtree(self, k):
        if not 0 <= k <= self.depth:
            raise ValueError(f"depth {k} outside 0..{self.depth}")
        return self.states[:tree_size(k)]


def _sample_root(model, initial, seeds):
    root = np.zeros(1, dtype=np.uint64)
    kind = initial.kind
    if not model.continuous:
        if kind == "point":
            return np.full(seeds.shape, int(initial.value), dtype=np.int64)
        if kind == "stationary":
            probs = stationary_distribution(model)
        elif kind == "vector":
            probs = np.asarray(initial.probs, dtype=float)
        else:
            raise ModelError("a finite model needs a point, stationary or vector initial law")
        u = rng.uniforms(seeds, root, 0)[..., 0]
        return np.minimum(np.searchsorted(np.cumsum(probs), u, side="right"), model.m - 1).astype(np.int64)
    if kind == "point":
        return np.full(seeds.shape, float(initial.value))
    if kind == "gaussian":
        return initial.mean + np.sqrt(initial.var) * rng.normals(seeds, root, 0)[..., 0]
    if kind == "stationary":
        mean, var = model.stationary_moments()
        if model.is_symmetric:
            return mean + np.sqrt(var) * rng.normals(seeds, root, 0)[..., 0]
        # no closed form: run the random-lineage chain long enough to forget its start
        y = np.full(seeds.shape, mean)
        sd = model.noise_sd
        for step in range(200):
            pick = rng.uniforms(seeds, root, 2 * step + 1)[..., 0] < 0.5
            z = rng.normals(seeds, root, 2 * step + 2)[..., 0]
            y = np.where(pick, model.a0 * y + model.b0 + sd[0] * z, model.a1 * y + model.b1 + sd[1] * z)
        return y
    raise ModelError("a continuous model needs a point, stationary or gaussian initial law")


def simulate_forest(model, n, seeds, initial=None):
    """Simulate one tree per seed; returns an array of shape ``(len(seeds), tree_size(n))``."""
    initial = initial or InitialDistribution()
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    size = tree_size(n)
    dtype = np.float64 if model.continuous else np.int64
    states = np.empty((seeds.size, size), dtype=dtype)
    states[:, 0] = _sample_root(model, initial, seeds)
    for k in range(n):
        g = generation_size(k)
        nodes = np.arange(g, 2 * g, dtype=np.uint64)
        c0, c1 = model.children(states[:, g - 1:2 * g - 1], seeds, nodes)
        nxt = states[:, 2 * g - 1:4 * g - 1]
        nxt[:, 0::2] = c0
        nxt[:, 1::2] = c1
    return states


def simulate_tree(model, n, seed, initial=None):
    """Simulate a single realization over ``T_n`` keyed by ``seed``."""
    initial = initial or InitialDistribution()
    states = simulate_forest(model, n, [rng.as_u64(seed)], initial)[0]
    if model.continuous and not np.isfinite(states).all():
        raise ModelError("simulation produced non-finite states")
    return TreeData(model, n, states, int(seed), initial)


# -- operators ----------------------------------------------------------------


def _hermite():
    t, w = hermgauss(HERMITE_ORDER)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


def _check_coverage(model, f):
    centre = 0.5 * (f.lo + f.hi)
    for a, b, sd in ((model.a0, model.b0, model.noise_sd[0]), (model.a1, model.b1, model.noise_sd[1])):
        m = a * centre + b
        if m - COVERAGE_SDS * sd < f.lo or m + COVERAGE_SDS * sd > f.hi:
            raise ModelError(
                f"grid [{f.lo:.4g}, {f.hi:.4g}] does not cover {COVERAGE_SDS:g} noise standard "
                f"deviations around the mapped centre {m:.4g}")


def q_apply(model, f, reps=1):
    """Apply the random-lineage transition ``Q`` ``reps`` times to ``f``."""
    if reps < 0:
        raise ValueError("reps must be non-negative")
    if not model.continuous:
        q = model.q_matrix
        v = np.asarray(f, dtype=float)
        if v.shape != (model.m,):
            raise ModelError(f"f must be a length-{model.m} vector")
        for _ in range(reps):
            v = q @ v
        return v
    if not isinstance(f, GridFunction):
        raise ModelError("continuous models act on GridFunction values")
    _check_coverage(model, f)
    z, w = _hermite()
    x = f.x
    sd = model.noise_sd
    for _ in range(reps):
        y0 = (model.a0 * x + model.b0)[:, None] + sd[0] * z
        y1 = (model.a1 * x + model.b1)[:, None] + sd[1] * z
        f = f.with_values(0.5 * (f(y0) @ w + f(y1) @ w))
    return f


def p_apply_pair(model, g, like=None):
    """Evaluate ``x -> E[g(child0, child1) | parent = x]``.

    For a finite model ``g`` is an ``(m, m)`` array. For a continuous model ``g``
    is a vectorized callable ``g(y, z)`` and the result lives on the grid of
    ``like`` (a :class:`GridFunction`) or on the model's default grid.
    """
    if not model.continuous:
        g = np.asarray(g, dtype=float)
        if g.shape != (model.m, model.m):
            raise ModelError(f"g must have shape ({model.m}, {model.m})")
        return np.einsum("xyz,yz->x", model.tensor, g)
    if like is None:
        lo, hi, num = model.default_grid()
        like = GridFunction(lo, hi, np.zeros(num))
    _check_coverage(model, like)
    z, w = _hermite()
    l00, l10, l11 = model._chol
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    e0 = (l00 * z1).ravel()
    e1 = (l10 * z1 + l11 * z2).ravel()
    ww = np.outer(w, w).ravel()
    x = like.x
    out = np.empty_like(x)
    for start in range(0, x.size, 256):
        xs = x[start:start + 256, None]
        y = model.a0 * xs + model.b0 + e0
        zz = model.a1 * xs + model.b1 + e1
        out[start:start + 256] = g(y, zz) @ ww
    return like.with_values(out)


def _q_of(model_or_q):
    if isinstance(model_or_q, FiniteBMC):
        return model_or_q.q_matrix
    if isinstance(model_or_q, GaussianBAR):
        raise ModelError("this operation needs a finite model")
    return np.asarray(model_or_q, dtype=float)


def is_primitive(q):
    """Irreducible and aperiodic: some power of the support pattern is all positive."""
    m = q.shape[0]
    a = (q > 0).astype(np.int64)
    p = a.copy()
    for _ in range((m - 1) ** 2):  # Wielandt's bound
        p = np.minimum(p @ a, 1)
    return bool(p.all())


def stationary_distribution(model_or_q, tol=1e-12, max_iter=100_000):
    """Invariant probability vector of ``Q`` by power iteration from the uniform vector."""
    q = _q_of(model_or_q)
    if not is_primitive(q):
        raise NonConvergenceError("Q is reducible or periodic; power iteration cannot converge")
    mu = np.full(q.shape[0], 1.0 / q.shape[0])
    for _ in range(max_iter):
        nxt = mu @ q
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() <= tol:
            return nxt
        mu = nxt
    raise NonConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def ergodicity_rate(model_or_q):
    """Second-largest eigenvalue modulus of ``Q``."""
    q = _q_of(model_or_q)
    stationary_distribution(q)
    mods = np.sort(np.abs(np.linalg.eigvals(q)))[::-1]
    return float(mods[1]) if mods.size > 1 else 0.0


def ergodicity_profile(model_or_q, horizon=64):
    """Rate and prefactor such that ``|Q^n 1_y - mu_y| <= M alpha^n``.

    ``M`` is the largest ratio seen over ``n <= horizon`` while ``alpha^n`` stays
    above the rounding floor.

    A chain that mixes in one step has rate 0; it is reported with a tiny
    positive rate so the profile stays inside ``(0, 1)``.
    """
    q = _q_of(model_or_q)
    mu = stationary_distribution(q)
    alpha = max(ergodicity_rate(q), 1e-6)
    qn = np.eye(q.shape[0])
    M = 0.0
    for n in range(1, horizon + 1):
        if alpha**n < 1e-12:  # beyond this the residual is rounding noise
            break
        qn = qn @ q
        M = max(M, float(np.abs(qn - mu[None, :]).max()) / alpha**n)
    return ErgodicityProfile(alpha, float(max(M, np.finfo(float).tiny)))


def bar_invariant_density(model):
    """Closed-form invariant law of a symmetric BAR model."""
    if not model.continuous or not model.is_symmetric:
        raise ModelError("closed form requires a symmetric GaussianBAR model")
    a = model.a0
    if abs(a) >= 1:
        raise ModelError(f"need |a| < 1, got {a}")
    s2 = model.noise_cov[0, 0]
    return GaussianParams(model.b0 / (1 - a), s2 / (1 - a * a))


def _transition_density(model, x, y):
    sd = model.noise_sd
    if (sd <= 0).any():
        raise ModelError("degenerate noise: the lineage kernel has no density")
    out = 0.0
    for a, b, s in ((model.a0, model.b0, sd[0]), (model.a1, model.b1, sd[1])):
        r = (y[:, None] - a * x[None, :] - b) / s
        out = out + np.exp(-0.5 * r * r) / (s * np.sqrt(2 * np.pi))
    return 0.5 * out


def invariant_density_grid(model, num=GRID_POINTS, tol=1e-10, max_iter=100_000):
    """Invariant density of the lineage chain by fixed-point transport on a grid."""
    lo, hi, num = model.default_grid(num)
    x = np.linspace(lo, hi, num)
    step = x[1] - x[0]
    trap = np.full(num, step)
    trap[[0, -1]] *= 0.5
    kernel = _transition_density(model, x, x) * trap[None, :]
    mean, var = model.stationary_moments()
    mu = np.exp(-0.5 * (x - mean) ** 2 / var)
    mu /= trap @ mu
    for _ in range(max_iter):
        nxt = kernel @ mu
        nxt /= trap @ nxt
        if trap @ np.abs(nxt - mu) <= tol:
            return GridFunction(lo, hi, nxt)
        mu = nxt
    raise NonConvergenceError("invariant density iteration did not converge")
