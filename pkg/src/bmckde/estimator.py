"""Kernel estimator of the invariant density over a generation or a subtree.

Every function takes either a :class:`~bmckde.models.TreeData` or a raw state
array in tree layout (``states[..., u - 1]`` is ``X_u``); leading axes index
independent replicates and are carried through.

Normalization follows Parzen-Rosenblatt:
``mu_hat(x) = (|A| h)^-1 sum_{u in A} K((x - X_u) / h)``.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .density import kernel_integral, smoothed_density
from .models import TreeData
from .tree import generation_size, tree_size

GEN = "GEN"
TREE = "TREE"


@dataclass(frozen=True)
class RegionSelector:
    tag: str
    n: int

    def __post_init__(self):
        if self.tag not in (GEN, TREE):
            raise ValueError(f"region tag must be {GEN!r} or {TREE!r}")
        if self.n < 0:
            raise ValueError("region depth must be non-negative")

    @property
    def size(self):
        return generation_size(self.n) if self.tag == GEN else tree_size(self.n)

    def select(self, states):
        if self.tag == GEN:
            g = generation_size(self.n)
            return states[..., g - 1:2 * g - 1]
        return states[..., :tree_size(self.n)]


def _states(tree):
    if isinstance(tree, TreeData):
        return tree.states
    return np.asarray(tree)


def _region_states(tree, region):
    states = _states(tree)
    if states.shape[-1] < tree_size(region.n):
        raise ValueError(f"region depth {region.n} exceeds the tree depth")
    out = region.select(states)
    if not np.isfinite(out).all():
        raise ValueError("non-finite states in the region")
    return out


def kde_values(samples, k, h, xs):
    """``(N h)^-1 sum K((x - X) / h)`` over the last axis of ``samples`` for each ``x``."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.empty(samples.shape[:-1] + xs.shape)
    for i, x in enumerate(xs):
        out[..., i] = k((x - samples) / h).mean(axis=-1) / h
    return out


def kde(tree, region, k, h, xs):
    """Density estimate at ``xs`` from the states in ``region``."""
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    out = kde_values(_region_states(tree, region), k, h, xs)
    return out[..., 0] if np.ndim(xs) == 0 else out


@dataclass(frozen=True)
class SpeedSequence:
    """Speed ``b_n = 2**(beta * n)``; ``beta = 0`` is the central-limit scale."""

    beta: float = 0.0

    def __call__(self, n):
        return 2.0 ** (self.beta * n)


def default_varpi(n):
    return 1.0 if n == 0 else 1.0 / n


@dataclass(frozen=True)
class CIConfig:
    delta: float = 1.0
    star_tag: str = GEN
    varpi: object = field(default=default_varpi, compare=False)


def normalized_error(tree, region, oracle, k, schedule, speed, x):
    """``b_n^-1 sqrt(|A_n| h_n) (mu_hat(x) - mu(x))``."""
    n = region.n
    h = schedule(n)
    est = kde(tree, region, k, h, x)
    return math.sqrt(region.size * h) * (est - oracle(x)) / speed(n)


def self_normalized(tree, region, star_region, oracle, k, schedule, speed, ci, x):
    """Normalized error divided by ``max(||K||_2 sqrt(mu_hat*(x)), varpi_n)``.

    ``mu_hat*`` is computed on ``star_region``; the oracle only enters through
    the centring ``mu(x)`` of the numerator.
    """
    plug = kde(tree, star_region, k, schedule(star_region.n), x)
    return normalized_error(tree, region, oracle, k, schedule, speed, x) / _scale(plug, k, ci, region.n)


def _scale(plug, k, ci, n):
    return np.maximum(k.l2 * np.sqrt(np.maximum(plug, 0.0)), ci.varpi(n))


class ConfidenceInterval(NamedTuple):
    lo: float
    hi: float
    half_width: float
    level: float


def nominal_level(b, delta):
    return min(max(1.0 - math.exp(-0.5 * (b * delta) ** 2), 0.0), math.nextafter(1.0, 0.0))


def delta_for_level(level, b):
    """Deviation level ``delta`` whose nominal confidence is ``level`` at speed ``b``."""
    return math.sqrt(-2.0 * math.log1p(-level)) / b


def confidence_interval(estimate, plug_in, ci, speed, n, region_size, h, k):
    """Interval ``mu_hat +- delta b_n scale / sqrt(|A| h)`` with level ``1 - exp(-b_n^2 delta^2 / 2)``.

    Vectorized over ``estimate`` and ``plug_in``.
    """
    if ci.delta <= 0:
        raise ValueError("delta must be positive")
    b = speed(n)
    half = ci.delta * b * _scale(plug_in, k, ci, n) / math.sqrt(region_size * h)
    return ConfidenceInterval(estimate - half, estimate + half, half, nominal_level(b, ci.delta))


# -- additive functionals -----------------------------------------------------


@dataclass(frozen=True)
class KernelTerm:
    """``coef * h^-1/2 K((x - y) / h)`` as a function of ``y``."""

    coef: float
    h: float
    x: float
    k: object

    def __call__(self, y):
        return self.coef / math.sqrt(self.h) * self.k((self.x - y) / self.h)

    def mean(self, oracle):
        return self.coef * math.sqrt(self.h) * _smoothed(oracle, self.k, self.h, self.x)

    def sq_mean(self, oracle):
        return self.coef**2 * kernel_integral(oracle, self.k, self.h, self.x, weight=np.square)


@lru_cache(maxsize=4096)
def _smoothed(oracle, k, h, x):
    return smoothed_density(oracle, k, h, x)


@dataclass(frozen=True)
class AdditiveFunctionalSpec:
    """Per-generation functions ``f_{l,n}`` fed to the root-averaged functional.

    ``ID`` uses ``f^x_n`` at every lag, ``ZERO`` only at lag 0, ``CROSSGEN``
    uses ``2^(l/2) a_l f^x_{n-l}`` for ``l <= k`` (``k = len(coefficients) - 1``),
    and ``CUSTOM`` takes ``functions[l]`` (callables) directly.
    """

    variant: str
    x: float = 0.0
    kernel: object = None
    schedule: object = None
    coefficients: tuple = ()
    functions: tuple = ()

    def __post_init__(self):
        if self.variant not in ("ID", "ZERO", "CROSSGEN", "CUSTOM"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "CROSSGEN" and not self.coefficients:
            raise ValueError("CROSSGEN needs coefficients")

    def terms(self, n):
        """Non-zero ``(l, f_{l,n})`` pairs."""
        if self.variant == "CUSTOM":
            return [(ell, f) for ell, f in enumerate(self.functions[:n + 1]) if f is not None]
        fx = lambda m, c=1.0: KernelTerm(c, self.schedule(m), self.x, self.kernel)  # noqa: E731
        if self.variant == "ZERO":
            return [(0, fx(n))]
        if self.variant == "ID":
            return [(ell, fx(n)) for ell in range(n + 1)]
        if len(self.coefficients) > n + 1:
            raise ValueError("CROSSGEN needs n >= k")
        return [(ell, fx(n - ell, 2.0 ** (ell / 2) * a)) for ell, a in enumerate(self.coefficients)]


def _mean_under(f, oracle):
    if isinstance(f, KernelTerm):
        return f.mean(oracle)
    if not oracle.continuous:
        return float(oracle.probs @ f(np.arange(oracle.probs.size)))
    return integrate.quad(lambda y: f(y) * oracle(y), oracle.lo, oracle.hi, limit=400)[0]


def _sq_mean_under(f, oracle):
    if isinstance(f, KernelTerm):
        return f.sq_mean(oracle)
    return _mean_under(lambda y: f(y) ** 2, oracle)


def additive_functional(tree, spec, oracle, n=None):
    """``|G_n|^-1/2 sum_l sum_{u in G_{n-l}} (f_{l,n}(X_u) - <mu, f_{l,n}>)``."""
    if oracle is None:
        raise ValueError("centring needs a density oracle")
    states = _states(tree)
    if n is None:
        n = tree.depth if isinstance(tree, TreeData) else int(np.log2(states.shape[-1] + 1)) - 1
    total = np.zeros(states.shape[:-1])
    for ell, f in spec.terms(n):
        gen = RegionSelector(GEN, n - ell).select(states)
        total = total + (f(gen) - _mean_under(f, oracle)).sum(axis=-1)
    return total / math.sqrt(generation_size(n))


class Sigma2(NamedTuple):
    finite: float
    limit: float


def sigma2_limit(spec, oracle, n):
    """Finite-``n`` variance ``sum_l 2^-l <mu, f_{l,n}^2>`` and its ``n -> inf`` limit.

    The limit uses ``<mu, (f^x_n)^2> -> mu(x) ||K||_2^2``, giving
    ``||K||^2 mu(x)`` (ZERO), ``2 ||K||^2 mu(x)`` (ID) and
    ``sum_l a_l^2 ||K||^2 mu(x)`` (CROSSGEN, where the ``2^l`` weight of the
    functions cancels the ``2^-l`` weight of the sum). CUSTOM has no closed
    form and reports the finite value.
    """
    finite = sum(2.0**-ell * _sq_mean_under(f, oracle) for ell, f in spec.terms(n))
    if spec.variant == "CUSTOM":
        return Sigma2(finite, finite)
    base = spec.kernel.l2_sq * float(oracle(spec.x))
    factor = {"ZERO": 1.0, "ID": 2.0}.get(spec.variant)
    if factor is None:
        factor = float(np.sum(np.square(spec.coefficients)))
    return Sigma2(finite, factor * base)


def cross_gen_vector(tree, k, oracle, kernel, schedule, x, n=None):
    """``sqrt(|G_{n-l}| h_{n-l}) (mu_hat_{G_{n-l}}(x) - mu(x))`` for ``l = 0..k``."""
    states = _states(tree)
    if n is None:
        n = tree.depth if isinstance(tree, TreeData) else int(np.log2(states.shape[-1] + 1)) - 1
    if k >= n:
        raise ValueError(f"need k < n, got k={k}, n={n}")
    mu = float(oracle(x))
    cols = []
    for ell in range(k + 1):
        region = RegionSelector(GEN, n - ell)
        h = schedule(n - ell)
        cols.append(math.sqrt(region.size * h) * (kde(states, region, kernel, h, x) - mu))
    return np.stack(cols, axis=-1)
