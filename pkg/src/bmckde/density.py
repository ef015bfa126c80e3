"""Ground-truth invariant densities, their kernel smoothings and the bias term."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .models import (FiniteBMC, GaussianBAR, bar_invariant_density, invariant_density_grid,
                     stationary_distribution)


class NotContinuousError(TypeError):
    """The operation needs a Lebesgue density but the oracle is discrete."""


@dataclass(frozen=True, eq=False)
class DensityOracle:
    """Invariant law ``mu`` of the random-lineage chain.

    ``source`` is ``"gaussian"`` (closed form), ``"grid"`` (fixed-point
    transport) or ``"stationary_vector"`` (finite state space). ``lo`` and
    ``hi`` bound the region where the density is known; it is zero outside.
    """

    source: str
    evaluator: object
    lo: float
    hi: float
    mean: float = float("nan")
    var: float = float("nan")
    probs: np.ndarray = None
    nodes: np.ndarray = None  # interpolation nodes of a grid source

    @property
    def continuous(self):
        return self.source != "stationary_vector"

    @property
    def sd(self):
        return float(np.sqrt(self.var))

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))

    @classmethod
    def gaussian(cls, mean, var, width=8.0):
        sd = np.sqrt(var)

        def pdf(x):
            return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)

        return cls("gaussian", pdf, mean - width * sd, mean + width * sd, float(mean), float(var))

    @classmethod
    def from_grid(cls, g, mean, var):
        def pdf(x):
            return np.where((x >= g.lo) & (x <= g.hi), np.maximum(g(x), 0.0), 0.0)

        return cls("grid", pdf, g.lo, g.hi, float(mean), float(var), nodes=g.x)

    @classmethod
    def from_vector(cls, probs):
        probs = np.asarray(probs, dtype=float)

        def pmf(x):
            idx = np.asarray(x).astype(np.int64)
            return probs[idx]

        states = np.arange(probs.size)
        mean = float(probs @ states)
        return cls("stationary_vector", pmf, 0.0, float(probs.size - 1), mean,
                   float(probs @ states**2 - mean**2), probs)

    def integral(self):
        if not self.continuous:
            return float(self.probs.sum())
        if self.source == "grid":
            xs = np.linspace(self.lo, self.hi, 16385)
            return float(integrate.trapezoid(self.evaluator(xs), xs))
        return integrate.quad(self.evaluator, self.lo, self.hi, limit=400, points=[self.mean])[0]

    def table(self, xs=None, num=201):
        """``(x, mu(x))`` rows for export."""
        if xs is None:
            if self.continuous:
                xs = np.linspace(self.mean - 4 * self.sd, self.mean + 4 * self.sd, num)
            else:
                xs = np.arange(self.probs.size)
        xs = np.asarray(xs)
        return np.column_stack([xs, self(xs)])

    def to_csv(self, path, xs=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "mu"])
            for x, m in self.table(xs):
                w.writerow([repr(float(x)), repr(float(m))])


def oracle_for(model):
    """Oracle for a model: closed form, grid transport or stationary vector."""
    if isinstance(model, FiniteBMC):
        return DensityOracle.from_vector(stationary_distribution(model))
    if isinstance(model, GaussianBAR):
        if model.is_symmetric:
            return DensityOracle.gaussian(*bar_invariant_density(model))
        return DensityOracle.from_grid(invariant_density_grid(model), *model.stationary_moments())
    raise TypeError(f"no oracle for {type(model).__name__}")


def _require_continuous(oracle):
    if not oracle.continuous:
        raise NotContinuousError("a discrete invariant law has no density to smooth")


def kernel_integral(oracle, k, h, x, weight=None):
    """``int weight(K(u)) mu(x - h u) du`` over the kernel support.

    With ``weight=None`` this is the smoothed density ``int h^-1 K((x-y)/h) mu(y) dy``.
    """
    _require_continuous(oracle)
    g = k.func if weight is None else (lambda u: weight(k.func(u)))
    # restrict to the part of the kernel support that sees the oracle's support
    lo = max(-k.radius, (x - oracle.hi) / h)
    hi = min(k.radius, (x - oracle.lo) / h)
    if hi <= lo:
        return 0.0
    pts = [p for p in (0.0, (x - oracle.mean) / h) if lo < p < hi]
    if oracle.nodes is not None:
        # break at every interpolation node so each piece is smooth
        u = (x - oracle.nodes) / h
        pts = sorted(set(pts) | set(u[(u > lo) & (u < hi)].tolist()))
    val, err = integrate.quad(lambda u: g(u) * oracle.evaluator(x - h * u), lo, hi, epsabs=1e-12,
                              epsrel=1e-12, limit=max(400, 2 * len(pts) + 50), points=pts or None)
    return float(val)


def smoothed_density(oracle, k, h, x):
    """``(K_h * mu)(x)`` with ``K_h(u) = h^-1 K(u / h)``; vectorized over ``x``."""
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    xs = np.asarray(x, dtype=float)
    out = np.array([kernel_integral(oracle, k, h, xi) for xi in xs.ravel()])
    return out.reshape(xs.shape) if xs.ndim else float(out[0])


def bias(oracle, k, h, x):
    """Smoothing bias ``(K_h * mu)(x) - mu(x)``."""
    return smoothed_density(oracle, k, h, x) - oracle(x)


def bochner_check(oracle, k, x, m_max):
    """``|(K_h * mu)(x) - mu(x)|`` along ``h = 2**-m`` for ``m = 0..m_max``."""
    _require_continuous(oracle)
    return np.array([abs(bias(oracle, k, 2.0**-m, x)) for m in range(m_max + 1)])


def bias_slope(oracle, k, x, hs):
    """Least-squares slope of ``log|bias|`` against ``log h``."""
    hs = np.asarray(hs, dtype=float)
    b = np.abs([bias(oracle, k, h, x) for h in hs])
    return float(np.polyfit(np.log(hs), np.log(b), 1)[0])
