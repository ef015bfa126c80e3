"""Smoothing kernels, their norms and moments, and the dyadic bandwidth schedule."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

QUAD_TOL = 1e-12
QUAD_LIMIT = 200
GAUSSIAN_RADIUS = 12.0


class QuadratureError(RuntimeError):
    pass


def _quad(f, lo, hi):
    with np.errstate(all="ignore"):
        val, err = integrate.quad(f, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=QUAD_LIMIT)
    if not np.isfinite(val) or err > 1e-10:
        raise QuadratureError(f"quadrature did not converge (estimate {val}, error {err})")
    return val


@dataclass(frozen=True, eq=False)
class Kernel:
    """A univariate smoothing kernel.

    ``radius`` is the support half-width for compact kernels and an effective
    radius (beyond which the kernel is negligible) otherwise.
    """

    name: str
    func: object
    radius: float
    compact: bool
    order: int = 1

    def __call__(self, u):
        return self.func(np.asarray(u, dtype=float))

    def _integrate(self, g):
        r = self.radius
        if self.compact:
            return _quad(g, -r, r)
        # split at 0 so the peak is resolved; tails beyond the radius are below 1e-30
        return _quad(g, -r, 0.0) + _quad(g, 0.0, r)

    def moment(self, j):
        return kernel_moment(self, j)

    @cached_property
    def l2_sq(self):
        return l2_norm_sq(self)

    @cached_property
    def l2(self):
        return float(np.sqrt(self.l2_sq))

    @cached_property
    def l1(self):
        return self._integrate(lambda u: abs(self.func(u)))

    @cached_property
    def sup(self):
        u = np.linspace(-self.radius, self.radius, 20001)
        return float(np.abs(self(u)).max())


def kernel_moment(k, j):
    """``int u**j K(u) du`` by adaptive Gauss-Kronrod quadrature."""
    if j < 0:
        raise ValueError("moment index must be non-negative")
    return k._integrate(lambda u: u**j * k.func(u))


def l2_norm_sq(k):
    return k._integrate(lambda u: k.func(u) ** 2)


def _gaussian(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _box(u):
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


GAUSSIAN = Kernel("gaussian", _gaussian, GAUSSIAN_RADIUS, compact=False)
EPANECHNIKOV = Kernel("epanechnikov", _epanechnikov, 1.0, compact=True)
BOX = Kernel("box", _box, 1.0, compact=True)

BASE_KERNELS = {k.name: k for k in (GAUSSIAN, EPANECHNIKOV, BOX)}


class _PolyTimesBase:
    def __init__(self, coeffs, base):
        self.coeffs = np.asarray(coeffs, dtype=float)  # coefficients of u**0, u**2, u**4, ...
        self.base = base

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.polynomial.polynomial.polyval(u * u, self.coeffs) * self.base(u)


def make_higher_order(base, r):
    """Kernel ``p(u) K(u)`` with vanishing moments ``1..r``.

    ``p`` is an even polynomial of degree ``2 * (r // 2)``, so odd moments vanish
    by the symmetry of ``base`` and the even ones are solved for exactly.
    """
    if r < 1:
        raise ValueError("target order must be at least 1")
    for j in range(1, 2 * r + 2, 2):
        if abs(kernel_moment(base, j)) > 1e-10:
            raise ValueError(f"base kernel {base.name!r} is not symmetric")
    q = r // 2
    if q == 0:
        return Kernel(base.name, base.func, base.radius, base.compact, order=r)
    mom = [kernel_moment(base, 2 * i) for i in range(2 * q + 1)]
    A = np.array([[mom[i + j] for j in range(q + 1)] for i in range(q + 1)])
    rhs = np.zeros(q + 1)
    rhs[0] = 1.0
    if abs(np.linalg.det(A)) < 1e-14 * np.abs(A).max() ** (q + 1):
        raise np.linalg.LinAlgError("moment matrix is singular")
    coeffs = np.linalg.solve(A, rhs)
    return Kernel(f"{base.name}_order{r}", _PolyTimesBase(coeffs, base.func), base.radius, base.compact, order=r)


def get_kernel(name, order=1):
    try:
        base = BASE_KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(BASE_KERNELS)}") from None
    return make_higher_order(base, order) if order > 1 else base


@dataclass(frozen=True)
class BandwidthSchedule:
    """Dyadic bandwidths ``h_n = 2**(-n * gamma)``."""

    gamma: float
    d: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma * self.d < 1.0:
            raise ValueError(f"need 0 < gamma*d < 1, got gamma={self.gamma}, d={self.d}")

    def __call__(self, n):
        return bandwidth(self, n)


def bandwidth(schedule, n):
    if n < 0:
        raise ValueError("depth must be non-negative")
    return 2.0 ** (-n * schedule.gamma)


@dataclass(frozen=True)
class HolderSpec:
    s: float
    L: float = 1.0

    def __post_init__(self):
        if self.s <= 0 or self.L <= 0:
            raise ValueError("Holder order and constant must be positive")
