"""Exact moments of generation sums ``M_{G_n}(f) = sum_{u in G_n} f(X_u)``.

The many-to-one identities reduce tree expectations to powers of the lineage
operator ``Q`` and one application of the pair operator ``P``.
:func:`brute_force_moment` is the independent check: it enumerates every state
assignment of a finite tree and weights it by the product of transition
probabilities.
"""

from typing import NamedTuple

import numpy as np

from . import rng
from .models import FiniteBMC, GridFunction, InitialDistribution, p_apply_pair, q_apply, simulate_forest
from .tree import generation_size, tree_size

ENUMERATION_LIMIT = 10**7


class InstanceTooLarge(ValueError):
    pass


class MomentEstimate(NamedTuple):
    value: float
    stderr: float
    exact: bool


def tensor(f, g):
    """``(f (x) g)(y, z) = f(y) g(z)``."""
    if isinstance(f, GridFunction):
        return lambda y, z: f(y) * g(z)
    return np.outer(f, g)


def tensor_sym(f, g):
    """``(f (x)_sym g) = (f (x) g + g (x) f) / 2``."""
    if isinstance(f, GridFunction):
        return lambda y, z: 0.5 * (f(y) * g(z) + g(y) * f(z))
    return 0.5 * (np.outer(f, g) + np.outer(g, f))


def _at(model, h, x):
    if model.continuous:
        return float(h(x))
    return float(np.asarray(h)[int(x)])


def _times(a, b):
    if isinstance(a, GridFunction):
        return a.with_values(a.values * b.values)
    return np.asarray(a) * np.asarray(b)


def _scale(c, a):
    if isinstance(a, GridFunction):
        return a.with_values(c * a.values)
    return c * np.asarray(a, dtype=float)


def _add(a, b):
    if isinstance(a, GridFunction):
        return a.with_values(a.values + b.values)
    return a + b


def _pair(model, g, like):
    return p_apply_pair(model, g, like) if model.continuous else p_apply_pair(model, g)


def expected_mgn(model, f, n, x):
    """``E_x[M_{G_n}(f)] = 2^n Q^n f(x)``."""
    return 2.0**n * _at(model, q_apply(model, f, n), x)


def second_moment_mgn(model, f, n, x):
    """``E_x[M_{G_n}(f)^2]``."""
    return cross_moment(model, f, n, f, n, x, symmetric=False)


def cross_moment(model, f, n, g, m, x, symmetric=True):
    """``E_x[M_{G_n}(f) M_{G_m}(g)]`` for ``n >= m``.

    ``2^n Q^m(g Q^{n-m} f)(x) + sum_{k<m} 2^{n+k} Q^{m-k-1} P(Q^k g (x)_sym Q^{n-m+k} f)(x)``.
    With ``symmetric=False`` the plain tensor product is used, which equals the
    symmetrized one whenever ``g = f`` and ``m = n``.
    """
    return _at(model, _cross_function(model, f, n, g, m, symmetric), x)


def _cross_function(model, f, n, g, m, symmetric=True):
    if not n >= m >= 0:
        raise ValueError("need n >= m >= 0")
    prod = tensor_sym if symmetric else tensor
    total = _scale(2.0**n, q_apply(model, _times(g, q_apply(model, f, n - m)), m))
    qg, qf = g, q_apply(model, f, n - m)
    for k in range(m):
        term = q_apply(model, _pair(model, prod(qg, qf), f), m - k - 1)
        total = _add(total, _scale(2.0 ** (n + k), term))
        qg, qf = q_apply(model, qg), q_apply(model, qf)
    return total


def stationary_cross_moment(model, oracle, f, n, g=None, m=None):
    """``E_mu[M_{G_n}(f) M_{G_m}(g)]`` with the root drawn from the invariant law.

    Defaults to the second moment (``g = f``, ``m = n``). For a continuous model
    the root integral is a trapezoid rule on the grid of ``f``.
    """
    if g is None:
        g, m = f, n
    total = _cross_function(model, f, n, g, m)
    if not model.continuous:
        return float(oracle.probs @ total)
    x = total.x
    w = oracle(x)
    return float(total.step * (total.values @ w - 0.5 * (total.values[0] * w[0] + total.values[-1] * w[-1])))


# -- enumeration oracle -----------------------------------------------------------


def _enumerate(model, n, x, fns):
    """Weights of all assignments of ``T_n`` with root ``x`` and the per-generation sums of ``fns``.

    Returns ``(weights, sums)`` where ``sums[i][k]`` is ``M_{G_k}(fns[i])`` for
    every assignment.
    """
    if not isinstance(model, FiniteBMC):
        raise TypeError("enumeration needs a finite model")
    m = model.m
    if m > 127 or m ** (tree_size(n) - 1) > ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"{m}^{tree_size(n) - 1} assignments exceed {ENUMERATION_LIMIT}")
    p_flat = model.tensor.reshape(m, m * m)
    fns = [np.asarray(f, dtype=float) for f in fns]
    gen = np.array([[int(x)]], dtype=np.int8)
    weights = np.ones(1)
    sums = [[f[gen].sum(axis=1)] for f in fns]
    pairs = np.array([(y, z) for y in range(m) for z in range(m)], dtype=np.int8)
    for k in range(n):
        g = generation_size(k)
        # each parent picks one of the m^2 child pairs; the weight of a joint
        # choice is the Kronecker product of the per-parent rows of P
        w = weights[:, None]
        for j in range(g):
            w = (w[:, :, None] * p_flat[gen[:, j]][:, None, :]).reshape(gen.shape[0], -1)
        choice = np.indices((m * m,) * g).reshape(g, -1).T
        children = pairs[choice].reshape(choice.shape[0], 2 * g)
        rows, cols = w.shape
        keep = (w > 0).ravel()
        weights = w.ravel()[keep]
        for i, f in enumerate(fns):
            child_sum = np.tile(f[children].sum(axis=1), rows)[keep]
            sums[i] = [np.repeat(s, cols)[keep] for s in sums[i]] + [child_sum]
        if k + 1 < n:
            gen = np.tile(children, (rows, 1))[keep]
    return weights, sums


class EnumeratedMoments(NamedTuple):
    first: float
    second: float
    fourth: float
    cross: float


def enumerated_moments(model, f, n, x, g=None, m=None):
    """First, second and fourth moments of ``M_{G_n}(f)`` and, when ``g`` is given,
    ``E_x[M_{G_n}(f) M_{G_m}(g)]``, all from a single enumeration."""
    if g is not None and (m is None or not n >= m >= 0):
        raise ValueError("a cross moment needs n >= m >= 0")
    w, sums = _enumerate(model, n, x, [f] if g is None else [f, g])
    s = sums[0][n]
    cross = float(w @ (s * sums[1][m])) if g is not None else float("nan")
    return EnumeratedMoments(float(w @ s), float(w @ s**2), float(w @ s**4), cross)


def brute_force_moment(model, f, n, x, power=1, g=None, m=None):
    """``E_x[M_{G_n}(f)^power]``, or ``E_x[M_{G_n}(f) M_{G_m}(g)]`` when ``g`` is given."""
    if g is not None:
        return enumerated_moments(model, f, n, x, g, m).cross
    w, ((*_, s),) = _enumerate(model, n, x, [f])
    return float(w @ s**power)


def fourth_moment_mgn(model, f, n, x, reps=None, seed=0, chunk=10_000):
    """``E_x[M_{G_n}(f)^4]``: exact by enumeration when feasible, else Monte Carlo."""
    try:
        return MomentEstimate(brute_force_moment(model, f, n, x, power=4), 0.0, True)
    except (InstanceTooLarge, TypeError):
        if not reps:
            raise InstanceTooLarge("instance too large for enumeration and no Monte Carlo budget") from None
    vals = sample_generation_sums(model, f, n, x, reps, seed, chunk) ** 4
    return MomentEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(reps)), False)


def sample_generation_sums(model, f, n, x, reps, seed=0, chunk=10_000):
    """Monte Carlo draws of ``M_{G_n}(f)`` from trees rooted at ``x``."""
    init = InitialDistribution.point(x)
    g = generation_size(n)
    out = np.empty(reps)
    for start in range(0, reps, chunk):
        idx = np.arange(start, min(start + chunk, reps), dtype=np.uint64)
        gen = simulate_forest(model, n, rng.replicate_seed(seed, idx), init)[:, g - 1:]
        vals = np.asarray(f)[gen] if not model.continuous else f(gen)
        out[start:start + idx.size] = vals.sum(axis=1)
    return out


class OracleCheck(NamedTuple):
    first: float
    second: float
    cross: float

    @property
    def worst(self):
        return max(self)


def oracle_check(seed=0, instances=20, states=(2, 3), max_depth=3):
    """Largest ``|formula - enumeration|`` per identity over random finite instances.

    Each instance draws ``m`` from ``states``, ``n <= max_depth``, a random
    tensor, functions ``f, g``, a root state and ``m' <= n``.
    """
    gen = np.random.default_rng(seed)
    worst = np.zeros(3)
    for _ in range(instances):
        m = int(gen.choice(states))
        n = int(gen.integers(0, max_depth + 1))
        model = FiniteBMC.random(m, gen)
        f, g = gen.normal(size=m), gen.normal(size=m)
        x = int(gen.integers(m))
        mm = int(gen.integers(0, n + 1))
        e = enumerated_moments(model, f, n, x, g, mm)
        err = [expected_mgn(model, f, n, x) - e.first, second_moment_mgn(model, f, n, x) - e.second,
               cross_moment(model, f, n, g, mm, x) - e.cross]
        worst = np.maximum(worst, np.abs(err))
    return OracleCheck(*map(float, worst))
