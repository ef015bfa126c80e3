"""Replicated Monte Carlo experiments, deviation-rate estimation and validators.

Replicates are simulated in fixed-size chunks. A chunk's results depend only on
the configuration and the chunk's replicate indices, so output files are
byte-identical whatever the number of worker threads.
"""

import csv
import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import yaml
from scipy.stats import binomtest

from . import rng
from .density import oracle_for
from .estimator import (GEN, TREE, AdditiveFunctionalSpec, CIConfig, RegionSelector, SpeedSequence,
                        additive_functional, cross_gen_vector, delta_for_level, kde_values)
from .kernels import BandwidthSchedule, get_kernel
from .models import initial_from_dict, model_from_dict, simulate_forest

THREADS_ENV = "BMCKDE_THREADS"


class ValidationError(ValueError):
    """A configuration violates a theoretical assumption."""


# -- configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"variant": "gaussian_bar", "a": 0.5, "b": 0.0, "noise_var": 1.0})
    initial: dict = field(default_factory=lambda: {"kind": "stationary"})
    kernel: str = "gaussian"
    kernel_order: int = 1
    gamma: float = 0.2
    beta: float = 0.0
    s: float = 2.0
    alpha: float = None
    regions: list = field(default_factory=lambda: [GEN, TREE])
    star_region: str = "same"
    depths: list = field(default_factory=lambda: [12])
    xs: list = field(default_factory=lambda: [0.0])
    replicates: int = 2000
    seed: int = 2024
    deltas: list = field(default_factory=lambda: [1.0])
    mdp_statistic: str = "self_normalized"
    ci_level: float = 0.9
    variance_tolerance: float = 0.2
    coverage_band: list = field(default_factory=lambda: [0.85, 0.99])
    crossgen_k: int = 2
    crossgen_coefficients: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    correlation_bound: float = 0.1
    chunk: int = 250

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


def load_config(path=None, **overrides):
    """Read a YAML (or JSON) config file and apply non-``None`` overrides."""
    data = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data).replace(**overrides)


def default_threads():
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else (os.cpu_count() or 1)


# -- validators ---------------------------------------------------------------


class SpeedCheck(NamedTuple):
    lower: float
    upper: float
    passed: bool
    message: str


def validate_speed(gamma, s, beta, d=1):
    """Feasible exponents ``beta`` for ``b_n = 2**(beta n)``.

    ``b_n -> inf``, ``b_n / sqrt(|G_n| h_n^d) -> 0`` (the polynomial factor is
    absorbed by the strict inequality) and ``b_n / sqrt(|G_n| h_n^(2s+d)) -> inf``
    reduce to ``max(0, (1 - gamma(2s + d)) / 2) < beta < (1 - gamma d) / 2``.
    """
    if not 0 < gamma * d < 1 or s <= 0:
        raise ValueError("need gamma in (0, 1/d) and s > 0")
    lower = max((1 - gamma * (2 * s + d)) / 2, 0.0)
    upper = (1 - gamma * d) / 2
    passed = lower < beta < upper
    msg = (f"speed exponent beta={beta:g} {'inside' if passed else 'outside'} the feasible "
           f"interval ({lower:g}, {upper:g}) for gamma={gamma:g}, s={s:g}")
    return SpeedCheck(lower, upper, passed, msg)


class AlphaCheck(NamedTuple):
    passed: bool
    value: float
    message: str


def validate_alpha_bandwidth(alpha, gamma, d=1):
    """For ``alpha > 1/2`` the bandwidth exponent must satisfy ``2^(1 - gamma d) alpha < 1``."""
    if not 0 < alpha < 1 or not 0 < gamma * d < 1:
        raise ValueError("need alpha in (0, 1) and gamma in (0, 1/d)")
    value = 2.0 ** (1 - gamma * d) * alpha
    if alpha <= 0.5:
        return AlphaCheck(True, value, f"alpha={alpha:g} <= 1/2: no constraint on the bandwidth")
    if value < 1:
        return AlphaCheck(True, value, f"alpha={alpha:g} > 1/2 constrains the bandwidth: "
                                       f"2^(1-gamma*d)*alpha = {value:.4g} < 1")
    return AlphaCheck(False, value, f"bandwidth/ergodicity condition violated: "
                                    f"2^(1-gamma*d)*alpha = {value:.4g} >= 1 (alpha={alpha:g}, gamma={gamma:g})")


def validate_config(cfg, model=None):
    """Raise :class:`ValidationError` naming the first violated assumption."""
    if not 0 < cfg.gamma < 1:
        raise ValidationError(f"bandwidth exponent gamma={cfg.gamma:g} must lie in (0, 1)")
    model = model or model_from_dict(cfg.model)
    alpha = cfg.alpha if cfg.alpha is not None else getattr(model, "alpha", None)
    if alpha is not None and 0 < alpha < 1:
        check = validate_alpha_bandwidth(alpha, cfg.gamma)
        if not check.passed:
            raise ValidationError(check.message)
    if cfg.beta > 0:
        check = validate_speed(cfg.gamma, cfg.s, cfg.beta)
        if not check.passed:
            raise ValidationError(check.message)
    if min(cfg.depths) < 0 or cfg.replicates < 1:
        raise ValidationError("depths must be non-negative and replicates positive")


# -- replicate runner ---------------------------------------------------------


@lru_cache(maxsize=None)
def _context(cfg_json):
    cfg = ExperimentConfig(**json.loads(cfg_json))
    model = model_from_dict(cfg.model)
    return cfg, model, oracle_for(model), get_kernel(cfg.kernel, cfg.kernel_order)


class Samples(NamedTuple):
    """Per-replicate statistics: ``stats[(n, x)][name]`` is an array of length ``R``."""

    cfg: ExperimentConfig
    seeds: np.ndarray
    stats: dict

    def get(self, name, n, x=None):
        x = self.cfg.xs[0] if x is None else x
        return self.stats[(n, float(x))][name]


def _chunk_stats(cfg_json, start, stop):
    cfg, model, oracle, k = _context(cfg_json)
    schedule = BandwidthSchedule(cfg.gamma)
    speed = SpeedSequence(cfg.beta)
    seeds = rng.replicate_seed(cfg.seed, np.arange(start, stop, dtype=np.uint64))
    states = simulate_forest(model, max(cfg.depths), seeds, initial_from_dict(cfg.initial))
    out = {}
    for n in cfg.depths:
        h = schedule(n)
        b = speed(n)
        varpi = CIConfig().varpi(n)
        for x in cfg.xs:
            x = float(x)
            mu = float(oracle(x))
            stats = {}
            est = {}
            for tag in (GEN, TREE):
                region = RegionSelector(tag, n)
                est[tag] = kde_values(region.select(states), k, h, x)[..., 0]
            for tag in cfg.regions:
                region = RegionSelector(tag, n)
                star = tag if cfg.star_region == "same" else cfg.star_region
                clt = math.sqrt(region.size * h) * (est[tag] - mu)
                scale = np.maximum(k.l2 * np.sqrt(np.maximum(est[star], 0.0)), varpi)
                stats[f"est_{tag}"] = est[tag]
                stats[f"clt_{tag}"] = clt
                stats[f"z_{tag}"] = clt / b
                stats[f"sn0_{tag}"] = clt / scale
                stats[f"sn_{tag}"] = clt / scale / b
                half = delta_for_level(cfg.ci_level, b) * b * scale / math.sqrt(region.size * h)
                stats[f"cover_{tag}"] = (np.abs(est[tag] - mu) <= half).astype(float)
            for variant in ("ZERO", "ID"):
                spec = AdditiveFunctionalSpec(variant, x, k, schedule)
                stats[f"N_{variant}"] = additive_functional(states, spec, oracle, n)
            kk = cfg.crossgen_k
            if kk is not None and kk < n:
                vec = cross_gen_vector(states, kk, oracle, k, schedule, x, n)
                for ell in range(kk + 1):
                    stats[f"cg_{ell}"] = vec[:, ell]
                coeffs = tuple(cfg.crossgen_coefficients[:kk + 1])
                spec = AdditiveFunctionalSpec("CROSSGEN", x, k, schedule, coeffs)
                stats["N_CROSSGEN"] = additive_functional(states, spec, oracle, n)
            out[(n, x)] = stats
    return seeds, out


def run_replicates(cfg, threads=None):
    """Simulate ``cfg.replicates`` trees and compute every statistic per (n, x)."""
    validate_config(cfg)
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    bounds = [(s, min(s + cfg.chunk, cfg.replicates)) for s in range(0, cfg.replicates, cfg.chunk)]
    threads = threads or default_threads()
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _chunk_stats(cfg_json, *b), bounds))
    else:
        parts = [_chunk_stats(cfg_json, *b) for b in bounds]
    seeds = np.concatenate([p[0] for p in parts])
    stats = {}
    for key in parts[0][1]:
        stats[key] = {name: np.concatenate([p[1][key][name] for p in parts]) for name in parts[0][1][key]}
    return Samples(cfg, seeds, stats)


# -- deviation rates ----------------------------------------------------------


class DeviationRow(NamedTuple):
    n: int
    region: str
    x: float
    delta: float
    R: int
    exceed: int
    p_hat: float
    p_lo: float
    p_hi: float
    rate_hat: float
    rate_theory: float
    flag: str


REPORT_HEADER = list(DeviationRow._fields)


@dataclass
class DeviationReport:
    rows: list

    def select(self, region=None, x=None, delta=None):
        return [r for r in self.rows if (region is None or r.region == region)
                and (x is None or r.x == x) and (delta is None or r.delta == delta)]


def tail_rate_estimate(samples_by_n, speed, deltas, sigma2, region="", x=0.0, min_reps=100):
    """Empirical ``-(1/b_n^2) log P(|Z_n| > delta)`` against ``delta^2 / (2 sigma2)``.

    ``samples_by_n`` maps depth to the replicate values of ``Z_n`` (already
    divided by ``b_n``). Zero exceedances give the finite lower bound
    ``-(1/b_n^2) log(1/R)``, flagged ``lower_bound``.
    """
    rows = []
    for n, z in sorted(samples_by_n.items()):
        z = np.asarray(z)
        R = z.size
        if R < min_reps:
            raise ValueError(f"need at least {min_reps} replicates, got {R}")
        b2 = speed(n) ** 2
        for delta in deltas:
            exceed = int((np.abs(z) > delta).sum())
            ci = binomtest(exceed, R).proportion_ci(method="wilson")
            p_hat = exceed / R
            if exceed == 0:
                rate, flag = -math.log(1.0 / R) / b2, "lower_bound"
            else:
                rate, flag = -math.log(p_hat) / b2, ""
            rows.append(DeviationRow(n, region, float(x), float(delta), R, exceed, p_hat,
                                     float(ci.low), float(ci.high), rate, delta**2 / (2 * sigma2), flag))
    return DeviationReport(rows)


class RateVerdict(NamedTuple):
    region: str
    x: float
    delta: float
    depths: tuple
    rates: tuple
    trend: float
    ratio: float
    inversions: int
    finite: bool
    verdict: str


def _rate_bounds(row, speed):
    b2 = speed(row.n) ** 2
    hi = -math.log(row.p_lo) / b2 if row.p_lo > 0 else math.inf
    lo = -math.log(row.p_hi) / b2 if row.p_hi > 0 else math.inf
    return lo, hi


def mdp_rate_compare(report, speed, ratio_band=(0.5, 2.0), min_exceed=20):
    """Per ``(region, x, delta)``: does the empirical rate approach the theoretical one?

    PASS needs every depth to have finite exceedance-based rates, the shallowest
    depth at least ``min_exceed`` exceedances, ``rate(n_max) / I(delta)`` inside
    ``ratio_band``, the last rate closer to ``I(delta)`` than the first, and at
    most one step away from ``I(delta)`` whose Wilson rate intervals overlap.
    """
    groups = {}
    for r in report.rows:
        groups.setdefault((r.region, r.x, r.delta), []).append(r)
    verdicts = []
    for (region, x, delta), rows in sorted(groups.items()):
        if delta == 0:
            continue
        rows = sorted(rows, key=lambda r: r.n)
        if len(rows) < 3:
            raise ValueError("the comparison needs at least three depths")
        target = rows[0].rate_theory
        rates = tuple(r.rate_hat for r in rows)
        finite = all(r.flag == "" for r in rows) and rows[0].exceed >= min_exceed
        dist = [abs(v - target) for v in rates]
        inversions, excused = 0, True
        for a, b in zip(rows, rows[1:]):
            if abs(b.rate_hat - target) > abs(a.rate_hat - target):
                inversions += 1
                alo, ahi = _rate_bounds(a, speed)
                blo, bhi = _rate_bounds(b, speed)
                excused &= alo <= bhi and blo <= ahi
        ratio = rates[-1] / target
        ok = (finite and ratio_band[0] <= ratio <= ratio_band[1] and dist[-1] < dist[0]
              and inversions <= 1 and excused)
        verdicts.append(RateVerdict(region, x, delta, tuple(r.n for r in rows), rates, rates[-1] - rates[0],
                                    ratio, inversions, finite, "PASS" if ok else "FAIL"))
    return verdicts


class VarianceCheck(NamedTuple):
    ratio: float
    stderr: float
    degenerate: bool


def clt_variance_check(samples, theory_var, min_reps=500):
    """Sample variance over ``theory_var`` with a jackknife standard error."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < min_reps:
        raise ValueError(f"need at least {min_reps} samples, got {n}")
    var = x.var(ddof=1)
    if var == 0:
        return VarianceCheck(0.0, 0.0, True)
    s1, s2 = x.sum(), (x * x).sum()
    loo_mean = (s1 - x) / (n - 1)
    loo_var = ((s2 - x * x) - (n - 1) * loo_mean**2) / (n - 2)
    se = math.sqrt((n - 1) / n * ((loo_var - loo_var.mean()) ** 2).sum())
    return VarianceCheck(var / theory_var, se / theory_var, False)


# -- experiments --------------------------------------------------------------


def _mu_l2(cfg, x):
    _, _, oracle, k = _context(json.dumps(cfg.to_dict(), sort_keys=True))
    return float(oracle(x)), k.l2_sq


VARIANCE_HEADER = ["n", "region", "x", "statistic", "R", "value", "target", "ratio", "stderr", "verdict"]


def verify_clt(samples):
    """Variance ratios of the central-limit statistics plus confidence-interval coverage."""
    cfg = samples.cfg
    tol = cfg.variance_tolerance
    rows = []
    for (n, x), st in samples.stats.items():
        mu, l2 = _mu_l2(cfg, x)
        base = l2 * mu
        checks = [(tag, f"clt_{tag}", base) for tag in cfg.regions]
        checks += [(GEN, "N_ZERO", base), (TREE, "N_ID", 2 * base)]
        checks += [(tag, f"sn0_{tag}", 1.0) for tag in cfg.regions]
        for region, name, target in checks:
            c = clt_variance_check(st[name], target)
            ok = not c.degenerate and abs(c.ratio - 1) <= tol
            rows.append([n, region, x, name, len(st[name]), c.ratio * target, target, c.ratio, c.stderr,
                         "PASS" if ok else "FAIL"])
        lo, hi = cfg.coverage_band
        for tag in cfg.regions:
            cov = float(st[f"cover_{tag}"].mean())
            se = math.sqrt(cov * (1 - cov) / len(st[f"cover_{tag}"]))
            rows.append([n, tag, x, f"cover_{tag}", len(st[f"cover_{tag}"]), cov, cfg.ci_level, cov / cfg.ci_level,
                         se, "PASS" if lo <= cov <= hi else "FAIL"])
    return rows


def verify_mdp(samples):
    """Deviation report and verdicts for the configured statistic over all depths."""
    cfg = samples.cfg
    speed = SpeedSequence(cfg.beta)
    rows = []
    for x in cfg.xs:
        x = float(x)
        mu, l2 = _mu_l2(cfg, x)
        for tag in cfg.regions:
            if cfg.mdp_statistic == "self_normalized":
                name, sigma2 = f"sn_{tag}", 1.0
            else:
                name, sigma2 = f"z_{tag}", l2 * mu
            by_n = {n: samples.get(name, n, x) for n in cfg.depths}
            rows += tail_rate_estimate(by_n, speed, cfg.deltas, sigma2, tag, x).rows
    report = DeviationReport(rows)
    return report, mdp_rate_compare(report, speed)


CROSSGEN_HEADER = ["n", "x", "quantity", "i", "j", "value", "target", "verdict"]


def verify_crossgen(samples):
    """Correlations between generation-lag coordinates and the combined variance."""
    cfg = samples.cfg
    k = cfg.crossgen_k
    a = np.asarray(cfg.crossgen_coefficients[:k + 1], dtype=float)
    rows = []
    for (n, x), st in samples.stats.items():
        if "N_CROSSGEN" not in st:
            continue
        mu, l2 = _mu_l2(cfg, x)
        vec = np.column_stack([st[f"cg_{ell}"] for ell in range(k + 1)])
        corr = np.corrcoef(vec, rowvar=False)
        for i in range(k + 1):
            for j in range(i + 1, k + 1):
                ok = abs(corr[i, j]) <= cfg.correlation_bound
                rows.append([n, x, "corr", i, j, corr[i, j], 0.0, "PASS" if ok else "FAIL"])
        var = st["N_CROSSGEN"].var(ddof=1)
        unweighted = float(a @ a) * l2 * mu
        dyadic = float((2.0 ** np.arange(k + 1)) @ a**2) * l2 * mu
        for name, target in (("var_vs_sum_a2", unweighted), ("var_vs_sum_2l_a2", dyadic)):
            ok = abs(var / target - 1) <= cfg.variance_tolerance
            rows.append([n, x, name, -1, -1, var, target, "PASS" if ok else "FAIL"])
    return rows


# -- persistence --------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, meta=None):
    """Write rows with a leading ``# config: {...}`` provenance line; overwrites."""
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write("# config: " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_samples_jsonl(path, samples):
    """One JSON object per (replicate, n) with every statistic listed per evaluation point."""
    cfg = samples.cfg
    xs = [float(x) for x in cfg.xs]
    with open(path, "w") as fh:
        for r in range(len(samples.seeds)):
            for n in cfg.depths:
                names = samples.stats[(n, xs[0])].keys()
                stats = {name: [float(samples.stats[(n, x)][name][r]) for x in xs] for name in names}
                fh.write(json.dumps({"replicate": r, "seed": int(samples.seeds[r]), "n": n, "x": xs,
                                     "stats": stats}, sort_keys=True) + "\n")
