import math

import numpy as np
import pytest

from bmckde import rng
from bmckde.density import DensityOracle, oracle_for, smoothed_density
from bmckde.estimator import (GEN, TREE, AdditiveFunctionalSpec, CIConfig, RegionSelector, SpeedSequence,
                              additive_functional, confidence_interval, cross_gen_vector, default_varpi,
                              delta_for_level, kde, nominal_level, normalized_error, self_normalized,
                              sigma2_limit)
from bmckde.kernels import BOX, EPANECHNIKOV, GAUSSIAN, BandwidthSchedule
from bmckde.models import GaussianBAR, simulate_forest, simulate_tree
from bmckde.tree import generation_size

BAR = GaussianBAR.symmetric(0.5)
ORACLE = oracle_for(BAR)
SCHED = BandwidthSchedule(0.2)


@pytest.fixture(scope="module")
def tree():
    return simulate_tree(BAR, 10, 17)


def test_region_selector():
    assert RegionSelector(GEN, 5).size == 32 and RegionSelector(TREE, 5).size == 63
    with pytest.raises(ValueError):
        RegionSelector("LEAF", 1)
    with pytest.raises(ValueError):
        RegionSelector(GEN, -1)


def test_kde_single_node_box():
    assert kde(np.array([0.0]), RegionSelector(GEN, 0), BOX, 1.0, 0.0) == 0.5


def test_kde_constant_states():
    states = np.full(63, 0.7)
    h, xs = 0.3, np.array([-1.0, 0.0, 0.7, 2.0])
    np.testing.assert_allclose(kde(states, RegionSelector(TREE, 5), GAUSSIAN, h, xs), GAUSSIAN((xs - 0.7) / h) / h,
                               rtol=1e-14)


def test_kde_tree_is_weighted_generation_average(tree):
    xs = np.linspace(-2, 2, 9)
    h = 0.4
    whole = kde(tree, RegionSelector(TREE, 10), EPANECHNIKOV, h, xs)
    parts = sum(generation_size(k) * kde(tree, RegionSelector(GEN, k), EPANECHNIKOV, h, xs) for k in range(11))
    np.testing.assert_allclose(whole, parts / (2**11 - 1), atol=1e-12)


def test_kde_rejects_bad_input(tree):
    with pytest.raises(ValueError):
        kde(tree, RegionSelector(GEN, 11), GAUSSIAN, 0.5, 0.0)
    with pytest.raises(ValueError):
        kde(np.array([0.0, np.nan, 1.0]), RegionSelector(GEN, 1), GAUSSIAN, 0.5, 0.0)
    with pytest.raises(ValueError):
        kde(tree, RegionSelector(GEN, 3), GAUSSIAN, 0.0, 0.0)


def test_kde_mean_is_smoothed_density():
    n, R = 12, 2000
    h = SCHED(n)
    states = simulate_forest(BAR, n, rng.replicate_seed(5, np.arange(R, dtype=np.uint64)))
    est = kde(states, RegionSelector(GEN, n), GAUSSIAN, h, 0.0)
    target = smoothed_density(ORACLE, GAUSSIAN, h, 0.0)
    assert abs(est.mean() - target) <= 2 * est.std(ddof=1) / math.sqrt(R)


def test_additive_functional_zero_identity(tree):
    n = 10
    h = SCHED(n)
    for x in (-1.0, 0.0, 0.5):
        spec = AdditiveFunctionalSpec("ZERO", x, GAUSSIAN, SCHED)
        est = kde(tree, RegionSelector(GEN, n), GAUSSIAN, h, x)
        expected = math.sqrt(generation_size(n) * h) * (est - smoothed_density(ORACLE, GAUSSIAN, h, x))
        assert additive_functional(tree, spec, ORACLE) == pytest.approx(expected, abs=1e-12)


def test_additive_functional_zero_functions(tree):
    zero = lambda y: np.zeros_like(y)  # noqa: E731
    spec = AdditiveFunctionalSpec("CUSTOM", functions=(zero, zero, zero))
    assert additive_functional(tree, spec, ORACLE) == 0.0


def test_additive_functional_id_sums_generations(tree):
    n = 10
    spec = AdditiveFunctionalSpec("ID", 0.0, GAUSSIAN, SCHED)
    f = spec.terms(n)[0][1]
    centred = f(tree.states) - f.mean(ORACLE)
    assert additive_functional(tree, spec, ORACLE) == pytest.approx(centred.sum() / 2**(n / 2), abs=1e-10)
    assert len(spec.terms(n)) == n + 1


def test_additive_functional_needs_oracle(tree):
    with pytest.raises(ValueError):
        additive_functional(tree, AdditiveFunctionalSpec("ZERO", 0.0, GAUSSIAN, SCHED), None)


def test_crossgen_terms():
    spec = AdditiveFunctionalSpec("CROSSGEN", 0.0, GAUSSIAN, SCHED, coefficients=(1.0, 2.0))
    (l0, f0), (l1, f1) = spec.terms(8)
    assert (l0, l1) == (0, 1)
    assert f1.coef == pytest.approx(2 * math.sqrt(2)) and f1.h == SCHED(7)
    with pytest.raises(ValueError):
        AdditiveFunctionalSpec("CROSSGEN", 0.0, GAUSSIAN, SCHED).terms(3)


def test_normalized_error_zero_when_exact():
    # a hand-made oracle equal to the estimate makes the error vanish
    states = np.zeros(3)
    region = RegionSelector(TREE, 1)
    h = SCHED(1)
    est = kde(states, region, GAUSSIAN, h, 0.0)
    exact = DensityOracle("gaussian", lambda x: np.full(np.shape(x), est), -1.0, 1.0)
    assert normalized_error(states, region, exact, GAUSSIAN, SCHED, SpeedSequence(0.0), 0.0) == 0.0


def test_normalized_error_scales_with_speed(tree):
    region = RegionSelector(GEN, 10)
    a = normalized_error(tree, region, ORACLE, GAUSSIAN, SCHED, SpeedSequence(0.0), 0.0)
    b = normalized_error(tree, region, ORACLE, GAUSSIAN, SCHED, SpeedSequence(0.1), 0.0)
    assert b * 2.0 == a


def test_self_normalized_floor():
    states = np.full(7, 100.0)  # no mass near x for a compact kernel
    region = RegionSelector(TREE, 2)
    ci = CIConfig()
    out = self_normalized(states, region, region, ORACLE, EPANECHNIKOV, SCHED, SpeedSequence(0.0), ci, 0.0)
    raw = normalized_error(states, region, ORACLE, EPANECHNIKOV, SCHED, SpeedSequence(0.0), 0.0)
    assert np.isfinite(out) and out == pytest.approx(raw / default_varpi(2))


def test_self_normalized_plug_in_identity(tree):
    region = RegionSelector(GEN, 10)
    h = SCHED(10)
    plug = kde(tree, region, GAUSSIAN, h, 0.0)
    out = self_normalized(tree, region, region, ORACLE, GAUSSIAN, SCHED, SpeedSequence(0.0), CIConfig(), 0.0)
    raw = normalized_error(tree, region, ORACLE, GAUSSIAN, SCHED, SpeedSequence(0.0), 0.0)
    assert out == pytest.approx(raw / (GAUSSIAN.l2 * math.sqrt(plug)), rel=1e-14)


def test_varpi():
    assert default_varpi(0) == 1.0 and default_varpi(4) == 0.25


def test_confidence_level_inversion():
    b = 2.0
    delta = math.sqrt(2 * math.log(20)) / b
    assert nominal_level(b, delta) == pytest.approx(0.95, abs=1e-14)
    assert delta_for_level(0.95, b) == pytest.approx(delta, rel=1e-14)
    assert nominal_level(1e6, 1.0) < 1.0


def test_confidence_interval_shape():
    speed = SpeedSequence(0.1)
    mu = float(ORACLE(0.0))
    ci = CIConfig(delta=0.5)
    iv = confidence_interval(0.3, mu, ci, speed, 10, 1024, SCHED(10), GAUSSIAN)
    half = 0.5 * speed(10) * GAUSSIAN.l2 * math.sqrt(mu) / math.sqrt(1024 * SCHED(10))
    assert iv.half_width == pytest.approx(half) and iv.lo == pytest.approx(0.3 - half)
    levels = [confidence_interval(0.3, mu, ci, speed, n, 2**n, SCHED(n), GAUSSIAN).level for n in range(4, 14)]
    assert np.all(np.diff(levels) > 0)
    with pytest.raises(ValueError):
        confidence_interval(0.3, mu, CIConfig(delta=0.0), speed, 10, 1024, SCHED(10), GAUSSIAN)


def test_cross_gen_vector(tree):
    vec = cross_gen_vector(tree, 0, ORACLE, GAUSSIAN, SCHED, 0.0)
    ne = normalized_error(tree, RegionSelector(GEN, 10), ORACLE, GAUSSIAN, SCHED, SpeedSequence(0.0), 0.0)
    assert vec.shape == (1,) and vec[0] == ne
    assert cross_gen_vector(tree, 2, ORACLE, GAUSSIAN, SCHED, 0.0).shape == (3,)
    with pytest.raises(ValueError):
        cross_gen_vector(tree, 10, ORACLE, GAUSSIAN, SCHED, 0.0)


def test_sigma2_limits():
    base = GAUSSIAN.l2_sq * float(ORACLE(0.0))
    zero = sigma2_limit(AdditiveFunctionalSpec("ZERO", 0.0, GAUSSIAN, SCHED), ORACLE, 10)
    ident = sigma2_limit(AdditiveFunctionalSpec("ID", 0.0, GAUSSIAN, SCHED), ORACLE, 10)
    assert zero.limit == pytest.approx(base) and ident.limit == pytest.approx(2 * base)


@pytest.mark.parametrize("variant", ["ZERO", "ID"])
def test_sigma2_finite_converges(variant):
    spec = AdditiveFunctionalSpec(variant, 0.0, GAUSSIAN, SCHED)
    vals = {n: sigma2_limit(spec, ORACLE, n) for n in (8, 15, 16, 30)}
    limit = vals[30].limit
    assert abs(vals[30].finite - vals[15].finite) < abs(vals[15].finite - vals[8].finite)
    assert abs(vals[30].finite / limit - 1) < 0.02


def test_sigma2_crossgen_matches_quadrature():
    # the functions carry 2^(l/2) and the sum 2^-l, so each lag contributes a_l^2 ||K||^2 mu(x)
    spec = AdditiveFunctionalSpec("CROSSGEN", 0.0, GAUSSIAN, SCHED, coefficients=(1.0, 1.0))
    s = sigma2_limit(spec, ORACLE, 40)
    assert s.limit == pytest.approx(2 * GAUSSIAN.l2_sq * float(ORACLE(0.0)))
    assert abs(s.finite / s.limit - 1) < 0.02
