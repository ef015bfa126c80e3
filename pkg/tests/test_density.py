import numpy as np
import pytest
from scipy import integrate, stats

from bmckde.density import (DensityOracle, NotContinuousError, bias, bias_slope, bochner_check, oracle_for,
                            smoothed_density)
from bmckde.kernels import BOX, EPANECHNIKOV, GAUSSIAN, make_higher_order
from bmckde.models import FiniteBMC, GaussianBAR

STD = DensityOracle.gaussian(0.0, 1.0)


def test_oracle_sources():
    assert oracle_for(GaussianBAR.symmetric(0.5)).source == "gaussian"
    assert oracle_for(GaussianBAR(0.3, 0.6)).source == "grid"
    assert oracle_for(FiniteBMC.from_q([[0.7, 0.3], [0.4, 0.6]])).source == "stationary_vector"


@pytest.mark.parametrize("model", [GaussianBAR.symmetric(0.5), GaussianBAR(0.3, 0.6, 1.0, -1.0),
                                   FiniteBMC.from_q([[0.7, 0.3], [0.4, 0.6]])], ids=["sym", "asym", "finite"])
def test_oracle_is_a_probability(model):
    o = oracle_for(model)
    assert o.integral() == pytest.approx(1.0, abs=1e-6)
    assert (o.table()[:, 1] >= 0).all()


def test_smoothed_gaussian_closed_form():
    xs = np.linspace(-4, 4, 21)
    for h in (0.05, 0.5, 1.0):
        exact = stats.norm(0, np.sqrt(1 + h * h)).pdf(xs)
        np.testing.assert_allclose(smoothed_density(STD, GAUSSIAN, h, xs), exact, atol=1e-8)


def test_box_smoothing_is_window_average():
    o = oracle_for(GaussianBAR.symmetric(0.5))
    sd = np.sqrt(4 / 3)
    avg = (stats.norm.cdf(0.25 / sd) - stats.norm.cdf(-0.25 / sd)) / 0.5
    assert smoothed_density(o, BOX, 0.25, 0.0) == pytest.approx(avg, abs=1e-10)


def test_bias_closed_form():
    expected = 1 / np.sqrt(2 * np.pi * 1.25) - 1 / np.sqrt(2 * np.pi)
    assert bias(STD, GAUSSIAN, 0.5, 0.0) == pytest.approx(expected, abs=1e-10)
    assert bias(STD, GAUSSIAN, 0.5, 0.0) == pytest.approx(-0.042, abs=5e-4)


def test_bias_vanishes_on_flat_region():
    flat = DensityOracle("gaussian", lambda x: np.where(np.abs(x) <= 10, 0.05, 0.0), -10.0, 10.0, 0.0, 100 / 3)
    assert abs(bias(flat, EPANECHNIKOV, 0.1, 0.0)) < 1e-12


def test_bias_slope_order_one():
    slope = bias_slope(STD, GAUSSIAN, 0.0, 2.0 ** -np.arange(2, 7))
    assert 1.8 <= slope <= 2.2


def test_bias_slope_higher_order():
    # order-3 kernel removes the h^2 term, leaving h^4
    k = make_higher_order(GAUSSIAN, 3)
    slope = bias_slope(STD, k, 0.0, 2.0 ** -np.arange(1, 4))
    assert 3.7 <= slope <= 4.3


def test_bochner_check():
    errs = bochner_check(STD, GAUSSIAN, 0.0, 10)
    assert (np.diff(errs) < 0).all()
    assert errs[-1] <= 1e-3 and errs[-1] <= errs[0]
    assert bochner_check(STD, GAUSSIAN, 0.0, 0).shape == (1,)


@pytest.mark.parametrize("model", [GaussianBAR.symmetric(0.5), GaussianBAR(0.3, 0.6, 1.0, -1.0)], ids=["sym", "asym"])
def test_bochner_on_shipped_models(model):
    o = oracle_for(model)
    for k in (GAUSSIAN, EPANECHNIKOV):
        errs = bochner_check(o, k, o.mean, 10)
        assert errs[-1] <= errs[0] and errs[-1] <= 1e-3


def test_discrete_oracle_rejects_smoothing():
    o = oracle_for(FiniteBMC.from_q([[0.7, 0.3], [0.4, 0.6]]))
    with pytest.raises(NotContinuousError):
        bochner_check(o, GAUSSIAN, 0, 3)
    with pytest.raises(NotContinuousError):
        smoothed_density(o, GAUSSIAN, 0.5, 0.0)


def test_smoothed_density_matches_direct_quadrature_on_grid_oracle():
    o = oracle_for(GaussianBAR(0.3, 0.6, 1.0, -1.0))
    h, x = 0.3, 0.4
    y = np.linspace(o.lo, o.hi, 2_000_001)
    direct = integrate.trapezoid(GAUSSIAN((x - y) / h) / h * o(y), y)
    assert smoothed_density(o, GAUSSIAN, h, x) == pytest.approx(direct, abs=1e-8)


def test_to_csv(tmp_path):
    path = tmp_path / "mu.csv"
    STD.to_csv(path, xs=[0.0, 1.0])
    lines = path.read_text().splitlines()
    assert lines[0] == "x,mu" and len(lines) == 3
    assert float(lines[1].split(",")[1]) == pytest.approx(1 / np.sqrt(2 * np.pi))
