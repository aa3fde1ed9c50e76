import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from stdgmrf.errors import InvalidInput, Undefined
from stdgmrf.metrics import MetricReport, crps_gaussian, mean_crps, rmse, stencil_pearson


def crps_by_integration(mu, sigma, y):
    """CRPS as the integral of (F(x) - 1{x >= y})^2, split at y."""
    f = lambda x: norm.cdf(x, mu, sigma)
    below, _ = quad(lambda x: f(x) ** 2, -np.inf, y)
    above, _ = quad(lambda x: (1 - f(x)) ** 2, y, np.inf)
    return below + above


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(np.sqrt(2.0))
    assert rmse(np.ones(3), np.ones(3)) == 0.0
    a = np.array([[0.0, 5.0], [3.0, 9.0]])
    b = np.zeros((2, 2))
    assert rmse(a, b, np.array([[True, False], [True, False]])) == pytest.approx(np.sqrt(4.5))
    assert rmse(a, b, (np.array([1]), np.array([1]))) == pytest.approx(9.0)


def test_rmse_empty():
    with pytest.raises(InvalidInput):
        rmse(np.ones(3), np.ones(3), np.zeros(3, bool))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
def test_rmse_matches_two_pass(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, n))
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    assert rmse(a, b) == pytest.approx(np.sqrt(total / n), rel=1e-12)


def test_crps_standard_normal_at_mean():
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.233700, abs=1e-5)
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(crps_by_integration(0.0, 1.0, 0.0), abs=1e-8)


@pytest.mark.parametrize("mu,sigma,y", [(0.0, 1.0, 1.3), (2.0, 0.5, 1.0), (-1.0, 3.0, 4.0)])
def test_crps_matches_integral(mu, sigma, y):
    assert crps_gaussian(mu, sigma, y) == pytest.approx(crps_by_integration(mu, sigma, y), abs=1e-8)


def test_crps_point_mass():
    assert crps_gaussian(1.0, 0.0, 3.5) == 2.5


def test_crps_negative_sigma():
    with pytest.raises(InvalidInput):
        crps_gaussian(0.0, -1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(mu=st.floats(-50, 50), sigma=st.floats(0, 20), y=st.floats(-50, 50), shift=st.floats(-50, 50))
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_crps_nonnegative_and_translation_invariant(mu, sigma, y, shift):
    c = crps_gaussian(mu, sigma, y)
    assert c >= 0
    assert crps_gaussian(mu + shift, sigma, y + shift) == pytest.approx(c, rel=1e-9, abs=1e-9)


def test_mean_crps_vectorised():
    mu = np.zeros((2, 3))
    sd = np.ones((2, 3))
    y = np.zeros((2, 3))
    assert mean_crps(mu, sd, y) == pytest.approx(0.233700, abs=1e-5)
    with pytest.raises(InvalidInput):
        mean_crps(mu, sd, y, np.zeros((2, 3), bool))


def test_stencil_pearson_examples():
    s = {(0, 0): 0.96, (1, 0): 0.16, (-1, 0): -0.14, (0, 1): -0.14, (0, -1): 0.16}
    assert stencil_pearson(s, s) == pytest.approx(1.0)
    scaled = {k: 2 * v + 1 for k, v in s.items()}
    assert stencil_pearson(scaled, s) == pytest.approx(1.0)
    flipped = {k: -v for k, v in s.items()}
    assert stencil_pearson(flipped, s) == pytest.approx(-1.0)


def test_stencil_pearson_missing_keys_are_zero():
    a = {(0, 0): 1.0, (1, 0): 0.5}
    b = {(0, 0): 1.0, (0, 1): 0.5}
    x = np.array([1.0, 0.0, 0.5])
    y = np.array([1.0, 0.5, 0.0])
    assert stencil_pearson(a, b) == pytest.approx(np.corrcoef(x, y)[0, 1])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_stencil_pearson_matches_naive(seed):
    rng = np.random.default_rng(seed)
    keys = [(dx, dy) for dx in range(-2, 3) for dy in range(-2, 3) if abs(dx) + abs(dy) <= 2]
    a = {k: rng.normal() for k in keys}
    b = {k: rng.normal() for k in keys}
    x = np.array([a[k] for k in keys])
    y = np.array([b[k] for k in keys])
    n = len(keys)
    mx, my = sum(x) / n, sum(y) / n
    num = sum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    den = np.sqrt(sum((xi - mx) ** 2 for xi in x) * sum((yi - my) ** 2 for yi in y))
    assert stencil_pearson(a, b) == pytest.approx(num / den, abs=1e-12)


def test_stencil_pearson_constant_undefined():
    with pytest.raises(Undefined):
        stencil_pearson({(0, 0): 1.0, (1, 0): 1.0}, {(0, 0): 0.3, (1, 0): 0.1})


def test_report_to_dict():
    rep = MetricReport(0.1, 0.2, 0.3, 0.9, {"w": 9}, 1)
    assert rep.to_dict() == {"rmse_mu": 0.1, "rmse_sigma": 0.2, "crps": 0.3, "stencil_pearson": 0.9,
                             "config": {"w": 9}, "seed": 1}
