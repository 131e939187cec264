import math

import numpy as np
import pytest
from scipy.integrate import quad

from lagput import MarketParams, d_pair, find_x_bar, norm_cdf, norm_pdf, put_price, put_price_dx, theta
from lagput.european import BracketError, _expand_bracket

DEFAULT = MarketParams(strike=100.0, rate=0.05, dividend=0.02, volatility=0.2)

# 40-digit bisection/evaluation values, used as frozen ground truth below.
N_196 = 0.97500210485177956586
PUT_0_1 = 6.3300806275499182313
PUT_M03_05 = 24.283585226059279908
THETA_0_025 = 6.3535996219793042447
X_BAR_025 = -0.14201354949419000629


def test_norm_cdf_basics():
    assert norm_cdf(0.0) == 0.5
    assert 0.0 <= norm_cdf(-38.0) < 1e-300  # underflow regime
    assert norm_cdf(38.0) == 1.0
    assert norm_cdf(1.96) == pytest.approx(N_196, abs=1e-15)


def test_norm_cdf_against_adaptive_quadrature():
    # independent oracle: adaptive quadrature of the Gaussian density.
    # Integrate from 0 (where the cdf is exactly 1/2) so the quadrature
    # error estimate stays tight.
    for d in [-2.5, -0.7, 0.3, 1.96, 3.1]:
        val, err = quad(lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi), 0.0, d, limit=200)
        assert err < 1e-12
        assert norm_cdf(d) == pytest.approx(0.5 + val, abs=1e-13)


def test_norm_cdf_symmetry_and_monotonicity():
    rng = np.random.default_rng(11)
    ds = rng.uniform(-8, 8, 200)
    for d in ds:
        assert norm_cdf(d) + norm_cdf(-d) == pytest.approx(1.0, abs=1e-15)
    grid = np.sort(ds)
    vals = [norm_cdf(d) for d in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_norm_pdf():
    assert norm_pdf(0.0) == pytest.approx(0.39894228040143267794, abs=1e-16)
    rng = np.random.default_rng(12)
    for d in rng.uniform(-6, 6, 50):
        assert norm_pdf(d) == norm_pdf(-d)
    # trapezoid mass check
    grid = np.linspace(-12, 12, 40001)
    mass = np.trapezoid([norm_pdf(g) for g in grid], grid)
    assert mass == pytest.approx(1.0, abs=1e-9)


def test_d_pair():
    with pytest.raises(ValueError):
        d_pair(0.0, 0.0, DEFAULT)
    with pytest.raises(ValueError):
        d_pair(0.0, -1.0, DEFAULT)

    d = d_pair(0.0, 1.0, DEFAULT)
    # x = 0, life = 1: d1 = (r - q)/sigma + sigma/2, d2 = d1 - sigma
    assert d.d1 == pytest.approx(0.25, abs=1e-15)
    assert d.d2 == pytest.approx(0.05, abs=1e-15)

    rng = np.random.default_rng(13)
    for _ in range(100):
        x = rng.uniform(-2, 2)
        life = rng.uniform(0.01, 3.0)
        d = d_pair(x, life, DEFAULT)
        assert d.d2 == pytest.approx(d.d1 - 0.2 * math.sqrt(life), abs=1e-13)
        # discounted-density identity behind every Theta simplification
        lhs = math.exp(-0.05 * life) * norm_pdf(-d.d2)
        rhs = math.exp(x - 0.02 * life) * norm_pdf(-d.d1)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_put_price_terminal_and_tails():
    assert put_price(-0.5, 0.0, DEFAULT) == pytest.approx(100.0 * (1 - math.exp(-0.5)), abs=1e-12)
    assert put_price(0.3, 0.0, DEFAULT) == 0.0
    with pytest.raises(ValueError):
        put_price(0.0, -0.1, DEFAULT)
    # deep in the money the put is worth the discounted strike
    for life in [0.1, 0.5, 2.0]:
        assert put_price(-30.0, life, DEFAULT) == pytest.approx(
            100.0 * math.exp(-0.05 * life), abs=1e-10
        )


def test_put_price_frozen_values():
    assert put_price(0.0, 1.0, DEFAULT) == pytest.approx(PUT_0_1, abs=1e-12)
    assert put_price(-0.3, 0.5, DEFAULT) == pytest.approx(PUT_M03_05, abs=1e-12)


def test_put_price_bounds():
    rng = np.random.default_rng(14)
    for _ in range(200):
        x = rng.uniform(-5, 5)
        life = rng.uniform(0.0, 3.0)
        v = put_price(x, life, DEFAULT)
        assert 0.0 <= v <= 100.0 * math.exp(-0.05 * life) + 1e-12


def test_put_price_dx_matches_differences():
    rng = np.random.default_rng(15)
    h = 1e-5
    for _ in range(30):
        x = rng.uniform(-1.5, 1.5)
        life = rng.uniform(0.05, 2.0)
        fd = (put_price(x + h, life, DEFAULT) - put_price(x - h, life, DEFAULT)) / (2 * h)
        assert put_price_dx(x, life, DEFAULT) == pytest.approx(fd, abs=5e-6)


def test_theta_frozen_value_and_domain():
    with pytest.raises(ValueError):
        theta(0.0, 0.0, DEFAULT)
    assert theta(0.0, 0.25, DEFAULT) == pytest.approx(THETA_0_025, abs=1e-12)


def test_theta_deep_left_limit():
    for lag in [0.1, 0.25, 0.5]:
        limit = -0.05 * 100.0 * math.exp(-0.05 * lag)
        assert abs(theta(-30.0, lag, DEFAULT) - limit) <= 1e-10 * 100.0


def test_theta_matches_life_derivative_of_put():
    # theta = -d/dt P = +d/dlife P; central differences must converge at
    # second order in the step
    rng = np.random.default_rng(16)
    pts = [(rng.uniform(-1.0, 1.0), rng.uniform(0.1, 0.8)) for _ in range(10)]
    h1, h2 = 1e-3, 5e-4
    for x, lag in pts:
        fd = lambda h: (put_price(x, lag + h, DEFAULT) - put_price(x, lag - h, DEFAULT)) / (2 * h)
        e1 = abs(fd(h1) - theta(x, lag, DEFAULT))
        e2 = abs(fd(h2) - theta(x, lag, DEFAULT))
        assert e1 <= 1e-4
        # ratio ~4 for a second-order difference; allow slack for tiny errors
        if e1 > 1e-10:
            assert e1 / e2 > 3.0


def test_theta_small_lag_limit_monotone():
    x = -0.3
    limit = 0.02 * 100.0 * math.exp(x) - 0.05 * 100.0
    gaps = [abs(theta(x, lag, DEFAULT) - limit) for lag in (0.2, 0.1, 0.05, 0.025)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.006


def test_gaussian_tail_bounds():
    # N'(-d)/(d + 1/d) <= N(-d) <= N'(-d)/d for every d > 0
    ds = np.linspace(0.01, 10.0, 1000)
    for d in ds:
        nd = norm_cdf(-d)
        pd = norm_pdf(-d)
        assert nd <= pd / d
        assert nd >= pd / (d + 1.0 / d)


def test_theta_sign_structure():
    lag = 0.25
    xs = np.arange(-60.0, 60.0 + 1e-12, 0.01)
    signs = np.sign([theta(float(x), lag, DEFAULT) for x in xs])
    # drop exact zeros (none expected on this grid) then count sign flips
    nz = signs[signs != 0]
    flips = np.sum(nz[1:] != nz[:-1])
    assert flips == 1

    x_bar = find_x_bar(lag, DEFAULT).x_bar
    assert theta(x_bar - 0.1, lag, DEFAULT) < 0.0
    assert theta(x_bar + 0.1, lag, DEFAULT) > 0.0


def test_theta_over_density_strictly_increasing():
    lag = 0.25
    x_bar = find_x_bar(lag, DEFAULT).x_bar
    xs = np.linspace(x_bar - 2.0, x_bar + 2.0, 1000)
    vals = []
    for x in xs:
        d = d_pair(float(x), lag, DEFAULT)
        vals.append(theta(float(x), lag, DEFAULT) / norm_pdf(-d.d2))
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_find_x_bar():
    prof = find_x_bar(0.25, DEFAULT, tol=1e-12)
    assert prof.lag == 0.25
    assert prof.x_bar == pytest.approx(X_BAR_025, abs=1e-11)
    # residual contract: |theta(x_bar)| <= tol * r * K
    assert abs(theta(prof.x_bar, 0.25, DEFAULT)) <= 1e-12 * 0.05 * 100.0


def test_bracket_expansion_failure():
    with pytest.raises(BracketError):
        _expand_bracket(lambda x: 1.0)
