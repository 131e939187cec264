import math

import numpy as np
import pytest

from lagput import (
    MarketParams,
    char_roots,
    find_x_bar,
    find_x_under,
    l_function,
    put_price,
    put_price_dx,
    theta,
    u_infinity,
)

DEFAULT = MarketParams(strike=100.0, rate=0.05, dividend=0.02, volatility=0.2)

# 40-digit reference values for the default parameters, lag 0.25
LAMBDA_PLUS = 1.3507810593582121716
LAMBDA_MINUS = -1.8507810593582121716
X_UNDER_025 = -0.4394817042467007521
P_AT_BOUNDARY = 34.642143315549572095
THETA_AT_X_UNDER = -3.6549954803784403527
GROWTH_CONST = 91.374887009461008818  # -theta(x_under)/sigma^2
U_INF = {-0.2: 4.8530420562599092168, 0.0: 11.766350644583412755,
         0.5: 6.0878558190638055061, 1.0: 2.4130837220081101382}


def _random_params(rng):
    sig = rng.uniform(0.1, 0.5)
    r = rng.uniform(0.01, 0.12)
    q = rng.uniform(0.0, 0.9) * r
    return MarketParams(strike=rng.uniform(10.0, 500.0), rate=r, dividend=q, volatility=sig)


def test_char_roots_default():
    roots = char_roots(DEFAULT)
    assert roots.lambda_plus == pytest.approx(LAMBDA_PLUS, abs=1e-14)
    assert roots.lambda_minus == pytest.approx(LAMBDA_MINUS, abs=1e-14)


def test_char_roots_properties():
    rng = np.random.default_rng(21)
    for _ in range(100):
        p = _random_params(rng)
        roots = char_roots(p)
        a = 0.5 * p.volatility ** 2
        b = p.rate - p.dividend - a
        assert roots.lambda_plus > 0.0 > roots.lambda_minus
        # Vieta: product of roots = c/a = -2r/sigma^2
        assert roots.lambda_plus * roots.lambda_minus == pytest.approx(
            -2.0 * p.rate / p.volatility ** 2, rel=1e-12
        )
        for lam in (roots.lambda_plus, roots.lambda_minus):
            resid = a * lam * lam + b * lam - p.rate
            assert abs(resid) <= 1e-12 * p.rate * max(1.0, lam * lam)


def test_l_function_tails():
    lag = 0.25
    lam_m = char_roots(DEFAULT).lambda_minus
    deep = l_function(-30.0, lag, DEFAULT)
    assert deep == pytest.approx(lam_m * math.exp(-0.05 * lag), abs=1e-10)
    assert deep < 0.0
    # Right tail: positive while the normal cdfs still carry mass.  Past
    # x ~ 3.8 (at these parameters) both cdf factors underflow to zero in
    # double precision, so the stated form returns exactly 0 there.
    assert l_function(3.0, lag, DEFAULT) > 0.0
    assert l_function(30.0, lag, DEFAULT) == 0.0
    with pytest.raises(ValueError):
        l_function(0.0, 0.0, DEFAULT)


def test_l_function_single_sign_change():
    lag = 0.25
    xs = np.arange(-60.0, 60.0 + 1e-12, 0.01)
    vals = np.array([l_function(float(x), lag, DEFAULT) for x in xs])
    # Treat subnormal residue from cdf underflow (|l| < 1e-250) as zero:
    # at x ~ 3.84 the two underflowing terms can differ by one quantum.
    vals[np.abs(vals) < 1e-250] = 0.0
    signs = np.sign(vals)
    nz = signs[signs != 0]
    assert np.sum(nz[1:] != nz[:-1]) == 1


def test_find_x_under():
    sol = find_x_under(0.25, DEFAULT, tol=1e-12)
    assert sol.x_under == pytest.approx(X_UNDER_025, abs=1e-11)
    assert abs(l_function(sol.x_under, 0.25, DEFAULT)) <= 1e-12
    assert sol.p_at_boundary == pytest.approx(P_AT_BOUNDARY, abs=1e-9)
    x_bar = find_x_bar(0.25, DEFAULT).x_bar
    assert sol.x_under < x_bar


def test_smooth_pasting_identity():
    # lambda_minus * p(x_under) equals p'(x_under); equivalent to l(x_under) = 0
    sol = find_x_under(0.25, DEFAULT)
    lhs = sol.roots.lambda_minus * sol.p_at_boundary
    rhs = put_price_dx(sol.x_under, 0.25, DEFAULT)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_u_infinity_values():
    sol = find_x_under(0.25, DEFAULT)
    assert u_infinity(sol.x_under, sol, DEFAULT) == 0.0
    assert u_infinity(sol.x_under - 1.0, sol, DEFAULT) == 0.0
    for x, expect in U_INF.items():
        assert u_infinity(x, sol, DEFAULT) == pytest.approx(expect, abs=1e-8)
    x_bar = find_x_bar(0.25, DEFAULT).x_bar
    assert u_infinity(x_bar, sol, DEFAULT) == pytest.approx(7.1649842680604066, abs=1e-8)


def test_u_infinity_positive_and_decaying():
    sol = find_x_under(0.25, DEFAULT)
    for x in np.linspace(sol.x_under + 1e-3, sol.x_under + 5.0, 200):
        assert u_infinity(float(x), sol, DEFAULT) > 0.0
    assert u_infinity(20.0, sol, DEFAULT) <= 1e-12


def test_u_infinity_smooth_pasting_derivative():
    sol = find_x_under(0.25, DEFAULT)
    fds = []
    for h in (1e-3, 1e-4, 1e-5):
        fds.append((u_infinity(sol.x_under + h, sol, DEFAULT) - 0.0) / h)
    assert abs(fds[1]) < abs(fds[0])
    assert abs(fds[2]) < abs(fds[1])
    assert abs(fds[2]) < 2e-3


def test_u_infinity_solves_stationary_equation():
    # -Lt u_inf = theta on the continuation side, via 4th-order differences
    sol = find_x_under(0.25, DEFAULT)
    a = 0.5 * DEFAULT.volatility ** 2
    b = DEFAULT.rate - DEFAULT.dividend - a
    r = DEFAULT.rate

    def residual(x, h):
        u = lambda z: u_infinity(z, sol, DEFAULT)
        d1 = (u(x - 2 * h) - 8 * u(x - h) + 8 * u(x + h) - u(x + 2 * h)) / (12 * h)
        d2 = (-u(x - 2 * h) + 16 * u(x - h) - 30 * u(x) + 16 * u(x + h) - u(x + 2 * h)) / (
            12 * h * h
        )
        lt = a * d2 + b * d1 - r * u(x)
        return -lt - theta(x, 0.25, DEFAULT)

    xs = np.linspace(sol.x_under + 0.1, sol.x_under + 4.0, 50)
    res_h = max(abs(residual(float(x), 0.02)) for x in xs)
    res_h2 = max(abs(residual(float(x), 0.01)) for x in xs)
    # The solution has large high derivatives near the boundary (the cdf
    # arguments scale like 1/(sigma*sqrt(lag))), so absolute levels are
    # modest; the order of convergence is the real check.
    assert res_h2 <= 5e-5
    assert res_h / res_h2 > 8.0  # 4th-order stencil: expect ~16


def test_quadratic_growth_at_boundary():
    sol = find_x_under(0.25, DEFAULT)
    assert theta(sol.x_under, 0.25, DEFAULT) == pytest.approx(THETA_AT_X_UNDER, abs=1e-9)
    for h in (1e-2, 1e-3, 1e-4):
        ratio = u_infinity(sol.x_under + h, sol, DEFAULT) / (h * h)
        assert ratio == pytest.approx(GROWTH_CONST, rel=0.05)
