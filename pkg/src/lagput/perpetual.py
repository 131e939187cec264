"""Stationary (infinite-horizon) problem: characteristic roots, the boundary
equation l(x) = 0, and the explicit perpetual value u_infinity.

The stationary operator is

    Lt u = (sigma^2/2) u'' + (r - q - sigma^2/2) u' - r u,

whose characteristic quadratic has one positive and one negative root.  The
negative root lambda_minus shapes the left tail of the perpetual value; the
perpetual exercise boundary x_under is the unique zero of the algebraic
function l below, and the value itself pastes smoothly onto zero there.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import exp, sqrt

from .european import BracketError, _bisect, _expand_bracket, d_pair, norm_cdf, put_price
from .model import MarketParams


@dataclass(frozen=True)
class CharRoots:
    """Roots of (sigma^2/2) lam^2 + (r - q - sigma^2/2) lam - r = 0."""

    lambda_plus: float
    lambda_minus: float


def char_roots(params: MarketParams) -> CharRoots:
    """Both characteristic roots via the cancellation-free quadratic formula."""
    a = 0.5 * params.volatility ** 2
    b = params.rate - params.dividend - a
    c = -params.rate
    disc = sqrt(b * b - 4.0 * a * c)  # c < 0, so disc > |b|: roots straddle zero
    if b >= 0.0:
        s = -0.5 * (b + disc)
    else:
        s = -0.5 * (b - disc)
    r1, r2 = s / a, c / s
    return CharRoots(lambda_plus=max(r1, r2), lambda_minus=min(r1, r2))


def l_function(x: float, lag: float, params: MarketParams) -> float:
    """l(x) = lam_minus e^{-r*lag} N(-d2) + (1 - lam_minus) e^{x - q*lag} N(-d1).

    Negative deep in the money, positive far out of the money; its unique
    zero is the perpetual exercise boundary x_under.
    """
    if not lag > 0.0:
        raise ValueError(f"lag must be positive, got {lag}")
    lam_m = char_roots(params).lambda_minus
    d = d_pair(x, lag, params)
    return (
        lam_m * exp(-params.rate * lag) * norm_cdf(-d.d2)
        + (1.0 - lam_m) * exp(x - params.dividend * lag) * norm_cdf(-d.d1)
    )


@dataclass(frozen=True)
class PerpetualSolution:
    """Perpetual boundary x_under with the data needed to evaluate u_infinity."""

    x_under: float
    roots: CharRoots
    lag: float
    p_at_boundary: float


def find_x_under(lag: float, params: MarketParams, tol: float = 1e-12) -> PerpetualSolution:
    """Bracketed bisection root of l; checks x_under < x_bar afterwards."""
    from .european import find_x_bar  # local import keeps module load order simple

    if not tol > 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    f = lambda x: l_function(x, lag, params)
    lo, hi = _expand_bracket(f)
    x_under = _bisect(f, lo, hi, tol, f_tol=tol)
    x_bar = find_x_bar(lag, params, tol).x_bar
    if not x_under < x_bar:
        raise BracketError(
            f"perpetual boundary {x_under} did not fall below the theta zero "
            f"{x_bar}; numerics are inconsistent"
        )
    return PerpetualSolution(
        x_under=x_under,
        roots=char_roots(params),
        lag=lag,
        p_at_boundary=put_price(x_under, lag, params),
    )


def u_infinity(x: float, sol: PerpetualSolution, params: MarketParams) -> float:
    """Explicit perpetual value: p(x_under) e^{lam_minus (x - x_under)} - p(x) above
    the boundary, zero at and below it."""
    if x <= sol.x_under:
        return 0.0
    val = sol.p_at_boundary * exp(sol.roots.lambda_minus * (x - sol.x_under)) - put_price(
        x, sol.lag, params
    )
    # The formula is nonnegative; clip the last-ulp cancellation noise near the
    # boundary so downstream obstacle checks can rely on u_infinity >= 0.
    return max(val, 0.0)
