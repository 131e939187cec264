"""Closed-form European put, its Theta at the lag horizon, and the Theta zero.

Theta here is the running payoff of the decomposed lagged American put:
theta(x) = -d/dt P(t, x) evaluated with remaining life equal to the lag.
It is negative deep in the money, positive out of the money, and crosses
zero exactly once; the crossing x_bar is where the exercise boundary
terminates as tau -> 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import erfc, exp, pi, sqrt

from .model import MarketParams

_SQRT2 = sqrt(2.0)
_INV_SQRT_2PI = 1.0 / sqrt(2.0 * pi)

#: Hard search span in log-moneyness for all root brackets.  Beyond +-60 the
#: double-precision Gaussian tails are exactly 0/1 and every formula here is
#: constant, so a bracket that escapes this span signals bad parameters.
BRACKET_SPAN = 60.0


class BracketError(RuntimeError):
    """Raised when outward bracket expansion finds no sign change."""


def norm_cdf(d: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-d / _SQRT2)


def norm_pdf(d: float) -> float:
    """Standard normal density."""
    return _INV_SQRT_2PI * exp(-0.5 * d * d)


@dataclass(frozen=True)
class DPair:
    """The d1/d2 arguments of the Black-Scholes formulas; d2 = d1 - sigma*sqrt(life)."""

    d1: float
    d2: float


def d_pair(x: float, life: float, params: MarketParams) -> DPair:
    """d1 and d2 at log-moneyness x for the given remaining life (> 0)."""
    if not life > 0.0:
        raise ValueError(f"remaining life must be positive, got {life}")
    sig = params.volatility
    sq = sqrt(life)
    d1 = x / (sig * sq) + ((params.rate - params.dividend) / sig + 0.5 * sig) * sq
    return DPair(d1=d1, d2=d1 - sig * sq)


def put_price(x: float, life: float, params: MarketParams) -> float:
    """European put value at log-moneyness x with the given remaining life.

    At life = 0 this is the terminal payoff (K - K*e^x)^+.
    """
    if life < 0.0:
        raise ValueError(f"remaining life must be nonnegative, got {life}")
    K = params.strike
    if life == 0.0:
        return max(K * (1.0 - exp(x)), 0.0)
    d = d_pair(x, life, params)
    disc = exp(-params.rate * life)
    carry = exp(x - params.dividend * life)
    return K * disc * norm_cdf(-d.d2) - K * carry * norm_cdf(-d.d1)


def put_price_dx(x: float, life: float, params: MarketParams) -> float:
    """Derivative of put_price in x: -K e^{x - q*life} N(-d1)."""
    d = d_pair(x, life, params)
    return -params.strike * exp(x - params.dividend * life) * norm_cdf(-d.d1)


def theta(x: float, lag: float, params: MarketParams) -> float:
    """Negative time-derivative of the European put with remaining life = lag.

    theta(x) = q K e^{x-q*lag} N(-d1) + (sigma K / (2 sqrt(lag))) e^{-r*lag} N'(-d2)
               - r K e^{-r*lag} N(-d2)
    """
    if not lag > 0.0:
        raise ValueError(f"lag must be positive, got {lag}")
    K, r, q, sig = params.strike, params.rate, params.dividend, params.volatility
    d = d_pair(x, lag, params)
    disc = exp(-r * lag)
    return (
        q * K * exp(x - q * lag) * norm_cdf(-d.d1)
        + 0.5 * sig * K / sqrt(lag) * disc * norm_pdf(-d.d2)
        - r * K * disc * norm_cdf(-d.d2)
    )


@dataclass(frozen=True)
class ThetaProfile:
    """Location of the unique Theta zero for a given lag."""

    x_bar: float
    lag: float


def _expand_bracket(f, span_cap: float = BRACKET_SPAN) -> tuple[float, float]:
    # Double outward from x = 0 until f changes sign over [-s, s].
    s = 0.5
    f_lo, f_hi = f(-s), f(s)
    while f_lo * f_hi > 0.0:
        s *= 2.0
        if s > span_cap:
            raise BracketError(
                f"no sign change within [-{span_cap}, {span_cap}]; "
                "parameters look pathological"
            )
        f_lo, f_hi = f(-s), f(s)
    return -s, s


def _bisect(f, lo: float, hi: float, tol: float, f_tol: float = float("inf")) -> float:
    # Bisect until the bracket is narrower than tol AND the best evaluated
    # point has |f| <= f_tol; returns that best point.  The extra residual
    # criterion matters because tol is an x-tolerance while callers also
    # promise a bound on the root residual.
    f_lo, f_hi = f(lo), f(hi)
    if abs(f_lo) <= abs(f_hi):
        best_x, best_f = lo, abs(f_lo)
    else:
        best_x, best_f = hi, abs(f_hi)
    while hi - lo > tol or best_f > f_tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # interval is down to rounding resolution
        f_mid = f(mid)
        if abs(f_mid) <= best_f:
            best_x, best_f = mid, abs(f_mid)
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return best_x


def find_x_bar(lag: float, params: MarketParams, tol: float = 1e-12) -> ThetaProfile:
    """Locate x_bar, the unique zero crossing of theta, by bracketed bisection.

    The bisection formally runs on g(x) = theta(x) / N'(-d2), which is strictly
    increasing; since the denominator is positive, all sign tests are done on
    theta itself (identical signs, no tail underflow in the division).
    """
    if not tol > 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    f = lambda x: theta(x, lag, params)
    lo, hi = _expand_bracket(f)
    f_tol = tol * params.rate * params.strike
    return ThetaProfile(x_bar=_bisect(f, lo, hi, tol, f_tol=f_tol), lag=lag)
