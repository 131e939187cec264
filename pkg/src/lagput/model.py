"""Market and contract data plus the log-moneyness change of variables.

Everything downstream works in the transformed coordinates

    x = ln(X / K),    tau = T - lag - t,

where t is calendar time and X the stock price, so that the pricing
problems become forward-in-tau obstacle problems on a fixed x-grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import exp, log


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market constants.

    Parameters
    ----------
    strike : float
        Strike K > 0, currency units.
    rate : float
        Continuously compounded interest rate r > 0 per year.
    dividend : float
        Continuous dividend yield q with 0 <= q < r.
    volatility : float
        Lognormal volatility sigma > 0 per sqrt-year.
    """

    strike: float
    rate: float
    dividend: float
    volatility: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "strike", float(self.strike))
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "dividend", float(self.dividend))
        object.__setattr__(self, "volatility", float(self.volatility))
        if not self.strike > 0.0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if not self.volatility > 0.0:
            raise ValueError(f"volatility must be positive, got {self.volatility}")
        if not self.rate > 0.0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if self.dividend < 0.0:
            raise ValueError(f"dividend must be nonnegative, got {self.dividend}")
        if not self.dividend < self.rate:
            raise ValueError(
                f"dividend {self.dividend} must be strictly below rate {self.rate}"
            )


@dataclass(frozen=True)
class LagContract:
    """Maturity T and delivery lag of the make-your-mind-up put.

    The exercise decision must be made no later than T - lag; the payoff
    is delivered `lag` years after the decision.
    """

    maturity: float
    lag: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "maturity", float(self.maturity))
        object.__setattr__(self, "lag", float(self.lag))
        if not self.maturity > 0.0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")
        if self.lag < 0.0 or self.lag >= self.maturity:
            raise ValueError(
                f"lag must lie in [0, maturity), got lag={self.lag} "
                f"maturity={self.maturity}"
            )

    @property
    def decision_horizon(self) -> float:
        """Length T - lag of the decision window."""
        return self.maturity - self.lag


@dataclass(frozen=True)
class LogCoords:
    """A point (x, tau) in log-moneyness / remaining-decision-time coordinates."""

    x: float
    tau: float


def to_log(t: float, stock: float, params: MarketParams, contract: LagContract) -> LogCoords:
    """Map calendar time and stock price to (x, tau).

    Requires stock > 0 and 0 <= t <= T - lag (the decision window).
    """
    if not stock > 0.0:
        raise ValueError(f"stock price must be positive, got {stock}")
    horizon = contract.decision_horizon
    if t < 0.0 or t > horizon:
        raise ValueError(f"t={t} outside the decision window [0, {horizon}]")
    return LogCoords(x=log(stock / params.strike), tau=horizon - t)


def from_log(coords: LogCoords, params: MarketParams, contract: LagContract) -> tuple[float, float]:
    """Inverse of to_log: returns (t, stock) = (T - lag - tau, K*e^x)."""
    return contract.decision_horizon - coords.tau, params.strike * exp(coords.x)
