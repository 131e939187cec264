"""Slow, trusted reference pricers.

Three independent machines live here:

* a recombining binomial lattice that prices the lagged put by backward
  induction on the modified obstacle (the European put with remaining life
  equal to the lag), plus the standard American put for comparison;
* an exhaustive enumeration of adapted stopping rules on tiny non-recombining
  trees, checked against the modified-obstacle dynamic program.  Equality of
  the two is the delivery-lag reduction itself, verified rule by rule;
* a quadrature evaluation of the European put that never touches the normal
  CDF, used to certify the closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import exp, log, pi, sqrt

import numpy as np
from scipy.special import roots_legendre

from .european import put_price
from .model import LagContract, MarketParams

# Deepest free-decision horizon the rule enumeration will attempt.  The number
# of adapted stopping rules on a depth-M binary tree satisfies
# R(M) = 1 + R(M-1)^2 with R(0) = 1 (stop at the root, or pick a rule pair for
# the children): 1, 2, 5, 26, 677, 458330, ... so M = 6 would already need
# ~2.1e11 rule evaluations.
MAX_ENUM_DEPTH = 5


class SizeGuardError(ValueError):
    """Raised when an enumeration request is too large to be exhaustive."""


# ---------------------------------------------------------------------------
# recombining lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Recombining binomial tree over a horizon, CRR parameterization."""

    n_steps: int
    dt: float
    up: float
    down: float
    p_up: float

    @classmethod
    def build(cls, params: MarketParams, horizon: float, n_steps: int) -> "Lattice":
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        if not horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        dt = horizon / n_steps
        up = exp(params.volatility * sqrt(dt))
        down = 1.0 / up
        growth = exp((params.rate - params.dividend) * dt)
        p_up = (growth - down) / (up - down)
        if not 0.0 < p_up < 1.0:
            raise ValueError(
                f"risk-neutral probability {p_up} outside (0,1); "
                "decrease dt (more steps)"
            )
        return cls(n_steps=n_steps, dt=dt, up=up, down=down, p_up=p_up)


def _lattice_american(
    params: MarketParams,
    horizon: float,
    n_steps: int,
    spot: float,
    exercise_of_x: "callable",
) -> float:
    # Backward induction where the exercise value depends on the stock only
    # through log-moneyness.  On a CRR tree every node's log-moneyness lies on
    # the ladder x0 + k*sigma*sqrt(dt), k = -n..n, so the exercise values are
    # precomputed once on that ladder and sliced per level.
    lat = Lattice.build(params, horizon, n_steps)
    n = lat.n_steps
    x0 = log(spot / params.strike)
    step = params.volatility * sqrt(lat.dt)
    ladder = x0 + step * np.arange(-n, n + 1)
    ex = np.array([exercise_of_x(x) for x in ladder])

    disc = exp(-params.rate * lat.dt)
    values = ex[n - n : n + n + 1 : 2].copy()  # level n: k = -n, -n+2, ..., n
    for i in range(n - 1, -1, -1):
        cont = disc * (lat.p_up * values[1:] + (1.0 - lat.p_up) * values[:-1])
        values = np.maximum(ex[n - i : n + i + 1 : 2], cont)
    return float(values[0])


def lattice_price_lagged(
    params: MarketParams, contract: LagContract, n_steps: int, spot: float
) -> float:
    """Lagged American put on a recombining tree over [0, T - lag].

    The exercise value at every node is the closed-form European put with
    remaining life equal to the lag; this is exactly the modified-obstacle
    problem that the delivery-lag reduction produces.
    """
    if n_steps < 50:
        raise ValueError(f"n_steps must be >= 50, got {n_steps}")
    if not spot > 0.0:
        raise ValueError(f"spot must be positive, got {spot}")
    lag = contract.lag
    if lag == 0.0:
        return lattice_price_standard(params, contract.maturity, n_steps, spot)
    return _lattice_american(
        params,
        contract.decision_horizon,
        n_steps,
        spot,
        lambda x: put_price(x, lag, params),
    )


def lattice_price_standard(
    params: MarketParams, maturity: float, n_steps: int, spot: float
) -> float:
    """Standard American put (obstacle (K - X)^+) on a recombining tree."""
    if n_steps < 50:
        raise ValueError(f"n_steps must be >= 50, got {n_steps}")
    if not spot > 0.0:
        raise ValueError(f"spot must be positive, got {spot}")
    K = params.strike
    return _lattice_american(
        params, maturity, n_steps, spot, lambda x: max(K * (1.0 - exp(x)), 0.0)
    )


# ---------------------------------------------------------------------------
# exhaustive stopping-rule enumeration on non-recombining trees
# ---------------------------------------------------------------------------
#
# Node addressing: the node reached after k moves is the k-bit integer whose
# bits, most significant first, record the moves (1 = up).  Children of (k, b)
# are (k+1, 2b) down and (k+1, 2b+1) up; the terminal paths extending (k, b)
# form the contiguous block [b * 2^(N-k), (b+1) * 2^(N-k)).

@dataclass(frozen=True)
class StoppingProblem:
    """Payoff data of a generic delivery-lag stopping problem on a binary tree.

    horizon N and lag d are step counts; a decision at step k <= N - d pays
    the node payoff S at step k + d (or the terminal value xi when k + d = N),
    and the running payoff f accrues at every step strictly before delivery.
    All cash amounts are per step; discounting applies e^{-r*dt} per step.

    terminal has 2^N entries; running[k] and payoff[k] have 2^k entries for
    k = 0..N-1.
    """

    horizon: int
    lag_steps: int
    discount_rate: float
    terminal: np.ndarray
    running: list = field(default_factory=list)
    payoff: list = field(default_factory=list)

    def __post_init__(self) -> None:
        n, d = self.horizon, self.lag_steps
        if n < 1:
            raise ValueError(f"horizon must be >= 1, got {n}")
        if not 0 <= d < n:
            raise ValueError(f"lag_steps must lie in [0, horizon), got {d}")
        object.__setattr__(self, "terminal", np.asarray(self.terminal, dtype=float))
        if self.terminal.shape != (2 ** n,):
            raise ValueError(f"terminal must have 2^{n} entries")
        for name in ("running", "payoff"):
            arrs = [np.asarray(a, dtype=float) for a in getattr(self, name)]
            if len(arrs) != n or any(arrs[k].shape != (2 ** k,) for k in range(n)):
                raise ValueError(f"{name} must hold arrays of sizes 2^0 .. 2^{n-1}")
            object.__setattr__(self, name, arrs)


def count_stopping_rules(depth: int) -> int:
    """Number of adapted stopping rules with `depth` free decision levels."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    count = 1
    for _ in range(depth):
        count = 1 + count * count
    return count


@dataclass(frozen=True)
class EquivalenceResult:
    enumerated: float
    dp: float
    n_rules: int


def _reach_probs(n: int, p_up: float) -> list:
    # probs[k][b] = probability of reaching node (k, b)
    probs = [np.array([1.0])]
    for _ in range(n):
        prev = probs[-1]
        nxt = np.empty(2 * prev.size)
        nxt[0::2] = (1.0 - p_up) * prev
        nxt[1::2] = p_up * prev
        probs.append(nxt)
    return probs


def _rule_values(weights: list, k: int, b: int, depth: int) -> np.ndarray:
    # All achievable sums of weights over antichains in the subtree at (k, b)
    # with `depth` free levels left: either stop here (one rule) or combine any
    # rule pair for the two children.
    if depth == 0:
        return np.zeros(1)
    left = _rule_values(weights, k + 1, 2 * b, depth - 1)
    right = _rule_values(weights, k + 1, 2 * b + 1, depth - 1)
    combined = (left[:, None] + right[None, :]).ravel()
    out = np.empty(combined.size + 1)
    out[0] = weights[k][b]
    out[1:] = combined
    return out


def enumerate_delay_equivalence(
    problem: StoppingProblem, tree: Lattice
) -> EquivalenceResult:
    """Value every adapted stopping rule exhaustively and run the DP; return both.

    The tree supplies the branch probability and step length; the problem
    supplies payoffs and the discount rate.  The enumeration is organized so
    that each rule's value is BASE + sum of per-node weights over its stop
    set, where BASE is the value of the never-stop-early rule; the full list
    of rule values is materialized (one entry per rule) and maximized.
    """
    n, d = problem.horizon, problem.lag_steps
    if tree.n_steps != n:
        raise ValueError(f"tree has {tree.n_steps} steps, problem horizon is {n}")
    free_depth = n - d  # decisions at steps 0..n-d-1 are free; step n-d is forced
    if free_depth > MAX_ENUM_DEPTH:
        raise SizeGuardError(
            f"{count_stopping_rules(free_depth)} stopping rules for horizon {n} "
            f"lag {d}; exhaustive enumeration supports horizon - lag <= {MAX_ENUM_DEPTH}"
        )

    p = tree.p_up
    gamma = np.exp(-problem.discount_rate * tree.dt * np.arange(n + 1))
    probs = _reach_probs(n, p)

    # Q[j][c]: over the subtree of node (j, c), the reach-probability-weighted
    # sum of minus all discounted running payoffs from step j on and minus the
    # discounted terminal value.
    q = -gamma[n] * probs[n] * problem.terminal
    q_by_step = {n: q}
    for j in range(n - 1, -1, -1):
        q = -gamma[j] * probs[j] * problem.running[j] + q.reshape(-1, 2).sum(axis=1)
        q_by_step[j] = q

    # Weight of marking node (k, b) as a stop: switch that subtree's paths from
    # the forced-stop payoff to delivery at step k + d.
    weights = []
    for k in range(free_depth):
        j = k + d  # delivery step; j < n because k < n - d
        z = gamma[j] * probs[j] * problem.payoff[j] + q_by_step[j]
        weights.append(z.reshape(2 ** k, -1).sum(axis=1))

    base = float(
        sum((gamma[j] * probs[j] * problem.running[j]).sum() for j in range(n))
        + gamma[n] * (probs[n] * problem.terminal).sum()
    )
    values = _rule_values(weights, 0, 0, free_depth)
    expected_rules = count_stopping_rules(free_depth)
    if values.size != expected_rules:
        raise AssertionError(
            f"enumerated {values.size} rules, expected {expected_rules}"
        )
    enumerated = base + float(values.max())

    return EquivalenceResult(
        enumerated=enumerated, dp=_dp_value(problem, tree), n_rules=int(values.size)
    )


def _delivery_value(problem: StoppingProblem, tree: Lattice, k: int) -> np.ndarray:
    # Modified obstacle at step k: expected discounted delivered payoff plus
    # running payoffs accrued on the way, conditional on each step-k node.
    n, d = problem.horizon, problem.lag_steps
    p, disc = tree.p_up, exp(-problem.discount_rate * tree.dt)
    j = k + d
    vals = problem.terminal if j == n else problem.payoff[j]
    vals = np.asarray(vals, dtype=float)
    for j2 in range(j - 1, k - 1, -1):
        vals = problem.running[j2] + disc * (p * vals[1::2] + (1.0 - p) * vals[0::2])
    return vals


def _dp_value(problem: StoppingProblem, tree: Lattice) -> float:
    # Snell envelope over the modified obstacle.
    n, d = problem.horizon, problem.lag_steps
    p, disc = tree.p_up, exp(-problem.discount_rate * tree.dt)
    last = n - d
    y = _delivery_value(problem, tree, last)
    for k in range(last - 1, -1, -1):
        cont = problem.running[k] + disc * (p * y[1::2] + (1.0 - p) * y[0::2])
        y = np.maximum(_delivery_value(problem, tree, k), cont)
    return float(y[0])


def put_stopping_problem(
    params: MarketParams, contract: LagContract, n_steps: int, spot: float
) -> tuple[StoppingProblem, Lattice]:
    """The lagged put itself as a StoppingProblem on a small non-recombining tree.

    Stock prices follow the CRR moves over [0, T]; stopping is allowed through
    step N - d where d is the lag in whole steps (the lag must be an exact
    multiple of the step length).
    """
    tree = Lattice.build(params, contract.maturity, n_steps)
    d_float = contract.lag / tree.dt
    d = round(d_float)
    if abs(d_float - d) > 1e-9:
        raise ValueError(
            f"lag {contract.lag} is not a whole number of steps (dt={tree.dt})"
        )
    K = params.strike
    n = n_steps

    def stock(k: int, b: int) -> float:
        ups = bin(b).count("1")
        return spot * tree.up ** ups * tree.down ** (k - ups)

    payoff = [
        np.array([max(K - stock(k, b), 0.0) for b in range(2 ** k)])
        for k in range(n)
    ]
    running = [np.zeros(2 ** k) for k in range(n)]
    terminal = np.array([max(K - stock(n, b), 0.0) for b in range(2 ** n)])
    problem = StoppingProblem(
        horizon=n,
        lag_steps=d,
        discount_rate=params.rate,
        terminal=terminal,
        running=running,
        payoff=payoff,
    )
    return problem, tree


# ---------------------------------------------------------------------------
# quadrature European put
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = roots_legendre(64)
_Z_CUT = 40.0  # the Gaussian density underflows well before |z| = 40


def quad_european_put(params: MarketParams, life: float, spot: float) -> float:
    """European put by direct quadrature of the discounted lognormal expectation.

    Integrates (K - spot*e^{mu + nu z}) against the standard normal density
    over the region where the payoff is positive, using 64-point
    Gauss-Legendre panels of unit width (the integrand is analytic there, so
    each panel is exact to machine precision).  No normal-CDF evaluation is
    involved anywhere, which keeps this a genuinely independent check of the
    closed form.
    """
    if not life > 0.0:
        raise ValueError(f"life must be positive, got {life}")
    if not spot > 0.0:
        raise ValueError(f"spot must be positive, got {spot}")
    K, r, q, sig = params.strike, params.rate, params.dividend, params.volatility
    mu = (r - q - 0.5 * sig * sig) * life
    nu = sig * sqrt(life)
    z_kink = (log(K / spot) - mu) / nu
    hi = min(z_kink, _Z_CUT)
    lo = -_Z_CUT
    if hi <= lo:
        return 0.0
    n_panels = max(1, int(np.ceil(hi - lo)))
    edges = np.linspace(lo, hi, n_panels + 1)
    inv_sqrt_2pi = 1.0 / sqrt(2.0 * pi)
    total = 0.0
    for j in range(n_panels):
        a, b = edges[j], edges[j + 1]
        z = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
        f = (K - spot * np.exp(mu + nu * z)) * inv_sqrt_2pi * np.exp(-0.5 * z * z)
        total += 0.5 * (b - a) * float(np.dot(_GL_WEIGHTS, f))
    return exp(-r * life) * total
