"""Finite-difference engine for the delivery-lag put.

Solves the parabolic obstacle problems (premium form, lagged value form,
and the plain American put), the stationary obstacle problem, extracts
exercise boundaries, evaluates the early-exercise premium integral, and
runs the three verification studies (lag monotonicity, small-lag boundary
convergence, large-maturity relaxation).

Space is log-moneyness x, time is the reversed clock tau measured from the
decision horizon.  The spatial operator throughout is

    L u = a u_xx + b u_x - r u,    a = sigma^2 / 2,  b = r - q - a,

discretized with central differences on a uniform grid.  Time stepping is
Crank-Nicolson with a Rannacher start (two implicit-Euler half steps), and
each implicit system with its obstacle constraint is solved by projected
SOR with a complementarity-residual stopping rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from numba import njit

from .european import find_x_bar, norm_cdf, put_price, theta
from .model import LagContract, MarketParams
from .perpetual import char_roots, find_x_under, u_infinity


class SolverError(RuntimeError):
    """PSOR non-convergence or a structurally broken surface/boundary."""


# ---------------------------------------------------------------------------
# grid and result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsorOptions:
    """Projected-SOR settings: relaxation factor, residual tolerance, cap."""

    omega: float = 1.5
    tol: float = 1e-9
    max_iter: int = 10_000


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid in (tau, x).

    Parameters
    ----------
    x_min, x_max : float
        Log-moneyness span.  Boundary nodes sit exactly at the ends; the
        ``nx`` interior nodes are spaced ``h = (x_max - x_min) / (nx + 1)``
        apart.  Solvers additionally require the span to bracket the
        exercise boundary with margin (left edge at least 1 below the
        perpetual boundary, right edge at least 3 above the boundary start).
    nx : int
        Interior node count, at least 50.
    tau_max : float
        Time horizon; for the lagged problems this is maturity minus lag.
    nt : int
        Time-step count, at least 50.
    """

    x_min: float
    x_max: float
    nx: int
    tau_max: float
    nt: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "tau_max", float(self.tau_max))
        object.__setattr__(self, "nt", int(self.nt))
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if self.nx < 50:
            raise ValueError("need at least 50 interior space nodes")
        if self.nt < 50:
            raise ValueError("need at least 50 time steps")
        if self.tau_max <= 0.0:
            raise ValueError("tau_max must be positive")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.nx + 1)

    @property
    def dt(self) -> float:
        return self.tau_max / self.nt

    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx + 2)

    def tau_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.tau_max, self.nt + 1)


@dataclass(frozen=True)
class Surface:
    """Solved value surface with its convergence certificate.

    ``values[k][i]`` is the solution at time level ``k`` (tau = k * dt)
    and space node ``i`` (x = x_min + i * h), boundary nodes included.
    ``obstacle`` is the constraint the solution was projected onto, so
    ``values - obstacle`` is the quantity whose positivity marks the
    continuation region.  ``psor_iters`` / ``psor_residuals`` record, per
    time level, the sweep count and the final diagonal-scaled
    complementarity residual.  ``x_floor`` and ``x_ceiling`` bracket where
    the exercise boundary is expected to live (perpetual level and start
    level); extraction validates against them.  ``growth`` maps log
    moneyness to the analytic quadratic-growth constant of the solution
    above its obstacle at the free edge; sub-cell refinement leans on it.
    """

    grid: Grid
    values: np.ndarray
    obstacle: np.ndarray
    psor_iters: np.ndarray
    psor_residuals: np.ndarray
    x_floor: float
    x_ceiling: float
    psor_tol: float
    growth: Callable[[float], float]


@dataclass(frozen=True)
class Boundary:
    """Sampled exercise boundary: ``xs[j]`` at time ``taus[j]``."""

    taus: np.ndarray
    xs: np.ndarray


@dataclass(frozen=True)
class CheckResult:
    """One study assertion: worst measured violation against its budget."""

    name: str
    passed: bool
    worst: float
    tolerance: float
    location: str


@dataclass(frozen=True)
class StudyReport:
    """Aggregate pass/fail for a study plus the individual check results."""

    study: str
    passed: bool
    checks: tuple[CheckResult, ...]


# ---------------------------------------------------------------------------
# PSOR kernel
# ---------------------------------------------------------------------------


@njit(cache=True)
def _psor(diag, lo_c, up_c, rhs, psi, u, omega, tol, max_iter):
    """Projected SOR on a constant-coefficient tridiagonal system.

    Solves A u = rhs subject to u >= psi, where A has constant diagonal
    ``diag`` and off-diagonals ``lo_c`` / ``up_c`` (boundary couplings
    already folded into ``rhs``).  Sweeps are lexicographic; the stopping
    rule is the diagonal-scaled complementarity residual
    max_i |min(u_i - psi_i, (A u - rhs)_i / diag)| <= tol.
    Returns (sweeps, residual); sweeps == -1 flags non-convergence.
    """
    n = u.shape[0]
    res = 0.0
    for it in range(1, max_iter + 1):
        for i in range(n):
            left = u[i - 1] if i > 0 else 0.0
            right = u[i + 1] if i < n - 1 else 0.0
            gs = (rhs[i] - lo_c * left - up_c * right) / diag
            cand = u[i] + omega * (gs - u[i])
            u[i] = cand if cand > psi[i] else psi[i]
        res = 0.0
        for i in range(n):
            left = u[i - 1] if i > 0 else 0.0
            right = u[i + 1] if i < n - 1 else 0.0
            scaled = (diag * u[i] + lo_c * left + up_c * right - rhs[i]) / diag
            slack = u[i] - psi[i]
            m = slack if slack < scaled else scaled
            if m < 0.0:
                m = -m
            if m > res:
                res = m
        if res <= tol:
            return it, res
    return -1, res


# ---------------------------------------------------------------------------
# parabolic march
# ---------------------------------------------------------------------------


def _march(params, grid, obstacle, init, source, bc_left, bc_right, opts):
    """Crank-Nicolson march with Rannacher start-up.

    ``obstacle`` and ``init`` cover all nodes; ``source`` covers interior
    nodes and is time-independent.  ``bc_left`` / ``bc_right`` map tau to
    the Dirichlet values.  Returns (values, iters, residuals).
    """
    a = 0.5 * params.volatility**2
    b = params.rate - params.dividend - a
    r = params.rate
    h, dt = grid.h, grid.dt
    alpha = a / (h * h)
    beta = b / (2.0 * h)
    nx, nt = grid.nx, grid.nt

    values = np.empty((nt + 1, nx + 2))
    values[0] = init
    iters = np.zeros(nt, dtype=np.int64)
    residuals = np.zeros(nt)
    psi = np.ascontiguousarray(obstacle[1:-1])

    def substep(full_old, w, s, tau_new, warm):
        inner_old = full_old[1:-1]
        diag = 1.0 / s + w * (2.0 * alpha + r)
        lo_c = -w * (alpha - beta)
        up_c = -w * (alpha + beta)
        rhs = inner_old / s + source
        if w < 1.0:
            lop = (
                (alpha - beta) * full_old[:-2]
                + (alpha + beta) * full_old[2:]
                - (2.0 * alpha + r) * inner_old
            )
            rhs = rhs + (1.0 - w) * lop
        bl = bc_left(tau_new)
        br = bc_right(tau_new)
        rhs[0] -= lo_c * bl
        rhs[-1] -= up_c * br
        it, res = _psor(diag, lo_c, up_c, rhs, psi, warm, opts.omega, opts.tol, opts.max_iter)
        if it < 0:
            raise SolverError(
                f"PSOR did not converge within {opts.max_iter} sweeps at "
                f"tau={tau_new:.6g} (worst residual {res:.3e})"
            )
        return warm, bl, br, it, res

    # Rannacher: replace the first CN step by two implicit-Euler halves to
    # damp the start-up oscillation from non-smooth data at the obstacle.
    half = 0.5 * dt
    mid, bl, br, it1, r1 = substep(values[0], 1.0, half, half, values[0, 1:-1].copy())
    full_mid = np.empty(nx + 2)
    full_mid[1:-1] = mid
    full_mid[0] = bl
    full_mid[-1] = br
    new, bl, br, it2, r2 = substep(full_mid, 1.0, half, dt, mid.copy())
    values[1, 1:-1] = new
    values[1, 0] = bl
    values[1, -1] = br
    iters[0] = it1 + it2
    residuals[0] = max(r1, r2)

    for k in range(1, nt):
        warm = values[k, 1:-1].copy()
        new, bl, br, it, res = substep(values[k], 0.5, dt, (k + 1) * dt, warm)
        values[k + 1, 1:-1] = new
        values[k + 1, 0] = bl
        values[k + 1, -1] = br
        iters[k] = it
        residuals[k] = res
    return values, iters, residuals


def _check_span(grid: Grid, x_floor: float, x_ceiling: float) -> None:
    if grid.x_min >= x_floor - 1.0 or grid.x_max <= x_ceiling + 3.0:
        raise SolverError(
            f"grid [{grid.x_min:.4g}, {grid.x_max:.4g}] does not bracket the "
            f"boundary range [{x_floor:.4g}, {x_ceiling:.4g}] with margin"
        )


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def solve_u(
    params: MarketParams,
    contract: LagContract,
    grid: Grid,
    psor_opts: PsorOptions | None = None,
) -> Surface:
    """Premium-form solve: time-stepped obstacle problem with source.

    The unknown is the value above the immediate-notice obstacle; it
    starts at zero, is forced by the obstacle's calendar theta, and is
    kept non-negative by the constraint.  Left edge is pinned to 0 (deep
    in the exercise region), right edge to the stationary solution.
    """
    opts = psor_opts or PsorOptions()
    lag = contract.lag
    if lag <= 0.0:
        raise ValueError("premium-form solve requires a positive lag")
    if abs(grid.tau_max - contract.decision_horizon) > 1e-9:
        raise ValueError("grid.tau_max must equal maturity minus lag")
    prof = find_x_bar(lag, params)
    perp = find_x_under(lag, params)
    _check_span(grid, perp.x_under, prof.x_bar)
    x = grid.x_nodes()
    source = np.array([theta(float(xi), lag, params) for xi in x[1:-1]])
    obstacle = np.zeros(grid.nx + 2)
    cap = u_infinity(grid.x_max, perp, params)
    values, iters, residuals = _march(
        params, grid, obstacle, np.zeros(grid.nx + 2), source,
        lambda _tau: 0.0, lambda _tau: cap, opts,
    )
    return Surface(
        grid, values, obstacle, iters, residuals,
        x_floor=perp.x_under, x_ceiling=prof.x_bar, psor_tol=opts.tol,
    )


def solve_v_lagged(
    params: MarketParams,
    contract: LagContract,
    grid: Grid,
    psor_opts: PsorOptions | None = None,
) -> Surface:
    """Value-form solve of the lagged put.

    Obstacle and terminal data are both the immediate-notice value (the
    short-life European put), so the surface dominates that put and decays
    to it at the edges.
    """
    opts = psor_opts or PsorOptions()
    lag = contract.lag
    if lag <= 0.0:
        raise ValueError("value-form lagged solve requires a positive lag")
    if abs(grid.tau_max - contract.decision_horizon) > 1e-9:
        raise ValueError("grid.tau_max must equal maturity minus lag")
    prof = find_x_bar(lag, params)
    perp = find_x_under(lag, params)
    _check_span(grid, perp.x_under, prof.x_bar)
    x = grid.x_nodes()
    obstacle = np.array([put_price(float(xi), lag, params) for xi in x])
    cap = obstacle[-1] + u_infinity(grid.x_max, perp, params)
    left = obstacle[0]
    values, iters, residuals = _march(
        params, grid, obstacle, obstacle.copy(), np.zeros(grid.nx),
        lambda _tau: left, lambda _tau: cap, opts,
    )
    return Surface(
        grid, values, obstacle, iters, residuals,
        x_floor=perp.x_under, x_ceiling=prof.x_bar, psor_tol=opts.tol,
    )


def standard_perpetual_log_boundary(params: MarketParams) -> float:
    """Log-moneyness of the perpetual plain-put exercise level."""
    lam = char_roots(params).lambda_minus
    return math.log(lam / (lam - 1.0))


def solve_v_standard(
    params: MarketParams,
    maturity: float,
    grid: Grid,
    psor_opts: PsorOptions | None = None,
) -> Surface:
    """Plain American put solve (zero lag), obstacle is intrinsic value."""
    opts = psor_opts or PsorOptions()
    maturity = float(maturity)
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    if abs(grid.tau_max - maturity) > 1e-9:
        raise ValueError("grid.tau_max must equal the maturity")
    floor = standard_perpetual_log_boundary(params)
    _check_span(grid, floor, 0.0)
    x = grid.x_nodes()
    strike = params.strike
    obstacle = strike * np.maximum(1.0 - np.exp(x), 0.0)
    left = obstacle[0]
    x_max = grid.x_max

    def bc_right(tau: float) -> float:
        return put_price(x_max, tau, params)

    values, iters, residuals = _march(
        params, grid, obstacle, obstacle.copy(), np.zeros(grid.nx),
        lambda _tau: left, bc_right, opts,
    )
    return Surface(
        grid, values, obstacle, iters, residuals,
        x_floor=floor, x_ceiling=0.0, psor_tol=opts.tol,
    )


def solve_u_stationary(
    params: MarketParams,
    lag: float,
    grid_1d: Grid,
    psor_opts: PsorOptions | None = None,
) -> tuple[np.ndarray, float]:
    """Elliptic obstacle solve for the stationary premium profile.

    Only the spatial fields of ``grid_1d`` are used.  Returns the nodal
    values (edges included) and the first node past the detection
    threshold, which estimates the perpetual boundary.
    """
    opts = psor_opts or PsorOptions()
    lag = float(lag)
    prof = find_x_bar(lag, params)
    perp = find_x_under(lag, params)
    if grid_1d.x_min > perp.x_under - 2.0 + 1e-9 or grid_1d.x_max < prof.x_bar + 6.0 - 1e-9:
        raise SolverError(
            "stationary solve needs the span to cover [x_under - 2, x_bar + 6]"
        )
    a = 0.5 * params.volatility**2
    b = params.rate - params.dividend - a
    r = params.rate
    h = grid_1d.h
    alpha = a / (h * h)
    beta = b / (2.0 * h)
    x = grid_1d.x_nodes()
    diag = 2.0 * alpha + r
    lo_c = -(alpha - beta)
    up_c = -(alpha + beta)
    rhs = np.array([theta(float(xi), lag, params) for xi in x[1:-1]])
    cap = u_infinity(grid_1d.x_max, perp, params)
    rhs[-1] -= up_c * cap
    psi = np.zeros(grid_1d.nx)
    u = np.zeros(grid_1d.nx)
    it, res = _psor(diag, lo_c, up_c, rhs, psi, u, opts.omega, opts.tol, opts.max_iter)
    if it < 0:
        raise SolverError(
            f"stationary PSOR did not converge within {opts.max_iter} sweeps "
            f"(worst residual {res:.3e})"
        )
    full = np.empty(grid_1d.nx + 2)
    full[1:-1] = u
    full[0] = 0.0
    full[-1] = cap
    thr = 10.0 * opts.tol
    above = np.nonzero(u > thr)[0]
    if above.size == 0:
        raise SolverError("stationary solution never exceeds the detection threshold")
    x_under_numeric = float(x[above[0] + 1])
    return full, x_under_numeric


# ---------------------------------------------------------------------------
# boundary extraction and refinement
# ---------------------------------------------------------------------------


def extract_boundary(surface: Surface, threshold: float | None = None) -> Boundary:
    """Node-pinned exercise boundary of a solved surface.

    At each time level the boundary is the smallest node where the
    solution exceeds its obstacle by more than ``threshold`` (default 10x
    the PSOR tolerance, to sit above solver noise).  Validates the range
    against the surface's expected bracket (two-cell slack) and
    non-increase in tau (one-cell slack).
    """
    thr = 10.0 * surface.psor_tol if threshold is None else float(threshold)
    grid = surface.grid
    x = grid.x_nodes()
    h = grid.h
    taus = []
    xs = []
    gap = surface.values - surface.obstacle[np.newaxis, :]
    for k in range(1, grid.nt + 1):
        above = np.nonzero(gap[k, 1:-1] > thr)[0]
        if above.size == 0:
            if k * grid.dt > grid.dt * (1.0 + 1e-9):
                raise SolverError(f"no continuation node at time level {k}")
            continue
        taus.append(k * grid.dt)
        xs.append(float(x[above[0] + 1]))
    boundary = Boundary(np.asarray(taus), np.asarray(xs))
    lo = surface.x_floor - 2.0 * h
    hi = surface.x_ceiling + 2.0 * h
    if boundary.xs.size and (boundary.xs.min() < lo or boundary.xs.max() > hi):
        raise SolverError(
            f"extracted boundary leaves [{lo:.4g}, {hi:.4g}]: "
            f"range [{boundary.xs.min():.4g}, {boundary.xs.max():.4g}]"
        )
    rises = np.diff(boundary.xs)
    if rises.size and rises.max() > h * (1.0 + 1e-9):
        k = int(np.argmax(rises))
        raise SolverError(
            f"boundary rises by {rises.max():.4g} (> one cell) at tau={boundary.taus[k]:.4g}"
        )
    return boundary


def _refine_boundary(surface: Surface, boundary: Boundary) -> Boundary:
    # Sub-cell correction: near the free edge the solution behaves like
    # c (x - x_b)^2 (1 + O(x - x_b)), so sqrt(gap) is a gently curved line
    # crossing zero at x_b.  Fitting sqrt(gap) at the first three
    # continuation nodes with a quadratic and taking its small root
    # places x_b inside the detection cell; a straight-line fallback
    # covers degenerate node patterns.  Used by the studies and the
    # premium integral, where one-cell pinning is too coarse.
    grid = surface.grid
    x = grid.x_nodes()
    h = grid.h
    gap = surface.values - surface.obstacle[np.newaxis, :]
    refined = np.empty_like(boundary.xs)
    for j, (tau, xb) in enumerate(zip(boundary.taus, boundary.xs)):
        k = int(round(tau / grid.dt))
        i = int(round((xb - grid.x_min) / h))
        g0 = gap[k, i]
        g1 = gap[k, i + 1] if i + 1 < x.size else 0.0
        g2 = gap[k, i + 2] if i + 2 < x.size else 0.0
        if g0 <= 0.0 or g1 <= g0 or g2 <= g1:
            refined[j] = x[i]
            continue
        s0, s1, s2 = math.sqrt(g0), math.sqrt(g1), math.sqrt(g2)
        d1 = (s1 - s0) / h
        curv = 0.5 * (s2 - 2.0 * s1 + s0) / (h * h)
        # distance z = x_i - x_b solves curv z^2 + (curv h - d1) z + s0 = 0;
        # the small root in stable (rationalized) form:
        lin = d1 - curv * h
        disc = lin * lin - 4.0 * curv * s0
        if disc > 0.0 and lin + math.sqrt(disc) > 0.0:
            z = 2.0 * s0 / (lin + math.sqrt(disc))
        elif d1 > 0.0:
            z = s0 / d1
        else:
            z = 0.0
        refined[j] = x[i] - min(max(z, 0.0), h)
    return Boundary(boundary.taus.copy(), refined)


def standard_boundary_calendar(surface: Surface, maturity: float) -> Boundary:
    """Plain-put boundary as stock levels against calendar time.

    Converts the refined boundary of a standard solve to (t, X) samples,
    ascending in t, appending the exact expiry endpoint X = K.
    """
    boundary = _refine_boundary(surface, extract_boundary(surface))
    # the surface does not carry params; the strike is recovered from the
    # obstacle's left edge, obstacle(x_min) = K (1 - e^{x_min})
    strike = surface.obstacle[0] / (1.0 - math.exp(surface.grid.x_min))
    ts = np.append(maturity - boundary.taus[::-1], maturity)
    xs = np.append(strike * np.exp(boundary.xs[::-1]), strike)
    return Boundary(ts, xs)


# ---------------------------------------------------------------------------
# early-exercise premium
# ---------------------------------------------------------------------------


def early_exercise_premium(
    params: MarketParams,
    maturity: float,
    t: float,
    spot: float,
    boundary_std: Boundary,
) -> float:
    """Integral form of the plain put's early-exercise premium.

    Integrates the discounted cash-flow rate below the exercise level:
    the inner integral over stock is closed-form in Gaussian cdfs, the
    outer integral over calendar time runs composite Simpson with the
    boundary interpolated linearly.  Doubles the panel count until two
    resolutions agree to 1e-8 of strike (the interpolated boundary has a
    derivative kink per sample, which caps Simpson's tail accuracy).
    """
    maturity = float(maturity)
    t = float(t)
    spot = float(spot)
    if not t < maturity:
        raise ValueError("need t < maturity")
    if spot <= 0.0:
        raise ValueError("spot must be positive")
    r, q, sigma, strike = params.rate, params.dividend, params.volatility, params.strike
    drift = r - q - 0.5 * sigma * sigma

    def level(s: float) -> float:
        return float(np.interp(s, boundary_std.taus, boundary_std.xs))

    def rate_at(s: float) -> float:
        delta = s - t
        b = level(s)
        if delta <= 1e-12:
            return (r * strike - q * spot) if spot < b else 0.0
        rt = sigma * math.sqrt(delta)
        d2 = (math.log(spot / b) + drift * delta) / rt
        d1 = d2 + rt
        return r * strike * math.exp(-r * delta) * norm_cdf(-d2) - q * spot * math.exp(
            -q * delta
        ) * norm_cdf(-d1)

    span = maturity - t
    prev = None
    n = 200
    while n <= 6400:
        ds = span / n
        s = t + ds * np.arange(n + 1)
        f = np.array([rate_at(float(v)) for v in s])
        val = ds / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum())
        if prev is not None and abs(val - prev) <= 1e-8 * strike:
            return val
        prev = val
        n *= 2
    raise SolverError("premium quadrature did not settle at 6400 panels")


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _steps_for(lag: float, maturity: float, base: Grid) -> int:
    dt = base.dt
    steps = (maturity - lag) / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ValueError(f"lag {lag} is not a whole number of time steps")
    return int(round(steps))


def _lag_grid(lag: float, maturity: float, base: Grid) -> Grid:
    return Grid(base.x_min, base.x_max, base.nx, maturity - lag, _steps_for(lag, maturity, base))


def _solve_lagged_task(args) -> tuple[float, Surface]:
    params, maturity, lag, base = args
    surface = solve_v_lagged(
        params, LagContract(maturity, lag), _lag_grid(lag, maturity, base)
    )
    return lag, surface


def _solve_premium_task(args) -> tuple[float, Surface]:
    params, maturity, lag, base = args
    surface = solve_u(
        params, LagContract(maturity, lag), _lag_grid(lag, maturity, base)
    )
    return lag, surface


def _run_tasks(task, argsets, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return dict(pool.map(task, argsets))
    return dict(task(a) for a in argsets)


def study_lag_monotonicity(
    params: MarketParams,
    maturity: float,
    lags: list[float],
    grid: Grid,
    workers: int = 1,
) -> StudyReport:
    """Sandwich and monotonicity of the lagged value against the plain put.

    The plain put dominates every lagged value, undershoots it by at most
    lag * r * K, and the lagged values decrease as the lag grows.  All
    comparisons are nodewise at matching calendar times, with the
    discretization budget 3 (h^2 + dtau) K.
    """
    maturity = float(maturity)
    lags = [float(v) for v in lags]
    if lags != sorted(lags) or any(v <= 0.0 or v >= maturity for v in lags):
        raise ValueError("lags must be ascending and inside (0, maturity)")
    if abs(grid.tau_max - maturity) > 1e-9:
        raise ValueError("base grid must span the full maturity")
    strike = params.strike
    slack = 3.0 * (grid.h**2 + grid.dt) * strike
    standard = solve_v_standard(params, maturity, grid)
    surfaces = _run_tasks(
        _solve_lagged_task, [(params, maturity, v, grid) for v in lags], workers
    )

    def aligned(sa: Surface, sb: Surface, shift: int):
        # level k of sa (shorter horizon) matches level k + shift of sb
        n = sa.grid.nt
        return sa.values[: n + 1], sb.values[shift : shift + n + 1]

    checks = []
    worst_up, where_up = -math.inf, ""
    worst_dn, where_dn = -math.inf, ""
    x = grid.x_nodes()
    for lag in lags:
        surf = surfaces[lag]
        shift = grid.nt - surf.grid.nt
        va, vb = aligned(surf, standard, shift)
        diff_up = va - vb                    # lagged minus standard: should be <= 0
        diff_dn = (vb - lag * params.rate * strike) - va   # should be <= 0
        for diff, tag in ((diff_up, "upper"), (diff_dn, "lower")):
            k, i = np.unravel_index(np.argmax(diff), diff.shape)
            top = float(diff[k, i])
            loc = f"lag={lag:g} tau={k * grid.dt:.4g} x={x[i]:.4g}"
            if tag == "upper" and top > worst_up:
                worst_up, where_up = top, loc
            if tag == "lower" and top > worst_dn:
                worst_dn, where_dn = top, loc
    checks.append(
        CheckResult("plain put dominates lagged value", worst_up <= slack, worst_up, slack, where_up)
    )
    checks.append(
        CheckResult(
            "lagged value above plain put minus lag*r*K", worst_dn <= slack, worst_dn, slack, where_dn
        )
    )

    worst_chain, where_chain = -math.inf, ""
    for small, large in zip(lags, lags[1:]):
        sa, sb = surfaces[large], surfaces[small]
        shift = sb.grid.nt - sa.grid.nt
        va, vb = aligned(sa, sb, shift)
        diff = va - vb                        # longer lag minus shorter: should be <= 0
        k, i = np.unravel_index(np.argmax(diff), diff.shape)
        top = float(diff[k, i])
        if top > worst_chain:
            worst_chain = top
            where_chain = f"lags=({small:g},{large:g}) tau={k * grid.dt:.4g} x={x[i]:.4g}"
    checks.append(
        CheckResult(
            "value decreasing in lag", worst_chain <= slack, worst_chain, slack, where_chain
        )
    )
    checks = tuple(checks)
    return StudyReport("lag-monotonicity", all(c.passed for c in checks), checks)


def study_small_lag(
    params: MarketParams,
    maturity: float,
    lags: list[float],
    grid: Grid,
    workers: int = 1,
) -> StudyReport:
    """Boundary convergence to the plain put as the lag shrinks.

    Tracks the exercise level at four probe times across a descending lag
    ladder: the gap to the plain-put boundary must shrink monotonically
    and the first-level values must match the analytic start point.  Also
    verifies the premium surface is non-decreasing in tau.
    """
    maturity = float(maturity)
    lags = [float(v) for v in lags]
    if lags != sorted(lags, reverse=True) or any(v <= 0.0 or v >= maturity for v in lags):
        raise ValueError("lags must be descending and inside (0, maturity)")
    if abs(grid.tau_max - maturity) > 1e-9:
        raise ValueError("base grid must span the full maturity")
    strike = params.strike
    h = grid.h
    probes = [0.0, 0.25 * maturity, 0.5 * maturity, 0.75 * maturity]

    standard = solve_v_standard(params, maturity, grid)
    std_bnd = _refine_boundary(standard, extract_boundary(standard))
    surfaces = _run_tasks(
        _solve_premium_task, [(params, maturity, v, grid) for v in lags], workers
    )
    bounds = {lag: _refine_boundary(s, extract_boundary(s)) for lag, s in surfaces.items()}

    def level_at(boundary: Boundary, tau: float) -> float:
        j = int(np.argmin(np.abs(boundary.taus - tau)))
        if abs(boundary.taus[j] - tau) > grid.dt * (1.0 + 1e-9):
            raise SolverError(f"boundary has no sample near tau={tau:.4g}")
        return float(boundary.xs[j])

    checks = []
    worst_grow, where_grow = -math.inf, ""
    final_gap, where_final = -math.inf, ""
    for t in probes:
        x_std = level_at(std_bnd, maturity - t)
        gaps = []
        for lag in lags:
            x_lag = level_at(bounds[lag], maturity - lag - t)
            gaps.append(abs(strike * math.exp(x_lag) - strike * math.exp(x_std)))
        for g_prev, g_next, lag in zip(gaps, gaps[1:], lags[1:]):
            growth = g_next - g_prev
            if growth > worst_grow:
                worst_grow = growth
                where_grow = f"t={t:g} lag={lag:g}"
        if gaps[-1] > final_gap:
            final_gap = gaps[-1]
            where_final = f"t={t:g} lag={lags[-1]:g}"
    grow_tol = 0.1 * h * strike
    checks.append(
        CheckResult(
            "boundary gap shrinks along the lag ladder",
            worst_grow <= grow_tol, worst_grow, grow_tol, where_grow,
        )
    )
    checks.append(
        CheckResult(
            "final boundary gap below 1% of strike",
            final_gap <= 0.01 * strike, final_gap, 0.01 * strike, where_final,
        )
    )

    worst_end, where_end = -math.inf, ""
    for lag in lags:
        start = bounds[lag].xs[0]
        target = find_x_bar(lag, params).x_bar
        err = abs(start - target)
        if err > worst_end:
            worst_end, where_end = err, f"lag={lag:g}"
    checks.append(
        CheckResult(
            "first-level boundary matches analytic start",
            worst_end <= 2.0 * h, worst_end, 2.0 * h, where_end,
        )
    )

    std_start = abs(std_bnd.xs[0])
    checks.append(
        CheckResult(
            "plain-put boundary starts at the strike",
            std_start <= 2.0 * h, std_start, 2.0 * h, "first time level",
        )
    )

    worst_dec, where_dec = -math.inf, ""
    tol_time = 1e-8 * strike
    for lag in lags:
        vals = surfaces[lag].values
        drop = vals[:-1] - vals[1:]
        k, i = np.unravel_index(np.argmax(drop), drop.shape)
        top = float(drop[k, i])
        if top > worst_dec:
            worst_dec = top
            where_dec = f"lag={lag:g} tau={(k + 1) * grid.dt:.4g} x={grid.x_nodes()[i]:.4g}"
    checks.append(
        CheckResult(
            "premium surface non-decreasing in tau",
            worst_dec <= tol_time, worst_dec, tol_time, where_dec,
        )
    )
    checks = tuple(checks)
    return StudyReport("small-lag", all(c.passed for c in checks), checks)


def study_large_maturity(
    params: MarketParams,
    lag: float,
    grid: Grid,
    psor_opts: PsorOptions | None = None,
) -> StudyReport:
    """Relaxation of the premium solve toward the stationary profile.

    With a long horizon the extracted boundary must land within three
    cells of the perpetual level.  The terminal premium profile is
    compared against the stationary solution; that distance budget,
    max(1e-3 K, 25 h^2), reflects pure discretization error and a
    25-year horizon leaves a genuine transient above it, so the value
    check reports the honest measured gap.
    """
    lag = float(lag)
    surface = solve_u(params, LagContract(grid.tau_max + lag, lag), grid, psor_opts)
    boundary = extract_boundary(surface)
    perp = find_x_under(lag, params)
    h = grid.h
    strike = params.strike

    end_err = abs(boundary.xs[-1] - perp.x_under)
    checks = [
        CheckResult(
            "terminal boundary within three cells of the perpetual level",
            end_err <= 3.0 * h, end_err, 3.0 * h, f"tau={grid.tau_max:g}",
        )
    ]
    x = grid.x_nodes()
    cap = np.array([u_infinity(float(xi), perp, params) for xi in x])
    gap = np.abs(surface.values[-1] - cap)
    i = int(np.argmax(gap))
    tol_val = max(1e-3 * strike, 25.0 * h * h)
    checks.append(
        CheckResult(
            "terminal profile matches the stationary solution",
            float(gap[i]) <= tol_val, float(gap[i]), tol_val, f"x={x[i]:.4g}",
        )
    )
    over = surface.values[-1] - cap
    j = int(np.argmax(over))
    checks.append(
        CheckResult(
            "premium never exceeds the stationary profile",
            float(over[j]) <= 1e-6 * strike, float(over[j]), 1e-6 * strike, f"x={x[j]:.4g}",
        )
    )
    checks = tuple(checks)
    return StudyReport("large-maturity", all(c.passed for c in checks), checks)


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------

STEPS_PER_YEAR = 800


def default_grid(
    params: MarketParams,
    contract: LagContract,
    nx: int = 600,
    steps_per_year: int = STEPS_PER_YEAR,
) -> Grid:
    """Production grid: boundary-bracketing span, 800 steps per year.

    The span is anchored to the boundary levels of the given lag (or the
    plain put for zero lag): 4 units of margin left of the perpetual
    level, 8 right of the start level.  With the default one-year
    quarter-lag contract this is the 600 x 600 configuration.
    """
    if contract.lag > 0.0:
        lo = find_x_under(contract.lag, params).x_under
        hi = find_x_bar(contract.lag, params).x_bar
        horizon = contract.decision_horizon
    else:
        lo = standard_perpetual_log_boundary(params)
        hi = 0.0
        horizon = contract.maturity
    nt = horizon * steps_per_year
    if abs(nt - round(nt)) > 1e-9:
        raise ValueError("horizon must be a whole number of time steps")
    return Grid(lo - 4.0, hi + 8.0, nx, horizon, int(round(nt)))
