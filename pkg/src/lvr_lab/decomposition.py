"""Pathwise P&L decomposition of a passive liquidity position.

On a discretized price path ``P[0..N]`` with step ``dt``:

    V[k]   = V(P[k])                                    pool value
    R[k]   = V[0] + sum_{j<k} x*(P[j]) (P[j+1] - P[j])  rebalancing portfolio
    LVR[k] = sum_{j<k} l(P[j]) dt                       closed-form running cost
    ARB[k] = sum_{j<=k} arbitrage profit of event j     discrete replay

Every sum uses the left endpoint, so the rebalancing integrand is
predictable and ``ARB = R - V`` telescopes exactly. ``ARB`` and ``LVR``
agree only in the limit of a fine grid; measuring that gap is the point of
the convergence study.

Functions accept a :class:`PricePath`. The ``*_matrix`` helpers take an
array whose last axis is time so Monte Carlo batches vectorize.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cfmm_core import (
    ConstantProduct,
    GeometricMean,
    Pool,
    instantaneous_lvr,
    optimal_reserves,
    pool_value,
)
from .dynamics import GbmParams, PricePath, _open_text, simulate_gbm, simulate_gbm_batch
from .errors import DomainError

# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkStrategy:
    """A predictable holdings rule for the risky asset.

    ``rule(k, history)`` receives the prices up to and including grid point
    ``k`` and returns the quantity held over ``(t_k, t_{k+1}]``. Built-in
    strategies also carry ``vectorized``, which maps a price array (time on
    the last axis) to the holdings array in one call and must respect the
    same information constraint.
    """

    rule: Callable[[int, np.ndarray], float]
    label: str
    vectorized: Callable[[np.ndarray], np.ndarray] | None = None

    def holdings(self, prices: np.ndarray) -> np.ndarray:
        prices = np.asarray(prices, dtype=float)
        if self.vectorized is not None:
            return np.broadcast_to(self.vectorized(prices), prices.shape).astype(float)
        if prices.ndim != 1:
            return np.stack([self.holdings(row) for row in prices])
        return np.array([self.rule(k, prices[: k + 1]) for k in range(prices.size)], dtype=float)


def hodl_benchmark(pool: Pool, P0: float) -> BenchmarkStrategy:
    """Hold the pool's initial risky reserves ``x*(P0)`` forever."""
    if not P0 > 0:
        raise DomainError(f"P0 must be positive, got {P0!r}")
    x0 = optimal_reserves(pool, P0).x
    return BenchmarkStrategy(lambda k, hist: x0, "HODL", lambda prices: np.full(prices.shape, x0))


def rebalancing_benchmark(pool: Pool) -> BenchmarkStrategy:
    """Hold ``x*(P_t)``: the rebalancing strategy itself."""
    return BenchmarkStrategy(
        lambda k, hist: optimal_reserves(pool, hist[-1]).x,
        "rebalancing",
        lambda prices: optimal_reserves(pool, prices).x,
    )


def constant_benchmark(quantity: float, label: str | None = None) -> BenchmarkStrategy:
    if not quantity >= 0:
        raise DomainError(f"holdings must be non-negative, got {quantity!r}")
    return BenchmarkStrategy(lambda k, hist: quantity, label or f"constant_{quantity:g}",
                             lambda prices: np.full(prices.shape, float(quantity)))


# ---------------------------------------------------------------------------
# Array kernels (time on the last axis)
# ---------------------------------------------------------------------------


def _itosum(holdings: np.ndarray, prices: np.ndarray, start: np.ndarray) -> np.ndarray:
    out = np.empty_like(prices)
    out[..., 0] = start
    np.cumsum(holdings[..., :-1] * np.diff(prices, axis=-1), axis=-1, out=out[..., 1:])
    out[..., 1:] += start[..., None] if np.ndim(start) else start
    return out


def rebalancing_matrix(pool: Pool, prices: np.ndarray) -> np.ndarray:
    x = optimal_reserves(pool, prices).x
    return _itosum(x, prices, pool_value(pool, prices[..., 0]))


def lvr_matrix(pool: Pool, prices: np.ndarray, dt: np.ndarray | float, sigma: float) -> np.ndarray:
    rate = instantaneous_lvr(pool, prices[..., :-1], sigma)
    out = np.zeros_like(prices)
    np.cumsum(rate * dt, axis=-1, out=out[..., 1:])
    return out


def arbitrage_matrix(pool: Pool, prices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-event profits (shape ``(..., N)``) and cumulative ARB (shape ``(..., N+1)``)."""
    x, y = optimal_reserves(pool, prices)
    profits = prices[..., 1:] * (x[..., :-1] - x[..., 1:]) + (y[..., :-1] - y[..., 1:])
    arb = np.zeros_like(prices)
    np.cumsum(profits, axis=-1, out=arb[..., 1:])
    return profits, arb


# ---------------------------------------------------------------------------
# Pathwise operations
# ---------------------------------------------------------------------------


def pool_value_path(pool: Pool, path: PricePath) -> np.ndarray:
    return np.asarray(pool_value(pool, path.prices), dtype=float)


def rebalancing_value(pool: Pool, path: PricePath) -> np.ndarray:
    """Value of the self-financing portfolio holding ``x*(P)`` at market prices."""
    return rebalancing_matrix(pool, path.prices)


def lvr_closed_form(pool: Pool, path: PricePath, sigma: float) -> np.ndarray:
    """Running integral of the instantaneous LVR, left-endpoint quadrature."""
    return lvr_matrix(pool, path.prices, path.dt, sigma)


def realized_lvr(pool: Pool, path: PricePath) -> np.ndarray:
    """Model-free variant: ``sigma^2 P^2 dt`` replaced by the squared price increment.

    Useful on external price data where the volatility is unknown.
    """
    from .cfmm_core import convexity

    P = path.prices
    out = np.zeros_like(P)
    np.cumsum(-0.5 * convexity(pool, P[:-1]) * np.diff(P) ** 2, out=out[1:])
    return out


@dataclass(frozen=True, eq=False)
class ArbitrageReplay:
    profits: np.ndarray
    arb: np.ndarray
    cfmm_prices: np.ndarray  # average execution price of each event; NaN when nothing traded


def discrete_arbitrage_replay(pool: Pool, path: PricePath) -> ArbitrageReplay:
    """One arbitrageur per grid step moving the pool to the current market price."""
    profits, arb = arbitrage_matrix(pool, path.prices)
    x, y = optimal_reserves(pool, path.prices)
    dx, dy = np.diff(x), np.diff(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        cfmm = np.where(dx != 0, -dy / dx, np.nan)
    return ArbitrageReplay(profits, arb, cfmm)


@dataclass(frozen=True, eq=False)
class BenchmarkReport:
    label: str
    Rbar: np.ndarray
    LVB: np.ndarray
    Delta: np.ndarray
    QV: float


def loss_versus_benchmark(pool: Pool, path: PricePath, benchmark: BenchmarkStrategy,
                          sigma: float, lvr: np.ndarray | None = None) -> BenchmarkReport:
    """Loss of the pool against a benchmark portfolio started at ``V(P0)``.

    ``Delta = LVB - LVR`` is the market-risk residual; ``QV`` is the realized
    quadratic variation of the LVB series.
    """
    P = path.prices
    V = pool_value_path(pool, path)
    Rbar = _itosum(benchmark.holdings(P), P, V[0])
    LVB = Rbar - V
    if lvr is None:
        lvr = lvr_closed_form(pool, path, sigma)
    return BenchmarkReport(benchmark.label, Rbar, LVB, LVB - lvr, float(np.sum(np.diff(LVB) ** 2)))


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    times: np.ndarray
    prices: np.ndarray
    sigma: float
    V: np.ndarray
    R: np.ndarray
    LVR: np.ndarray
    ARB: np.ndarray
    arb_profits: np.ndarray
    benchmarks: dict[str, BenchmarkReport] = field(default_factory=dict)
    realized_LVR: np.ndarray | None = None
    seed: int | None = None
    path_index: int = 0

    @property
    def market_risk(self) -> np.ndarray:
        return self.R - self.V[0]

    @property
    def telescoping_error(self) -> float:
        return float(np.max(np.abs(self.ARB - (self.R - self.V))))

    def to_csv(self, file) -> None:
        """``t,V,R,LVR,ARB,LVB_hodl`` rows (plus ``LVR_realized`` when computed)."""
        cols = {"t": self.times, "V": self.V, "R": self.R, "LVR": self.LVR, "ARB": self.ARB,
                "LVB_hodl": self.benchmarks["HODL"].LVB}
        if self.realized_LVR is not None:
            cols["LVR_realized"] = self.realized_LVR
        with _open_text(file, "w") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([f"{v:.17g}" for v in row])

    def summary(self) -> dict:
        out = {
            "seed": self.seed,
            "path_index": self.path_index,
            "steps": int(self.prices.size - 1),
            "T": float(self.times[-1] - self.times[0]),
            "P0": float(self.prices[0]),
            "P_T": float(self.prices[-1]),
            "V_0": float(self.V[0]),
            "V_T": float(self.V[-1]),
            "R_T": float(self.R[-1]),
            "LVR_T": float(self.LVR[-1]),
            "ARB_T": float(self.ARB[-1]),
            "market_risk_T": float(self.market_risk[-1]),
            "telescoping_error": self.telescoping_error,
            "min_event_profit": float(self.arb_profits.min()) if self.arb_profits.size else 0.0,
            "benchmarks": {
                label: {"Rbar_T": float(b.Rbar[-1]), "LVB_T": float(b.LVB[-1]),
                        "Delta_T": float(b.Delta[-1]), "QV_LVB": b.QV}
                for label, b in self.benchmarks.items()
            },
        }
        if self.realized_LVR is not None:
            out["LVR_realized_T"] = float(self.realized_LVR[-1])
        return out


def decompose(pool: Pool, path: PricePath, sigma: float,
              benchmarks: list[BenchmarkStrategy] | None = None,
              realized: bool = False) -> DecompositionReport:
    """Full decomposition on one path. HODL is always included."""
    V = pool_value_path(pool, path)
    R = rebalancing_value(pool, path)
    LVR = lvr_closed_form(pool, path, sigma)
    replay = discrete_arbitrage_replay(pool, path)
    strategies = [hodl_benchmark(pool, float(path.prices[0]))]
    for b in benchmarks or []:
        if b.label != "HODL":
            strategies.append(b)
    reports = {b.label: loss_versus_benchmark(pool, path, b, sigma, lvr=LVR) for b in strategies}
    return DecompositionReport(
        path.times, path.prices, sigma, V, R, LVR, replay.arb, replay.profits, reports,
        realized_lvr(pool, path) if realized else None, path.seed, path.path_index,
    )


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    n: int

    @classmethod
    def of(cls, samples: np.ndarray) -> "Estimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(samples.mean()), se, n)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.se

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n}


def analytic_expected_lvr(pool: Pool, P0: float, sigma: float, T: float) -> float | None:
    """``E[LVR_T]`` for weighted geometric mean pools, ``V(P0) (1 - exp(-c T))``.

    With ``l = c V`` and ``E[V(P_t)] = V(P0) exp(-c t)`` under driftless GBM,
    ``c = sigma^2 theta (1 - theta) / 2``. Other pools return ``None``.
    """
    if not isinstance(pool, (GeometricMean, ConstantProduct)):
        return None
    c = 0.5 * sigma * sigma * pool.theta * (1.0 - pool.theta)
    return float(-pool_value(pool, P0) * math.expm1(-c * T))


def _chunks(n_paths: int, chunk: int):
    for start in range(0, n_paths, chunk):
        yield start, min(chunk, n_paths - start)


def monte_carlo_terminals(pool: Pool, params: GbmParams, T: float, steps: int, n_paths: int,
                          seed: int, threads: int = 1, chunk: int | None = None) -> dict[str, np.ndarray]:
    """Terminal values of each decomposition leg over ``n_paths`` paths.

    Keys: ``V_T, R_T, LVR_T, ARB_T, Delta_hodl_T, LVB_hodl_T``. Path ``i``
    always uses stream ``(seed, i)``, and chunks are merged in path order,
    so results do not depend on ``threads`` or ``chunk``.
    """
    if chunk is None:
        chunk = max(1, min(n_paths, 4_000_000 // (steps + 1)))
    dt = T / steps
    x0 = optimal_reserves(pool, params.P0).x
    V0 = pool_value(pool, params.P0)

    def run(block):
        start, size = block
        P = simulate_gbm_batch(params, T, steps, seed, size, first_index=start)
        V_T = pool_value(pool, P[:, -1])
        R = rebalancing_matrix(pool, P)
        LVR = lvr_matrix(pool, P, dt, params.sigma)
        _, ARB = arbitrage_matrix(pool, P)
        Rbar_T = V0 + x0 * (P[:, -1] - P[:, 0])
        return {
            "V_T": V_T, "R_T": R[:, -1], "LVR_T": LVR[:, -1], "ARB_T": ARB[:, -1],
            "LVB_hodl_T": Rbar_T - V_T, "Delta_hodl_T": Rbar_T - V_T - LVR[:, -1],
        }

    blocks = list(_chunks(n_paths, chunk))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass(frozen=True)
class ExpectedLvr:
    monte_carlo: Estimate
    analytic: float | None
    short_horizon: float

    def as_dict(self) -> dict:
        return {"monte_carlo": self.monte_carlo.as_dict(), "analytic": self.analytic,
                "short_horizon": self.short_horizon}


def expected_lvr(pool: Pool, P0: float, sigma: float, T: float, n_paths: int, steps: int,
                 seed: int, threads: int = 1) -> ExpectedLvr:
    """Monte Carlo ``E[LVR_T]`` with its standard error, the closed form where
    one exists, and the short-horizon approximation ``l(P0) T``."""
    short = float(instantaneous_lvr(pool, P0, sigma) * T)
    analytic = analytic_expected_lvr(pool, P0, sigma, T)
    if sigma == 0:
        return ExpectedLvr(Estimate(0.0, 0.0, n_paths), analytic, short)
    legs = monte_carlo_terminals(pool, GbmParams(P0, sigma), T, steps, n_paths, seed, threads)
    return ExpectedLvr(Estimate.of(legs["LVR_T"]), analytic, short)


@dataclass(frozen=True)
class ConvergenceRow:
    steps: int
    mean_abs_gap: float
    rms_gap: float
    mean_lvr: float
    max_telescoping_error: float

    @property
    def relative_gap(self) -> float:
        return self.mean_abs_gap / self.mean_lvr if self.mean_lvr else math.nan


def convergence_study(pool: Pool, P0: float, sigma: float, T: float, steps: list[int],
                      n_seeds: int, seed: int) -> list[ConvergenceRow]:
    """``|ARB_N - LVR_N|`` on nested grids sharing the same Brownian path.

    Each path is simulated once at the finest resolution and subsampled, so
    coarser grids see exactly the same price path.
    """
    steps = sorted(int(s) for s in steps)
    finest = steps[-1]
    if any(finest % s for s in steps):
        raise DomainError(f"every grid size must divide the finest one ({finest})")
    gaps = {s: [] for s in steps}
    lvrs = {s: [] for s in steps}
    tele = {s: 0.0 for s in steps}
    params = GbmParams(P0, sigma)
    for i in range(n_seeds):
        fine = simulate_gbm(params, T, finest, seed, path_index=i)
        for s in steps:
            path = fine.coarsen(finest // s)
            V = pool_value_path(pool, path)
            R = rebalancing_value(pool, path)
            _, arb = arbitrage_matrix(pool, path.prices)
            lvr = lvr_closed_form(pool, path, sigma)
            gaps[s].append(arb[-1] - lvr[-1])
            lvrs[s].append(lvr[-1])
            tele[s] = max(tele[s], float(np.max(np.abs(arb - (R - V)))))
    rows = []
    for s in steps:
        g = np.asarray(gaps[s])
        rows.append(ConvergenceRow(s, float(np.mean(np.abs(g))), float(np.sqrt(np.mean(g * g))),
                                   float(np.mean(lvrs[s])), tele[s]))
    return rows
