"""Fee income from noise-trader volume and the fair-pricing comparison with LVR.

Noise traders pay a proportional fee ``gamma`` on numeraire volume. Their
flow does not move the reserves and arbitrageurs pay no fees, so fees are a
separate cash flow on top of the pathwise decomposition:

    F[k] = sum_{j<k} gamma * volume_rate(P[j]) * dt

An LP who locks ``V(P0)`` into the pool is fairly compensated when
``E[F_T] = E[LVR_T]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from .cfmm_core import Pool, describe_pool, instantaneous_lvr, pool_value
from .decomposition import Estimate, lvr_matrix
from .dynamics import GbmParams, PricePath, simulate_gbm_batch
from .errors import DomainError


@dataclass(frozen=True)
class FeeParams:
    gamma: float

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise DomainError(f"fee rate must lie in [0, 1), got {self.gamma!r}")


@dataclass(frozen=True)
class ConstantRate:
    """Fixed numeraire volume per unit time."""

    v: float

    def __post_init__(self):
        if not self.v >= 0:
            raise DomainError(f"volume rate must be non-negative, got {self.v!r}")

    def rate(self, pool: Pool, prices: np.ndarray) -> np.ndarray:
        return np.full(np.shape(prices), float(self.v))


@dataclass(frozen=True)
class ProportionalToPoolValue:
    """Volume per unit time equal to ``rho`` times the current pool value."""

    rho: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise DomainError(f"volume fraction must be non-negative, got {self.rho!r}")

    def rate(self, pool: Pool, prices: np.ndarray) -> np.ndarray:
        return self.rho * np.asarray(pool_value(pool, prices))


VolumeProcess = Union[ConstantRate, ProportionalToPoolValue]


def _volume_dict(volume: VolumeProcess) -> dict:
    return {"kind": type(volume).__name__, **asdict(volume)}


def fee_increments(volume: VolumeProcess, fee: FeeParams, prices: np.ndarray,
                   dt: np.ndarray | float, pool: Pool) -> np.ndarray:
    """Fees earned over each step, shape ``(..., N)``; left-endpoint volume."""
    return fee.gamma * volume.rate(pool, prices[..., :-1]) * dt


def accrue_fees(volume: VolumeProcess, fee: FeeParams, path: PricePath, pool: Pool) -> np.ndarray:
    """Cumulative fee series, starting at 0 and non-decreasing."""
    out = np.zeros_like(path.prices)
    np.cumsum(fee_increments(volume, fee, path.prices, path.dt, pool), out=out[1:])
    return out


def breakeven_volume(pool: Pool, P: float, sigma: float, fee: FeeParams) -> float:
    """Volume, as a fraction of pool value per unit time, at which fees offset LVR."""
    if fee.gamma == 0:
        raise DomainError("break-even volume is undefined for a zero fee")
    return float(instantaneous_lvr(pool, P, sigma) / pool_value(pool, P) / fee.gamma)


def trailing_comparison(fees: np.ndarray, lvr: np.ndarray, window: int) -> dict[str, np.ndarray]:
    """Trailing-window fee income against trailing LVR.

    A reporting aid for dynamic-fee discussions: the ratio above 1 means the
    pool out-earned its rebalancing loss over the last ``window`` steps.
    """
    if window < 1:
        raise DomainError("window must be at least one step")
    fees, lvr = np.asarray(fees, dtype=float), np.asarray(lvr, dtype=float)
    lag = np.maximum(np.arange(fees.size) - window, 0)
    tf, tl = fees - fees[lag], lvr - lvr[lag]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tl > 0, tf / tl, np.nan)
    return {"trailing_fees": tf, "trailing_lvr": tl, "ratio": ratio}


@dataclass(frozen=True)
class FairPricingReport:
    E_F: Estimate
    E_LVR: Estimate
    V0: float
    gap: float
    gap_se: float
    breakeven_volume_fraction: float | None
    inputs: dict

    @property
    def W0T(self) -> float:
        """Value of the locked investment, ``V(P0) - E[LVR_T] + E[F_T]``."""
        return self.V0 - self.E_LVR.mean + self.E_F.mean

    @property
    def status(self) -> str:
        # the floor absorbs roundoff when fees track LVR pathwise and the SE collapses
        floor = 1e-12 * max(abs(self.E_F.mean), abs(self.E_LVR.mean))
        if abs(self.gap) <= max(3.0 * self.gap_se, floor):
            return "fair"
        return "overpriced" if self.gap > 0 else "underpriced"

    @property
    def fair(self) -> bool:
        return self.status == "fair"

    def as_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "E_F": self.E_F.as_dict(),
            "E_LVR": self.E_LVR.as_dict(),
            "V0": self.V0,
            "W0T": self.W0T,
            "gap": self.gap,
            "gap_se": self.gap_se,
            "status": self.status,
            "breakeven_volume_fraction": self.breakeven_volume_fraction,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


def fair_pricing_report(pool: Pool, P0: float, sigma: float, T: float, volume: VolumeProcess,
                        fee: FeeParams, n_paths: int, steps: int, seed: int,
                        chunk: int | None = None) -> FairPricingReport:
    """Monte Carlo ``E[F_T]`` against ``E[LVR_T]`` on common paths.

    ``overpriced`` means fees exceed the loss (LPs are overpaid),
    ``underpriced`` means fees fall short.
    """
    params = GbmParams(P0, sigma)
    dt = T / steps
    if chunk is None:
        chunk = max(1, min(n_paths, 4_000_000 // (steps + 1)))
    F_T, L_T = [], []
    for start in range(0, n_paths, chunk):
        size = min(chunk, n_paths - start)
        P = simulate_gbm_batch(params, T, steps, seed, size, first_index=start)
        F_T.append(fee_increments(volume, fee, P, dt, pool).sum(axis=-1))
        L_T.append(lvr_matrix(pool, P, dt, sigma)[:, -1])
    F_T, L_T = np.concatenate(F_T), np.concatenate(L_T)
    diff = Estimate.of(F_T - L_T)
    try:
        be = breakeven_volume(pool, P0, sigma, fee)
    except DomainError:
        be = None
    inputs = {"pool": describe_pool(pool), "P0": P0, "sigma": sigma, "T": T, "gamma": fee.gamma,
              "volume": _volume_dict(volume), "n_paths": n_paths, "steps": steps, "seed": seed}
    return FairPricingReport(Estimate.of(F_T), Estimate.of(L_T), float(pool_value(pool, P0)),
                             float(F_T.mean() - L_T.mean()), diff.se, be, inputs)

