"""Risk-neutral price paths: driftless geometric Brownian motion.

Paths are sampled with the exact lognormal transition

    P[k+1] = P[k] * exp(-sigma^2 dt / 2 + sigma sqrt(dt) Z[k])

so the price itself carries no discretization bias. The normal draws come
from a Philox counter-based generator keyed by ``(seed, path_index)``; draw
``k`` is a pure function of ``(seed, path_index, k)``. Batches can therefore
be generated in any order, or in parallel, and still be bit-identical.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import DomainError, FactorizationError

_MASK64 = (1 << 64) - 1
SYMMETRY_TOL = 1e-12
EIGEN_CLAMP = 1e-12


def standard_normals(seed: int, path_index: int, count: int) -> np.ndarray:
    """The first ``count`` standard normals of stream ``(seed, path_index)``.

    Each 64-bit Philox output is mapped to a uniform on the open unit
    interval (53 bits, centred in its cell) and then through the inverse
    normal CDF.
    """
    if seed < 0 or path_index < 0:
        raise DomainError("seed and path_index must be non-negative")
    key = (seed & _MASK64) | ((path_index & _MASK64) << 64)
    raw = np.random.Philox(key=key).random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class GbmParams:
    P0: float
    sigma: float

    def __post_init__(self):
        if not self.P0 > 0:
            raise DomainError(f"P0 must be positive, got {self.P0!r}")
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be non-negative, got {self.sigma!r}")


@dataclass(frozen=True, eq=False)
class PricePath:
    """Prices on a time grid. ``scheme`` is "exact-lognormal" or "external"."""

    times: np.ndarray
    prices: np.ndarray
    seed: int | None = None
    scheme: str = "exact-lognormal"
    path_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise DomainError("times and prices must be 1-d arrays of equal length")
        if t.size and np.any(np.diff(t) <= 0):
            raise DomainError("times must be strictly increasing")
        if np.any(~(p > 0)):
            raise DomainError("prices must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "prices", p)

    def __len__(self):
        return self.prices.size

    @property
    def steps(self) -> int:
        return self.prices.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def coarsen(self, factor: int) -> "PricePath":
        """Every ``factor``-th point; the same Brownian path on a coarser grid."""
        if factor < 1 or self.steps % factor:
            raise DomainError(f"factor {factor} must divide the step count {self.steps}")
        return PricePath(self.times[::factor], self.prices[::factor], self.seed,
                         self.scheme, self.path_index, dict(self.meta))

    def to_csv(self, file) -> None:
        """Write ``t,price`` rows with 17 significant digits."""
        with _open_text(file, "w") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "price"])
            for t, p in zip(self.times, self.prices):
                w.writerow([f"{t:.17g}", f"{p:.17g}"])


def _open_text(file, mode):
    if hasattr(file, "write") or hasattr(file, "read"):
        from contextlib import nullcontext

        return nullcontext(file)
    return open(Path(file), mode, newline="")


def _check_grid(T: float, N: int):
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T!r}")
    if int(N) != N or N < 1:
        raise DomainError(f"steps must be a positive integer, got {N!r}")


def _log_paths(sigma: float, T: float, N: int, seed: int, indices) -> np.ndarray:
    dt = T / N
    out = np.zeros((len(indices), N + 1))
    if sigma == 0:
        return out
    drift, scale = -0.5 * sigma * sigma * dt, sigma * math.sqrt(dt)
    for row, idx in enumerate(indices):
        np.cumsum(drift + scale * standard_normals(seed, idx, N), out=out[row, 1:])
    return out


def simulate_gbm(params: GbmParams, T: float, N: int, seed: int, path_index: int = 0) -> PricePath:
    """One exact-lognormal GBM path on the uniform grid ``k*T/N``."""
    _check_grid(T, N)
    logp = _log_paths(params.sigma, T, N, seed, [path_index])[0]
    prices = params.P0 * np.exp(logp)
    times = np.linspace(0.0, T, N + 1)
    return PricePath(times, prices, seed, "exact-lognormal", path_index,
                     {"P0": params.P0, "sigma": params.sigma})


def simulate_gbm_batch(params: GbmParams, T: float, N: int, seed: int, n_paths: int,
                       first_index: int = 0, threads: int = 1) -> np.ndarray:
    """Price matrix of shape ``(n_paths, N + 1)``; row ``i`` is path ``first_index + i``.

    Row ``i`` equals ``simulate_gbm(..., path_index=first_index + i).prices``
    exactly, whatever ``threads`` is.
    """
    _check_grid(T, N)
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    indices = list(range(first_index, first_index + n_paths))
    if threads <= 1 or n_paths == 1:
        logp = _log_paths(params.sigma, T, N, seed, indices)
    else:
        chunks = [indices[i::threads] for i in range(threads)]
        logp = np.empty((n_paths, N + 1))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(lambda c: _log_paths(params.sigma, T, N, seed, c), chunks)
            for i, part in enumerate(parts):
                logp[i::threads] = part
    return params.P0 * np.exp(logp)


@dataclass(frozen=True, eq=False)
class MultiGbmParams:
    """Correlated GBM for ``n`` assets with per-time return covariance ``Sigma``."""

    P0: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        P0 = np.atleast_1d(np.asarray(self.P0, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        n = P0.size
        if S.shape != (n, n):
            raise DomainError(f"Sigma must be {n}x{n}, got {S.shape}")
        if np.any(~(P0 > 0)):
            raise DomainError("initial prices must be positive")
        object.__setattr__(self, "P0", P0)
        object.__setattr__(self, "Sigma", S)

    @property
    def n(self) -> int:
        return self.P0.size

    def sqrt_factor(self) -> np.ndarray:
        """Symmetric square root of ``Sigma``; eigenvalues in [-1e-12, 0) are clamped."""
        S = self.Sigma
        if np.max(np.abs(S - S.T), initial=0.0) > SYMMETRY_TOL:
            raise FactorizationError("Sigma is not symmetric")
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        if np.any(w < -EIGEN_CLAMP):
            raise FactorizationError(f"Sigma is not positive semidefinite (min eigenvalue {w.min():.3e})")
        w = np.clip(w, 0.0, None)
        return (V * np.sqrt(w)) @ V.T


@dataclass(frozen=True, eq=False)
class MultiPricePath:
    times: np.ndarray
    prices: np.ndarray  # shape (N + 1, n)
    seed: int | None = None
    scheme: str = "exact-lognormal"
    path_index: int = 0

    @property
    def n(self) -> int:
        return self.prices.shape[1]

    @property
    def steps(self) -> int:
        return self.prices.shape[0] - 1


def simulate_multi_gbm(params: MultiGbmParams, T: float, N: int, seed: int,
                       path_index: int = 0) -> MultiPricePath:
    """Exact lognormal step for each asset driven by ``Sigma^(1/2) dB``."""
    _check_grid(T, N)
    A = params.sqrt_factor()
    n, dt = params.n, T / N
    Z = standard_normals(seed, path_index, N * n).reshape(N, n)
    incr = -0.5 * np.diag(params.Sigma) * dt + math.sqrt(dt) * Z @ A.T
    logp = np.vstack([np.zeros(n), np.cumsum(incr, axis=0)])
    return MultiPricePath(np.linspace(0.0, T, N + 1), params.P0 * np.exp(logp), seed,
                          "exact-lognormal", path_index)


def realized_quadratic_variation(path) -> float:
    """Sum of squared price increments, ``sum_k (P[k+1] - P[k])**2``."""
    prices = path.prices if isinstance(path, PricePath) else np.asarray(path, dtype=float)
    if prices.size < 2:
        raise DomainError("quadratic variation needs at least two points")
    return float(np.sum(np.diff(prices) ** 2))
