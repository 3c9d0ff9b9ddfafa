"""Pools over n risky assets, all priced in an outside numeraire.

The value program is ``V(P) = min { P.x : f(x) = L }``. Its gradient is the
optimal reserve vector and its Hessian is negative semidefinite, and the
instantaneous LVR generalizes to

    l(P) = -1/2 * trace(diag(P) Sigma diag(P) Hess V(P)).

A two-asset pool whose second price is frozen at 1 reproduces the
single-risky-asset pool of ``cfmm_core``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import optimize

from .cfmm_core import _log_root
from .dynamics import MultiPricePath, _open_text
from .errors import DomainError, NonConvergence

KKT_TOL = 1e-10
NEWTON_MAXITER = 100
HESSIAN_STEP = 1e-4


def _price_vector(P, n: int) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (n,):
        raise DomainError(f"expected a price vector of length {n}, got shape {P.shape}")
    if np.any(~(P > 0)):
        raise DomainError("all prices must be strictly positive")
    return P


@dataclass(frozen=True)
class MultiBondingFunction:
    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    level: float
    n: int
    label: str = "custom"

    def __post_init__(self):
        if not self.level > 0:
            raise DomainError(f"bonding level must be positive, got {self.level!r}")


def weighted_geometric_mean_bonding_n(weights, level: float) -> MultiBondingFunction:
    w = np.asarray(weights, dtype=float)

    def f(x):
        return float(np.exp(np.dot(w, np.log(x))))

    def grad(x):
        return w * f(x) / x

    def hess(x):
        v = f(x)
        return v * (np.outer(w, w) - np.diag(w)) / np.outer(x, x)

    return MultiBondingFunction(f, grad, hess, level, w.size, label=f"prod x_i**{w.tolist()}")


@dataclass(frozen=True, eq=False)
class WeightedGeometricMean:
    """``f(x) = prod x_i**theta_i`` with ``sum theta_i = 1``."""

    weights: np.ndarray
    L: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise DomainError("weights must be a non-empty vector")
        if np.any(~(w > 0)):
            raise DomainError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {w.sum()!r}")
        if not self.L > 0:
            raise DomainError(f"L must be positive, got {self.L!r}")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def bonding(self) -> MultiBondingFunction:
        return weighted_geometric_mean_bonding_n(self.weights, self.L)

    def _log_const(self) -> float:
        w = self.weights
        return float(-np.dot(w, np.log(w)))

    def values(self, P: np.ndarray) -> np.ndarray:
        """``V`` for a stack of price vectors (last axis = assets)."""
        return self.L * np.exp(np.log(P) @ self.weights + self._log_const())

    def reserves_batch(self, P: np.ndarray) -> np.ndarray:
        return self.weights * self.values(P)[..., None] / P

    def lvr_rate_batch(self, P: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
        # trace formula with the closed-form Hessian V (theta theta^T - diag theta) / (P P^T):
        # the price factors cancel, leaving a constant multiple of V
        w = self.weights
        c = 0.5 * (np.dot(w, np.diag(Sigma)) - w @ Sigma @ w)
        return c * self.values(P)

    def _value(self, P):
        return float(self.values(P))

    def _reserves(self, P):
        return self.reserves_batch(P)

    def _hessian(self, P):
        w = self.weights
        return self._value(P) * (np.outer(w, w) - np.diag(w)) / np.outer(P, P)


@dataclass(frozen=True, eq=False)
class GenericN:
    """Pool over an arbitrary n-asset bonding function.

    Solves the KKT system ``P = lam * grad f(x)``, ``f(x) = L`` by Newton's
    method in ``(log x, log lam)``, which keeps iterates in the positive
    orthant. If Newton stalls, SLSQP on the same program supplies a new
    starting point for a second Newton pass. The Hessian of ``V`` is the
    central difference of the optimal reserves with step ``1e-4 * P_i``.
    """

    bonding: MultiBondingFunction
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.bonding.n

    @property
    def L(self) -> float:
        return self.bonding.level

    def _start(self, P):
        f, L = self.bonding.evaluate, self.bonding.level
        direction = 1.0 / P
        s = math.exp(_log_root(lambda v: f(math.exp(v) * direction) - L, increasing=True))
        x = s * direction
        lam = float(np.mean(P / self.bonding.gradient(x)))
        return np.log(x), math.log(lam)

    def _residual(self, u, mu, P):
        x = np.exp(u)
        g = self.bonding.gradient(x)
        r = np.empty(self.n + 1)
        r[:-1] = math.exp(mu) * g / P - 1.0
        r[-1] = self.bonding.evaluate(x) / self.bonding.level - 1.0
        return r, x, g

    def _newton(self, u, mu, P):
        n = self.n
        r, x, g = self._residual(u, mu, P)
        for _ in range(NEWTON_MAXITER):
            norm = np.max(np.abs(r))
            if norm <= 1e-14:
                break
            lam = math.exp(mu)
            J = np.zeros((n + 1, n + 1))
            J[:n, :n] = lam * self.bonding.hessian(x) * x[None, :] / P[:, None]
            J[:n, n] = lam * g / P
            J[n, :n] = g * x / self.bonding.level
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-8:
                r_new, x_new, g_new = self._residual(u + t * step[:n], mu + t * step[n], P)
                if np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < norm:
                    break
                t *= 0.5
            else:
                break
            u, mu = u + t * step[:n], mu + t * step[n]
            r, x, g = r_new, x_new, g_new
        return u, mu, float(np.max(np.abs(r)))

    def _fallback(self, u0, P):
        f, L = self.bonding.evaluate, self.bonding.level
        scale = float(np.dot(P, np.exp(u0)))
        res = optimize.minimize(
            lambda u: np.dot(P, np.exp(u)) / scale, u0, method="SLSQP",
            jac=lambda u: P * np.exp(u) / scale,
            constraints=[{"type": "eq", "fun": lambda u: f(np.exp(u)) / L - 1.0}],
            options={"ftol": 1e-14, "maxiter": 500},
        )
        return res.x

    def solve(self, P) -> np.ndarray:
        P = _price_vector(P, self.n)
        key = P.tobytes()
        if key in self._cache:
            return self._cache[key]
        u0, mu0 = self._start(P)
        u, mu, err = self._newton(u0, mu0, P)
        if not err <= KKT_TOL:
            u1 = self._fallback(u0, P)
            lam = float(np.mean(P / self.bonding.gradient(np.exp(u1))))
            u, mu, err = self._newton(u1, math.log(lam), P)
        if not err <= KKT_TOL:
            raise NonConvergence(f"KKT residual {err:.3e} exceeds {KKT_TOL:g} at P={P.tolist()}")
        x = np.exp(u)
        if len(self._cache) < 4096:
            self._cache[key] = x
        return x

    def _value(self, P):
        return float(np.dot(P, self.solve(P)))

    def _reserves(self, P):
        return self.solve(P)

    def _hessian(self, P):
        n = self.n
        H = np.empty((n, n))
        for j in range(n):
            h = HESSIAN_STEP * P[j]
            up, dn = P.copy(), P.copy()
            up[j] += h
            dn[j] -= h
            H[:, j] = (self.solve(up) - self.solve(dn)) / (2.0 * h)
        return 0.5 * (H + H.T)


MultiPool = Union[WeightedGeometricMean, GenericN]


def pool_value_md(pool: MultiPool, P) -> float:
    return pool._value(_price_vector(P, pool.n))


def optimal_reserves_md(pool: MultiPool, P) -> np.ndarray:
    """Optimal reserve vector, which is also the gradient of ``pool_value_md``."""
    return np.asarray(pool._reserves(_price_vector(P, pool.n)), dtype=float)


def value_hessian_md(pool: MultiPool, P) -> np.ndarray:
    return pool._hessian(_price_vector(P, pool.n))


def _check_sigma(Sigma, n: int) -> np.ndarray:
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if S.shape != (n, n):
        raise DomainError(f"Sigma must be {n}x{n}, got {S.shape}")
    return S


def instantaneous_lvr_md(pool: MultiPool, P, Sigma) -> float:
    """``-1/2 trace(diag(P) Sigma diag(P) Hess V(P))``."""
    P = _price_vector(P, pool.n)
    S = _check_sigma(Sigma, pool.n)
    H = pool._hessian(P)
    return float(-0.5 * np.sum((P[:, None] * S * P[None, :]) * H))


@dataclass(frozen=True, eq=False)
class MultiDecompositionReport:
    times: np.ndarray
    prices: np.ndarray
    V: np.ndarray
    R: np.ndarray
    LVR: np.ndarray
    ARB: np.ndarray
    arb_profits: np.ndarray

    @property
    def telescoping_error(self) -> float:
        return float(np.max(np.abs(self.ARB - (self.R - self.V))))

    def to_csv(self, file) -> None:
        n = self.prices.shape[1]
        with _open_text(file, "w") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *[f"price_{i + 1}" for i in range(n)], "V", "R", "LVR", "ARB"])
            for k in range(self.times.size):
                row = [self.times[k], *self.prices[k], self.V[k], self.R[k], self.LVR[k], self.ARB[k]]
                w.writerow([f"{v:.17g}" for v in row])

    def summary(self) -> dict:
        return {
            "steps": int(self.times.size - 1),
            "V_0": float(self.V[0]), "V_T": float(self.V[-1]), "R_T": float(self.R[-1]),
            "LVR_T": float(self.LVR[-1]), "ARB_T": float(self.ARB[-1]),
            "telescoping_error": self.telescoping_error,
            "min_event_profit": float(self.arb_profits.min()) if self.arb_profits.size else 0.0,
        }


def decomposition_md(pool: MultiPool, path: MultiPricePath, Sigma) -> MultiDecompositionReport:
    """Vector analogue of the one-asset decomposition on a multi-asset path."""
    P = np.asarray(path.prices, dtype=float)
    if P.ndim != 2 or P.shape[1] != pool.n:
        raise DomainError(f"path must have shape (N+1, {pool.n})")
    S = _check_sigma(Sigma, pool.n)
    dt = np.diff(path.times)
    if isinstance(pool, WeightedGeometricMean):
        V, X = pool.values(P), pool.reserves_batch(P)
        rate = pool.lvr_rate_batch(P[:-1], S)
    else:
        X = np.array([optimal_reserves_md(pool, p) for p in P])
        V = np.einsum("ki,ki->k", P, X)
        rate = np.array([instantaneous_lvr_md(pool, p, S) for p in P[:-1]])
    R = np.empty_like(V)
    R[0] = V[0]
    np.cumsum(np.einsum("ki,ki->k", X[:-1], np.diff(P, axis=0)), out=R[1:])
    R[1:] += V[0]
    LVR = np.zeros_like(V)
    np.cumsum(rate * dt, out=LVR[1:])
    profits = np.einsum("ki,ki->k", P[1:], X[:-1] - X[1:])
    ARB = np.zeros_like(V)
    np.cumsum(profits, out=ARB[1:])
    return MultiDecompositionReport(path.times, P, V, R, LVR, ARB, profits)
