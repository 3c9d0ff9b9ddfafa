"""Constant function market maker pools and their value functions.

A pool is a level set ``f(x, y) = L`` of a bonding function over risky
reserves ``x`` and numeraire reserves ``y``. Under continuous arbitrage the
pool sits at the reserves minimizing ``P*x + y`` on that level set, so
everything downstream is a function of the external price ``P``:

    V(P)   = min { P*x + y : f(x, y) = L }
    V'(P)  = x*(P)                        (envelope theorem)
    V''(P) = x*'(P) <= 0
    l(P)   = -sigma^2 P^2 V''(P) / 2      (instantaneous LVR)

Closed forms are provided for the weighted geometric mean, constant product,
single-range concentrated liquidity and linear (limit order) pools. A
``Generic`` pool accepts any bonding function with a gradient and Hessian and
solves the value program numerically.

All closed-form evaluations accept scalars or numpy arrays; a scalar in gives
a Python float out.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Union

import numpy as np
from scipy import optimize

from .errors import DomainError, NonConvergence, NonSmoothPoint

ArrayLike = Union[float, np.ndarray]

SOLVER_TOL = 1e-12
SOLVER_MAXITER = 200
_TINY = 1e-300
_FAR = 1e3


def _wrap(values: np.ndarray, scalar: bool):
    return float(values) if scalar else values


def _prices(P: ArrayLike, *, allow_zero: bool = True) -> tuple[np.ndarray, bool]:
    arr = np.asarray(P, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError("price is NaN")
    if np.any(arr < 0):
        raise DomainError(f"price must be non-negative, got {np.min(arr)!r}")
    if not allow_zero and np.any(arr == 0):
        raise DomainError("price must be strictly positive")
    return arr, arr.ndim == 0


# ---------------------------------------------------------------------------
# Bonding functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BondingFunction:
    """A bonding function ``f(x, y)`` together with its invariant level.

    ``gradient`` returns ``(f_x, f_y)`` and ``hessian`` returns
    ``(f_xx, f_xy, f_yy)``. ``f`` must be strictly increasing in both
    arguments on the positive orthant. Square-integrability of the implied
    reserves along price paths is the caller's responsibility; it cannot be
    checked numerically.
    """

    evaluate: Callable[[float, float], float]
    gradient: Callable[[float, float], tuple[float, float]]
    hessian: Callable[[float, float], tuple[float, float, float]]
    level: float
    label: str = "custom"

    def __post_init__(self):
        if not self.level > 0:
            raise DomainError(f"bonding level must be positive, got {self.level!r}")

    @classmethod
    def from_expression(cls, expression: str, level: float) -> "BondingFunction":
        """Build a bonding function from a sympy-parsable expression in ``x`` and ``y``."""
        import sympy

        x, y = sympy.symbols("x y", positive=True)
        try:
            expr = sympy.sympify(expression, locals={"x": x, "y": y})
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise DomainError(f"cannot parse bonding expression {expression!r}: {exc}") from exc
        extra = expr.free_symbols - {x, y}
        if extra:
            names = ", ".join(sorted(str(s) for s in extra))
            raise DomainError(f"bonding expression has unknown symbols: {names}")
        fx, fy = sympy.diff(expr, x), sympy.diff(expr, y)
        parts = [expr, fx, fy, sympy.diff(fx, x), sympy.diff(fx, y), sympy.diff(fy, y)]
        f, gx, gy, hxx, hxy, hyy = (sympy.lambdify((x, y), p, "math") for p in parts)
        return cls(
            evaluate=lambda a, b: float(f(a, b)),
            gradient=lambda a, b: (float(gx(a, b)), float(gy(a, b))),
            hessian=lambda a, b: (float(hxx(a, b)), float(hxy(a, b)), float(hyy(a, b))),
            level=float(level),
            label=expression,
        )


def product_bonding(level: float) -> BondingFunction:
    """``f(x, y) = x*y``."""
    return BondingFunction(
        evaluate=lambda x, y: x * y,
        gradient=lambda x, y: (y, x),
        hessian=lambda x, y: (0.0, 1.0, 0.0),
        level=level,
        label="x*y",
    )


def geometric_mean_bonding(theta: float, level: float) -> BondingFunction:
    """``f(x, y) = x**theta * y**(1 - theta)``."""
    if not 0 < theta < 1:
        raise DomainError(f"theta must lie in (0, 1), got {theta!r}")
    a, b = theta, 1.0 - theta

    def f(x, y):
        return x**a * y**b

    def grad(x, y):
        v = f(x, y)
        return a * v / x, b * v / y

    def hess(x, y):
        v = f(x, y)
        return a * (a - 1) * v / x**2, a * b * v / (x * y), b * (b - 1) * v / y**2

    return BondingFunction(f, grad, hess, level, label=f"x**{a}*y**{b}")


# ---------------------------------------------------------------------------
# Pools
# ---------------------------------------------------------------------------


class ReservePoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class GeometricMean:
    """Weighted geometric mean pool, ``f = x**theta * y**(1-theta)``.

    Powers are evaluated in log space; theta close to 0 or 1 is allowed but
    numerically delicate.
    """

    theta: float
    L: float = 1.0
    smooth = True

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise DomainError(f"theta must lie in (0, 1), got {self.theta!r}")
        if not self.L > 0:
            raise DomainError(f"L must be positive, got {self.L!r}")

    @property
    def bonding(self) -> BondingFunction:
        return geometric_mean_bonding(self.theta, self.L)

    def _logs(self, P):
        with np.errstate(divide="ignore"):
            return np.log(P), math.log(self.theta), math.log1p(-self.theta)

    def _value(self, P):
        t = self.theta
        logP, lt, l1t = self._logs(P)
        return self.L * np.exp(t * logP - t * lt - (1 - t) * l1t)

    def _reserves(self, P):
        t = self.theta
        logP, lt, l1t = self._logs(P)
        x = self.L * np.exp((1 - t) * (lt - l1t - logP))
        y = self.L * np.exp(t * (l1t - lt + logP))
        return x, y

    def _marginal(self, P):
        return self._reserves(P)[0]

    def _curvature(self, P):
        t = self.theta
        logP, lt, l1t = self._logs(P)
        return -self.L * np.exp((1 - t) * lt + t * l1t - (2 - t) * logP)


@dataclass(frozen=True)
class ConstantProduct:
    """Constant product pool ``x*y = L**2``, i.e. ``sqrt(x*y) = L``."""

    L: float = 1.0
    smooth = True

    def __post_init__(self):
        if not self.L > 0:
            raise DomainError(f"L must be positive, got {self.L!r}")

    @property
    def theta(self) -> float:
        return 0.5

    @property
    def bonding(self) -> BondingFunction:
        return geometric_mean_bonding(0.5, self.L)

    def _value(self, P):
        return 2.0 * self.L * np.sqrt(P)

    def _reserves(self, P):
        s = np.sqrt(P)
        with np.errstate(divide="ignore"):
            return self.L / s, self.L * s

    def _marginal(self, P):
        return self.L / np.sqrt(P)

    def _curvature(self, P):
        return -self.L / (2.0 * P**1.5)


@dataclass(frozen=True)
class RangeOrder:
    """Single concentrated-liquidity range ``[P_a, P_b]``.

    Outside the range the reserves are frozen at the boundary: all risky
    below ``P_a``, all numeraire above ``P_b``. The value is then linear in
    price and the curvature (hence LVR) is zero.
    """

    L: float
    P_a: float
    P_b: float
    smooth = True

    def __post_init__(self):
        if not self.L > 0:
            raise DomainError(f"L must be positive, got {self.L!r}")
        if not 0 < self.P_a < self.P_b:
            raise DomainError(f"need 0 < P_a < P_b, got P_a={self.P_a!r}, P_b={self.P_b!r}")

    @property
    def bonding(self) -> BondingFunction:
        L, ra, rb = self.L, math.sqrt(self.P_a), math.sqrt(self.P_b)
        return BondingFunction.from_expression(
            f"sqrt(x + {L!r}/{rb!r}) * sqrt(y + {L!r}*{ra!r})", L
        )

    def _reserves(self, P):
        p = np.clip(P, self.P_a, self.P_b)
        s = np.sqrt(p)
        x = self.L * (1.0 / s - 1.0 / math.sqrt(self.P_b))
        y = self.L * (s - math.sqrt(self.P_a))
        return x, y

    def _value(self, P):
        x, y = self._reserves(P)
        return P * x + y

    def _marginal(self, P):
        return self._reserves(P)[0]

    def _curvature(self, P):
        inside = (P >= self.P_a) & (P <= self.P_b)
        with np.errstate(divide="ignore"):
            return np.where(inside, -self.L / (2.0 * np.power(P, 1.5)), 0.0)


@dataclass(frozen=True)
class Linear:
    """Linear pool ``K*x + y = L``: a limit order to sell ``L/K`` units at ``K``.

    The value function has a kink at ``P = K``; derivatives raise there.
    """

    K: float
    L: float = 1.0
    smooth = False

    def __post_init__(self):
        if not self.K > 0:
            raise DomainError(f"K must be positive, got {self.K!r}")
        if not self.L > 0:
            raise DomainError(f"L must be positive, got {self.L!r}")

    @property
    def bonding(self) -> BondingFunction:
        K = self.K
        return BondingFunction(
            evaluate=lambda x, y: K * x + y,
            gradient=lambda x, y: (K, 1.0),
            hessian=lambda x, y: (0.0, 0.0, 0.0),
            level=self.L,
            label=f"{K!r}*x + y",
        )

    def _check_kink(self, P):
        if np.any(P == self.K):
            raise NonSmoothPoint(f"linear pool value function is not differentiable at P = K = {self.K!r}")

    def _reserves(self, P):
        below = P < self.K
        return np.where(below, self.L / self.K, 0.0), np.where(below, 0.0, self.L)

    def _value(self, P):
        return self.L * np.minimum(P / self.K, 1.0)

    def _marginal(self, P):
        self._check_kink(P)
        return self._reserves(P)[0]

    def _curvature(self, P):
        self._check_kink(P)
        return np.zeros_like(P)


@dataclass(frozen=True)
class Generic:
    """Pool over an arbitrary bonding function, solved numerically.

    The optimal reserves satisfy the tangency condition
    ``f_x(x, y) = P * f_y(x, y)`` on the level set. Along the level curve
    ``y(x)`` the ratio ``f_x / f_y`` is decreasing in ``x``, so the root is
    bracketed by geometric expansion and then located by Brent's method in
    ``log x``; ``y(x)`` is found the same way since ``f`` increases in ``y``.
    Only interior optima are supported: corner solutions raise
    ``NonConvergence``.
    """

    bonding: BondingFunction
    smooth = True
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    @property
    def L(self) -> float:
        return self.bonding.level

    def _y_of_x(self, x: float) -> float:
        f, L = self.bonding.evaluate, self.bonding.level

        def g(v):
            return f(x, math.exp(v)) - L

        return math.exp(_log_root(g, increasing=True))

    def _solve(self, P: float) -> tuple[float, float]:
        if P in self._cache:
            return self._cache[P]
        grad = self.bonding.gradient

        def h(u):
            x = math.exp(u)
            try:
                y = self._y_of_x(x)
            except NonConvergence:
                # off the level curve: past its x-intercept if f(x, 0+) >= L
                past = self.bonding.evaluate(x, _TINY) >= self.bonding.level
                return -_FAR if past else _FAR
            fx, fy = grad(x, y)
            return math.log(fx) - math.log(fy) - math.log(P)

        try:
            u = _log_root(h, increasing=False)
        except (ValueError, OverflowError, ZeroDivisionError, RuntimeError) as exc:
            raise NonConvergence(f"generic pool solver failed at P={P!r}: {exc}") from exc
        x = math.exp(u)
        y = self._y_of_x(x)
        fx, fy = grad(x, y)
        residual = abs(fx - P * fy) / (abs(fx) + P * abs(fy))
        # brentq stops once the bracket is at floating resolution in log x; the
        # stationarity residual then sits at roundoff, well inside tolerance
        if residual > 1e3 * SOLVER_TOL:
            raise NonConvergence(f"stationarity residual {residual:.3e} at P={P!r}")
        if len(self._cache) < 4096:
            self._cache[P] = (x, y)
        return x, y

    def _map(self, P, fn):
        flat = np.ravel(P)
        out = np.array([fn(float(p)) for p in flat], dtype=float)
        return out.reshape(np.shape(P))

    def _reserves(self, P):
        if np.any(P == 0):
            raise DomainError("generic pools require a strictly positive price")
        flat = np.ravel(P)
        xs, ys = zip(*(self._solve(float(p)) for p in flat)) if flat.size else ((), ())
        shape = np.shape(P)
        return np.array(xs, dtype=float).reshape(shape), np.array(ys, dtype=float).reshape(shape)

    def _value(self, P):
        x, y = self._reserves(P)
        return P * x + y

    def _marginal(self, P):
        return self._reserves(P)[0]

    def _curvature(self, P):
        return self._map(P, self._curvature_at)

    def _curvature_at(self, P: float) -> float:
        x, y = self._solve(P)
        _, fy = self.bonding.gradient(x, y)
        fxx, fxy, fyy = self.bonding.hessian(x, y)
        denom = fxx - 2.0 * P * fxy + P * P * fyy
        if denom == 0 or not math.isfinite(denom):
            raise NonConvergence(f"degenerate bonding-function Hessian at P={P!r}")
        return fy / denom


def _log_root(g: Callable[[float], float], *, increasing: bool) -> float:
    lo, hi = _expand_bracket(g, increasing=increasing)
    if lo == hi:
        return lo
    root, info = optimize.brentq(
        g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
        maxiter=SOLVER_MAXITER, full_output=True, disp=False,
    )
    if not info.converged:
        raise NonConvergence(f"root search did not converge in {SOLVER_MAXITER} iterations")
    return root


def _expand_bracket(g: Callable[[float], float], *, increasing: bool, start: float = 0.0):
    """Find ``lo < hi`` with a sign change of ``g`` by doubling steps outward in log space."""
    sign = 1.0 if increasing else -1.0
    g0 = sign * g(start)
    if g0 == 0:
        return start, start
    step = 1.0
    direction = -1.0 if g0 > 0 else 1.0
    prev = start
    for _ in range(SOLVER_MAXITER):
        cur = start + direction * step
        try:
            gc = sign * g(cur)
        except (OverflowError, ZeroDivisionError, ValueError):
            gc = math.nan
        if math.isnan(gc):
            break
        if (gc > 0) != (g0 > 0) or gc == 0:
            return (cur, prev) if cur < prev else (prev, cur)
        prev = cur
        step *= 2.0
        if step > 1400:
            break
    raise NonConvergence("could not bracket the root (corner solution or invalid bonding function)")


Pool = Union[GeometricMean, ConstantProduct, RangeOrder, Linear, Generic]


def describe_pool(pool: Pool) -> dict:
    """JSON-friendly description of a pool, echoed into reports."""
    if isinstance(pool, Generic):
        return {"kind": "generic", "expression": pool.bonding.label, "L": pool.L}
    kinds = {GeometricMean: "geometric-mean", ConstantProduct: "constant-product",
             RangeOrder: "range-order", Linear: "linear"}
    return {"kind": kinds[type(pool)], **dataclasses.asdict(pool)}


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def pool_value(pool: Pool, P: ArrayLike) -> ArrayLike:
    """Pool value ``V(P)``: the cheapest reserve holding on the level set at price ``P``."""
    arr, scalar = _prices(P)
    return _wrap(pool._value(arr), scalar)


def optimal_reserves(pool: Pool, P: ArrayLike) -> ReservePoint:
    """Reserves ``(x*(P), y*(P))`` held by the pool after arbitrage at price ``P``."""
    arr, scalar = _prices(P)
    if not isinstance(pool, (RangeOrder, Linear)) and np.any(arr == 0):
        raise DomainError("optimal reserves need a strictly positive price")
    x, y = pool._reserves(arr)
    return ReservePoint(_wrap(x, scalar), _wrap(y, scalar))


def marginal_value(pool: Pool, P: ArrayLike) -> ArrayLike:
    """``V'(P)``, which by the envelope theorem equals the risky reserves ``x*(P)``."""
    arr, scalar = _prices(P, allow_zero=False)
    return _wrap(pool._marginal(arr), scalar)


def convexity(pool: Pool, P: ArrayLike) -> ArrayLike:
    """Second derivative ``V''(P)``; non-positive for every valid pool.

    Generic pools use the bonding-function Hessian
    ``V'' = f_y / (f_xx - 2 P f_xy + P^2 f_yy)`` at the optimal reserves.
    """
    arr, scalar = _prices(P, allow_zero=False)
    return _wrap(pool._curvature(arr), scalar)


def instantaneous_lvr(pool: Pool, P: ArrayLike, sigma: float) -> ArrayLike:
    """Instantaneous loss-versus-rebalancing rate ``-sigma^2 P^2 V''(P) / 2``.

    ``sigma`` is volatility per square-root time unit; the result is in
    numeraire per time unit.
    """
    if not sigma >= 0:
        raise DomainError(f"sigma must be non-negative, got {sigma!r}")
    arr, scalar = _prices(P, allow_zero=False)
    return _wrap(-0.5 * sigma * sigma * arr * arr * pool._curvature(arr), scalar)


def wgmm_theta_from_cost(c: float, sigma: float) -> float:
    """Weight of the geometric mean pool whose LVR per unit value is ``c``.

    Inverts ``c = sigma^2 theta (1 - theta) / 2`` on the branch
    ``theta <= 1/2``. Raises ``DomainError`` when ``8c > sigma^2``: no
    concave value function has that constant loss ratio.
    """
    if c < 0:
        raise DomainError(f"cost must be non-negative, got {c!r}")
    if c == 0:
        return 0.0
    if not sigma > 0:
        raise DomainError("positive cost requires positive sigma")
    ratio = 8.0 * c / (sigma * sigma)
    if ratio > 1.0 + 1e-12:
        raise DomainError(f"8c/sigma^2 = {ratio!r} exceeds 1; no concave solution exists")
    disc = max(0.0, 1.0 - ratio)
    # (1 - sqrt(D)) / 2 rewritten to avoid cancellation for small c
    return ratio / (2.0 * (1.0 + math.sqrt(disc)))
