"""Constant function market makers, arbitrage replay and loss-versus-rebalancing."""

from .cfmm_core import (
    BondingFunction,
    ConstantProduct,
    Generic,
    GeometricMean,
    Linear,
    RangeOrder,
    ReservePoint,
    convexity,
    instantaneous_lvr,
    marginal_value,
    optimal_reserves,
    pool_value,
    wgmm_theta_from_cost,
)
from .dynamics import GbmParams, MultiGbmParams, PricePath, simulate_gbm, simulate_multi_gbm
from .errors import (
    ConfigError,
    DomainError,
    FactorizationError,
    LvrLabError,
    NonConvergence,
    NonSmoothPoint,
)

__version__ = "0.1.0"
