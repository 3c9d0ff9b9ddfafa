"""Scenario configuration: a strict TOML schema.

Physical parameters (``P0``, ``sigma``/``Sigma``, ``T``) have no defaults.
Numeric knobs do: ``steps = 10_000``, ``n_paths = 1``, ``seed = 0``. Any
key not in the schema is rejected before computation starts.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("decompose", "expected-lvr", "fair-pricing", "breakeven", "convergence-study", "multidim")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometricMeanSpec(_Strict):
    kind: Literal["geometric-mean"]
    theta: float
    L: float = 1.0


class ConstantProductSpec(_Strict):
    kind: Literal["constant-product"]
    L: float = 1.0


class RangeOrderSpec(_Strict):
    kind: Literal["range-order"]
    L: float = 1.0
    P_a: float
    P_b: float


class LinearSpec(_Strict):
    kind: Literal["linear"]
    K: float
    L: float = 1.0


class GenericSpec(_Strict):
    kind: Literal["generic"]
    expression: str
    L: float = 1.0


class WeightedGeometricMeanSpec(_Strict):
    kind: Literal["weighted-geometric-mean"]
    weights: list[float]
    L: float = 1.0


PoolSpec = Annotated[
    Union[GeometricMeanSpec, ConstantProductSpec, RangeOrderSpec, LinearSpec, GenericSpec,
          WeightedGeometricMeanSpec],
    Field(discriminator="kind"),
]


class DynamicsSpec(_Strict):
    P0: Union[float, list[float]]
    sigma: Optional[float] = None
    Sigma: Optional[list[list[float]]] = None
    T: Optional[float] = None
    steps: int = Field(10_000, ge=1)


class MonteCarloSpec(_Strict):
    n_paths: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)


class BenchmarksSpec(_Strict):
    include: list[Literal["hodl", "rebalancing"]] = ["hodl"]
    constant: list[float] = []


class VolumeSpec(_Strict):
    kind: Literal["constant", "proportional"]
    rate: float = Field(ge=0)


class FeesSpec(_Strict):
    gamma: float = Field(ge=0, lt=1)
    volume: Optional[VolumeSpec] = None
    trailing_window: Optional[int] = Field(None, ge=1)


class OutputsSpec(_Strict):
    dir: str = "out"
    max_path_csvs: int = Field(8, ge=0)
    all_paths: bool = False
    series: list[Literal["prices", "decomposition"]] = ["prices", "decomposition"]
    realized_lvr: bool = False


class ConvergenceSpec(_Strict):
    steps: list[int] = [100, 1_000, 10_000, 100_000]


class ScenarioConfig(_Strict):
    mode: Literal[MODES]  # type: ignore[valid-type]
    pool: PoolSpec
    dynamics: DynamicsSpec
    monte_carlo: MonteCarloSpec = MonteCarloSpec()
    benchmarks: BenchmarksSpec = BenchmarksSpec()
    fees: Optional[FeesSpec] = None
    outputs: OutputsSpec = OutputsSpec()
    convergence: ConvergenceSpec = ConvergenceSpec()

    @model_validator(mode="after")
    def _mode_requirements(self):
        d, multi = self.dynamics, self.mode == "multidim"
        if multi != isinstance(self.pool, WeightedGeometricMeanSpec):
            raise ValueError("mode 'multidim' requires pool kind 'weighted-geometric-mean' and vice versa")
        if multi:
            if not isinstance(d.P0, list) or d.Sigma is None:
                raise ValueError("multidim mode needs a P0 vector and a Sigma matrix")
        else:
            if isinstance(d.P0, list):
                raise ValueError("P0 must be a scalar outside multidim mode")
            if d.sigma is None:
                raise ValueError("dynamics.sigma is required")
        if self.mode != "breakeven" and d.T is None:
            raise ValueError("dynamics.T is required")
        if self.mode in ("fair-pricing", "breakeven") and self.fees is None:
            raise ValueError(f"mode '{self.mode}' needs a [fees] table")
        if self.mode == "fair-pricing" and self.fees.volume is None:
            raise ValueError("fair-pricing needs [fees.volume]")
        return self


def _format_errors(exc: pydantic.ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
