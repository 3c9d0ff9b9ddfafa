"""Executes a ScenarioConfig and writes its artifacts.

Every mode writes ``summary.json``. Path-level CSVs are capped by
``outputs.max_path_csvs`` unless ``outputs.all_paths`` is set. Outputs carry
no timestamps, so identical configs give byte-identical files.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .. import cfmm_core as core
from ..decomposition import (
    Estimate,
    constant_benchmark,
    convergence_study,
    decompose,
    expected_lvr,
    rebalancing_benchmark,
)
from ..dynamics import GbmParams, MultiGbmParams, simulate_gbm, simulate_multi_gbm
from ..errors import ConfigError, DomainError, LvrLabError
from ..fees import (
    ConstantRate,
    FeeParams,
    ProportionalToPoolValue,
    accrue_fees,
    breakeven_volume,
    fair_pricing_report,
    trailing_comparison,
)
from ..multidim import WeightedGeometricMean, decomposition_md
from .config import ScenarioConfig

log = logging.getLogger(__name__)


def build_pool(spec) -> core.Pool:
    try:
        return _build_pool(spec)
    except DomainError as exc:
        raise ConfigError(f"invalid pool parameters: {exc}") from exc


def _build_pool(spec) -> core.Pool:
    kind = spec.kind
    if kind == "geometric-mean":
        return core.GeometricMean(spec.theta, spec.L)
    if kind == "constant-product":
        return core.ConstantProduct(spec.L)
    if kind == "range-order":
        return core.RangeOrder(spec.L, spec.P_a, spec.P_b)
    if kind == "linear":
        return core.Linear(spec.K, spec.L)
    if kind == "generic":
        return core.Generic(core.BondingFunction.from_expression(spec.expression, spec.L))
    if kind == "weighted-geometric-mean":
        return WeightedGeometricMean(np.asarray(spec.weights), spec.L)
    raise ConfigError(f"unknown pool kind {kind!r}")


_POOL_KEYS = {
    "geometric-mean": ("theta", "L"),
    "constant-product": ("L",),
    "range-order": ("L", "P_a", "P_b"),
    "linear": ("K", "L"),
    "generic": ("expression", "L"),
}


def parse_pool_string(text: str) -> core.Pool:
    """Parse ``kind:key=value,...``, e.g. ``range-order:L=1,P_a=1,P_b=4``.

    A generic pool takes its expression last, since it may contain commas:
    ``generic:L=1,expression=x*y``.
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind not in _POOL_KEYS:
        raise ConfigError(f"unknown pool kind {kind!r}; expected one of {sorted(_POOL_KEYS)}")
    params: dict = {"kind": kind}
    if "expression=" in rest:
        rest, _, expr = rest.partition("expression=")
        params["expression"] = expr
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq or key not in _POOL_KEYS[kind]:
            raise ConfigError(f"bad pool parameter {item!r} for kind {kind!r}")
        try:
            params[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"pool parameter {key} is not a number: {value!r}") from exc
    from .config import parse_config

    cfg = parse_config({"mode": "breakeven", "pool": params, "dynamics": {"P0": 1.0, "sigma": 0.0},
                        "fees": {"gamma": 0.0}})
    return build_pool(cfg.pool)


def _benchmarks(cfg: ScenarioConfig, pool):
    out = []
    if "rebalancing" in cfg.benchmarks.include:
        out.append(rebalancing_benchmark(pool))
    out.extend(constant_benchmark(q) for q in cfg.benchmarks.constant)
    return out


def _volume(spec):
    return ConstantRate(spec.rate) if spec.kind == "constant" else ProportionalToPoolValue(spec.rate)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def run(cfg: ScenarioConfig, out_dir=None, threads: int = 1, seed: int | None = None) -> dict:
    """Run one scenario. Returns the summary that is also written to ``summary.json``."""
    out = Path(out_dir if out_dir is not None else cfg.outputs.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    seed = cfg.monte_carlo.seed if seed is None else seed
    pool = build_pool(cfg.pool)
    handler = _MODES[cfg.mode]
    log.info("running mode %s with seed %d", cfg.mode, seed)
    result = handler(cfg, pool, out, threads, seed)
    summary = {"mode": cfg.mode, "seed": seed, "config": cfg.model_dump(mode="json"), "result": result}
    _write_json(out / "summary.json", summary)
    return summary


def _decompose(cfg, pool, out, threads, seed):
    d, o = cfg.dynamics, cfg.outputs
    params = GbmParams(d.P0, d.sigma)
    cap = cfg.monte_carlo.n_paths if o.all_paths else o.max_path_csvs
    terms = {k: [] for k in ("V_T", "R_T", "LVR_T", "ARB_T", "LVB_hodl_T", "Delta_hodl_T")}
    per_path, worst_telescoping = [], 0.0
    benches = _benchmarks(cfg, pool)
    for i in range(cfg.monte_carlo.n_paths):
        path = simulate_gbm(params, d.T, d.steps, seed, path_index=i)
        rep = decompose(pool, path, d.sigma, benches, realized=o.realized_lvr)
        s = rep.summary()
        worst_telescoping = max(worst_telescoping, rep.telescoping_error)
        for k in ("V_T", "R_T", "LVR_T", "ARB_T"):
            terms[k].append(s[k])
        terms["LVB_hodl_T"].append(s["benchmarks"]["HODL"]["LVB_T"])
        terms["Delta_hodl_T"].append(s["benchmarks"]["HODL"]["Delta_T"])
        if cfg.fees is not None and cfg.fees.volume is not None:
            F = accrue_fees(_volume(cfg.fees.volume), FeeParams(cfg.fees.gamma), path, pool)
            s["F_T"] = float(F[-1])
            if cfg.fees.trailing_window:
                tc = trailing_comparison(F, rep.LVR, cfg.fees.trailing_window)
                s["trailing_fee_to_lvr_ratio_T"] = float(tc["ratio"][-1])
        if i < cap:
            per_path.append(s)
            if "prices" in o.series:
                path.to_csv(out / f"path_{i:04d}.csv")
            if "decomposition" in o.series:
                rep.to_csv(out / f"decomposition_{i:04d}.csv")
    stats = {k: Estimate.of(np.asarray(v)).as_dict() for k, v in terms.items()}
    return {"paths": per_path, "monte_carlo": stats, "max_telescoping_error": worst_telescoping}


def _expected_lvr(cfg, pool, out, threads, seed):
    d = cfg.dynamics
    res = expected_lvr(pool, d.P0, d.sigma, d.T, cfg.monte_carlo.n_paths, d.steps, seed, threads)
    return res.as_dict()


def _fair_pricing(cfg, pool, out, threads, seed):
    d, f = cfg.dynamics, cfg.fees
    rep = fair_pricing_report(pool, d.P0, d.sigma, d.T, _volume(f.volume), FeeParams(f.gamma),
                              cfg.monte_carlo.n_paths, d.steps, seed)
    payload = rep.as_dict()
    _write_json(out / "fair_pricing.json", payload)
    return payload


def _breakeven(cfg, pool, out, threads, seed):
    d = cfg.dynamics
    rate = float(core.instantaneous_lvr(pool, d.P0, d.sigma))
    value = float(core.pool_value(pool, d.P0))
    return {
        "breakeven_volume_fraction": breakeven_volume(pool, d.P0, d.sigma, FeeParams(cfg.fees.gamma)),
        "instantaneous_lvr": rate,
        "lvr_over_value": rate / value,
        "lvr_over_value_bp": 1e4 * rate / value,
        "pool_value": value,
    }


def _convergence(cfg, pool, out, threads, seed):
    d = cfg.dynamics
    rows = convergence_study(pool, d.P0, d.sigma, d.T, cfg.convergence.steps,
                             cfg.monte_carlo.n_paths, seed)
    with (out / "convergence.csv").open("w") as fh:
        fh.write("steps,mean_abs_gap,rms_gap,mean_lvr,relative_gap,max_telescoping_error\n")
        for r in rows:
            fh.write(f"{r.steps},{r.mean_abs_gap:.17g},{r.rms_gap:.17g},{r.mean_lvr:.17g},"
                     f"{r.relative_gap:.17g},{r.max_telescoping_error:.17g}\n")
    gaps = [r.mean_abs_gap for r in rows]
    return {
        "rows": [{"steps": r.steps, "mean_abs_gap": r.mean_abs_gap, "rms_gap": r.rms_gap,
                  "mean_lvr": r.mean_lvr, "relative_gap": r.relative_gap,
                  "max_telescoping_error": r.max_telescoping_error} for r in rows],
        "decreasing": all(a > b for a, b in zip(gaps, gaps[1:])),
        "final_relative_gap": rows[-1].relative_gap,
    }


def _multidim(cfg, pool, out, threads, seed):
    d, o = cfg.dynamics, cfg.outputs
    Sigma = np.asarray(d.Sigma, dtype=float)
    params = MultiGbmParams(np.asarray(d.P0, dtype=float), Sigma)
    cap = cfg.monte_carlo.n_paths if o.all_paths else o.max_path_csvs
    per_path, lvr, arb = [], [], []
    for i in range(cfg.monte_carlo.n_paths):
        path = simulate_multi_gbm(params, d.T, d.steps, seed, path_index=i)
        rep = decomposition_md(pool, path, Sigma)
        s = rep.summary()
        lvr.append(s["LVR_T"])
        arb.append(s["ARB_T"])
        if i < cap:
            per_path.append(s)
            if "decomposition" in o.series:
                rep.to_csv(out / f"decomposition_md_{i:04d}.csv")
    return {"paths": per_path, "monte_carlo": {"LVR_T": Estimate.of(np.asarray(lvr)).as_dict(),
                                               "ARB_T": Estimate.of(np.asarray(arb)).as_dict()}}


_MODES = {
    "decompose": _decompose,
    "expected-lvr": _expected_lvr,
    "fair-pricing": _fair_pricing,
    "breakeven": _breakeven,
    "convergence-study": _convergence,
    "multidim": _multidim,
}


def classify_error(exc: BaseException) -> tuple[str, int]:
    """Map an exception to (error kind, exit status)."""
    if isinstance(exc, ConfigError):
        return "ConfigError", 2
    if isinstance(exc, LvrLabError):
        return "ComputeError", 3
    if isinstance(exc, OSError):
        return "IoError", 4
    return "InternalError", 1
