"""Acceptance suite: one check per headline property of the library.

Run ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line per
criterion, or ``python3 tests/test_acceptance.py`` for the same table
without pytest.
"""
import math
import time

import numpy as np
import pytest

from lvr_lab.cfmm_core import (
    BondingFunction,
    ConstantProduct,
    Generic,
    GeometricMean,
    Linear,
    RangeOrder,
    convexity,
    instantaneous_lvr,
    optimal_reserves,
    pool_value,
    wgmm_theta_from_cost,
)
from lvr_lab.decomposition import (
    Estimate,
    convergence_study,
    expected_lvr,
    hodl_benchmark,
    loss_versus_benchmark,
    lvr_closed_form,
    monte_carlo_terminals,
    rebalancing_benchmark,
)
from lvr_lab.dynamics import GbmParams, MultiGbmParams, simulate_gbm, simulate_multi_gbm
from lvr_lab.errors import DomainError
from lvr_lab.fees import FeeParams, ProportionalToPoolValue, breakeven_volume, fair_pricing_report, fee_increments
from lvr_lab.multidim import WeightedGeometricMean, decomposition_md, instantaneous_lvr_md, value_hessian_md

SIGMA = 0.05  # per day
CP = ConstantProduct(1.0)
GRID = np.logspace(-1, 1, 50)


def c01_headline_ratio():
    ratio = instantaneous_lvr(CP, 1.0, SIGMA) / pool_value(CP, 1.0)
    err = abs(ratio - SIGMA**2 / 8)
    return err <= 4 * np.finfo(float).eps * SIGMA**2 / 8, f"l/V = {1e4 * ratio:.6f} bp/day, |err| = {err:.1e}"


def c02_breakeven():
    be = breakeven_volume(CP, 1.0, SIGMA, FeeParams(0.003))
    return abs(be - 0.10417) < 5e-6, f"break-even volume = {be:.6f} of pool value per day"


def c03_telescoping_and_convergence():
    rows = convergence_study(CP, 1.0, SIGMA, 10.0, [100, 1000, 10_000, 100_000], n_seeds=64, seed=0)
    tele = max(r.max_telescoping_error for r in rows)
    rel = [r.relative_gap for r in rows]
    gaps = [r.mean_abs_gap for r in rows]
    ok = tele <= 1e-9 * 2.0 and rel[-1] < 0.01 and all(a > b for a, b in zip(gaps, gaps[1:]))
    return ok, f"max telescoping {tele:.1e}; relative gaps {', '.join(f'{g:.2%}' for g in rel)}"


def c04_expected_lvr():
    res = expected_lvr(CP, 1.0, SIGMA, 10.0, n_paths=10_000, steps=1000, seed=0)
    analytic = 2 * (1 - math.exp(-SIGMA**2 * 10.0 / 8))
    z = (res.monte_carlo.mean - analytic) / res.monte_carlo.se
    day = expected_lvr(CP, 1.0, SIGMA, 1.0, n_paths=1, steps=1, seed=0)
    approx_err = abs(day.short_horizon - day.analytic) / day.analytic
    ok = abs(z) <= 3 and res.analytic == pytest.approx(analytic, rel=1e-14) and approx_err < 0.002
    return ok, f"MC {res.monte_carlo.mean:.7f} vs {analytic:.7f} (z = {z:+.2f}); l(P0)T off by {approx_err:.3%}"


def _pools():
    return {
        "GeometricMean(0.3)": GeometricMean(0.3, 1.0),
        "ConstantProduct": CP,
        "RangeOrder[0.5,2]": RangeOrder(1.0, 0.5, 2.0),
        "Linear(K=1.01)": Linear(1.01, 1.0),  # kink sits off the grid
        "Generic x*y": Generic(BondingFunction.from_expression("x*y", 1.0)),
    }


def c05_envelope_concavity():
    worst_env, worst_conv = 0.0, -math.inf
    for pool in _pools().values():
        for P in GRID:
            h = 1e-5 * P
            fd = (pool_value(pool, P + h) - pool_value(pool, P - h)) / (2 * h)
            x = optimal_reserves(pool, P).x
            worst_env = max(worst_env, abs(fd - x) / max(abs(x), 1e-12 * pool_value(pool, P) / P))
            worst_conv = max(worst_conv, float(convexity(pool, P)))
    spread = 0.0
    for theta in (0.2, 0.5, 0.8):
        pool = GeometricMean(theta, 1.0)
        r = instantaneous_lvr(pool, GRID, SIGMA) / pool_value(pool, GRID)
        target = SIGMA**2 * theta * (1 - theta) / 2
        spread = max(spread, float(np.max(np.abs(r - target)) / target))
    ok = worst_env <= 1e-6 and worst_conv <= 1e-12 and spread <= 1e-10
    return ok, f"envelope {worst_env:.1e}, max V'' {worst_conv:.1e}, WGMM ratio spread {spread:.1e}"


def c06_rebalancing_benchmark():
    # Continuous-time QV under the rebalancing benchmark is zero; on a grid it
    # is O(1/N) relative to HODL, so the check needs a fine grid.
    n_paths, N = 64, 2**22
    params = GbmParams(1.0, SIGMA)
    qv_reb = qv_hodl = 0.0
    deltas = np.empty(n_paths)
    hodl, reb = hodl_benchmark(CP, 1.0), rebalancing_benchmark(CP)
    for i in range(n_paths):
        path = simulate_gbm(params, 1.0, N, seed=0, path_index=i)
        lvr = lvr_closed_form(CP, path, SIGMA)
        qv_reb += loss_versus_benchmark(CP, path, reb, SIGMA, lvr).QV
        h = loss_versus_benchmark(CP, path, hodl, SIGMA, lvr)
        qv_hodl += h.QV
        deltas[i] = h.Delta[-1]
    ratio = qv_reb / qv_hodl
    delta = Estimate.of(deltas)
    ok = ratio <= 1e-6 and delta.within(0.0)
    return ok, f"QV ratio {ratio:.2e} (N = 2^22); mean Delta(HODL) {delta.mean:+.2e} +/- {delta.se:.1e}"


def c07_theta_roundtrip():
    worst = 0.0
    for theta in (0.1, 0.2, 0.3, 0.4, 0.5):
        back = wgmm_theta_from_cost(SIGMA**2 * theta * (1 - theta) / 2, SIGMA)
        worst = max(worst, abs(back - theta))
    try:
        wgmm_theta_from_cost(SIGMA**2 / 8 * 1.01, SIGMA)
        raised = False
    except DomainError:
        raised = True
    return worst <= 1e-12 and raised, f"max |theta error| {worst:.1e}; 8c > sigma^2 raises: {raised}"


def c08_multidim():
    rng = np.random.default_rng(8)
    worst_red = 0.0
    for theta in (0.2, 0.5, 0.8):
        pool = WeightedGeometricMean([theta, 1 - theta])
        for P in np.exp(rng.uniform(-2, 2, 20)):
            got = instantaneous_lvr_md(pool, [P, 1.0], np.diag([SIGMA**2, 0.0]))
            ref = instantaneous_lvr(GeometricMean(theta), P, SIGMA)
            worst_red = max(worst_red, abs(got - ref) / ref)
    pool3 = WeightedGeometricMean([0.2, 0.3, 0.5])
    max_eig = max(float(np.max(np.linalg.eigvalsh(value_hessian_md(pool3, P))))
                  for P in np.exp(rng.uniform(-2, 2, (50, 3))))
    A = rng.normal(size=(3, 3)) * 0.05
    Sigma = A @ A.T
    tele = 0.0
    for i in range(8):
        rep = decomposition_md(pool3, simulate_multi_gbm(MultiGbmParams([1.0, 2.0, 0.5], Sigma), 10.0, 10_000, 0, i),
                               Sigma)
        tele = max(tele, rep.telescoping_error / rep.V[0])
    ok = worst_red <= 1e-8 and max_eig <= 1e-8 and tele <= 1e-9
    return ok, f"reduction {worst_red:.1e}, max Hessian eigenvalue {max_eig:.1e}, telescoping {tele:.1e} V0"


def c09_fair_pricing():
    fee = FeeParams(0.003)
    rho = breakeven_volume(CP, 1.0, SIGMA, fee)
    volume = ProportionalToPoolValue(rho)
    worst = 0.0
    for i in range(8):
        path = simulate_gbm(GbmParams(1.0, SIGMA), 10.0, 10_000, seed=3, path_index=i)
        f = fee_increments(volume, fee, path.prices, path.dt, CP)
        lvr = np.diff(lvr_closed_form(CP, path, SIGMA))
        worst = max(worst, float(np.max(np.abs(f - lvr) / lvr)))
    rep = fair_pricing_report(CP, 1.0, SIGMA, 10.0, volume, fee, n_paths=2000, steps=1000, seed=4)
    ok = worst <= 1e-12 and rep.fair
    return ok, f"per-step fee/LVR {worst:.1e} relative; gap {rep.gap:+.1e} (SE {rep.gap_se:.1e}), {rep.status}"


def c10_supermartingale():
    parts = []
    ok = True
    for name, pool in (("CP", CP), ("RangeOrder", RangeOrder(1.0, 0.8, 1.25))):
        legs = monte_carlo_terminals(pool, GbmParams(1.0, SIGMA), 10.0, 10, 20_000, seed=5)
        est = Estimate.of(legs["V_T"])
        V0 = float(pool_value(pool, 1.0))
        ok &= est.mean <= V0 + 3 * est.se
        parts.append(f"{name} E[V_T] - V0 = {est.mean - V0:+.2e} (SE {est.se:.1e})")
    return ok, "; ".join(parts)


CRITERIA = [
    (1, "constant-product LVR/value = sigma^2/8", c01_headline_ratio),
    (2, "break-even noise volume at 30 bp", c02_breakeven),
    (3, "telescoping identity and ARB -> LVR", c03_telescoping_and_convergence),
    (4, "expected LVR closed form", c04_expected_lvr),
    (5, "envelope and concavity", c05_envelope_concavity),
    (6, "rebalancing benchmark has minimal QV", c06_rebalancing_benchmark),
    (7, "theta from cost roundtrip", c07_theta_roundtrip),
    (8, "multi-asset reduction, NSD, telescoping", c08_multidim),
    (9, "fair pricing at break-even volume", c09_fair_pricing),
    (10, "pool value is a supermartingale", c10_supermartingale),
]


def _report(number, title, check):
    start = time.perf_counter()
    ok, detail = check()
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail} ({time.perf_counter() - start:.1f}s)"
    print(line)
    return ok, line


@pytest.mark.parametrize("number, title, check", CRITERIA, ids=[f"criterion_{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, check):
    ok, line = _report(number, title, check)
    assert ok, line


if __name__ == "__main__":
    results = [_report(*c)[0] for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
