import io
import math

import numpy as np
import pytest
from scipy import stats

from lvr_lab.dynamics import (
    GbmParams,
    MultiGbmParams,
    PricePath,
    realized_quadratic_variation,
    simulate_gbm,
    simulate_gbm_batch,
    simulate_multi_gbm,
    standard_normals,
)
from lvr_lab.errors import DomainError, FactorizationError


def test_zero_sigma_is_constant():
    path = simulate_gbm(GbmParams(1.7, 0.0), 5.0, 50, seed=123)
    assert np.all(path.prices == 1.7)
    assert path.times[-1] == 5.0 and path.steps == 50


def test_reproducible_bytes():
    a = simulate_gbm(GbmParams(1.0, 0.05), 10.0, 1000, seed=42)
    b = simulate_gbm(GbmParams(1.0, 0.05), 10.0, 1000, seed=42)
    assert a.prices.tobytes() == b.prices.tobytes()
    c = simulate_gbm(GbmParams(1.0, 0.05), 10.0, 1000, seed=43)
    assert not np.array_equal(a.prices, c.prices)


def test_batch_rows_match_single_paths_and_ignore_threads():
    params = GbmParams(2.0, 0.1)
    batch = simulate_gbm_batch(params, 3.0, 200, seed=5, n_paths=6, first_index=10)
    threaded = simulate_gbm_batch(params, 3.0, 200, seed=5, n_paths=6, first_index=10, threads=3)
    assert batch.tobytes() == threaded.tobytes()
    for i in range(6):
        single = simulate_gbm(params, 3.0, 200, seed=5, path_index=10 + i)
        assert single.prices.tobytes() == batch[i].tobytes()


def test_normals_are_counter_based():
    # draw k does not depend on how many draws were requested
    long = standard_normals(9, 2, 1000)
    short = standard_normals(9, 2, 10)
    np.testing.assert_array_equal(long[:10], short)


def test_martingale_mean():
    P = simulate_gbm_batch(GbmParams(1.0, 0.05), 1000.0, 1000, seed=0, n_paths=10_000)
    PT = P[:, -1]
    se = PT.std(ddof=1) / math.sqrt(PT.size)
    assert abs(PT.mean() - 1.0) <= 3 * se


def test_log_return_variance():
    sigma, T, N = 0.05, 100.0, 100_000
    path = simulate_gbm(GbmParams(1.0, sigma), T, N, seed=1)
    r = np.diff(np.log(path.prices))
    dt = T / N
    target = sigma**2 * dt
    # variance of the sample variance of normals: 2 s^4 / (n - 1)
    se = target * math.sqrt(2.0 / (N - 1))
    assert abs(r.var(ddof=1) - target) <= 3 * se


def test_single_step_exact_lognormal_ks():
    sigma, dt, n = 0.3, 2.0, 100_000
    P = simulate_gbm_batch(GbmParams(1.0, sigma), dt, 1, seed=2, n_paths=n)[:, 1]
    law = stats.lognorm(s=sigma * math.sqrt(dt), scale=math.exp(-0.5 * sigma**2 * dt))
    ks = stats.kstest(P, law.cdf)
    critical = 1.36 / math.sqrt(n)  # 5% level
    assert ks.statistic < critical


def test_domain_errors():
    with pytest.raises(DomainError):
        simulate_gbm(GbmParams(1.0, 0.1), 0.0, 10, 0)
    with pytest.raises(DomainError):
        simulate_gbm(GbmParams(1.0, 0.1), 1.0, 0, 0)
    with pytest.raises(DomainError):
        GbmParams(0.0, 0.1)
    with pytest.raises(DomainError):
        GbmParams(1.0, -0.1)


class TestMulti:
    def test_zero_sigma_constant(self):
        path = simulate_multi_gbm(MultiGbmParams([1.0, 2.0], np.zeros((2, 2))), 1.0, 10, 0)
        np.testing.assert_array_equal(path.prices, np.tile([1.0, 2.0], (11, 1)))

    def _returns(self, Sigma, N=200_000, dt=1e-2):
        path = simulate_multi_gbm(MultiGbmParams([1.0, 1.0], Sigma), dt * N, N, seed=3)
        return np.diff(np.log(path.prices), axis=0) / math.sqrt(dt)

    def test_independent_assets(self):
        r = self._returns(np.diag([0.0025, 0.0025]))
        rho = np.corrcoef(r.T)[0, 1]
        assert abs(rho) <= 3 / math.sqrt(r.shape[0])

    def test_correlated_assets(self):
        s2 = 0.05**2
        r = self._returns(np.array([[s2, 0.9 * s2], [0.9 * s2, s2]]))
        rho = np.corrcoef(r.T)[0, 1]
        se = (1 - 0.9**2) / math.sqrt(r.shape[0])
        assert abs(rho - 0.9) <= 3 * se

    def test_marginal_variance(self):
        s2 = 0.04**2
        r = self._returns(np.array([[s2, 0.5 * s2], [0.5 * s2, 0.09**2]]))
        se = s2 * math.sqrt(2.0 / r.shape[0])
        assert abs(r[:, 0].var(ddof=1) - s2) <= 3 * se

    def test_not_psd(self):
        with pytest.raises(FactorizationError):
            MultiGbmParams([1.0, 1.0], [[1.0, 2.0], [2.0, 1.0]]).sqrt_factor()

    def test_not_symmetric(self):
        with pytest.raises(FactorizationError):
            MultiGbmParams([1.0, 1.0], [[1.0, 0.1], [0.0, 1.0]]).sqrt_factor()

    def test_tiny_negative_eigenvalue_clamped(self):
        S = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-13 * np.eye(2)
        A = MultiGbmParams([1.0, 1.0], S).sqrt_factor()
        assert np.all(np.isfinite(A))


class TestQuadraticVariation:
    def test_constant(self):
        assert realized_quadratic_variation(PricePath([0, 1, 2], [3.0, 3.0, 3.0])) == 0.0

    def test_two_points(self):
        assert realized_quadratic_variation(PricePath([0, 1], [1.0, 1.1])) == pytest.approx(0.01)

    def test_matches_integrated_variance(self):
        sigma, T, N = 0.05, 1.0, 100_000
        path = simulate_gbm(GbmParams(1.0, sigma), T, N, seed=4)
        oracle = float(np.sum(sigma**2 * path.prices[:-1] ** 2 * (T / N)))
        assert realized_quadratic_variation(path) == pytest.approx(oracle, rel=0.01)

    def test_too_short(self):
        with pytest.raises(DomainError):
            realized_quadratic_variation(np.array([1.0]))


class TestPricePath:
    def test_csv_round_trip(self, tmp_path):
        from lvr_lab.cli import ingest_price_csv

        path = simulate_gbm(GbmParams(1.0, 0.3), 1.0, 50, seed=8)
        f = tmp_path / "p.csv"
        path.to_csv(f)
        assert f.read_text().splitlines()[0] == "t,price"
        back = ingest_price_csv(f)
        assert back.scheme == "external"
        assert back.prices.tobytes() == path.prices.tobytes()
        assert back.times.tobytes() == path.times.tobytes()

    def test_csv_to_stream(self):
        buf = io.StringIO()
        PricePath([0.0, 0.5], [1.0, 1.25]).to_csv(buf)
        assert buf.getvalue() == "t,price\n0,1\n0.5,1.25\n"

    def test_invariants(self):
        with pytest.raises(DomainError):
            PricePath([0, 0], [1, 1])
        with pytest.raises(DomainError):
            PricePath([0, 1], [1, 0])
        with pytest.raises(DomainError):
            PricePath([0, 1, 2], [1, 1])

    def test_coarsen(self):
        fine = simulate_gbm(GbmParams(1.0, 0.1), 1.0, 100, seed=0)
        coarse = fine.coarsen(10)
        assert coarse.steps == 10
        np.testing.assert_array_equal(coarse.prices, fine.prices[::10])
        with pytest.raises(DomainError):
            fine.coarsen(7)
