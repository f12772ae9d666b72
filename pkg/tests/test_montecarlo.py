import math

import numpy as np
import pytest

from conftest import constant_model
from memm.ipde import flow_characteristic, picard_solve
from memm.model import LevyMeasure, MarketModel
from memm.montecarlo import (exponential_moment_check, mean_stat, pathwise_residual, residuals,
                             simulate_paths, verify_suite)
from memm.special import BnsParams, build_bns_model, exponential_tail_atoms


def test_deterministic_growth():
    m = MarketModel(lambda t, y: 0.07, lambda t, y: 0.0, lambda t, y, x: 0 * x,
                    lambda t, y: 0.0, lambda t, y, x: 0 * x, (0.0, 1.0), 2.0, 50.0, 0.5)
    b = simulate_paths(m, None, "P", 10, 40, 0)
    assert np.allclose(b.S_T, 50.0 * math.exp(0.14), rtol=1e-13)


def test_ou_volatility_matches_flow():
    m = MarketModel(lambda t, y: 0.05, lambda t, y: 0.2, lambda t, y, x: 0 * x,
                    lambda t, y: -y, lambda t, y, x: 0 * x, (0.0, 2.0), 1.0, 1.0, 1.0)
    b = simulate_paths(m, None, "P", 5, 400, 0)
    assert np.allclose(b.V_T, flow_characteristic(m, 0.0, 1.0, 1.0), atol=1.0 / 400)


def test_reproducible_and_prefix_stable(correlated):
    _, fields, _ = picard_solve(correlated)
    a = simulate_paths(correlated, fields, "Qstar", 1500, 20, 11)
    b = simulate_paths(correlated, fields, "Qstar", 1500, 20, 11)
    c = simulate_paths(correlated, fields, "Qstar", 3000, 20, 11)
    assert np.array_equal(a.S_T, b.S_T) and np.array_equal(a.gain, b.gain)
    assert np.array_equal(a.S_T, c.S_T[:1500])


def test_seed_and_measure_change_streams(correlated):
    _, fields, _ = picard_solve(correlated)
    a = simulate_paths(correlated, fields, "P", 100, 10, 1)
    b = simulate_paths(correlated, fields, "P", 100, 10, 2)
    assert not np.array_equal(a.S_T, b.S_T)


def test_stored_paths_consistent(correlated):
    _, fields, _ = picard_solve(correlated)
    b = simulate_paths(correlated, fields, "P", 50, 30, 3, store_paths=True)
    assert b.V.shape == (50, 31) and b.counts.shape == (50, 30, 1)
    assert np.allclose(b.logZ[:, -1], b.logZ_T) and np.allclose(np.exp(b.logS[:, -1]), b.S_T)
    p = b[0]
    assert len(p.jump_events) == int(p.counts.sum())
    assert np.all(p.S > 0)


def test_zero_risk_suite_zero_variance():
    m = constant_model(eta=0.0, atoms=[(0.2, 1.0)], W_M=0.1, W_V=0.0)
    u, fields, _ = picard_solve(m)
    stats = verify_suite(m, fields, u, 2000, 50, 0)
    for name in ("density_mean", "entropy", "martingale_gain"):
        assert stats[name].std_error == 0.0 and stats[name].z_score == 0.0
    assert all(s.passed(3.0) for s in stats.values())


def test_importance_sampling_identity(correlated):
    _, fields, _ = picard_solve(correlated)
    p = simulate_paths(correlated, fields, "P", 20000, 100, 4)
    q = simulate_paths(correlated, fields, "Qstar", 20000, 100, 4)
    for f in (lambda b: b.S_T > 100.0, lambda b: np.minimum(b.V_T, 1.2)):
        zp = np.exp(p.logZ_T) * f(p)
        fq = f(q).astype(float)
        se = math.hypot(zp.std() / math.sqrt(len(zp)), fq.std() / math.sqrt(len(fq)))
        assert abs(zp.mean() - fq.mean()) <= 3 * se


def test_exponential_moment():
    m = constant_model(eta=0.05, atoms=[(0.3, 1.0)], W_M=0.3)
    b = simulate_paths(m, None, "P", 20000, 50, 0, store_paths=True)
    stat = exponential_moment_check(b, m, 2.0)
    assert stat.target == pytest.approx(math.exp(math.expm1(2.0 * 0.09)), rel=1e-14)
    assert math.isfinite(stat.estimate) and abs(stat.z_score) <= 3


def test_residual_zero_on_jump_free_constant_model():
    m = constant_model()
    u, fields, _ = picard_solve(m)
    b = simulate_paths(m, fields, "P", 20, 37, 0, store_paths=True)
    for path in b:
        assert abs(pathwise_residual(path, u, fields)) <= 1e-14


def test_residual_zero_without_risk_premium():
    m = constant_model(eta=0.0, atoms=[(0.2, 2.0)], W_M=0.0, W_V=0.1, domain=(0.0, 5.0))
    u, fields, _ = picard_solve(m, max_clamp_fraction=1.0)
    b = simulate_paths(m, fields, "P", 200, 50, 0, store_paths=True)
    assert np.all(residuals(b, u, fields) == 0.0)


def test_vectorised_residual_matches_single(correlated):
    u, fields, _ = picard_solve(correlated)
    b = simulate_paths(correlated, fields, "P", 30, 40, 9, store_paths=True)
    r = residuals(b, u, fields)
    for i in (0, 7, 29):
        assert r[i] == pytest.approx(pathwise_residual(b[i], u, fields), abs=1e-14)


def test_mean_stat_conventions():
    assert mean_stat("x", [1.0, 1.0], 1.0).z_score == 0.0
    assert mean_stat("x", [1.0, 1.0], 0.5).z_score == math.inf
    s = mean_stat("x", [0.0, 2.0], 0.0)
    assert s.std_error == pytest.approx(1.0) and s.z_score == pytest.approx(1.0)


def test_bns_integrated_variance_identity():
    from memm.montecarlo import bns_variance_check
    p = BnsParams(0.05, 0.5, -1.0, 1.0, 0.04, exponential_tail_atoms(100.0, 50.0, 4))
    m = build_bns_model(p)
    b = simulate_paths(m, None, "P", 200, 400, 0, store_paths=True)
    diff = bns_variance_check(b, p)
    scale = 0.04 + b.counts.sum(axis=(1, 2)) * 0.1
    assert np.all(np.abs(diff) <= 2 * (1 / 400) * scale * math.e)


def test_rejects_bad_requests(correlated):
    with pytest.raises(ValueError):
        simulate_paths(correlated, None, "Qstar", 10, 10, 0)
    with pytest.raises(ValueError):
        simulate_paths(correlated, None, "R", 10, 10, 0)
