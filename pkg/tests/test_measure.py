import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_model, orthogonal_model
from memm.errors import CorruptionError
from memm.ipde import picard_solve
from memm.measure import GirsanovKernels, compensator_bound, kernels_at, log_density_increment
from memm.model import lambda_hat
from memm.special import solve_orthogonal


def test_identity_kernels_for_zero_risk():
    m = constant_model(eta=0.0, atoms=[(0.2, 1.0)], W_M=0.1, W_V=0.0)
    _, fields, _ = picard_solve(m)
    k = kernels_at(fields, 0.3, np.array([0.2, 0.7]))
    assert np.all(k.brownian_drift == 0.0) and np.all(k.jump_ratio == 1.0)


def test_empty_measure_drift():
    _, fields, _ = picard_solve(constant_model())
    k = kernels_at(fields, 0.5, 0.5)
    assert float(k.brownian_drift) == pytest.approx(-2.0 * 0.2, rel=1e-14)
    assert k.jump_ratio.shape == (0,)


def test_orthogonal_kernels():
    m = orthogonal_model()
    v, _, _ = solve_orthogonal(m)
    _, fields, _ = picard_solve(m)
    grid = v.grid
    t, y = grid.times[10], grid.ys[20]
    k = kernels_at(fields, t, y)
    sig = m.evaluate(t, np.asarray(y)).sigma_M
    assert float(k.brownian_drift) == pytest.approx(-lambda_hat(m, t, y) * sig, rel=1e-13)
    target = y + float(m.jump_V(t, np.asarray(y))[0])
    assert float(k.jump_ratio[0]) == pytest.approx(v(t, target) / v(t, y), abs=1e-6)


def test_corrupted_ratio_detected():
    m = constant_model(eta=0.05, atoms=[(0.2, 1.0)], W_M=0.1)
    _, fields, _ = picard_solve(m)
    bad = fields.replace(W_L=fields.W_L - 5.0)
    with pytest.raises(CorruptionError):
        kernels_at(bad, 0.0, 0.5)


def test_increment_formula_without_jumps():
    lam, sig, W_M, W_L, w = 2.0, 0.2, 0.1, 0.03, 1.5
    k = GirsanovKernels(np.array(-lam * sig), np.array([1 - lam * W_M + W_L]), np.array([w]),
                        np.array(-lam))
    dt, dB = 0.01, 0.05
    expected = -lam * sig * dB - 0.5 * lam**2 * sig**2 * dt + dt * w * (lam * W_M - W_L)
    assert log_density_increment(k, dt, dB, []) == pytest.approx(expected, rel=1e-14)


def test_identity_increment_zero():
    k = GirsanovKernels(np.array(0.0), np.array([1.0, 1.0]), np.array([1.0, 2.0]), np.array(0.0))
    assert log_density_increment(k, 0.1, 0.3, [0, 1, 1]) == 0.0


def test_single_jump_log2():
    k = GirsanovKernels(np.array(0.0), np.array([2.0]), np.array([1.0]), np.array(0.0))
    assert log_density_increment(k, 0.0, 0.0, [0]) == math.log(2.0)


def test_counts_and_index_lists_agree():
    k = GirsanovKernels(np.array(0.1), np.array([1.5, 0.5]), np.array([1.0, 2.0]), np.array(0.0))
    a = log_density_increment(k, 0.01, 0.02, [1, 0, 1])
    b = log_density_increment(k, 0.01, 0.02, np.array([1, 2]))
    assert a == pytest.approx(b, rel=1e-15)


def test_jump_free_density_closed_form():
    _, fields, _ = picard_solve(constant_model())
    rng = np.random.default_rng(5)
    dB = rng.normal(scale=0.1, size=100)
    logZ = sum(float(log_density_increment(kernels_at(fields, i / 100, 0.5), 0.01, b))
               for i, b in enumerate(dB))
    closed = -2.0 * 0.2 * dB.sum() - 0.5 * 4 * 0.04
    assert logZ == pytest.approx(closed, abs=1e-12)


def test_compensator_bound_finite(correlated):
    _, fields, _ = picard_solve(correlated)
    b = compensator_bound(fields)
    assert math.isfinite(b) and b > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.lists(st.floats(0.01, 5), min_size=2, max_size=2),
       st.floats(1e-4, 0.1), st.floats(-1, 1), st.lists(st.integers(0, 1), max_size=4))
def test_density_stays_positive(theta, ratios, dt, dB, jumps):
    k = GirsanovKernels(np.array(theta), np.array(ratios), np.array([1.0, 0.5]), np.array(0.0))
    inc = log_density_increment(k, dt, dB, jumps)
    assert math.isfinite(inc) and math.exp(inc) > 0
