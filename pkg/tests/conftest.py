import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memm.model import LevyMeasure, MarketModel  # noqa: E402


def constant_model(eta=0.08, sigma=0.2, atoms=(), W_M=0.0, W_V=0.0, eta_V=0.0,
                   domain=(0.0, 1.0), V0=0.5, T=1.0):
    """Constant coefficients; ``W_M`` and ``W_V`` are per-atom constants (scalar or sequence)."""
    measure = LevyMeasure.from_atoms(atoms)
    wm = np.broadcast_to(np.asarray(W_M, float), (measure.n_atoms,)).copy()
    wv = np.broadcast_to(np.asarray(W_V, float), (measure.n_atoms,)).copy()
    return MarketModel(
        eta_M=lambda t, y: eta, sigma_M=lambda t, y: sigma,
        W_M=lambda t, y, x: wm + 0.0 * y, eta_V=lambda t, y: eta_V,
        W_V=lambda t, y, x: wv + 0.0 * y,
        domain=domain, T=T, S0=100.0, V0=V0, measure=measure)


def correlated_model():
    measure = LevyMeasure.from_atoms([(-0.2, 1.0)])
    return MarketModel(
        eta_M=lambda t, y: 0.05 + 0.02 * y, sigma_M=lambda t, y: 0.2 * y,
        W_M=lambda t, y, x: x * (0.5 + 0.1 * y), eta_V=lambda t, y: -(y - 1.0),
        W_V=lambda t, y, x: x * (-3.0 + 2.0 * y),
        domain=(0.5, 1.5), T=1.0, S0=100.0, V0=1.0, measure=measure)


def orthogonal_model():
    measure = LevyMeasure.from_atoms([(0.3, 1.0)])
    return MarketModel(
        eta_M=lambda t, y: 0.03 + 0.02 * y, sigma_M=lambda t, y: 0.2 + 0.05 * y,
        W_M=lambda t, y, x: 0.0 * x * y, eta_V=lambda t, y: 1.0 - y,
        W_V=lambda t, y, x: x * (1.5 - y),
        domain=(0.5, 1.5), T=1.0, S0=100.0, V0=1.0, measure=measure)


@pytest.fixture
def flat():
    return constant_model()


@pytest.fixture
def correlated():
    return correlated_model()


@pytest.fixture
def orthogonal():
    return orthogonal_model()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
