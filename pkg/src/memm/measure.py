"""Density process of the entropy-minimal measure and its local kernels.

Under the new measure the Brownian motion picks up the drift
``sigma_L - lambda_hat sigma_M`` and the jump compensator of atom ``i`` is
scaled by ``1 - lambda_hat W_M + W_L``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError
from .ipde import bilinear
from .kernel import MemmFields
from .model import _lambda_hat_from


@dataclass(frozen=True)
class GirsanovKernels:
    """Local change-of-measure data at one time and a batch of states.

    ``brownian_drift`` equals ``sigma_L - lambda_hat sigma_M``; ``jump_ratio``
    has a trailing atom axis.
    """

    brownian_drift: np.ndarray
    jump_ratio: np.ndarray
    intensities: np.ndarray
    phi_hat: np.ndarray


class KernelTable:
    """Precomputed node arrays for repeated kernel lookups."""

    def __init__(self, fields: MemmFields):
        self.fields = fields
        self.grid = fields.grid
        self.model = fields.model
        self.ratio = fields.jump_ratio
        self.phi_hat = fields.phi_hat
        self.ratio_max = (self.ratio.reshape(-1, self.ratio.shape[-1]).max(axis=0)
                          if self.ratio.shape[-1] else np.zeros(0))

    def at(self, t, y, coef=None) -> GirsanovKernels:
        model = self.model
        y = np.asarray(y, dtype=float)
        yc = model.clip_to_domain(y)
        coef = model.evaluate(t, yc) if coef is None else coef
        lam = _lambda_hat_from(coef, model.measure)
        phi = bilinear(self.grid, self.phi_hat, t, yc)
        ratio = bilinear(self.grid, self.ratio, t, yc)
        if ratio.size and not np.all(ratio > 0):
            raise CorruptionError(f"non-positive jump density ratio {ratio.min():.3g} at t={t:.6g}")
        # sigma_L = (phi_hat + lambda_hat) sigma_M, so the drift collapses to phi_hat sigma_M
        sigma_L = (phi + lam) * coef.sigma_M
        drift = sigma_L - lam * coef.sigma_M
        return GirsanovKernels(drift, ratio, model.measure.intensities, phi)


def kernels_at(fields: MemmFields, t, y) -> GirsanovKernels:
    """Girsanov kernels at ``(t, y)``, interpolating the solved fields in ``y`` (and ``t``)."""
    return KernelTable(fields).at(t, y)


def log_density_increment(kernels: GirsanovKernels, dt, dB, jumps=()) -> np.ndarray:
    """Increment of ``log Z`` over one step.

    ``jumps`` is either a list or tuple of atom indices that fired in the
    step or a numpy array of per-atom counts (trailing atom axis for batches).
    """
    theta = np.asarray(kernels.brownian_drift, dtype=float)
    ratio = np.asarray(kernels.jump_ratio, dtype=float)
    w = kernels.intensities
    out = theta * dB - 0.5 * theta**2 * dt
    if len(w):
        out = out + dt * ((1.0 - ratio) @ w)
        counts = _as_counts(jumps, len(w))
        out = out + (counts * np.log(ratio)).sum(axis=-1)
    return out


def _as_counts(jumps, n_atoms):
    if isinstance(jumps, np.ndarray):
        return jumps.astype(float)
    counts = np.zeros(n_atoms)
    for i in np.asarray(jumps, dtype=int).reshape(-1):
        counts[i] += 1
    return counts


def compensator_bound(fields: MemmFields) -> float:
    """Largest node value of the predictable compensator rate of the entropy process.

    The rate is ``0.5 theta^2 + sum_i w_i ((1 + d_i) log(1 + d_i) - d_i)``
    with ``d_i = ratio_i - 1``; its product with ``T`` bounds the compensator.
    """
    w = fields.model.measure.intensities
    theta = fields.sigma_L - fields.lambda_hat * fields.sigma_M
    rate = 0.5 * theta**2
    if len(w):
        r = fields.jump_ratio
        rate = rate + (r * np.log(r) - (r - 1.0)) @ w
    return float(np.max(rate))
