"""Path simulation under the physical and the entropy-minimal measure.

Paths are simulated in blocks of ``BLOCK`` with one random stream per
(seed, measure, block), so adding paths never changes existing ones.  The
price is stepped in log space with coefficients frozen at the left end of
each step; jumps of each atom arrive as Poisson counts, thinned under the
new measure by ``ratio / ratio_max``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .ipde import Surface, bilinear
from .kernel import MemmFields
from .measure import KernelTable, log_density_increment
from .model import MarketModel

BLOCK = 1024
_MEASURE_TAG = {"P": 0, "Qstar": 1}


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated paths; per-path arrays have the path index first.

    Terminal quantities are always kept.  ``V``, ``logS``, ``logZ`` (shape
    ``(n, n_steps + 1)``), ``dB`` and ``counts`` (per step and atom) only
    with ``store_paths=True``; ``V[:, i]`` is the value before the jumps of
    step ``i``.
    """

    measure: str
    times: np.ndarray
    S_T: np.ndarray
    V_T: np.ndarray
    logZ_T: np.ndarray
    gain: np.ndarray
    clamps: np.ndarray
    V: np.ndarray | None = None
    logS: np.ndarray | None = None
    logZ: np.ndarray | None = None
    dB: np.ndarray | None = None
    counts: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return len(self.S_T)

    def __len__(self):
        return self.n_paths

    def __getitem__(self, i) -> "PathSample":
        if self.V is None:
            raise ValueError("paths were not stored; simulate with store_paths=True")
        return PathSample(self.times, self.V[i], np.exp(self.logS[i]), self.dB[i], self.counts[i],
                          self.logZ[i], int(self.clamps[i]))

    def __iter__(self):
        return (self[i] for i in range(self.n_paths))


@dataclass(frozen=True, eq=False)
class PathSample:
    times: np.ndarray
    V: np.ndarray
    S: np.ndarray
    dB: np.ndarray
    counts: np.ndarray
    logZ: np.ndarray
    clamps: int

    @property
    def jump_events(self) -> list[tuple[float, int]]:
        """``(time, atom)`` per jump; time is the right end of its step."""
        steps, atoms = np.nonzero(self.counts)
        out = []
        for s, a in zip(steps, atoms):
            out += [(float(self.times[s + 1]), int(a))] * int(self.counts[s, a])
        return out


def _streams(seed, measure, n_paths):
    n_blocks = -(-n_paths // BLOCK)
    tag = _MEASURE_TAG[measure]
    return [np.random.default_rng([int(seed), tag, b]) for b in range(n_blocks)]


def simulate_paths(model: MarketModel, fields: MemmFields | None = None, measure="P",
                   n_paths=10_000, n_steps=500, seed=0, store_paths=False) -> PathBatch:
    """Euler scheme for ``(log S, V, log Z)``.

    ``fields`` is required for ``measure="Qstar"`` and for the density
    ``log Z`` (otherwise ``log Z`` stays 0).  ``gain`` accumulates the
    discrete strategy gain ``sum phi_hat (S_{i+1} / S_i - 1)``.  States that
    leave the domain are evaluated at the boundary and counted in ``clamps``.
    """
    if measure not in _MEASURE_TAG:
        raise ValueError(f"measure must be 'P' or 'Qstar', got {measure!r}")
    if measure == "Qstar" and fields is None:
        raise ValueError("simulation under Qstar needs solved fields")
    if n_paths < 1 or n_steps < 1:
        raise ValueError("need n_paths >= 1 and n_steps >= 1")
    streams = _streams(seed, measure, n_paths)
    n_full = len(streams) * BLOCK
    n_at = model.n_atoms
    w = model.measure.intensities
    dt = model.T / n_steps
    sqdt = math.sqrt(dt)
    times = np.linspace(0.0, model.T, n_steps + 1)
    table = KernelTable(fields) if fields is not None else None
    lo, hi = model.domain

    V = np.full(n_full, float(model.V0))
    logS = np.full(n_full, math.log(model.S0))
    logZ = np.zeros(n_full)
    gain = np.zeros(n_full)
    clamps = np.zeros(n_full, dtype=np.int64)
    if store_paths:
        keep = min(n_paths, n_full)
        hist = {"V": np.empty((keep, n_steps + 1)), "logS": np.empty((keep, n_steps + 1)),
                "logZ": np.empty((keep, n_steps + 1)), "dB": np.empty((keep, n_steps)),
                "counts": np.zeros((keep, n_steps, n_at), dtype=np.int64)}

    for i in range(n_steps):
        t = times[i]
        if store_paths:
            hist["V"][:, i] = V[:keep]
            hist["logS"][:, i] = logS[:keep]
            hist["logZ"][:, i] = logZ[:keep]
        out = (V < lo) | (V > hi)
        clamps += out
        y = np.clip(V, lo, hi)
        coef = model.evaluate(t, y)
        kern = table.at(t, y, coef) if table is not None else None

        z = np.concatenate([g.standard_normal(BLOCK) for g in streams])
        dB = sqdt * z
        shift = 0.0
        if n_at:
            if measure == "P":
                rate = w * dt
                counts = np.concatenate([g.poisson(rate, (BLOCK, n_at)) for g in streams])
            else:
                rmax = table.ratio_max
                cand = np.concatenate([g.poisson(w * rmax * dt, (BLOCK, n_at)) for g in streams])
                p = kern.jump_ratio / rmax
                counts = np.concatenate([
                    g.binomial(cand[b * BLOCK:(b + 1) * BLOCK], p[b * BLOCK:(b + 1) * BLOCK])
                    for b, g in enumerate(streams)])
        else:
            counts = np.zeros((n_full, 0), dtype=np.int64)
        if measure == "Qstar":
            shift = kern.brownian_drift

        sig = coef.sigma_M
        comp = coef.W_M @ w if n_at else 0.0
        dlogS = (coef.eta_M + sig * shift - 0.5 * sig**2 - comp) * dt + sig * dB
        if n_at:
            dlogS = dlogS + (counts * np.log1p(coef.W_M)).sum(axis=-1)
        if kern is not None:
            gain += kern.phi_hat * np.expm1(dlogS)
            if measure == "P":
                logZ += log_density_increment(kern, dt, dB, counts)
        logS += dlogS
        V = V + coef.eta_V * dt
        if n_at:
            V = V + (counts * coef.W_V).sum(axis=-1)
        if store_paths:
            hist["dB"][:, i] = dB[:keep]
            hist["counts"][:, i] = counts[:keep]

    if store_paths:
        hist["V"][:, n_steps] = V[:keep]
        hist["logS"][:, n_steps] = logS[:keep]
        hist["logZ"][:, n_steps] = logZ[:keep]
    else:
        hist = {}
    sl = slice(0, n_paths)
    return PathBatch(measure, times, np.exp(logS[sl]), V[sl], logZ[sl], gain[sl], clamps[sl], **hist)


@dataclass(frozen=True)
class VerifyStats:
    name: str
    n_paths: int
    estimate: float
    std_error: float
    target: float
    z_score: float

    def passed(self, threshold=3.0) -> bool:
        return abs(self.z_score) <= threshold

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v))
                for k, v in asdict(self).items()}


def mean_stat(name, samples, target) -> VerifyStats:
    """Sample mean with its standard error and z-score against ``target``.

    With zero sample variance the z-score is 0 on an exact match and
    infinite otherwise.
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    est = math.fsum(x) / n
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    diff = est - target
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(target)) else math.copysign(math.inf, diff)
    return VerifyStats(name, n, est, se, float(target), float(z))


def verify_suite(model: MarketModel, fields: MemmFields, surface: Surface, n_paths=100_000,
                 n_steps=500, seed=0) -> dict[str, VerifyStats]:
    """Density mean, entropy, martingale gain and price mean against their targets.

    ``density_mean`` is ``E_P[Z_T]`` vs 1, ``entropy`` is ``E_P[Z_T log Z_T]``
    vs ``-u(0, V0)``, ``martingale_gain`` is the expected strategy gain under
    the new measure vs 0 and ``price_mean`` is ``E[S_T]`` under it vs ``S0``.
    """
    c = 0.0 - surface.initial_value(model.V0)
    p = simulate_paths(model, fields, "P", n_paths, n_steps, seed)
    q = simulate_paths(model, fields, "Qstar", n_paths, n_steps, seed)
    Z = np.exp(p.logZ_T)
    return {
        "density_mean": mean_stat("density_mean", Z, 1.0),
        "entropy": mean_stat("entropy", Z * p.logZ_T, c),
        "martingale_gain": mean_stat("martingale_gain", q.gain, 0.0),
        "price_mean": mean_stat("price_mean", q.S_T, model.S0),
    }


def pathwise_residual(path: PathSample, surface: Surface, fields: MemmFields) -> float:
    """``c + ∫ g dt - sum of jumps of u`` along a path simulated under P.

    Vanishes in the continuum limit; on a grid it is of order of the time
    step plus the grid error.
    """
    model = fields.model
    grid = surface.grid
    times = path.times
    dt = np.diff(times)
    c = -surface.initial_value(model.V0)
    lo, hi = model.domain
    total = c
    for i in range(len(dt)):
        t = times[i]
        y = min(max(path.V[i], lo), hi)
        total += float(bilinear(grid, fields.g, t, y)) * dt[i]
        cnt = path.counts[i]
        if cnt.any():
            target = np.clip(y + model.jump_V(t, np.asarray(y)), lo, hi)
            du = surface(t, target) - surface(t, y)
            total -= float(np.sum(cnt * du))
    return total


def residuals(batch: PathBatch, surface: Surface, fields: MemmFields) -> np.ndarray:
    """Vectorised :func:`pathwise_residual` over a stored batch."""
    if batch.V is None:
        raise ValueError("paths were not stored; simulate with store_paths=True")
    model = fields.model
    lo, hi = model.domain
    dt = np.diff(batch.times)
    out = np.full(batch.n_paths, -surface.initial_value(model.V0))
    for i in range(len(dt)):
        t = batch.times[i]
        y = np.clip(batch.V[:, i], lo, hi)
        out += bilinear(surface.grid, fields.g, t, y) * dt[i]
        cnt = batch.counts[:, i]
        if cnt.any():
            target = np.clip(y[:, None] + model.jump_V(t, y), lo, hi)
            du = surface(t, target) - np.asarray(surface(t, y))[:, None]
            out -= (cnt * du).sum(axis=-1)
    return out


def exponential_moment_check(batch: PathBatch, model: MarketModel, alpha) -> VerifyStats:
    """``E[exp(alpha sum_jumps W_M^2)]`` against ``exp(T sum_i w_i (e^{alpha W_i^2} - 1))``.

    The closed form assumes ``W_M`` does not depend on time or state; it is
    taken at ``(0, V0)``.
    """
    if batch.counts is None:
        raise ValueError("paths were not stored; simulate with store_paths=True")
    W2 = np.asarray(model.evaluate(0.0, np.asarray(model.V0)).W_M) ** 2
    w = model.measure.intensities
    acc = np.zeros(batch.n_paths)
    for i in range(len(batch.times) - 1):
        y = model.clip_to_domain(batch.V[:, i])
        acc += (batch.counts[:, i] * model.evaluate(batch.times[i], y).W_M ** 2).sum(axis=-1)
    target = math.exp(model.T * float(np.sum(w * np.expm1(alpha * W2))))
    return mean_stat("exponential_moment", np.exp(alpha * acc), target)


def bns_variance_check(batch: PathBatch, params) -> np.ndarray:
    """Per path, simulated ``∫ sigma^2 dt`` minus its OU representation.

    The simulated integral is the left Riemann sum of ``e^{-lam t} y`` over
    the step grid; jumps are dated at the right end of their step.
    """
    from .special import bns_integrated_variance

    times = batch.times
    dt = np.diff(times)
    sizes = params.measure.sizes
    out = np.empty(batch.n_paths)
    for p in range(batch.n_paths):
        riemann = float(np.sum(np.exp(-params.lam * times[:-1]) * batch.V[p, :-1] * dt))
        steps, atoms = np.nonzero(batch.counts[p])
        reps = batch.counts[p][steps, atoms]
        tau = np.repeat(times[steps + 1], reps)
        x = np.repeat(sizes[atoms], reps)
        out[p] = riemann - bns_integrated_variance(params, tau, x)
    return out


def write_stats_json(path, stats: dict, extra: dict | None = None):
    payload = {name: s.to_dict() for name, s in stats.items()}
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
