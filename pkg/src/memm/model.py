"""Jump-diffusion stochastic volatility market with a finite atomic Lévy measure.

The price and volatility factor follow

    dS_t / S_{t-} = eta_M(t, V_t) dt + sigma_M(t, V_t) dB_t
                    + d(W_M(., V_-, x) * (mu - nu))_t
    dV_t          = eta_V(t, V_t) dt + d(W_V(., V_-, x) * mu)_t

where the jump measure ``mu`` has compensator ``nu(dx) dt`` and ``nu`` is a
finite sum of atoms.  Every ``∫ . nu(dx)`` therefore becomes a weighted sum.

Coefficient callables must broadcast over numpy arrays: ``eta_M(t, y)`` is
called with ``y`` of any shape and ``W_M(t, y, x)`` with ``y[..., None]`` and
``x`` of shape ``(n_atoms,)``.  Returning a plain scalar is fine; it is
broadcast.  Regularity (differentiability in ``y``, local Lipschitz in ``t``)
is the caller's responsibility and is not checked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import EvaluationError


@dataclass(frozen=True, eq=False)
class LevyMeasure:
    """Finite atomic Lévy measure ``sum_i w_i delta_{x_i}``."""

    sizes: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        x = np.array(self.sizes, dtype=float).reshape(-1)
        w = np.array(self.intensities, dtype=float).reshape(-1)
        if x.shape != w.shape:
            raise ValueError("sizes and intensities must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must be finite")
        if np.any(w <= 0):
            raise ValueError("atom intensities must be strictly positive")
        if len(np.unique(x)) != len(x):
            raise ValueError("atom sizes must be pairwise distinct")
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "sizes", x)
        object.__setattr__(self, "intensities", w)

    @classmethod
    def from_atoms(cls, atoms) -> "LevyMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls.empty()
        x, w = zip(*atoms)
        return cls(np.array(x, float), np.array(w, float))

    @classmethod
    def empty(cls) -> "LevyMeasure":
        return cls(np.zeros(0), np.zeros(0))

    @property
    def n_atoms(self) -> int:
        return len(self.sizes)

    @property
    def total_intensity(self) -> float:
        return float(self.intensities.sum())

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.sizes.tolist(), self.intensities.tolist()))

    def scaled(self, factor: float) -> "LevyMeasure":
        """Measure with every intensity multiplied by ``factor``."""
        return LevyMeasure(self.sizes, self.intensities * factor)

    def integrate(self, values) -> np.ndarray:
        """Weighted sum over the last axis of per-atom ``values``."""
        values = np.asarray(values, dtype=float)
        if self.n_atoms == 0:
            return np.zeros(values.shape[:-1])
        return values @ self.intensities

    def __repr__(self):
        return f"LevyMeasure(atoms={self.atoms})"


def nu_integral(measure: LevyMeasure, integrand) -> float:
    """Return ``sum_i w_i * integrand(x_i)``.

    ``integrand`` is either a callable of the jump size or a sequence of
    per-atom values.
    """
    if callable(integrand):
        values = [integrand(x) for x in measure.sizes]
    else:
        values = list(np.asarray(integrand, dtype=float).reshape(-1))
        if len(values) != measure.n_atoms:
            raise ValueError(f"expected {measure.n_atoms} per-atom values, got {len(values)}")
    for i, (x, v) in enumerate(zip(measure.sizes, values)):
        if not np.isfinite(v):
            raise EvaluationError(f"integrand is {v} at atom {i} (x={x!r})")
    return math.fsum(w * float(v) for w, v in zip(measure.intensities, values))


class Coefficients(NamedTuple):
    """Model coefficients evaluated at a batch of states.

    Jump coefficients carry a trailing atom axis.
    """

    eta_M: np.ndarray
    sigma_M: np.ndarray
    W_M: np.ndarray
    eta_V: np.ndarray
    W_V: np.ndarray


@dataclass(frozen=True, eq=False)
class MarketModel:
    eta_M: Callable
    sigma_M: Callable
    W_M: Callable
    eta_V: Callable
    W_V: Callable
    domain: tuple[float, float]
    T: float
    S0: float
    V0: float
    measure: LevyMeasure = field(default_factory=LevyMeasure.empty)
    name: str = ""

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        object.__setattr__(self, "domain", (lo, hi))
        if not lo < hi:
            raise ValueError(f"empty volatility domain {self.domain}")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not self.S0 > 0:
            raise ValueError("S0 must be positive")
        if not lo <= self.V0 <= hi:
            raise ValueError(f"V0={self.V0} outside domain {self.domain}")

    @property
    def n_atoms(self) -> int:
        return self.measure.n_atoms

    def _scalar(self, fn, t, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(fn(t, y), dtype=float), y.shape)

    def _jump(self, fn, t, y):
        y = np.asarray(y, dtype=float)
        shape = y.shape + (self.n_atoms,)
        if self.n_atoms == 0:
            return np.zeros(shape)
        val = fn(t, y[..., None], self.measure.sizes)
        return np.broadcast_to(np.asarray(val, dtype=float), shape)

    def evaluate(self, t, y) -> Coefficients:
        """All coefficients at time ``t`` (scalar) and states ``y`` (any shape)."""
        return Coefficients(
            eta_M=self._scalar(self.eta_M, t, y),
            sigma_M=self._scalar(self.sigma_M, t, y),
            W_M=self._jump(self.W_M, t, y),
            eta_V=self._scalar(self.eta_V, t, y),
            W_V=self._jump(self.W_V, t, y),
        )

    def drift_V(self, t, y):
        return self._scalar(self.eta_V, t, y)

    def jump_V(self, t, y):
        return self._jump(self.W_V, t, y)

    def clip_to_domain(self, y):
        lo, hi = self.domain
        return np.clip(y, lo, hi)


def _lambda_hat_from(coef: Coefficients, measure: LevyMeasure):
    denom = coef.sigma_M**2 + measure.integrate(coef.W_M**2)
    return coef.eta_M / denom


def lambda_hat(model: MarketModel, t, y):
    """Market price of risk ``eta_M / (sigma_M^2 + ∫ W_M^2 dnu)``."""
    lam = _lambda_hat_from(model.evaluate(t, y), model.measure)
    return float(lam) if np.ndim(lam) == 0 else lam


@dataclass(frozen=True)
class Violation:
    check: str
    t: float
    y: float
    value: float
    atom: int | None = None
    message: str = ""

    def __str__(self):
        where = f"t={self.t:.6g}, y={self.y:.6g}"
        if self.atom is not None:
            where += f", atom={self.atom}"
        return f"{self.check}: {self.message} ({where}, value={self.value!r})"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    resolution: tuple[int, int] = (0, 0)

    @property
    def passed(self) -> bool:
        return not self.violations

    def checks_failed(self) -> set[str]:
        return {v.check for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "resolution": list(self.resolution),
            "violations": [
                {"check": v.check, "t": v.t, "y": v.y, "atom": v.atom,
                 "value": v.value, "message": v.message}
                for v in self.violations
            ],
        }


SIGMA_FLOOR = "sigma_floor"
PRICE_JUMP_RANGE = "price_jump_range"
LAMBDA_BOUNDED = "lambda_hat_bounded"
VOL_JUMP_INTEGRABLE = "vol_jump_integrable"
COEFFICIENT_ERROR = "coefficient_error"


def validate_model(model: MarketModel, resolution=(64, 64), sigma_min=1e-8,
                   lambda_max=1e8, max_violations=1000) -> ValidationReport:
    """Check the standing assumptions on a ``(t, y)`` sampling grid.

    Checked: ``sigma_M >= sigma_min``; ``W_M > -1`` at every atom;
    ``lambda_hat`` finite with ``|lambda_hat| <= lambda_max``;
    ``∫ |W_V| dnu`` finite.  Coefficient exceptions are recorded as
    violations rather than raised.
    """
    n_t, n_y = resolution
    if n_t < 2 or n_y < 2:
        raise ValueError("validation grid needs at least 2 points per axis")
    ts = np.linspace(0.0, model.T, n_t)
    ys = np.linspace(*model.domain, n_y)
    out: list[Violation] = []

    def add(check, t, y, value, atom=None, message=""):
        if len(out) < max_violations:
            out.append(Violation(check, float(t), float(y), float(value), atom, message))

    for t in ts:
        try:
            coef = model.evaluate(t, ys)
        except Exception as exc:  # opaque user callables
            add(COEFFICIENT_ERROR, t, math.nan, math.nan, message=f"{type(exc).__name__}: {exc}")
            continue
        for name in ("eta_M", "sigma_M", "eta_V"):
            bad = ~np.isfinite(getattr(coef, name))
            for k in np.flatnonzero(bad):
                add(COEFFICIENT_ERROR, t, ys[k], getattr(coef, name)[k], message=f"{name} not finite")
        for name in ("W_M", "W_V"):
            bad = ~np.isfinite(getattr(coef, name))
            for k, i in zip(*np.nonzero(bad)):
                add(COEFFICIENT_ERROR, t, ys[k], getattr(coef, name)[k, i], atom=int(i),
                    message=f"{name} not finite")

        sig = coef.sigma_M
        for k in np.flatnonzero(~(sig >= sigma_min)):
            add(SIGMA_FLOOR, t, ys[k], sig[k], message="sigma_M not bounded away from zero")

        for k, i in zip(*np.nonzero(~(coef.W_M > -1.0))):
            add(PRICE_JUMP_RANGE, t, ys[k], coef.W_M[k, i], atom=int(i),
                message="relative price jump W_M must exceed -1")

        with np.errstate(divide="ignore", invalid="ignore"):
            lam = _lambda_hat_from(coef, model.measure)
        for k in np.flatnonzero(~(np.abs(lam) <= lambda_max)):
            add(LAMBDA_BOUNDED, t, ys[k], lam[k], message="lambda_hat not finite or not bounded")

        jv = model.measure.integrate(np.abs(coef.W_V))
        for k in np.flatnonzero(~np.isfinite(jv)):
            add(VOL_JUMP_INTEGRABLE, t, ys[k], jv[k], message="∫|W_V| dnu not finite")

    return ValidationReport(tuple(out), (n_t, n_y))
