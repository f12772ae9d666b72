"""Reduced solvers for deterministic volatility, orthogonal volatility and BN-S.

These serve as presets and as independent oracles for the general solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, NonConvergenceError
from .ipde import Grid, Surface, bilinear, picard_solve
from .kernel import MemmFields, _g_from
from .model import LevyMeasure, MarketModel, _lambda_hat_from, lambda_hat


# -- deterministic volatility -------------------------------------------------

def deterministic_residual(phi, eta, sigma, W_M, w):
    """``eta + sigma^2 phi + sum_i w_i W_i (exp(phi W_i) - 1)``."""
    return eta + sigma**2 * phi + float(np.sum(w * W_M * np.expm1(phi * W_M)))


def solve_deterministic_phi(model: MarketModel, t, y=None, tol=1e-12, max_iter=200) -> float:
    """Optimal scaled strategy when volatility jumps vanish.

    The residual is strictly increasing in ``phi``; its root lies between 0
    and ``-eta_M / sigma_M^2`` because each jump term has the sign of
    ``phi``.  ``y`` defaults to ``V0`` (the coefficients may still depend
    on the state through the drift of ``V``).
    """
    y = model.V0 if y is None else y
    coef = model.evaluate(t, np.asarray(float(y)))
    if np.any(coef.W_V != 0):
        raise ValueError("deterministic-volatility solver needs W_V == 0")
    eta, sig = float(coef.eta_M), float(coef.sigma_M)
    W = np.asarray(coef.W_M, dtype=float)
    w = model.measure.intensities
    a, b = sorted((0.0, -eta / sig**2))
    eps = 4 * np.finfo(float).eps
    z = 0.5 * (a + b)
    for _ in range(max_iter):
        r = deterministic_residual(z, eta, sig, W, w)
        if r == 0.0 or b - a <= eps * max(abs(a), abs(b), 1.0):
            break
        if r > 0:
            b = z
        else:
            a = z
        slope = sig**2 + float(np.sum(w * W**2 * np.exp(np.minimum(z * W, 700.0))))
        step = z - r / slope
        new = step if a < step < b else 0.5 * (a + b)
        # Newton has settled once the step is at rounding level
        done = abs(new - z) <= eps * max(abs(z), 1.0) and abs(r) <= tol
        z = new
        if done:
            break
    else:
        raise NonConvergenceError(f"deterministic root not reached in {max_iter} iterations",
                                  detail={"bracket": (a, b)})
    if abs(deterministic_residual(z, eta, sig, W, w)) > tol:
        raise NonConvergenceError("deterministic root residual above tolerance",
                                  detail={"bracket": (a, b)})
    return z


# -- orthogonal volatility ----------------------------------------------------

def solve_orthogonal(model: MarketModel, grid: Grid | None = None, tol=1e-12,
                     return_report=False, **kwargs):
    """Solve the linear problem for ``v = exp(u)`` when ``W_M == 0``.

    Returns ``(v, u, fields)``, plus the fixed-point report with
    ``return_report=True``.  ``kwargs`` go to :func:`picard_solve`.
    """
    grid = Grid.for_model(model) if grid is None else grid
    w = model.measure.intensities
    for t in grid.times:
        if np.any(model.evaluate(t, grid.ys).W_M != 0):
            raise ValueError("orthogonal solver needs W_M == 0")
    v, _, report = picard_solve(model, grid, "linear-orthogonal", tol=tol, **kwargs)
    if not np.all(v.values > 0):
        j, k = np.unravel_index(np.argmin(v.values), v.values.shape)
        raise ArithmeticError(f"v <= 0 at t={grid.times[j]:.6g}, y={grid.ys[k]:.6g}; refine the grid")
    u = Surface(grid, np.log(v.values))

    rows = {key: [] for key in ("lam", "phi", "sl", "wl", "g", "sig", "wm")}
    for j, t in enumerate(grid.times):
        coef = model.evaluate(t, grid.ys)
        lam = _lambda_hat_from(coef, model.measure)
        target = grid.ys[:, None] + model.jump_V(t, grid.ys)
        W_L = bilinear(grid, v.values, t, target) / v.values[j][:, None] - 1.0
        rows["lam"].append(lam)
        rows["phi"].append(-lam)
        rows["sl"].append(np.zeros_like(lam))
        rows["wl"].append(W_L)
        rows["g"].append(_g_from(lam, coef.sigma_M, coef.W_M, W_L, w))
        rows["sig"].append(coef.sigma_M)
        rows["wm"].append(np.zeros(coef.W_M.shape))
    fields = MemmFields(grid, model, *(np.array(rows[k]) for k in
                                       ("lam", "phi", "sl", "wl", "g", "sig", "wm")))
    if return_report:
        return v, u, fields, report
    return v, u, fields


# -- BN-S ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BnsParams:
    """Barndorff-Nielsen-Shephard parameters.

    ``measure`` is the Lévy measure of the subordinator on positive jump
    sizes; the compensator of the time-changed driver is ``lam * measure``.
    ``tail_rate``/``tail_scale`` record the density ``a e^{-b x}`` the atoms
    were generated from, when they were.
    """

    mu: float
    beta: float
    rho: float
    lam: float
    sigma0_sq: float
    measure: LevyMeasure
    y_max: float | None = None
    T: float = 1.0
    S0: float = 100.0
    tail_rate: float | None = None
    tail_scale: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("mean-reversion rate lam must be positive")
        if self.rho > 0:
            raise ValueError("leverage rho must be <= 0")
        if not self.sigma0_sq > 0:
            raise ValueError("sigma0_sq must be positive")
        if self.measure.n_atoms and np.any(self.measure.sizes <= 0):
            raise ValueError("subordinator jumps must be positive")
        if self.y_max is not None and not self.y_max > self.sigma0_sq:
            raise ValueError("y_max must exceed sigma0_sq")

    @property
    def compensator(self) -> LevyMeasure:
        return self.measure.scaled(self.lam)

    @property
    def threshold(self) -> float:
        """Exponential-moment rate ``(beta + 1/2)^2 / lam`` the jump tail must beat."""
        return (self.beta + 0.5) ** 2 / self.lam


def exponential_tail_atoms(a, b, n) -> LevyMeasure:
    """Gauss-Laguerre atoms for the density ``a e^{-b x}`` on ``(0, inf)``."""
    if not (a > 0 and b > 0 and n >= 1):
        raise ValueError("need a > 0, b > 0, n >= 1")
    s, wq = np.polynomial.laguerre.laggauss(int(n))
    return LevyMeasure(s / b, a * wq / b)


def default_bns_ymax(p: BnsParams, quantile=0.999, n_samples=100_000, seed=20240611) -> float:
    """``sigma0^2`` plus a high quantile of ``e^{lam T}`` times the jumps accrued on ``[0, T]``."""
    nu = p.compensator
    if nu.n_atoms == 0:
        return 2.0 * p.sigma0_sq
    rng = np.random.default_rng(seed)
    counts = rng.poisson(nu.intensities * p.T, size=(n_samples, nu.n_atoms))
    total = math.exp(p.lam * p.T) * (counts @ nu.sizes)
    q = float(np.quantile(total, quantile))
    return p.sigma0_sq + max(q, float(nu.sizes.max()) * math.exp(p.lam * p.T))


def _bns_lambda(p: BnsParams, t, y):
    nu = p.compensator
    jm = np.expm1(p.rho * nu.sizes)
    var = np.exp(-p.lam * t) * y
    return (p.mu + nu.integrate(jm) + var * (p.beta + 0.5)) / (var + nu.integrate(jm**2))


def build_bns_model(p: BnsParams, check_resolution=(64, 64)) -> MarketModel:
    """Market in the coordinates ``y = e^{lam t} sigma_t^2`` on ``[sigma0^2, y_max]``.

    Raises :class:`AdmissibilityError` if the market price of risk is not
    strictly positive on a sampling grid.
    """
    nu = p.compensator
    y_max = default_bns_ymax(p) if p.y_max is None else p.y_max
    drift_jump = nu.integrate(np.expm1(p.rho * nu.sizes))
    lam_, rho, half = p.lam, p.rho, p.beta + 0.5

    model = MarketModel(
        eta_M=lambda t, y: p.mu + drift_jump + np.exp(-lam_ * t) * y * half,
        sigma_M=lambda t, y: np.sqrt(np.exp(-lam_ * t) * y),
        W_M=lambda t, y, x: np.expm1(rho * x) + 0.0 * y,
        eta_V=lambda t, y: 0.0,
        W_V=lambda t, y, x: np.exp(lam_ * t) * x + 0.0 * y,
        domain=(p.sigma0_sq, y_max), T=p.T, S0=p.S0, V0=p.sigma0_sq, measure=nu, name="bns",
    )
    ts = np.linspace(0.0, p.T, check_resolution[0])
    ys = np.linspace(p.sigma0_sq, y_max, check_resolution[1])
    lam_min = min(float(np.min(lambda_hat(model, t, ys))) for t in ts)
    if not lam_min > 0:
        raise AdmissibilityError(f"market price of risk not strictly positive (min {lam_min:.4g})")
    return model


@dataclass
class BnsAdmissibility:
    threshold: float
    atomic_sum: float
    tail_rate: float | None
    tail_ok: bool | None
    lambda_min: float
    lambda_positive: bool
    y_max: float
    messages: list = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return self.tail_ok is not False and self.lambda_positive and math.isfinite(self.atomic_sum)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["admissible"] = self.admissible
        return d


def tail_moment(a, b, c) -> float:
    """``∫_0^inf (e^{c x} - 1) a e^{-b x} dx``; infinite unless ``b > c``."""
    if b <= c:
        return math.inf
    return a * (1.0 / (b - c) - 1.0 / b)


def check_bns_admissibility(p: BnsParams, resolution=(64, 64)) -> BnsAdmissibility:
    """Exponential-moment condition on the jumps and positivity of the market price of risk."""
    c = p.threshold
    nu = p.compensator
    atomic = nu.integrate(np.expm1(c * nu.sizes)) if nu.n_atoms else 0.0
    msgs = [f"atomic exponential moment sum = {atomic:.6g}"]
    tail_ok = None
    if p.tail_rate is not None:
        tail_ok = p.tail_rate > c
        msgs.append(f"tail rate b={p.tail_rate:g} {'>' if tail_ok else '<='} threshold {c:g}")
        if p.tail_scale is not None:
            msgs.append(f"closed-form tail moment = {tail_moment(p.lam * p.tail_scale, p.tail_rate, c):.6g}")
    y_max = default_bns_ymax(p) if p.y_max is None else p.y_max
    ts = np.linspace(0.0, p.T, resolution[0])
    ys = np.linspace(p.sigma0_sq, y_max, resolution[1])
    lam_min = min(float(np.min(_bns_lambda(p, t, ys))) for t in ts)
    if not lam_min > 0:
        msgs.append(f"market price of risk reaches {lam_min:.4g} <= 0")
    return BnsAdmissibility(c, float(atomic), p.tail_rate, tail_ok, lam_min, lam_min > 0,
                            float(y_max), msgs)


def bns_integrated_variance(p: BnsParams, jump_times, jump_sizes) -> float:
    """``∫_0^T sigma_t^2 dt`` from the OU representation of the variance."""
    lam, T = p.lam, p.T
    jump_times = np.asarray(jump_times, float)
    jump_sizes = np.asarray(jump_sizes, float)
    base = -math.expm1(-lam * T) / lam * p.sigma0_sq
    return base + float(np.sum(-np.expm1(-lam * (T - jump_times)) / lam * jump_sizes))
