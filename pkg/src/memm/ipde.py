"""Semi-linear transport IPDE solved along characteristics by Picard iteration.

The problem

    u_t + eta_V(t, y) u_y + g^y(t, u_t) = 0,    u(T, .) = h

has the mild form ``u(t, y) = h(Y_T) + ∫_t^T g^{Y_s}(s, u_s) ds`` where
``Y`` is the characteristic flow ``dY_s = eta_V(s, Y_s) ds``, ``Y_t = y``.
Each Picard sweep evaluates the source on the grid nodes of the current
iterate, interpolates it (piecewise-linear in ``y``) onto the flow points and
integrates with the composite trapezoid rule over the time nodes.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ClampError, ModelValidationError, NonConvergenceError, TruncationError
from .kernel import MemmFields, _g_from, _wl_from, assemble_fields
from .model import MarketModel, _lambda_hat_from, validate_model

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Grid:
    times: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.ys, dtype=float)
        if t.ndim != 1 or y.ndim != 1 or len(t) < 2 or len(y) < 2:
            raise ValueError("grid needs at least 2 points per axis")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if t[0] != 0.0:
            raise ValueError("time axis must start at 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "ys", y)

    @classmethod
    def uniform(cls, T, domain, n_t=64, n_y=64) -> "Grid":
        return cls(np.linspace(0.0, T, n_t), np.linspace(domain[0], domain[1], n_y))

    @classmethod
    def for_model(cls, model: MarketModel, n_t=64, n_y=64) -> "Grid":
        return cls.uniform(model.T, model.domain, n_t, n_y)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.times), len(self.ys)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def time_weights(self, t):
        """Bracketing time row ``j`` and weight ``a`` with ``t = (1-a) t_j + a t_{j+1}``."""
        times = self.times
        t = min(max(float(t), times[0]), times[-1])
        j = int(np.searchsorted(times, t, side="right") - 1)
        j = min(j, len(times) - 2)
        a = (t - times[j]) / (times[j + 1] - times[j])
        return j, a


def interp_rows(ys, rows, z):
    """Piecewise-linear interpolation in ``y`` of ``rows[..., n_y]`` at points ``z``.

    ``rows`` has shape ``(n_y,)`` or ``(n_y, p)``; points outside the axis take
    the boundary value.
    """
    z = np.asarray(z, dtype=float)
    zc = np.clip(z, ys[0], ys[-1])
    k = np.clip(np.searchsorted(ys, zc, side="right") - 1, 0, len(ys) - 2)
    a = (zc - ys[k]) / (ys[k + 1] - ys[k])
    if rows.ndim == 1:
        return (1 - a) * rows[k] + a * rows[k + 1]
    return (1 - a)[..., None] * rows[k] + a[..., None] * rows[k + 1]


def bilinear(grid: Grid, values, t, y):
    """Interpolate node ``values[n_t, n_y, ...]`` at scalar time ``t`` and states ``y``."""
    j, a = grid.time_weights(t)
    if a == 0.0:
        row = values[j]
    elif a == 1.0:
        row = values[j + 1]
    else:
        row = (1 - a) * values[j] + a * values[j + 1]
    return interp_rows(grid.ys, row, y)


@dataclass(frozen=True, eq=False)
class Surface:
    """Value function on the grid; linear in ``y`` between nodes, node-exact in ``t``.

    Off-node times are interpolated linearly as well.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def row(self, j, z):
        return interp_rows(self.grid.ys, self.values[j], z)

    def __call__(self, t, y):
        out = bilinear(self.grid, self.values, t, y)
        return float(out) if np.ndim(out) == 0 else out

    def initial_value(self, V0) -> float:
        return float(self.row(0, V0))


@dataclass
class FixedPointReport:
    iterations: int = 0
    sup_deltas: list = field(default_factory=list)
    beta_deltas: list = field(default_factory=list)
    beta_used: float = 0.0
    converged: bool = False
    c_trunc: float | None = None
    final_residual: float | None = None
    lipschitz_estimate: float = 0.0
    clamp_fraction: float = 0.0
    clamped_evaluations: int = 0
    total_evaluations: int = 0
    flow_exits: int = 0
    truncation_doublings: int = 0
    truncation_margin: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


# -- characteristics ----------------------------------------------------------

def _rk4(model, t, y, dt):
    f = model.drift_V
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def flow_characteristic(model: MarketModel, t, y, s, steps=64, return_exit=False):
    """Solve ``dY = eta_V(r, Y) dr`` from ``Y_t = y`` to time ``s`` by RK4.

    The result is clamped to the domain; with ``return_exit=True`` a boolean
    (array) flagging points that left it is returned as well.
    """
    if s < t:
        raise ValueError("flow runs forward in time: need s >= t")
    if s > model.T + 1e-12:
        raise ValueError("s beyond the horizon")
    y = np.array(y, dtype=float)
    exited = np.zeros(y.shape, dtype=bool)
    if s > t:
        dt = (s - t) / steps
        lo, hi = model.domain
        for i in range(steps):
            y = _rk4(model, t + i * dt, y, dt)
            if not np.all(np.isfinite(y)):
                raise ValueError(f"non-finite characteristic drift near t={t + i * dt:.6g}")
            exited |= (y < lo) | (y > hi)
            y = np.clip(y, lo, hi)
    y = float(y) if y.ndim == 0 else y
    if return_exit:
        return y, (bool(exited) if np.ndim(exited) == 0 else exited)
    return y


@dataclass(frozen=True, eq=False)
class FlowTable:
    """Flow points ``points[j, m, k] = Y_{t_m}`` started at ``(t_j, y_k)``, for ``m >= j``."""

    points: np.ndarray
    exits: int
    identity: bool


def flow_table(model: MarketModel, grid: Grid, substeps=4) -> FlowTable:
    n_t, n_y = grid.shape
    pts = np.empty((n_t, n_t, n_y))
    lo, hi = model.domain
    exits = 0
    identity = True
    for m in range(n_t):
        pts[m, m] = grid.ys
        if m == 0:
            continue
        prev = pts[:m, m - 1]
        t0, t1 = grid.times[m - 1], grid.times[m]
        dt = (t1 - t0) / substeps
        cur = prev.copy()
        for i in range(substeps):
            cur = _rk4(model, t0 + i * dt, cur, dt)
            if not np.all(np.isfinite(cur)):
                raise ValueError(f"non-finite characteristic drift near t={t0 + i * dt:.6g}")
            out = (cur < lo) | (cur > hi)
            exits += int(out.sum())
            cur = np.clip(cur, lo, hi)
        pts[:m, m] = cur
        identity = identity and np.array_equal(cur, np.broadcast_to(grid.ys, cur.shape))
    return FlowTable(pts, exits, identity)


# -- source terms -------------------------------------------------------------

class DeltaU:
    """Per-atom jumps of a surface row along the volatility jumps, with clamp accounting."""

    def __init__(self, model: MarketModel):
        self.model = model
        self.clamped = 0
        self.total = 0

    def __call__(self, t, ys, u_row, z=None):
        z = ys if z is None else z
        target = z[..., None] + self.model.jump_V(t, z)
        lo, hi = self.model.domain
        out = (target < lo) | (target > hi)
        self.clamped += int(out.sum())
        self.total += out.size
        return interp_rows(ys, u_row, target) - interp_rows(ys, u_row, z)[..., None]

    def reset(self):
        self.clamped = 0
        self.total = 0


def delta_u(surface: Surface, model: MarketModel, t, y, return_clamps=False):
    """``u(t, y + W_V(t, y, x_i)) - u(t, y)`` per atom, interpolating the surface.

    Targets outside the domain are evaluated at the boundary and counted.
    """
    y = np.asarray(y, dtype=float)
    target = y[..., None] + model.jump_V(t, y)
    lo, hi = model.domain
    clamps = int(((target < lo) | (target > hi)).sum())
    du = bilinear(surface.grid, surface.values, t, target) - np.asarray(surface(t, y))[..., None]
    if return_clamps:
        return du, clamps
    return du


class MemmSource:
    """Entropy source ``g`` evaluated on a grid row, with truncation of u."""

    def __init__(self, model: MarketModel, c_trunc=None, tol=1e-12):
        self.model = model
        self.c_trunc = c_trunc
        self.tol = tol
        self.jumps = DeltaU(model)

    def truncate(self, t, u_row):
        if self.c_trunc is None:
            return u_row
        cap = self.c_trunc * (self.model.T - t)
        return np.clip(u_row, -cap, cap)

    def __call__(self, t, ys, u_row):
        model = self.model
        coef = model.evaluate(t, ys)
        lam = _lambda_hat_from(coef, model.measure)
        du = self.jumps(t, ys, self.truncate(t, u_row))
        w = model.measure.intensities
        W_L = _wl_from(lam, coef.sigma_M, coef.W_M, du, w, self.tol)
        return _g_from(lam, coef.sigma_M, coef.W_M, W_L, w)


class LinearOrthogonalSource:
    """Source of the linearised problem for ``v = exp(u)`` when ``W_M = 0``.

    ``-0.5 lambda_hat^2 sigma_M^2 v + ∫ (v(t, y + W_V) - v(t, y)) nu(dx)``.
    """

    def __init__(self, model: MarketModel):
        self.model = model
        self.jumps = DeltaU(model)

    def __call__(self, t, ys, v_row):
        coef = self.model.evaluate(t, ys)
        if np.any(coef.W_M != 0):
            raise ValueError("the linearised source requires W_M == 0")
        lam = _lambda_hat_from(coef, self.model.measure)
        jump = self.model.measure.integrate(self.jumps(t, ys, v_row))
        return -0.5 * lam**2 * coef.sigma_M**2 * v_row + jump


def _zero(y):
    return np.zeros_like(np.asarray(y, dtype=float))


def apply_F(model: MarketModel, surface: Surface, g_source: Callable, h_terminal: Callable = _zero,
            flows: FlowTable | None = None, threads: int = 1, return_source=False):
    """One Picard sweep ``(Fu)(t, y) = h(Y_T) + ∫_t^T g^{Y_s}(s, u_s) ds``.

    ``g_source(t, ys, u_row)`` returns the source on the grid row at time ``t``.
    """
    grid = surface.grid
    flows = flow_table(model, grid) if flows is None else flows
    n_t, n_y = grid.shape
    times, ys = grid.times, grid.ys

    def row(m):
        return np.broadcast_to(np.asarray(g_source(times[m], ys, surface.values[m]), float), (n_y,))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            G = np.array(list(pool.map(row, range(n_t))))
    else:
        G = np.array([row(m) for m in range(n_t)])

    pts = flows.points
    if flows.identity:
        dt = np.diff(times)[:, None]
        seg = 0.5 * dt * (G[:-1] + G[1:])
        integral = np.zeros((n_t, n_y))
        integral[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    else:
        Gi = np.zeros((n_t, n_t, n_y))
        for m in range(n_t):
            Gi[: m + 1, m] = interp_rows(ys, G[m], pts[: m + 1, m])
        dt = np.diff(times)
        seg = 0.5 * dt[None, :, None] * (Gi[:, :-1] + Gi[:, 1:])
        mask = np.arange(n_t - 1)[None, :] >= np.arange(n_t)[:, None]
        integral = (seg * mask[..., None]).sum(axis=1)
    terminal = np.asarray(h_terminal(pts[np.arange(n_t), n_t - 1]), dtype=float)
    new = Surface(grid, terminal + integral)
    if return_source:
        return new, G
    return new


def beta_norm(values, grid: Grid, beta: float) -> float:
    """``sup e^{-beta (T - t)} |u(t, y)|`` over the grid."""
    weight = np.exp(-beta * (grid.T - grid.times))[:, None]
    return float(np.max(weight * np.abs(values)))


def _iterate(model, grid, source, h_terminal, tol, max_sweeps, flows, threads, report):
    """Sweep until ``sup |F(u) - u| <= tol``; the returned ``u`` is the one that passed."""
    n_t, n_y = grid.shape
    h0 = np.asarray(h_terminal(grid.ys), dtype=float)
    u = Surface(grid, np.broadcast_to(h0, (n_t, n_y)).copy())
    prev_G = None
    deltas, diffs = [], []
    converged = False
    for sweep in range(1, max_sweeps + 1):
        new, G = apply_F(model, u, source, h_terminal, flows, threads, return_source=True)
        diff = new.values - u.values
        delta = float(np.max(np.abs(diff)))
        if prev_G is not None and deltas[-1] > 0:
            report.lipschitz_estimate = max(report.lipschitz_estimate,
                                            float(np.max(np.abs(G - prev_G))) / deltas[-1])
        prev_G = G
        deltas.append(delta)
        diffs.append(diff)
        report.iterations = sweep
        if delta <= tol:
            report.final_residual = delta
            converged = True
            break
        u = new
    report.sup_deltas = deltas
    report.beta_used = max(2.0 * report.lipschitz_estimate, 1.0 / grid.T)
    report.beta_deltas = [beta_norm(d, grid, report.beta_used) for d in diffs]
    report.converged = converged
    if not converged:
        raise NonConvergenceError(
            f"Picard iteration did not converge in {max_sweeps} sweeps "
            f"(last sup-delta {deltas[-1]:.3e}, tol {tol:.1e})", detail=report)
    return u


def picard_solve(model: MarketModel, grid: Grid | None = None, g_kind="memm", h_terminal=None,
                 tol=1e-9, max_sweeps=200, c_trunc=None, g_source=None, kernel_tol=1e-12,
                 substeps=4, max_clamp_fraction=0.01, threads=1, check_model=True,
                 max_doublings=8):
    """Fixed point of the Picard map.

    ``g_kind`` is ``"memm"`` (entropy source with truncation),
    ``"linear-orthogonal"`` (the linearised problem for ``exp(u)``; terminal
    value 1 by default) or ``"custom"`` (``g_source`` supplied).  Returns
    ``(surface, fields, report)``; ``fields`` is ``None`` unless
    ``g_kind == "memm"``.

    The sweep loop stops at the first iterate that one further sweep changes
    by at most ``tol``; that iterate is returned.  For the entropy source the truncation level
    defaults to twice the largest ``|g|`` at ``u = 0`` and is doubled while
    the truncation is active at the fixed point; an explicit ``c_trunc`` that
    turns out active raises :class:`TruncationError`.
    """
    grid = Grid.for_model(model) if grid is None else grid
    if check_model:
        rep = validate_model(model, resolution=grid.shape)
        if not rep.passed:
            raise ModelValidationError(rep)
    flows = flow_table(model, grid, substeps)
    report = FixedPointReport(flow_exits=flows.exits)

    if g_kind == "custom":
        if g_source is None:
            raise ValueError("custom g_kind needs g_source")
        h = _zero if h_terminal is None else h_terminal
        u = _iterate(model, grid, g_source, h, tol, max_sweeps, flows, threads, report)
        return u, None, report

    if g_kind == "linear-orthogonal":
        h = (lambda y: np.ones_like(np.asarray(y, float))) if h_terminal is None else h_terminal
        source = LinearOrthogonalSource(model)
        u = _iterate(model, grid, source, h, tol, max_sweeps, flows, threads, report)
        source.jumps.reset()
        apply_F(model, u, source, h, flows)
        _check_clamps(source.jumps, report, max_clamp_fraction)
        return u, None, report

    if g_kind != "memm":
        raise ValueError(f"unknown g_kind {g_kind!r}")
    if h_terminal is not None:
        raise ValueError("the entropy problem has terminal value 0")

    auto = c_trunc is None
    if auto:
        probe = MemmSource(model, None, kernel_tol)
        g0 = np.array([probe(t, grid.ys, np.zeros(len(grid.ys))) for t in grid.times])
        c_trunc = max(2.0 * float(np.max(np.abs(g0))), 1e-12)

    for attempt in range(max_doublings + 1):
        source = MemmSource(model, c_trunc, kernel_tol)
        report.c_trunc = c_trunc
        u = _iterate(model, grid, source, _zero, tol, max_sweeps, flows, threads, report)
        cap = c_trunc * (grid.T - grid.times)[:-1, None]
        margin = cap - np.abs(u.values[:-1])
        report.truncation_margin = float(margin.min()) if margin.size else None
        if np.all(margin > 0):
            break
        if not auto:
            raise TruncationError(
                f"C_trunc={c_trunc:g} too small: truncation active at the fixed point", report)
        c_trunc *= 2.0
        report.truncation_doublings += 1
        log.info("truncation active, doubling C_trunc to %g", c_trunc)
    else:
        raise TruncationError("truncation still active after doubling C_trunc", report)

    source.jumps.reset()
    apply_F(model, u, source, _zero, flows)
    _check_clamps(source.jumps, report, max_clamp_fraction)

    jumps = DeltaU(model)
    du_rows = np.array([jumps(t, grid.ys, u.values[j]) for j, t in enumerate(grid.times)])
    fields = assemble_fields(model, grid, du_rows, kernel_tol)
    return u, fields, report


def _check_clamps(jumps: DeltaU, report: FixedPointReport, max_fraction):
    report.clamped_evaluations = jumps.clamped
    report.total_evaluations = jumps.total
    report.clamp_fraction = jumps.clamped / jumps.total if jumps.total else 0.0
    if report.clamp_fraction > max_fraction:
        raise ClampError(
            f"{report.clamp_fraction:.2%} of volatility-jump evaluations left the domain "
            f"(limit {max_fraction:.2%})", report)


# -- export -------------------------------------------------------------------

def write_surface_csv(path, surface: Surface, fields: MemmFields | None = None):
    """CSV with columns ``t,y,u,phi_hat,sigma_L,g`` and one ``WL_i`` per atom."""
    grid = surface.grid
    n_atoms = fields.W_L.shape[-1] if fields is not None else 0
    header = ["t", "y", "u", "phi_hat", "sigma_L", "g"] + [f"WL_{i}" for i in range(n_atoms)]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for j, t in enumerate(grid.times):
            for k, y in enumerate(grid.ys):
                row = [t, y, surface.values[j, k]]
                if fields is None:
                    row += ["", "", ""]
                else:
                    row += [fields.phi_hat[j, k], fields.sigma_L[j, k], fields.g[j, k]]
                    row += list(fields.W_L[j, k])
                out.writerow([repr(float(v)) if v != "" else v for v in row])


def read_surface_csv(path, model: MarketModel):
    """Inverse of :func:`write_surface_csv`; rebuilds the surface and fields."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:6] != ["t", "y", "u", "phi_hat", "sigma_L", "g"]:
        raise ValueError(f"{path}: unexpected header {header[:6]}")
    data = np.array([[float(v) for v in r] for r in body])
    times = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    grid = Grid(times, ys)
    n_t, n_y = grid.shape
    if data.shape[0] != n_t * n_y:
        raise ValueError(f"{path}: not a full tensor grid")
    data = data.reshape(n_t, n_y, -1)
    surface = Surface(grid, data[..., 2])
    n_atoms = data.shape[-1] - 6
    if n_atoms != model.n_atoms:
        raise ValueError(f"{path}: {n_atoms} WL columns but the model has {model.n_atoms} atoms")
    sig, wm, lam = [], [], []
    for t in times:
        coef = model.evaluate(t, ys)
        sig.append(coef.sigma_M)
        wm.append(np.array(coef.W_M))
        lam.append(_lambda_hat_from(coef, model.measure))
    fields = MemmFields(grid, model, np.array(lam), data[..., 3], data[..., 4], data[..., 6:],
                        data[..., 5], np.array(sig), np.array(wm))
    return surface, fields
