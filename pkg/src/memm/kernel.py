"""The implicit jump kernel of the entropy density and the IPDE source term.

At a fixed node ``(t, y)`` the jump part of the density solves

    phi(x) = exp{k(x) - beta f(x) ∫ f(z) phi(z) nu(dz)}

which collapses to the scalar equation ``H(Phi) = 0`` with

    H(z) = z - sum_i w_i f_i exp{k_i - beta f_i z}.

``H`` is strictly increasing (``H' >= 1``) and its root satisfies
``|Phi| <= max_i e^{k_i} * sum_i w_i |f_i|``, so a safeguarded Newton
iteration started inside that bracket always converges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError
from .model import LevyMeasure, MarketModel, _lambda_hat_from

_EXP_CAP = 700.0


@dataclass(frozen=True)
class PhiSolution:
    Phi: float
    phi_of_atom: np.ndarray
    iterations: int
    residual: float


def solve_fixed_point(w, f, k, beta, tol=1e-12, max_iter=200):
    """Batched root of ``H`` for many independent instances.

    ``w``, ``f``, ``k`` have shape ``(..., n)`` and ``beta`` shape ``(...)``.
    Returns ``(Phi, phi, iterations, residual)`` with ``phi`` the per-atom
    values ``exp{k - beta f Phi}``.
    """
    w, f, k = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (w, f, k)))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), w.shape[:-1])
    batch = w.shape[:-1]
    if w.shape[-1] == 0:
        return np.zeros(batch), np.zeros(w.shape), 0, np.zeros(batch)

    wf = w * f
    bound = np.exp(np.minimum(k.max(axis=-1), _EXP_CAP)) * np.abs(wf).sum(axis=-1)
    lo, hi = -bound, bound.copy()
    z = np.zeros(batch)
    b = beta[..., None]

    def h_and_slope(z):
        e = np.exp(np.minimum(k - b * f * z[..., None], _EXP_CAP))
        s = wf * e
        return z - s.sum(axis=-1), 1.0 + beta * (s * f).sum(axis=-1), s.sum(axis=-1)

    done = np.zeros(batch, dtype=bool)
    for it in range(max_iter + 1):
        h, dh, S = h_and_slope(z)
        width = hi - lo
        done = (np.abs(h) <= tol) | (width <= 4 * np.finfo(float).eps * np.maximum(np.abs(lo), np.abs(hi)))
        if done.all():
            break
        if it == max_iter:
            i = np.unravel_index(np.argmax(~done), done.shape)
            raise NonConvergenceError(
                f"fixed point not reached in {max_iter} iterations (|H|={abs(h[i]):.3e})",
                detail={"bracket": (float(lo[i]), float(hi[i])), "z": float(z[i])},
            )
        lo = np.where(h < 0, z, lo)
        hi = np.where(h > 0, z, hi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = z - h / dh
            # where the exponential sum dominates, plain Newton creeps by 1/(beta f)
            # per step; Newton on log|z| = log|S| jumps straight to the right scale
            G = np.log(np.abs(S)) - np.log(np.abs(z))
            dG = (1.0 - dh) / S - 1.0 / z
            log_step = z - G / dG
        use_log = (z * S > 0) & (np.abs(h) > np.abs(z)) & np.isfinite(log_step)
        step = np.where(use_log, log_step, step)
        inside = np.isfinite(step) & (step > lo) & (step < hi)
        step = np.where(inside, step, 0.5 * (lo + hi))
        z = np.where(done, z, step)

    h, _, _ = h_and_slope(z)
    phi = np.exp(k - b * f * z[..., None])
    return z, phi, it, np.abs(h)


def solve_phi_k(measure: LevyMeasure, f, k, beta: float, tol=1e-12, max_iter=200) -> PhiSolution:
    """Solve ``phi = exp{k - beta f ∫ f phi dnu}`` for one instance."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    f = np.asarray(f, dtype=float).reshape(-1)
    k = np.asarray(k, dtype=float).reshape(-1)
    if f.shape != (measure.n_atoms,) or k.shape != (measure.n_atoms,):
        raise ValueError("f and k need one value per atom")
    if not np.all(np.isfinite(k)):
        raise ValueError("k must be finite at every atom")
    z, phi, it, res = solve_fixed_point(measure.intensities, f, k, beta, tol, max_iter)
    return PhiSolution(float(z), phi, int(it), float(res))


# -- node-level assembly ------------------------------------------------------

def _wl_from(lam, sigma, W_M, du, w, tol=1e-12, max_iter=200):
    """W_L for batched node data; ``W_M`` and ``du`` carry an atom axis."""
    if W_M.shape[-1] == 0:
        return np.zeros(W_M.shape)
    s2 = sigma**2
    m1 = W_M @ w
    m2 = (W_M**2) @ w
    shift = lam * (1.0 + m2 / s2) - m1 / s2
    k = du - W_M * shift[..., None]
    _, phi, _, _ = solve_fixed_point(w, W_M, k, 1.0 / s2, tol, max_iter)
    return phi - 1.0 + lam[..., None] * W_M


def _phi_sigma_from(lam, sigma, W_M, W_L, w):
    cross = (W_M * W_L) @ w if W_M.shape[-1] else np.zeros(np.shape(lam))
    phi_hat = -lam - cross / sigma**2
    # (phi_hat + lam) * sigma reduced algebraically so the orthogonality
    # identity holds to rounding
    sigma_L = -cross / sigma
    return phi_hat, sigma_L


def _g_from(lam, sigma, W_M, W_L, w):
    if W_M.shape[-1] == 0:
        return -0.5 * lam**2 * sigma**2
    s2 = sigma**2
    cross = (W_M * W_L) @ w
    m1 = W_M @ w
    m2 = (W_M**2) @ w
    return (0.5 * (cross**2 / s2 - lam**2 * s2)
            + (m1 - lam * m2) / s2 * cross
            + W_L @ w - lam**2 * m2)


def _g_direct_from(lam, sigma, W_M, W_L, phi_hat, sigma_L, w):
    """Source term from its defining expression, no substitutions."""
    val = 0.5 * (sigma_L - lam * sigma) ** 2 + phi_hat * lam * sigma**2
    if W_M.shape[-1]:
        integrand = W_L - (phi_hat + lam)[..., None] * W_M + (phi_hat * lam)[..., None] * W_M**2
        val = val + integrand @ w
    return val


def _g_terms_scale(lam, sigma, W_M, W_L, phi_hat, sigma_L, w):
    """Sum of absolute values of the terms entering the source term."""
    scale = 0.5 * (sigma_L - lam * sigma) ** 2 + np.abs(phi_hat * lam) * sigma**2
    if W_M.shape[-1]:
        scale = scale + (np.abs(W_L) + np.abs((phi_hat + lam)[..., None] * W_M)
                         + np.abs((phi_hat * lam)[..., None]) * W_M**2) @ w
    return scale


def _node(model, t, y):
    y = np.asarray(y, dtype=float)
    coef = model.evaluate(t, y)
    lam = _lambda_hat_from(coef, model.measure)
    return coef, lam


def solve_WL(model: MarketModel, t, y, delta_u, tol=1e-12, max_iter=200):
    """Jump kernel ``W_L`` at ``(t, y)`` given the per-atom jumps ``delta_u`` of u.

    ``y`` may be an array; ``delta_u`` then carries a trailing atom axis.
    """
    coef, lam = _node(model, t, y)
    du = np.broadcast_to(np.asarray(delta_u, dtype=float), coef.W_M.shape)
    if not np.all(np.isfinite(du)):
        raise ValueError("delta_u must be finite")
    return _wl_from(lam, coef.sigma_M, coef.W_M, du, model.measure.intensities, tol, max_iter)


def compute_phi_sigma(model: MarketModel, t, y, W_L):
    """Optimal scaled strategy ``phi_hat`` and Brownian loading ``sigma_L``."""
    coef, lam = _node(model, t, y)
    W_L = np.broadcast_to(np.asarray(W_L, dtype=float), coef.W_M.shape)
    phi_hat, sigma_L = _phi_sigma_from(lam, coef.sigma_M, coef.W_M, W_L, model.measure.intensities)
    if np.ndim(phi_hat) == 0:
        return float(phi_hat), float(sigma_L)
    return phi_hat, sigma_L


def g_value(model: MarketModel, t, y, W_L, phi_hat=None, sigma_L=None, crosscheck=False, rtol=1e-10):
    """IPDE source term at ``(t, y)``.

    Evaluated from the reduced form that only needs ``W_L``.  With
    ``crosscheck=True`` the unreduced form (which uses ``phi_hat`` and
    ``sigma_L``) is evaluated too and an ``AssertionError`` is raised when
    the two disagree beyond ``rtol`` relative to the size of the terms.
    """
    coef, lam = _node(model, t, y)
    W_L = np.broadcast_to(np.asarray(W_L, dtype=float), coef.W_M.shape)
    w = model.measure.intensities
    g = _g_from(lam, coef.sigma_M, coef.W_M, W_L, w)
    if crosscheck:
        if phi_hat is None or sigma_L is None:
            phi_hat, sigma_L = _phi_sigma_from(lam, coef.sigma_M, coef.W_M, W_L, w)
        direct = _g_direct_from(lam, coef.sigma_M, coef.W_M, W_L, phi_hat, sigma_L, w)
        scale = np.maximum(_g_terms_scale(lam, coef.sigma_M, coef.W_M, W_L, phi_hat, sigma_L, w),
                           np.abs(g))
        err = np.abs(direct - g)
        if np.any(err > rtol * scale):
            raise AssertionError(f"source term forms disagree: max abs diff {err.max():.3e}")
    return float(g) if np.ndim(g) == 0 else g


def g_value_direct(model: MarketModel, t, y, W_L, phi_hat, sigma_L):
    """Source term from its unreduced definition (independent cross-check)."""
    coef, lam = _node(model, t, y)
    W_L = np.broadcast_to(np.asarray(W_L, dtype=float), coef.W_M.shape)
    g = _g_direct_from(lam, coef.sigma_M, coef.W_M, W_L, np.asarray(phi_hat, float),
                       np.asarray(sigma_L, float), model.measure.intensities)
    return float(g) if np.ndim(g) == 0 else g


@dataclass(frozen=True, eq=False)
class MemmFields:
    """Solved density ingredients on the ``(t, y)`` grid.

    Arrays have shape ``(n_t, n_y)``; jump arrays a trailing atom axis.
    """

    grid: object
    model: MarketModel
    lambda_hat: np.ndarray
    phi_hat: np.ndarray
    sigma_L: np.ndarray
    W_L: np.ndarray
    g: np.ndarray
    sigma_M: np.ndarray
    W_M: np.ndarray

    @property
    def jump_ratio(self) -> np.ndarray:
        """Density of the jump compensator, ``1 - lambda_hat W_M + W_L``."""
        return 1.0 - self.lambda_hat[..., None] * self.W_M + self.W_L

    def orthogonality_error(self) -> np.ndarray:
        """Relative violation of ``sigma_M sigma_L + ∫ W_M W_L dnu = 0``."""
        w = self.model.measure.intensities
        prod = self.W_M * self.W_L
        total = self.sigma_M * self.sigma_L + (prod @ w if prod.shape[-1] else 0.0)
        scale = np.abs(self.sigma_M * self.sigma_L) + (np.abs(prod) @ w if prod.shape[-1] else 0.0)
        return np.where(scale > 0, np.abs(total) / np.where(scale > 0, scale, 1.0), np.abs(total))

    def source_form_error(self) -> np.ndarray:
        """Relative disagreement of the reduced and unreduced source terms."""
        w = self.model.measure.intensities
        direct = _g_direct_from(self.lambda_hat, self.sigma_M, self.W_M, self.W_L,
                                self.phi_hat, self.sigma_L, w)
        scale = np.maximum(_g_terms_scale(self.lambda_hat, self.sigma_M, self.W_M, self.W_L,
                                          self.phi_hat, self.sigma_L, w), np.abs(self.g))
        err = np.abs(direct - self.g)
        return np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), err)

    def replace(self, **changes) -> "MemmFields":
        from dataclasses import replace
        return replace(self, **changes)


def assemble_fields(model: MarketModel, grid, delta_u_rows, tol=1e-12) -> MemmFields:
    """Node-wise fields from per-node ``delta_u`` of shape ``(n_t, n_y, n)``."""
    lam_rows, phi_rows, sl_rows, wl_rows, g_rows, sig_rows, wm_rows = ([] for _ in range(7))
    w = model.measure.intensities
    for j, t in enumerate(grid.times):
        coef, lam = _node(model, t, grid.ys)
        W_L = _wl_from(lam, coef.sigma_M, coef.W_M, delta_u_rows[j], w, tol)
        phi_hat, sigma_L = _phi_sigma_from(lam, coef.sigma_M, coef.W_M, W_L, w)
        lam_rows.append(lam)
        phi_rows.append(phi_hat)
        sl_rows.append(sigma_L)
        wl_rows.append(W_L)
        g_rows.append(_g_from(lam, coef.sigma_M, coef.W_M, W_L, w))
        sig_rows.append(coef.sigma_M)
        wm_rows.append(np.array(coef.W_M))
    return MemmFields(grid, model, np.array(lam_rows), np.array(phi_rows), np.array(sl_rows),
                      np.array(wl_rows), np.array(g_rows), np.array(sig_rows), np.array(wm_rows))
