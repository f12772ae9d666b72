"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py`` (lines are repeated in the terminal
summary) or ``python3 tests/test_acceptance.py``.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import constant_model, correlated_model, orthogonal_model  # noqa: E402
from memm.ipde import Grid, MemmSource, apply_F, flow_table, picard_solve  # noqa: E402
from memm.kernel import solve_fixed_point, solve_phi_k  # noqa: E402
from memm.model import LevyMeasure, MarketModel  # noqa: E402
from memm.modelfile import load_preset  # noqa: E402
from memm.montecarlo import (bns_variance_check, residuals, simulate_paths,  # noqa: E402
                             verify_suite)
from memm.special import (BnsParams, check_bns_admissibility, solve_orthogonal,  # noqa: E402
                          tail_moment)
from oracles import deterministic_root, lemma_H, lemma_root  # noqa: E402

RESULTS = []
OMEGA = 0.5671432904  # bisection oracle, root of z = exp(-z)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _identities(fields):
    ortho = float(fields.orthogonality_error().max())
    form = float(fields.source_form_error().max())
    ratio = float(fields.jump_ratio.min()) if fields.jump_ratio.size else math.inf
    return ortho, form, ratio


def _convergence(model, u, rep, tol):
    cap = rep.c_trunc * (u.grid.T - u.grid.times)[:, None]
    bounded = bool(np.all(np.abs(u.values) <= cap))
    inactive = bool(np.all(np.abs(u.values[:-1]) < cap[:-1]))
    d = np.array(rep.sup_deltas)
    d = d[d > 1e3 * np.finfo(float).eps]
    ratios = d[1:] / d[:-1]
    geometric = len(ratios) == 0 or bool(np.all(ratios < 0.9))
    extra = apply_F(model, u, MemmSource(model, rep.c_trunc), flows=flow_table(model, u.grid))
    sweep = float(np.max(np.abs(extra.values - u.values)))
    ok = bounded and inactive and geometric and sweep <= tol
    return ok, (f"bounded={bounded} inactive={inactive} max_ratio="
                f"{ratios.max() if len(ratios) else 0:.3f} extra_sweep={sweep:.2e}")


def test_criterion_1_fixed_point_solver():
    nu = LevyMeasure.from_atoms([(1.0, 1.0)])
    single = solve_phi_k(nu, [1.0], [0.0], 1.0).Phi
    rng = np.random.default_rng(101)
    n = 4
    w = rng.uniform(0.01, 5.0, (1000, n))
    f = rng.uniform(-3.0, 3.0, (1000, n))
    k = rng.uniform(-3.0, 3.0, (1000, n))
    beta = rng.uniform(0.1, 10.0, 1000)
    w[::2, 2:] = 1e-300  # effectively fewer atoms on half the instances
    t0 = time.perf_counter()
    z, _, _, _ = solve_fixed_point(w, f, k, beta)
    elapsed = time.perf_counter() - t0
    H = max(abs(lemma_H(float(z[i]), w[i], f[i], k[i], beta[i])) for i in range(1000))
    bound = np.exp(k.max(axis=1)) * np.abs(w * f).sum(axis=1)
    ok = (abs(single - OMEGA) <= 1e-9
          and abs(single - lemma_root([1.0], [1.0], [0.0], 1.0)) <= 1e-9
          and H <= 1e-10 and bool(np.all(np.abs(z) <= bound)) and elapsed < 1.0)
    record(1, ok, f"Phi={single:.12f} max|H|={H:.1e} runtime={elapsed:.3f}s")


def test_criterion_2_monotone_in_k():
    rng = np.random.default_rng(202)
    violations = 0
    for _ in range(500):
        n = rng.integers(1, 6)
        w = rng.uniform(0.01, 5.0, n)
        f = rng.uniform(-3.0, 3.0, n)
        k1 = rng.uniform(-3.0, 3.0, n)
        shift = rng.uniform(1e-3, 2.0, n)
        k2 = np.where(f < 0, k1 + shift, k1 - shift)
        beta = rng.uniform(0.1, 10.0)
        z1 = solve_fixed_point(w, f, k1, beta)[0]
        z2 = solve_fixed_point(w, f, k2, beta)[0]
        violations += int(not z1 >= z2)
    record(2, violations == 0, f"violations={violations}/500")


def _identity_models():
    nu = LevyMeasure.from_atoms([(-0.3, 0.7), (0.1, 2.0), (0.4, 0.5)])
    multi = MarketModel(lambda t, y: 0.04 + 0.05 * y * (1 + t), lambda t, y: 0.1 + 0.15 * y,
                        lambda t, y, x: x * (1.0 + 0.3 * y), lambda t, y: 0.5 * (1.0 - y),
                        lambda t, y, x: 2.0 * x * (1.5 - y) * (y - 0.5),
                        (0.5, 1.5), 1.0, 100.0, 1.0, nu)
    return {"correlated": correlated_model(), "orthogonal": orthogonal_model(), "multi": multi}


def test_criterion_3_node_identities():
    worst = [0.0, 0.0, math.inf]
    for model in _identity_models().values():
        _, fields, _ = picard_solve(model)
        o, g, r = _identities(fields)
        worst = [max(worst[0], o), max(worst[1], g), min(worst[2], r)]
    ok = worst[0] <= 1e-12 and worst[1] <= 1e-10 and worst[2] > 0
    record(3, ok, f"orthogonality={worst[0]:.1e} source_forms={worst[1]:.1e} min_ratio={worst[2]:.4f}")


def test_criterion_4_ipde_bound_and_convergence():
    tol = 1e-9
    details = []
    ok = True
    for name, model in _identity_models().items():
        u, _, rep = picard_solve(model, tol=tol)
        good, detail = _convergence(model, u, rep, tol)
        ok &= good
        details.append(f"{name}: {detail}")
    record(4, ok, "; ".join(details))


def test_criterion_5_empty_measure_closed_form():
    m = constant_model(eta=0.08, sigma=0.2)
    t0 = time.perf_counter()
    u, _, _ = picard_solve(m, Grid.for_model(m, 64, 64))
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(u.values[0] + 0.08)))
    c = -u.initial_value(m.V0)
    ok = err <= 1e-8 and abs(c - 0.08) <= 1e-8 and elapsed < 5.0
    record(5, ok, f"max|u(0,.)+0.08|={err:.1e} c={c:.10f} runtime={elapsed:.3f}s")


def test_criterion_6_deterministic_volatility():
    worst = 0.0
    for eta, sigma, wm, x, w in [(0.05, 0.2, 0.1, 1.0, 1.0), (-0.03, 0.15, -0.2, 0.5, 2.0),
                                 (0.2, 0.3, 0.4, -1.0, 0.5)]:
        nu = LevyMeasure.from_atoms([(x, w)])
        m = MarketModel(lambda t, y, e=eta: e * (1 + 0.5 * y), lambda t, y, s=sigma: s * (1 + y),
                        lambda t, y, xx, c=wm: c * (1 + 0.2 * y) + 0 * xx, lambda t, y: 0.3 - y,
                        lambda t, y, xx: 0.0 * xx * y, (0.0, 1.0), 1.0, 1.0, 0.5, nu)
        _, fields, _ = picard_solve(m)
        ys = fields.grid.ys
        ref = np.array([deterministic_root(eta * (1 + 0.5 * y), sigma * (1 + y),
                                           [wm * (1 + 0.2 * y)], [w]) for y in ys])
        worst = max(worst, float(np.max(np.abs(fields.phi_hat - ref[None, :]))))
    record(6, worst <= 1e-8, f"max nodewise |phi_hat - root|={worst:.1e}")


def test_criterion_7_orthogonal_case():
    m = orthogonal_model()
    _, u_lin, _ = solve_orthogonal(m)
    u, fields, _ = picard_solve(m)
    gap = float(np.max(np.abs(u.values - u_lin.values)))
    exact = bool(np.all(fields.phi_hat == -fields.lambda_hat) and np.all(fields.sigma_L == 0.0))
    record(7, gap <= 1e-6 and exact, f"||u - ln v||={gap:.1e} phi_hat=-lambda_hat,sigma_L=0: {exact}")


def _mc_line(stats):
    return " ".join(f"{k}={s.z_score:+.2f}" for k, s in stats.items())


def test_criterion_8_monte_carlo():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for name, model in [("empty", constant_model()), ("correlated", correlated_model())]:
        u, fields, _ = picard_solve(model)
        stats = verify_suite(model, fields, u, 100_000, 500, seed=8)
        ok &= all(abs(s.z_score) <= 3 for s in stats.values())
        parts.append(f"{name}[{_mc_line(stats)}]")
    elapsed = time.perf_counter() - t0
    record(8, ok and elapsed < 120, " ".join(parts) + f" runtime={elapsed:.1f}s")


def test_criterion_9_pathwise_residual():
    m = correlated_model()
    u, fields, _ = picard_solve(m)
    med = []
    for n_steps in (100, 200):
        batch = simulate_paths(m, fields, "P", 1000, n_steps, seed=9, store_paths=True)
        med.append(float(np.median(np.abs(residuals(batch, u, fields)))))
    factor = med[0] / med[1]
    z = constant_model(eta=0.0, atoms=[(0.2, 1.0)], W_M=0.0, W_V=0.05)
    uz, fz, _ = picard_solve(z, max_clamp_fraction=1.0)
    rz = residuals(simulate_paths(z, fz, "P", 1000, 100, seed=9, store_paths=True), uz, fz)
    zero = float(np.max(np.abs(rz)))
    ok = 1.4 <= factor <= 2.6 and zero <= 1e-15
    record(9, ok, f"median 100 steps={med[0]:.3e} 200 steps={med[1]:.3e} factor={factor:.3f} "
                  f"zero-risk max={zero:.1e}")


def test_criterion_10_bns():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    loaded = load_preset("bns")
    p, model = loaded.bns, loaded.model
    mismatches = 0
    for _ in range(200):
        b, beta, lam = rng.uniform(0.01, 5.0), rng.uniform(-1.0, 2.0), rng.uniform(0.1, 4.0)
        q = BnsParams(p.mu, beta, p.rho, lam, p.sigma0_sq, p.measure, p.y_max, tail_rate=b)
        rep = check_bns_admissibility(q, resolution=(4, 4))
        closed = math.isfinite(tail_moment(1.0, b, (beta + 0.5) ** 2 / lam))
        mismatches += int(rep.tail_ok != (b > (beta + 0.5) ** 2 / lam) or rep.tail_ok != closed)

    batch = simulate_paths(model, None, "P", 500, 500, seed=10, store_paths=True)
    diff = np.abs(bns_variance_check(batch, p))
    dt = p.T / 500
    scale = p.sigma0_sq + batch.counts.sum(axis=(1, 2)) * p.measure.sizes.max()
    ou_ok = bool(np.all(diff <= 2 * dt * math.exp(p.lam * p.T) * scale))

    u, fields, rep = picard_solve(model, **loaded.solver)
    lam_pos = bool(np.all(fields.lambda_hat > 0))
    o, g, r = _identities(fields)
    ident_ok = o <= 1e-12 and g <= 1e-10 and r > 0
    conv_ok, conv = _convergence(model, u, rep, 1e-9)
    stats = verify_suite(model, fields, u, 100_000, 500, seed=10)
    mc_ok = all(abs(s.z_score) <= 3 for s in stats.values())
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and ou_ok and lam_pos and ident_ok and conv_ok and mc_ok and elapsed < 300
    record(10, ok, f"threshold mismatches={mismatches} ou_max={diff.max():.1e} "
                   f"lambda_hat>0={lam_pos} identities=({o:.1e},{g:.1e},{r:.3f}) "
                   f"clamp_fraction={rep.clamp_fraction:.3f} {conv} mc[{_mc_line(stats)}] "
                   f"runtime={elapsed:.1f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
