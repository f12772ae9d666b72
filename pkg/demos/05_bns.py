"""Barndorff-Nielsen-Shephard with an exponential jump tail.

The tail is replaced by a few Gauss-Laguerre atoms and the variance axis is
truncated at a high quantile.  Jumps near the top of the axis get clamped,
which the solver reports.
"""
import numpy as np

from memm import check_bns_admissibility, load_preset, picard_solve, simulate_paths, verify_suite
from memm.montecarlo import bns_variance_check

loaded = load_preset("bns")
p, model = loaded.bns, loaded.model
rep = check_bns_admissibility(p)
print("\n".join(rep.messages))
print(f"variance axis [{model.domain[0]:.3f}, {model.domain[1]:.3f}], admissible: {rep.admissible}")

u, fields, report = picard_solve(model, **loaded.solver)
print(f"entropy c = {-u.initial_value(model.V0):.6f}, clamped jump evaluations {report.clamp_fraction:.1%}")
print(f"market price of risk in [{fields.lambda_hat.min():.3f}, {fields.lambda_hat.max():.3f}]")

b = simulate_paths(model, None, "P", 200, 400, seed=1, store_paths=True)
print(f"integrated variance vs its OU representation, max gap {np.abs(bns_variance_check(b, p)).max():.1e}")

for s in verify_suite(model, fields, u, 20_000, 200, seed=2).values():
    print(f"{s.name:16s} z = {s.z_score:+.2f}")
