"""Check the solved measure by simulation.

Under P the density has mean one and relative entropy c.  Under the new
measure the price is a martingale and the optimal strategy gains nothing on
average.  The pathwise residual shrinks linearly with the time step.
"""
import numpy as np

from memm import load_preset, picard_solve, simulate_paths, verify_suite
from memm.montecarlo import residuals

loaded = load_preset("correlated")
model = loaded.model
u, fields, _ = picard_solve(model)

stats = verify_suite(model, fields, u, n_paths=50_000, n_steps=250, seed=4)
for s in stats.values():
    print(f"{s.name:16s} {s.estimate:+.5f} vs {s.target:+.5f}  (se {s.std_error:.1e}, z {s.z_score:+.2f})")

print("\nmedian |pathwise residual| over 1000 paths:")
for n in (25, 50, 100, 200):
    b = simulate_paths(model, fields, "P", 1000, n, seed=5, store_paths=True)
    print(f"  {n:4d} steps  {np.median(np.abs(residuals(b, u, fields))):.3e}")
