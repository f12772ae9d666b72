"""The scalar fixed point behind the jump kernel.

At a single node the jump density solves phi = exp(k - beta f <f, phi>),
which reduces to one increasing scalar equation.  We solve it for a few
instances and watch the root move as k changes.
"""
import numpy as np

from memm import LevyMeasure, solve_phi_k

nu = LevyMeasure.from_atoms([(1.0, 1.0)])
sol = solve_phi_k(nu, f=[1.0], k=[0.0], beta=1.0)
print(f"one atom, f=1, k=0: Phi = {sol.Phi:.12f} after {sol.iterations} Newton steps")
print(f"  (this is the root of z = exp(-z); residual {sol.residual:.1e})")

nu = LevyMeasure.from_atoms([(-0.3, 0.7), (0.1, 2.0), (0.4, 0.5)])
f = np.array([-0.3, 0.1, 0.4])
print("\nthree atoms; raising k on the atom with f < 0 pulls Phi down:")
for k0 in (-1.0, 0.0, 1.0, 2.0):
    s = solve_phi_k(nu, f, [k0, 0.0, 0.0], beta=4.0)
    print(f"  k_0={k0:+.1f}  Phi={s.Phi:+.6f}  phi={np.round(s.phi_of_atom, 4)}")
