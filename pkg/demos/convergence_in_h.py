"""First-order convergence of the JKO scheme in the time step.

The finite-volume solution on the same grid serves as reference; the L1
gap should roughly halve with h.

Run:  python demos/convergence_in_h.py
"""
import numpy as np

from pnp_jko import Grid, ModelParams, ScalarField, State, normalize, run_trajectory, fv_evolve
from pnp_jko.diagnostics import compare_to_oracle

g = Grid.uniform(0.0, 1.0, 64)
x = g.coords[0]
U = ScalarField(2 * (x - 0.5) ** 2, g)
V = ScalarField(1.5 * (x - 0.4) ** 2, g)
z0 = State(normalize(np.exp(-(x - 0.3) ** 2 / 0.02), g), normalize(np.exp(-(x - 0.7) ** 2 / 0.02), g))
T = 0.1

prev = None
print("    h        gap_u      gap_v     ratio")
for h in (8e-3, 4e-3, 2e-3, 1e-3):
    params = ModelParams.from_potentials(1, h, U, V)
    traj = run_trajectory(z0, params, U, V, int(round(T / h)), el_residuals=False)
    gaps = compare_to_oracle(traj, fv_evolve(z0, params, U, V, T), T)
    ratio = "" if prev is None else f"{max(gaps) / prev:.2f}"
    print(f"{h:8.0e}  {gaps[0]:.3e}  {gaps[1]:.3e}  {ratio}")
    prev = max(gaps)
