"""A few entropic JKO steps on a coarse 2-D grid.

Transport is the entropic cost with the default blur
eps = 1e-3 * diam^2; the inner solver is the generalized Sinkhorn
proximal sweep.

Run:  python demos/entropic_2d.py     (writes entropic_2d.png)
"""
import time

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from pnp_jko import Grid, ModelParams, ScalarField, State, normalize, jko_step, total_energy

g = Grid.uniform((0, 0), (1, 1), (16, 16))
X, Y = g.coords
U = ScalarField((X - 0.5) ** 2 + (Y - 0.5) ** 2, g)
V = ScalarField((X - 0.4) ** 2 + (Y - 0.6) ** 2, g)
z = State(normalize(np.exp(-((X - 0.3) ** 2 + (Y - 0.4) ** 2) / 0.02), g),
          normalize(np.exp(-((X - 0.7) ** 2 + (Y - 0.6) ** 2) / 0.02), g))
params = ModelParams.from_potentials(1, 0.05, U, V)

states = [z]
print("step   E_total     KKT      sweeps  seconds")
print(f"{0:4d}  {total_energy(z, params, U, V).total:9.5f}")
for n in range(1, 5):
    t = time.perf_counter()
    rep = jko_step(z, params, U, V)
    z = rep.z_next
    states.append(z)
    print(f"{n:4d}  {rep.energy.total:9.5f}  {rep.inner_residual:.1e}  {rep.inner_iterations:6d}"
          f"  {time.perf_counter() - t:6.1f}")

fig, ax = plt.subplots(2, len(states), figsize=(2.4 * len(states), 4.6))
for k, s in enumerate(states):
    ax[0, k].imshow(s.u.values.T, origin="lower", extent=(0, 1, 0, 1))
    ax[1, k].imshow(s.v.values.T, origin="lower", extent=(0, 1, 0, 1))
    ax[0, k].set_title(f"n={k}")
for a in ax.ravel():
    a.set_xticks([])
    a.set_yticks([])
fig.tight_layout()
fig.savefig("entropic_2d.png", dpi=120)
