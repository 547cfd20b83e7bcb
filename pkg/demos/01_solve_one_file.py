"""Solve the mean-field game for the most popular file and look at the equilibrium.

Run with ``python demos/01_solve_one_file.py``.
"""

import numpy as np

from mfgcache.config import ExperimentConfig
from mfgcache.experiments import population_rates
from mfgcache.radio import lattice_points
from mfgcache.model import zipf_probabilities
from mfgcache.solver import solve_mfg

cfg = ExperimentConfig.defaults()
params = cfg.cost_params()
topo = cfg["topology"]

# The solver sees the network only through two population-average rates:
# the rate from a user's own F-AP and from the best other F-AP.
own, alt = population_rates(topo["radius"], topo["ifd"], params, topo["pathloss_exponent"])
print(f"mean-field rates: own {own:.3e} b/s, alternative {alt:.3e} b/s")

# Expected requests per F-AP and unit time for the top file at beta = 1.3.
n_faps = len(lattice_points(topo["radius"], topo["ifd"]))
q = topo["users"] / n_faps * zipf_probabilities(cfg["catalog"]["files"], 1.3)[0]
config = cfg.solver_config(own_rate=own, alt_rate=alt)
grid = config.grid(params)

sol = solve_mfg(config, params, q, grid.spike(0.0))
print(f"Picard iterations: {sol.iterations}, final residual {sol.residuals[-1]:.2e}")
print("residual history:", " ".join(f"{r:.1e}" for r in sol.residuals[:8]), "...")

# Caching intensity chosen by an empty F-AP and by one holding half the file.
for frac in (0.0, 0.5, 1.0):
    j = int(round(frac * (grid.Ns - 1)))
    print(f"c(t=0, s={frac:.1f} S) = {sol.c[0, j]:.3f}")

# Where the population ends up: mean cached fraction over time.
mean_state = (sol.m * grid.x).sum(axis=1) * grid.dx
for n in (0, grid.Nt // 4, grid.Nt // 2, grid.Nt - 1):
    print(f"t = {grid.t[n]:.2f}: mean cached fraction {mean_state[n]:.3f}")
print("value function at t=0 falls with the cached amount:",
      bool(np.all(np.diff(sol.v[0]) <= 1e-9)))
