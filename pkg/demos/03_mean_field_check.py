"""Compare the solved density with 1000 simulated F-APs that follow the solved control.

Run with ``python demos/03_mean_field_check.py``.
"""

import numpy as np

from mfgcache.config import ExperimentConfig
from mfgcache.cost import integrate_cache
from mfgcache.experiments import population_rates
from mfgcache.radio import lattice_points
from mfgcache.model import zipf_probabilities
from mfgcache.policies import bilinear
from mfgcache.simulator import density_to_bins, empirical_mean_field, total_variation
from mfgcache.solver import solve_mfg

cfg = ExperimentConfig.defaults()
params = cfg.cost_params()
topo = cfg["topology"]
own, alt = population_rates(topo["radius"], topo["ifd"], params, topo["pathloss_exponent"])
config = cfg.solver_config(own_rate=own, alt_rate=alt)
grid = config.grid(params)
n_faps = len(lattice_points(topo["radius"], topo["ifd"]))
q = topo["users"] / n_faps * zipf_probabilities(cfg["catalog"]["files"], 1.3)[0]

# Start the population spread over the lower half of the state space.
m0 = grid.uniform(0.0, 0.5 * params.S)
sol = solve_mfg(config, params, q, m0)

rng = np.random.default_rng(0)
cells = rng.choice(grid.Ns, size=1000, p=m0 / m0.sum())
s = np.clip((cells + rng.uniform(-0.5, 0.5, 1000)) * grid.ds, 0.0, params.S)
for n in range(grid.Nt - 1):
    c = bilinear(sol.c, grid, grid.t[n], s)
    s = integrate_cache(s, c, rng.poisson(q, s.size), grid.dt, params)
    if n + 1 in (50, 100, 200):
        emp = empirical_mean_field(s, params.S, 20)
        ref = density_to_bins(sol.m[n + 1], params.S, 20)
        print(f"t = {grid.t[n + 1]:.2f}: total variation {total_variation(emp, ref):.3f}")
        print("  simulated:", " ".join(f"{x:.2f}" for x in emp[::2]))
        print("  solved:   ", " ".join(f"{x:.2f}" for x in ref[::2]))
