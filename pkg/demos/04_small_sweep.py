"""A reduced IFD sweep: a larger F-AP spacing means fewer F-APs, less interference and more users per F-AP.

Run with ``python demos/04_small_sweep.py``. The full sweep is ``mfgcache fig1``.
"""

from mfgcache.config import ExperimentConfig
from mfgcache.experiments import fig1_sweep

cfg = ExperimentConfig.defaults(
    topology={"ifd_sweep": [60.0, 120.0, 240.0]},
    popularity={"betas": [1.3]},
    simulation={"slots": 60, "seeds": [0, 1, 2], "policies": ["mfg", "mpc"]},
)
_, medians = fig1_sweep(cfg)
print(f"{'policy':>6} {'ifd':>6} {'F-APs':>6} {'delay/req':>10} {'load':>10} {'cost':>10}")
for row in medians:
    print(f"{row['policy']:>6} {row['ifd']:6.0f} {row['n_faps']:6.0f} {row['avg_delay']:10.2f} "
          f"{row['avg_load']:10.4g} {row['avg_cost']:10.4g}")
