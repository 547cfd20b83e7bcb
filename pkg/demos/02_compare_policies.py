"""Run all four caching policies on one shared topology and request stream.

Run with ``python demos/02_compare_policies.py``. Takes about half a minute.
"""

from mfgcache.config import ExperimentConfig
from mfgcache.experiments import Scenario

cfg = ExperimentConfig.defaults(simulation={"slots": 100})
sc = Scenario(cfg, seed=0, ifd=cfg["topology"]["ifd"], beta=1.3)
print(f"{sc.topology.n_faps} F-APs, {sc.topology.n_users} users, {sc.slots} slots")

print(f"{'policy':>6} {'delay/req s':>12} {'load':>12} {'cost':>12} {'local':>6} {'other':>6} {'fetch':>6}")
for name in ("mfg", "mpc", "rc", "lru"):
    res = sc.run(name)
    s = res.summary(sc.topology.n_faps)
    print(f"{name:>6} {s['avg_delay']:12.2f} {s['avg_load']:12.4g} {s['avg_cost']:12.4g} "
          f"{s['case1']:6d} {s['case2']:6d} {s['case3']:6d}")

# Requests served by a non-default F-AP ("other") are slow: that F-AP's
# signal competes with every other transmitting F-AP, so the rate is tiny.
# Policies that give different F-APs different contents pay for it here.
