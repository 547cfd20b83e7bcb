"""Experiment drivers: single runs, the IFD sweep and the time-variant comparison.

Seed splitting rule: every stochastic component draws from its own stream,
seeded with the first 32-bit word of
``SeedSequence(master_seed, spawn_key=(crc32(name),))`` where ``name`` is one
of ``"topology"``, ``"requests"``, ``"popularity"`` or ``"rc"``.
"""

from __future__ import annotations

import csv
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .model import (CostParams, RequestBatch, ZipfPopularity, generate_requests,
                    permute_popularity, zipf_probabilities)
from .policies import MFGPolicy, mpc_policy, rc_policy
from .radio import Topology, build_topology, lattice_points, rate_matrix
from .simulator import RunResult, World, simulate
from .solver import MFGSolution, SolverConfig, solve_catalog

log = logging.getLogger(__name__)


def derive_seed(master: int, name: str) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1)[0])


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name))


@dataclass(frozen=True)
class RunSpec:
    """One simulation run: a policy on one topology and request stream."""

    policy: str
    seed: int
    ifd: float
    beta: float


class Scenario:
    """Everything shared by the policies of one ``(seed, ifd, beta)`` point."""

    def __init__(self, cfg: ExperimentConfig, seed: int, ifd: float, beta: float):
        self.cfg = cfg
        self.seed = seed
        self.ifd = ifd
        self.beta = beta
        self.params: CostParams = cfg.cost_params()
        topo, cat, pop, sim = cfg["topology"], cfg["catalog"], cfg["popularity"], cfg["simulation"]
        self.n_files = int(cat["files"])
        self.slots = int(sim["slots"])
        self.rate = float(cfg["arrivals"]["rate"])
        self.topology: Topology = build_topology(float(topo["radius"]), float(ifd), int(topo["users"]),
                                                 stream(seed, "topology"))
        self.exponent = float(topo["pathloss_exponent"])
        self.schedule = popularity_schedule(self.n_files, beta, self.slots, int(pop["period"]),
                                            bool(pop["time_variant"]), stream(seed, "popularity"))
        self.last_solutions: list[MFGSolution] = []
        self.batches = make_batches(self.schedule, self.topology.n_users, self.rate, self.slots,
                                    stream(seed, "requests"))

    def popularity_at(self, slot: int) -> ZipfPopularity:
        return popularity_at(self.schedule, slot)

    def slot_duration(self) -> float:
        sd = self.cfg["simulation"]["slot_duration"]
        if sd == "auto":
            return float(self.cfg["solver"]["T"]) / max(self.slots, 1)
        return float(sd)

    def solver_config(self) -> SolverConfig:
        steps = int(self.cfg["simulation"]["steps_per_slot"])
        own, alt = population_rates(self.topology.radius, float(self.ifd), self.params, self.exponent)
        return self.cfg.solver_config(Nt=max(self.slots, 1) * steps + 1,
                                      T=self.slot_duration() * max(self.slots, 1),
                                      own_rate=own, alt_rate=alt)

    def q_profile(self, config: SolverConfig) -> np.ndarray:
        return expected_requests(self.schedule, config, self.slot_duration(), self.slots,
                                 self.topology.n_users, self.topology.n_faps, self.rate)

    def mfg_policy(self) -> MFGPolicy:
        config = self.solver_config()
        q = self.q_profile(config)
        grid = config.grid(self.params)
        m0 = grid.spike(float(self.cfg["solver"]["initial_state"]) * self.params.S)
        sols = solve_catalog_cached(config, self.params, q, m0)
        self.last_solutions = sols
        return MFGPolicy(sols, self.params.C, self.slot_duration(),
                         self.cfg["simulation"]["capacity_rule"])

    def world(self, policy: str) -> World:
        p, I = self.params, self.topology.n_faps
        kw = dict(slot_duration=self.slot_duration(), pathloss_exponent=self.exponent)
        if policy == "mfg":
            init = float(self.cfg["solver"]["initial_state"]) * p.S
            return World(self.topology, p, self.n_files, "mfg", mfg=self.mfg_policy(),
                         initial_state=init, **kw)
        if policy == "mpc":
            chosen = mpc_policy(self.schedule[0][1], p.C, p.S).cached
            return World(self.topology, p, self.n_files, "mpc", static_sets=[chosen] * I, **kw)
        if policy == "rc":
            rng = stream(self.seed, "rc")
            sets = [rc_policy(p.C, p.S, self.n_files, rng).cached for _ in range(I)]
            return World(self.topology, p, self.n_files, "rc", static_sets=sets, **kw)
        return World(self.topology, p, self.n_files, policy, **kw)

    def run(self, policy: str, meanfield_files: Sequence[int] = ()) -> RunResult:
        bins = int(self.cfg["simulation"]["meanfield_bins"])
        return simulate(self.world(policy), self.batches, meanfield_files, bins)


def popularity_schedule(n_files: int, beta: float, slots: int, period: int, time_variant: bool,
                        rng: np.random.Generator) -> list[tuple[int, ZipfPopularity]]:
    """``(first_slot, popularity)`` per period; later periods permute the base Zipf law."""
    base = ZipfPopularity(beta, zipf_probabilities(n_files, beta))
    if not time_variant:
        return [(0, base)]
    out = [(0, base)]
    for start in range(period, max(slots, 1), period):
        out.append((start, permute_popularity(base, rng)))
    return out


def popularity_at(schedule, slot: int) -> ZipfPopularity:
    current = schedule[0][1]
    for start, pop in schedule:
        if start <= slot:
            current = pop
        else:
            break
    return current


def make_batches(schedule, n_users: int, rate: float, slots: int,
                 rng: np.random.Generator) -> list[RequestBatch]:
    return [generate_requests(popularity_at(schedule, t), n_users, rate, rng, slot=t)
            for t in range(slots)]


def mean_field_rates(topology: Topology, params: CostParams, exponent: float) -> tuple[float, float]:
    """Harmonic-mean serving rate and best-alternative rate over the users.

    Harmonic means make ``S / rate`` equal to the population-average delay.
    """
    R = rate_matrix(topology.gains(exponent), params)
    users = np.arange(topology.n_users)
    own = R[topology.association, users]
    if topology.n_faps > 1:
        alt_R = R.copy()
        alt_R[topology.association, users] = -np.inf
        alt = alt_R.max(axis=0)
    else:
        alt = own
    harmonic = lambda r: float(1.0 / np.mean(1.0 / np.maximum(r, 1e-300)))
    if topology.n_users == 0:
        return params.W, params.W
    return harmonic(own), harmonic(alt)


@lru_cache(maxsize=32)
def population_rates(radius: float, ifd: float, params: CostParams, exponent: float,
                     spacing: float = 10.0) -> tuple[float, float]:
    """Mean-field rates for users spread uniformly over the disk.

    The user population is replaced by a square grid of points (offset by
    half a cell from the F-AP lattice), so the rates the solver sees depend
    on the layout only and not on the seed of the user drop.
    """
    faps = lattice_points(radius, ifd)
    pts = lattice_points(radius + spacing, spacing) + spacing / 2
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= radius]
    return mean_field_rates(Topology(radius, faps, pts), params, exponent)


def expected_requests(schedule, config: SolverConfig, slot_duration: float, slots: int,
                      n_users: int, n_faps: int, rate: float) -> np.ndarray:
    """``q[n, j] = (K / I) * min(1, rate) * p_n`` at the popularity in force at grid time ``t_j``."""
    t = np.linspace(0.0, config.T, config.Nt)
    slot_of = np.minimum((t / slot_duration + 1e-9).astype(int), max(slots - 1, 0))
    scale = n_users / n_faps * min(1.0, rate)
    return np.stack([scale * popularity_at(schedule, int(s)).probabilities for s in slot_of], axis=1)


_SOLVE_CACHE: dict = {}


def solve_catalog_cached(config: SolverConfig, params: CostParams, q: np.ndarray,
                         m0: np.ndarray) -> list[MFGSolution]:
    key = (config, params, q.tobytes(), q.shape, m0.tobytes())
    if key not in _SOLVE_CACHE:
        if len(_SOLVE_CACHE) > 64:
            _SOLVE_CACHE.clear()
        _SOLVE_CACHE[key] = solve_catalog(config, params, q, m0, raise_on_failure=False)
    return _SOLVE_CACHE[key]


def run_point(cfg: ExperimentConfig, seed: int, ifd: float, beta: float,
              policies: Sequence[str]) -> list[dict]:
    """Run every policy on one scenario; return one summary row per policy."""
    sc = Scenario(cfg, seed, ifd, beta)
    rows = []
    for name in policies:
        res = sc.run(name)
        row = res.summary(sc.topology.n_faps)
        row.update(seed=seed, ifd=ifd, beta=beta, n_faps=sc.topology.n_faps)
        rows.append(row)
    return rows


def _run_point_star(args):
    cfg_tree, seed, ifd, beta, policies = args
    return run_point(ExperimentConfig.from_tree(cfg_tree), seed, ifd, beta, policies)


def map_points(cfg: ExperimentConfig, points: Iterable[tuple], policies: Sequence[str],
               threads: int = 1) -> list[dict]:
    jobs = [(cfg.tree, seed, ifd, beta, tuple(policies)) for seed, ifd, beta in points]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_point_star, jobs))
    else:
        chunks = [_run_point_star(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


SWEEP_COLUMNS = ["beta", "policy", "ifd", "seed", "n_faps", "requests", "avg_delay", "avg_load",
                 "avg_cost", "case1", "case2", "case3"]


def fig1_sweep(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[dict], list[dict]]:
    """IFD sweep under static popularity; returns ``(rows, median_rows)``."""
    sim, topo = cfg["simulation"], cfg["topology"]
    policies = list(sim["policies"])
    points = [(seed, float(ifd), float(beta)) for beta in cfg["popularity"]["betas"]
              for ifd in topo["ifd_sweep"] for seed in sim["seeds"]]
    rows = map_points(cfg, points, policies, threads)
    rows.sort(key=lambda r: (r["beta"], policies.index(r["policy"]), r["ifd"], r["seed"]))
    medians = []
    for beta in cfg["popularity"]["betas"]:
        for name in policies:
            for ifd in topo["ifd_sweep"]:
                sel = [r for r in rows if r["beta"] == beta and r["policy"] == name and r["ifd"] == ifd]
                med = {"beta": float(beta), "policy": name, "ifd": float(ifd), "seed": "median"}
                for key in ("n_faps", "requests", "avg_delay", "avg_load", "avg_cost",
                            "case1", "case2", "case3"):
                    med[key] = float(np.median([r[key] for r in sel]))
                medians.append(med)
    return rows, medians


def fig2_periods(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[dict], dict]:
    """Per-period average slot cost for each policy under time-variant popularity.

    Returns ``(period_rows, summary)``; period rows hold the seed median and the
    summary reports the MFG cost reduction against every baseline.
    """
    sim, pop = cfg["simulation"], cfg["popularity"]
    policies = list(sim["policies"])
    period = int(pop["period"])
    slots = int(sim["slots"])
    n_periods = max(1, -(-slots // period))
    ifd, beta = float(cfg["topology"]["ifd"]), float(pop["beta"])
    per_seed = _map_period_costs(cfg, list(sim["seeds"]), ifd, beta, policies, period, n_periods, threads)

    rows = []
    for name in policies:
        arr = np.array([per_seed[s][name] for s in sim["seeds"]])
        med = np.median(arr, axis=0)
        for p_idx in range(n_periods):
            rows.append({"policy": name, "period": p_idx, "avg_cost": float(med[p_idx])})
    overall = {name: float(np.median([np.mean(per_seed[s][name]) for s in sim["seeds"]]))
               for name in policies}
    summary = {"overall_avg_cost": overall, "reduction_vs": {}}
    if "mfg" in overall:
        for name in policies:
            if name != "mfg" and overall[name] > 0:
                summary["reduction_vs"][name] = 1.0 - overall["mfg"] / overall[name]
    return rows, summary


def _period_costs_star(args):
    cfg_tree, seed, ifd, beta, policies, period, n_periods = args
    cfg = ExperimentConfig.from_tree(cfg_tree)
    sc = Scenario(cfg, seed, ifd, beta)
    out = {}
    for name in policies:
        res = sc.run(name)
        costs = np.zeros(n_periods)
        counts = np.zeros(n_periods)
        for m in res.metrics:
            costs[m.slot // period] += m.cost
            counts[m.slot // period] += 1
        out[name] = list(np.divide(costs, counts, out=np.zeros(n_periods), where=counts > 0))
    return seed, out


def _map_period_costs(cfg, seeds, ifd, beta, policies, period, n_periods, threads):
    jobs = [(cfg.tree, s, ifd, beta, tuple(policies), period, n_periods) for s in seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_period_costs_star, jobs))
    else:
        results = [_period_costs_star(j) for j in jobs]
    return dict(results)


def write_rows_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str],
                   extra: dict | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns) + list(extra))
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns] + list(extra.values()))


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x
