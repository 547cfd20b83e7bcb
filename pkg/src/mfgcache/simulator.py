"""Time-slotted F-RAN simulation of caching policies.

Each slot has a placement phase (every F-AP updates its own cache from local
information) followed by a delivery phase (requests are resolved in user
order against the cache states of all F-APs and charged delay and load).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cost import caching_load, discard_rate, integrate_cache
from .model import CostParams, RequestBatch, ZipfPopularity, request_counts
from .policies import LRUCache, MFGPolicy, PolicyDecision
from .radio import Topology, rate_matrix, PATHLOSS_EXPONENT

log = logging.getLogger(__name__)

FULL_TOL = 1e-9


class InconsistentStateError(RuntimeError):
    pass


@dataclass
class SlotMetrics:
    slot: int
    policy: str
    delay: float = 0.0
    load: float = 0.0
    cost: float = 0.0
    requests: int = 0
    case1: int = 0
    case2: int = 0
    case3: int = 0

    def as_row(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = ["slot", "policy", "delay", "load", "cost", "case1", "case2", "case3"]


class World:
    """Mutable simulation state: topology, link rates, per-F-AP caches and policies.

    ``cache[i, n]`` holds the bits of file ``n`` stored at F-AP ``i``.
    ``policy`` is one of ``"mfg"``, ``"mpc"``, ``"rc"``, ``"lru"``; the
    matching policy objects are passed through ``mfg`` / ``static_sets``.
    """

    def __init__(
        self,
        topology: Topology,
        params: CostParams,
        n_files: int,
        policy: str,
        slot_duration: float = 1.0,
        mfg: MFGPolicy | None = None,
        static_sets: Sequence[frozenset[int]] | None = None,
        initial_state: np.ndarray | float = 0.0,
        pathloss_exponent: float = PATHLOSS_EXPONENT,
        check_invariants: bool = True,
    ):
        self.topology = topology
        self.params = params
        self.n_files = n_files
        self.policy = policy
        self.slot_duration = slot_duration
        self.mfg = mfg
        self.check_invariants = check_invariants
        self.rates = rate_matrix(topology.gains(pathloss_exponent), params)
        self.assoc = topology.association
        I = topology.n_faps
        self.cache = np.zeros((I, n_files))
        self.lru: list[LRUCache] = []
        self._pending_fetch = np.zeros((I, n_files), dtype=bool)
        if policy == "mfg":
            if mfg is None:
                raise ValueError("the mfg policy needs solved policy fields")
            self.cache[:] = np.broadcast_to(initial_state, (I, n_files))
        elif policy in ("mpc", "rc"):
            if static_sets is None or len(static_sets) != I:
                raise ValueError(f"{policy} needs one cache set per F-AP")
            for i, files in enumerate(static_sets):
                self._pending_fetch[i, list(files)] = True
        elif policy == "lru":
            self.lru = [LRUCache(params.slots) for _ in range(I)]
        else:
            raise ValueError(f"unknown policy {policy!r}")

    @property
    def n_faps(self) -> int:
        return self.topology.n_faps

    # -- placement ----------------------------------------------------------

    def _place_mfg(self, slot: int, q: np.ndarray) -> np.ndarray:
        p, dt = self.params, self.slot_duration
        s = self.cache
        c = self.mfg.controls(s, slot)
        s_tent = integrate_cache(s, c, q, dt, p)
        s_floor = integrate_cache(s, 0.0, q, dt, p)
        growth = s_tent - s_floor
        values = self.mfg.ranking(s_tent, slot)
        # capacity: grant growth in retention order until the budget is used up
        keys = values if self.mfg.rule == "retain_min" else -values
        order = np.lexsort((np.broadcast_to(np.arange(self.n_files), s.shape), keys), axis=-1)
        rows = np.arange(s.shape[0])[:, None]
        g_sorted = growth[rows, order]
        budget = np.maximum(p.C - s_floor.sum(axis=1, keepdims=True), 0.0)
        allowed = np.minimum(np.cumsum(g_sorted, axis=1), budget)
        grant_sorted = np.diff(allowed, axis=1, prepend=0.0)
        grant = np.empty_like(growth)
        grant[rows, order] = grant_sorted
        self.cache = np.clip(s_floor + grant, 0.0, p.S)
        frac = np.divide(grant, growth, out=np.zeros_like(grant), where=growth > 0)
        return c * frac

    def _place_static(self) -> np.ndarray:
        c = self._pending_fetch.astype(float)
        self.cache[self._pending_fetch] = self.params.S
        self._pending_fetch[:] = False
        return c

    # -- delivery -----------------------------------------------------------

    def resolve_delivery(self, user: int, n: int) -> tuple[int, int]:
        """Return ``(serving_fap, case)`` for a request of ``user`` for file ``n``."""
        i = int(self.assoc[user])
        S = self.params.S
        if self.cache[i, n] >= 0.5 * S:
            return i, 1
        full = self.cache[:, n] >= S * (1 - FULL_TOL)
        full[i] = False
        if full.any():
            rates = np.where(full, self.rates[:, user], -np.inf)
            return int(np.argmax(rates)), 2
        return i, 3

    def step(self, batch: RequestBatch) -> SlotMetrics:
        p = self.params
        m = SlotMetrics(batch.slot, self.policy)
        q = request_counts(batch, self.assoc, self.n_faps, self.n_files)

        if self.policy == "mfg":
            c = self._place_mfg(batch.slot, q)
        elif self.policy in ("mpc", "rc"):
            c = self._place_static()
        else:
            c = np.zeros((self.n_faps, self.n_files))
        load = float(caching_load(c, p).sum())
        delay = 0.0

        for k in batch.requesting_users():
            n = int(batch.files[k])
            i = int(self.assoc[k])
            server, case = self.resolve_delivery(k, n)
            if case == 2:
                delay += p.S / self.rates[server, k]
                m.case2 += 1
            else:
                s_in = self.cache[i, n]
                delay += p.S / self.rates[i, k] + (p.S - s_in) / p.R_F
                load += p.eta * (p.S - s_in)
                if case == 1:
                    m.case1 += 1
                else:
                    m.case3 += 1
            if self.lru:
                hit, evicted = self.lru[i].request(n)
                if not hit and case == 2 and self.lru[i].slots > 0:
                    # the inserted copy still crosses the fronthaul
                    load += p.eta * p.S
                if evicted is not None:
                    self.cache[i, evicted] = 0.0
                if n in self.lru[i]:
                    self.cache[i, n] = p.S

        m.requests = batch.n_requests
        m.delay = delay
        m.load = load
        m.cost = p.omega1 * delay + p.omega2 * load
        if self.check_invariants:
            self.assert_invariants(m)
        return m

    def assert_invariants(self, m: SlotMetrics | None = None) -> None:
        p = self.params
        if np.any(self.cache < -1e-9) or np.any(self.cache > p.S * (1 + 1e-12)):
            raise InconsistentStateError("cache state outside [0, S]")
        if np.any(self.cache.sum(axis=1) > p.C * (1 + 1e-9)):
            raise InconsistentStateError("cache occupancy above capacity")
        if m is not None and m.case1 + m.case2 + m.case3 != m.requests:
            raise InconsistentStateError("delivery cases do not add up to the request count")


def step_slot(world: World, batch: RequestBatch) -> SlotMetrics:
    return world.step(batch)


def empirical_mean_field(states: np.ndarray, S: float, bins: int = 20) -> np.ndarray:
    """Normalized histogram of per-F-AP cache states of one file over ``[0, S]``."""
    states = np.asarray(states, dtype=float)
    if states.size == 0:
        raise ValueError("need at least one F-AP")
    hist, _ = np.histogram(np.clip(states, 0.0, S), bins=bins, range=(0.0, S))
    return hist / states.size


def density_to_bins(m_t: np.ndarray, S: float, bins: int) -> np.ndarray:
    """Bin masses of a node density (per unit ``s/S``) using each node's cell clipped to ``[0, 1]``."""
    ns = len(m_t)
    dx = 1.0 / (ns - 1)
    x = np.linspace(0.0, 1.0, ns)
    lo = np.clip(x - dx / 2, 0.0, 1.0)
    hi = np.clip(x + dx / 2, 0.0, 1.0)
    mass = m_t * dx
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = np.zeros(bins)
    for b in range(bins):
        overlap = np.clip(np.minimum(hi, edges[b + 1]) - np.maximum(lo, edges[b]), 0.0, None)
        out[b] = float(np.sum(mass * overlap / (hi - lo)))
    return out


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class RunResult:
    policy: str
    metrics: list[SlotMetrics]
    meanfield: list[tuple[int, int, int, float]] = field(default_factory=list)

    def summary(self, n_faps: int) -> dict:
        if not self.metrics:
            return {"policy": self.policy, "slots": 0, "requests": 0, "avg_delay": 0.0,
                    "avg_load": 0.0, "avg_cost": 0.0, "case1": 0, "case2": 0, "case3": 0}
        req = sum(x.requests for x in self.metrics)
        delay = sum(x.delay for x in self.metrics)
        load = sum(x.load for x in self.metrics)
        cost = sum(x.cost for x in self.metrics)
        slots = len(self.metrics)
        return {
            "policy": self.policy,
            "slots": slots,
            "requests": req,
            "avg_delay": delay / req if req else 0.0,
            "avg_load": load / (n_faps * slots),
            "avg_cost": cost / slots,
            "case1": sum(x.case1 for x in self.metrics),
            "case2": sum(x.case2 for x in self.metrics),
            "case3": sum(x.case3 for x in self.metrics),
        }


def simulate(world: World, batches: Sequence[RequestBatch], meanfield_files: Sequence[int] = (),
             bins: int = 20) -> RunResult:
    result = RunResult(world.policy, [])
    for batch in batches:
        result.metrics.append(world.step(batch))
        for n in meanfield_files:
            hist = empirical_mean_field(world.cache[:, n], world.params.S, bins)
            result.meanfield.extend((batch.slot, n, b, float(h)) for b, h in enumerate(hist))
    return result


def write_metrics_csv(path: str | Path, results: Sequence[RunResult], extra: dict | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS + list(extra))
        for res in results:
            for x in res.metrics:
                w.writerow([x.slot, x.policy, repr(x.delay), repr(x.load), repr(x.cost),
                            x.case1, x.case2, x.case3, *extra.values()])


def write_meanfield_csv(path: str | Path, results: Sequence[RunResult], extra: dict | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "file", "bin", "mass", "policy", *extra])
        for res in results:
            for slot, n, b, mass in res.meanfield:
                w.writerow([slot, n, b, repr(mass), res.policy, *extra.values()])


def write_summary_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
