"""Caching policies: the mean-field feedback policy and the MPC, RC and LRU baselines.

Every policy object belongs to exactly one F-AP (or, for the vectorized
mean-field policy, acts row by row on local states only) and never sees the
cache contents of other F-APs.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ZipfPopularity
from .solver import Grid, MFGSolution, capacity_order, enforce_capacity

POLICY_NAMES = ("mfg", "mpc", "rc", "lru")


class StalePolicyError(RuntimeError):
    """The requested time lies beyond the horizon the policy was solved for."""


@dataclass(frozen=True)
class PolicyDecision:
    """Per-file caching rates for one slot, or a whole-file cache set.

    ``order`` ranks files by retention priority under the capacity rule.
    """

    c: np.ndarray | None = None
    retained: np.ndarray | None = None
    order: np.ndarray | None = None
    cached: frozenset[int] | None = None


def bilinear(field: np.ndarray, grid: Grid, t: float, s) -> np.ndarray:
    """Interpolate ``field[n, j]`` given on ``grid`` at time ``t`` and states ``s``."""
    if t < -1e-12 or t > grid.T * (1 + 1e-12):
        raise StalePolicyError(f"t={t} outside the solved horizon [0, {grid.T}]")
    ft = min(max(t / grid.dt, 0.0), grid.Nt - 1.0)
    n0 = min(int(ft), grid.Nt - 2)
    wt = ft - n0
    fs = np.clip(np.asarray(s, dtype=float) / grid.ds, 0.0, grid.Ns - 1.0)
    j0 = np.minimum(fs.astype(int), grid.Ns - 2)
    ws = fs - j0
    lo = field[n0, j0] * (1 - ws) + field[n0, j0 + 1] * ws
    hi = field[n0 + 1, j0] * (1 - ws) + field[n0 + 1, j0 + 1] * ws
    return lo * (1 - wt) + hi * wt


def mfg_policy(
    s: np.ndarray,
    t: float,
    c_fields: np.ndarray,
    v_fields: np.ndarray,
    grid: Grid,
    capacity: float,
    rule: str = "retain_min",
) -> PolicyDecision:
    """Local mean-field decision for one F-AP with per-file states ``s``.

    ``c_fields`` and ``v_fields`` have shape ``(N, Nt, Ns)``.
    """
    s = np.asarray(s, dtype=float)
    c = np.array([bilinear(c_fields[n], grid, t, s[n]) for n in range(len(s))])
    c = np.clip(c, 0.0, 1.0)
    keys = ranking_values(v_fields, grid, t, s, rule)
    retained = enforce_capacity(keys, s, capacity, rule)
    return PolicyDecision(c=np.where(retained, c, 0.0), retained=retained,
                          order=capacity_order(keys, rule))


def ranking_values(v_fields: np.ndarray, grid: Grid, t: float, s: np.ndarray, rule: str) -> np.ndarray:
    """Per-file values that the capacity rule ranks; ``s`` has shape ``(..., N)``."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    for n in range(s.shape[-1]):
        if rule == "max_benefit":
            out[..., n] = (bilinear(v_fields[n], grid, t, 0.0)
                           - bilinear(v_fields[n], grid, t, grid.S))
        else:
            out[..., n] = bilinear(v_fields[n], grid, t, s[..., n])
    return out


class MFGPolicy:
    """Feedback policy read off per-file solver solutions.

    ``slot_duration`` converts slot indices to solver time.
    """

    name = "mfg"

    def __init__(self, solutions: Sequence[MFGSolution], capacity: float,
                 slot_duration: float, rule: str = "retain_min"):
        self.grid = solutions[0].grid
        self.c_fields = np.stack([sol.c for sol in solutions])
        self.v_fields = np.stack([sol.v for sol in solutions])
        self.capacity = capacity
        self.slot_duration = slot_duration
        self.rule = rule

    def time_of(self, slot: int) -> float:
        return slot * self.slot_duration

    def controls(self, states: np.ndarray, slot: int) -> np.ndarray:
        """Caching rates for a batch of local states of shape ``(..., N)``."""
        t = self.time_of(slot)
        states = np.asarray(states, dtype=float)
        out = np.empty_like(states)
        for n in range(states.shape[-1]):
            out[..., n] = bilinear(self.c_fields[n], self.grid, t, states[..., n])
        return np.clip(out, 0.0, 1.0)

    def values(self, states: np.ndarray, slot: int) -> np.ndarray:
        t = self.time_of(slot)
        states = np.asarray(states, dtype=float)
        out = np.empty_like(states)
        for n in range(states.shape[-1]):
            out[..., n] = bilinear(self.v_fields[n], self.grid, t, states[..., n])
        return out

    def ranking(self, states: np.ndarray, slot: int) -> np.ndarray:
        """Values ranked by the capacity rule, shape ``(..., N)``."""
        return ranking_values(self.v_fields, self.grid, self.time_of(slot), states, self.rule)

    def decide(self, s: np.ndarray, slot: int) -> PolicyDecision:
        return mfg_policy(s, self.time_of(slot), self.c_fields, self.v_fields, self.grid,
                          self.capacity, self.rule)


def mpc_policy(popularity: ZipfPopularity, capacity: float, file_size: float) -> PolicyDecision:
    """Most popular caching: the ``floor(C/S)`` most popular files, fixed forever."""
    k = int(np.floor(capacity / file_size + 1e-12))
    return PolicyDecision(cached=frozenset(int(n) for n in popularity.ranking()[:k]))


def rc_policy(capacity: float, file_size: float, n_files: int,
              rng: np.random.Generator | int | None) -> PolicyDecision:
    """Random caching: a uniformly random ``floor(C/S)``-subset of the catalog."""
    k = min(int(np.floor(capacity / file_size + 1e-12)), n_files)
    rng = np.random.default_rng(rng)
    return PolicyDecision(cached=frozenset(int(n) for n in rng.choice(n_files, size=k, replace=False)))


class LRUCache:
    """Whole-file LRU stack of one F-AP; recency is refreshed on hits and misses."""

    def __init__(self, slots: int):
        self.slots = slots
        self._stack: OrderedDict[int, None] = OrderedDict()

    def __contains__(self, n: int) -> bool:
        return n in self._stack

    def __len__(self) -> int:
        return len(self._stack)

    @property
    def contents(self) -> list[int]:
        """Cached files from least to most recently used."""
        return list(self._stack)

    def request(self, n: int) -> tuple[bool, int | None]:
        """Serve a request; return ``(hit, evicted_file)``."""
        if n in self._stack:
            self._stack.move_to_end(n)
            return True, None
        if self.slots <= 0:
            return False, None
        evicted = None
        if len(self._stack) >= self.slots:
            evicted, _ = self._stack.popitem(last=False)
        self._stack[n] = None
        return False, evicted


def lru_policy(cache: LRUCache, n: int) -> PolicyDecision:
    cache.request(n)
    return PolicyDecision(cached=frozenset(cache.contents))
