import numpy as np
import pytest

from mfgcache.model import CostParams, ZipfPopularity, permute_popularity
from mfgcache.policies import (LRUCache, MFGPolicy, StalePolicyError, bilinear, lru_policy,
                               mfg_policy, mpc_policy, rc_policy)
from mfgcache.solver import Grid, MFGSolution

S = CostParams().S


def _grid_field():
    g = Grid(Ns=5, Nt=3, S=S, T=2.0)
    f = np.arange(15, dtype=float).reshape(3, 5)
    return g, f


def test_bilinear_on_node_and_midpoint():
    g, f = _grid_field()
    assert bilinear(f, g, 1.0, 2 * g.ds) == f[1, 2]
    assert bilinear(f, g, 1.0, 2.5 * g.ds) == pytest.approx(0.5 * (f[1, 2] + f[1, 3]))
    assert bilinear(f, g, 0.5, 0.0) == pytest.approx(0.5 * (f[0, 0] + f[1, 0]))


def test_bilinear_rejects_times_past_horizon():
    g, f = _grid_field()
    with pytest.raises(StalePolicyError):
        bilinear(f, g, 2.5, 0.0)


def test_mfg_policy_keeps_lowest_values():
    g = Grid(Ns=3, Nt=2, S=S, T=1.0)
    v = np.stack([np.full((2, 3), k, dtype=float) for k in (1.0, 2.0, 3.0)])
    c = np.ones_like(v)
    dec = mfg_policy(np.full(3, S), 0.0, c, v, g, 2 * S, rule="retain_min")
    assert dec.retained.tolist() == [True, True, False]
    assert dec.c.tolist() == [1.0, 1.0, 0.0]
    assert dec.order.tolist() == [0, 1, 2]


def test_mfg_policy_benefit_rule_uses_full_copy_saving():
    g = Grid(Ns=3, Nt=2, S=S, T=1.0)
    # saving v(t,0) - v(t,S) is 1, 5, 3
    v = np.stack([np.tile([d, d / 2, 0.0], (2, 1)) for d in (1.0, 5.0, 3.0)])
    dec = mfg_policy(np.full(3, S), 0.5, np.ones_like(v), v, g, S, rule="max_benefit")
    assert dec.retained.tolist() == [False, True, False]


def test_mfg_policy_object_maps_slots_to_time():
    g = Grid(Ns=3, Nt=5, S=S, T=4.0)
    c = np.tile(np.linspace(0, 1, 5)[:, None], (1, 3))
    sol = MFGSolution(g, np.zeros_like(c), np.zeros_like(c), c, 1)
    pol = MFGPolicy([sol, sol], 2 * S, slot_duration=1.0)
    assert pol.controls(np.zeros((1, 2)), 2).tolist() == [[0.5, 0.5]]
    with pytest.raises(StalePolicyError):
        pol.controls(np.zeros((1, 2)), 5)


def test_mpc_examples():
    pop = ZipfPopularity.zipf(15, 1.3)
    assert mpc_policy(pop, 5 * S, S).cached == frozenset(range(5))
    assert mpc_policy(pop, 15 * S, S).cached == frozenset(range(15))
    # the selection is made once; later permutations do not touch it
    first = mpc_policy(pop, 5 * S, S).cached
    permute_popularity(pop, 1)
    assert mpc_policy(pop, 5 * S, S).cached == first


def test_rc_examples():
    assert rc_policy(15 * S, S, 15, 0).cached == frozenset(range(15))
    assert rc_policy(0.5 * S, S, 15, 0).cached == frozenset()
    assert rc_policy(5 * S, S, 15, 42).cached == rc_policy(5 * S, S, 15, 42).cached
    assert len(rc_policy(5 * S, S, 15, 1).cached) == 5


def test_lru_traces():
    lru = LRUCache(2)
    evicted = [lru.request(n)[1] for n in (1, 2, 3)]
    assert set(lru.contents) == {2, 3} and evicted[-1] == 1

    lru = LRUCache(2)
    evicted = [lru.request(n)[1] for n in (1, 2, 1, 3)]
    assert set(lru.contents) == {1, 3} and evicted[-1] == 2

    lru = LRUCache(3)
    out = [lru.request(7) for _ in range(5)]
    assert lru.contents == [7]
    assert out[0] == (False, None) and all(o == (True, None) for o in out[1:])


def test_lru_zero_capacity_and_decision():
    lru = LRUCache(0)
    assert lru.request(3) == (False, None)
    assert len(lru) == 0
    assert lru_policy(LRUCache(1), 4).cached == frozenset({4})
