import math

import numpy as np
import pytest

from mfgcache.model import CostParams
from mfgcache.radio import (Topology, build_topology, lattice_points, ou_step, rate_matrix,
                            simulate_ou, static_gain, transmission_rate)


def test_single_fap_when_spacing_exceeds_radius():
    topo = build_topology(600.0, 1300.0, 40, np.random.default_rng(0))
    assert topo.n_faps == 1
    assert np.array_equal(topo.fap_positions, [[0.0, 0.0]])
    assert np.all(topo.association == 0)


def test_colocated_user_associates_with_that_fap():
    faps = lattice_points(600.0, 200.0)
    j = 7
    topo = Topology(600.0, faps, faps[j:j + 1] + 1e-9)
    assert topo.association[0] == j


def test_lattice_count_matches_brute_force():
    topo = build_topology(600.0, 100.0, 10, np.random.default_rng(3))
    count = sum(1 for i in range(-10, 11) for j in range(-10, 11)
                if (100 * i) ** 2 + (100 * j) ** 2 <= 600 ** 2)
    assert topo.n_faps == count == 113


def test_users_stay_in_disk():
    topo = build_topology(600.0, 120.0, 500, np.random.default_rng(5))
    assert np.all(np.hypot(*topo.user_positions.T) <= 600.0)


def test_bad_ifd_rejected():
    with pytest.raises(ValueError):
        build_topology(600.0, 0.0, 1, 0)
    with pytest.raises(ValueError):
        build_topology(600.0, -5.0, 1, 0)


def test_topology_csv_round_trip(tmp_path):
    topo = build_topology(300.0, 100.0, 12, np.random.default_rng(1))
    topo.to_csv(tmp_path / "t.csv")
    back = Topology.from_csv(tmp_path / "t.csv", 300.0)
    assert np.array_equal(back.fap_positions, topo.fap_positions)
    assert np.array_equal(back.user_positions, topo.user_positions)
    assert np.array_equal(back.association, topo.association)


@pytest.mark.parametrize("d, expo, gain", [(0.5, 4.0, 1.0), (1.0, 4.0, 1.0), (10.0, 4.0, 1e-4),
                                           (100.0, 2.0, 1e-4)])
def test_static_gain(d, expo, gain):
    assert static_gain(d, expo) == pytest.approx(gain, rel=1e-15)


def test_rate_at_unit_snr_is_bandwidth():
    p = CostParams()
    assert transmission_rate(p.sigma2 / p.P, [], p) == pytest.approx(p.W, rel=1e-15)


def test_zero_gain_gives_zero_rate():
    assert transmission_rate(0.0, [1e-6], CostParams()) == 0.0


def test_equal_interferer_limit():
    p = CostParams(sigma2=1e-30)
    g = 1e-6
    assert transmission_rate(g, [g], p) == pytest.approx(p.W, rel=1e-3)


def test_rate_matrix_matches_scalar_formula():
    p = CostParams()
    topo = build_topology(300.0, 150.0, 6, np.random.default_rng(2))
    g = topo.gains()
    R = rate_matrix(g, p)
    for j in range(topo.n_faps):
        for k in range(topo.n_users):
            others = np.delete(g[:, k], j)
            assert R[j, k] == pytest.approx(transmission_rate(g[j, k], others, p), rel=1e-9)


def test_ou_fixed_point_and_arithmetic():
    assert ou_step(0.7, 0.1, 0.7, 0.0, 3.0, 1.0) == 0.7
    assert ou_step(0.0, 0.1, 1.0, 0.0, 2.0, 0.0) == pytest.approx(0.1, rel=1e-15)
    with pytest.raises(ValueError):
        ou_step(0.0, 0.0, 1.0, 0.0, 2.0, 0.0)


def test_ou_stationary_variance():
    sigma, alpha, dt = 0.3, 2.0, 0.01
    path = simulate_ou(np.zeros(100), 10_000, dt, 0.0, sigma, alpha, np.random.default_rng(4))
    # 100 independent chains x 10^4 steps = 10^6 samples after a burn-in of 10 time constants
    burn = int(10 / (alpha / 2) / dt)
    var = path[burn:].var()
    assert var == pytest.approx(sigma**2 / alpha, rel=0.05)
    assert math.isfinite(var)
