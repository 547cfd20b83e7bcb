import logging

import numpy as np
import pytest

from mfgcache.cost import caching_load, discard_rate
from mfgcache.model import CostParams
from mfgcache.solver import (CFLViolationError, Grid, MeanFieldInputs, NoConvergenceError,
                             SolverConfig, enforce_capacity, fpk_step, hamiltonian,
                             mean_field_averages, optimal_control, solve_fpk_forward,
                             solve_hjb_backward, solve_mfg, uniqueness_probe, upwind_gradients,
                             write_fields_csv, write_residuals_csv)

P = CostParams()
S = P.S


def test_optimal_control_examples():
    assert optimal_control(0.0, P) == 0.0
    assert optimal_control(-(P.omega2 / S) * (P.eta1 + P.eta2), P) == pytest.approx(1.0)
    assert optimal_control(-(P.omega2 / S) * (P.eta1 + P.eta2 / 2), P) == pytest.approx(0.5)
    assert optimal_control(-1.0, P) == 1.0


def test_hamiltonian_zero_costs():
    zero = P.with_(eta=0.0, eta1=0.0, omega1=0.0)
    inputs = MeanFieldInputs(q=0.0, alt_activation=0.0, own_rate=1e7, alt_rate=1e7)
    # caching still costs omega2 * eta2 c^2 / 2, so take c = 0
    assert hamiltonian(0.3 * S, 0.0, 0.0, inputs, zero) == 0.0


def test_hamiltonian_linear_in_gradient():
    inputs = MeanFieldInputs(q=1.0, alt_activation=0.2, own_rate=2e7, alt_rate=1e6)
    c = 0.9  # drift S (c - d) > 0 for q = 1
    h1 = hamiltonian(0.2 * S, c, 1e-9, inputs, P)
    h2 = hamiltonian(0.2 * S, c, 2e-9, inputs, P)
    assert h2 > h1


def test_upwind_gradients_on_smooth_profile():
    g = Grid(Ns=201, S=S)
    v = np.sin(np.pi * g.s / S)
    exact = np.pi / S * np.cos(np.pi * g.s / S)
    fwd, bwd = upwind_gradients(v, g.ds)
    bound = g.ds * (np.pi / S) ** 2  # ds/2 * max|v''| with margin 2
    assert np.max(np.abs(fwd[:-1] - exact[:-1])) <= bound
    assert np.max(np.abs(bwd[1:] - exact[1:])) <= bound


def test_hjb_zero_cost_gives_zero_value():
    cfg = SolverConfig(Ns=21, Nt=11)
    grid = cfg.grid(P)
    v, c = solve_hjb_backward(None, cfg, P, 0.0, state_cost=np.zeros((grid.Nt, grid.Ns)))
    assert np.all(v == 0.0)
    assert np.all(c == 0.0)


def test_hjb_single_tiny_step():
    cfg = SolverConfig(Ns=21, Nt=2, T=1e-6)
    grid = cfg.grid(P)
    J = np.tile(1.0 + grid.s / S, (2, 1))
    v, _ = solve_hjb_backward(None, cfg, P, 0.5, state_cost=J)
    assert np.allclose(v[0], grid.dt * J[1], rtol=0.05)


def test_hjb_value_monotone_for_decreasing_cost():
    cfg = SolverConfig(Ns=41, Nt=41)
    grid = cfg.grid(P)
    J = np.tile(3.0 - 2.0 * grid.s / S, (grid.Nt, 1))
    v, _ = solve_hjb_backward(None, cfg, P, 1.0, state_cost=J)
    assert np.all(np.diff(v, axis=1) <= 1e-12)


def test_fpk_zero_drift_keeps_density():
    cfg = SolverConfig(Ns=31, Nt=21)
    grid = cfg.grid(P)
    m0 = grid.uniform(0.2 * S, 0.6 * S)
    c = np.full((grid.Nt, grid.Ns), float(discard_rate(0.0, P.a)))
    m = solve_fpk_forward(c, m0, cfg, P, 0.0)
    assert np.allclose(m, m0, atol=1e-14)


def test_fpk_diffusion_conserves_and_spreads():
    cfg = SolverConfig(Ns=51, Nt=51, eps_diffusion=0.01 * S**2)
    grid = cfg.grid(P)
    m0 = grid.spike(0.5 * S)
    c = np.full((grid.Nt, grid.Ns), float(discard_rate(0.0, P.a)))
    m = solve_fpk_forward(c, m0, cfg, P, 0.0)
    assert np.allclose(m.sum(axis=1) * grid.dx, 1.0, atol=1e-12)
    assert m[-1].max() < m0.max()
    assert np.all(m >= 0)


def test_fpk_step_is_conservative():
    rng = np.random.default_rng(0)
    m = rng.random(40)
    vel = rng.normal(size=40)
    vel[0], vel[-1] = max(vel[0], 0), min(vel[-1], 0)
    out = fpk_step(m, vel, 1e-3, 1 / 39)
    assert out.sum() == pytest.approx(m.sum(), rel=1e-14)


def test_fpk_cfl_guard():
    cfg = SolverConfig(Ns=101, Nt=2, T=1000.0, max_substeps=50)
    grid = cfg.grid(P)
    with pytest.raises(CFLViolationError):
        solve_fpk_forward(np.ones((2, grid.Ns)), grid.spike(0.0), cfg, P, 0.0)


def test_mean_field_averages():
    g = Grid(Ns=51, S=S)
    assert mean_field_averages(g.spike(S), g).mean_state == pytest.approx(S)
    assert mean_field_averages(g.spike(S), g).mass_full == pytest.approx(1.0)
    assert abs(mean_field_averages(g.uniform(), g).mean_state - S / 2) <= g.ds
    half = 0.5 * g.spike(0.0) + 0.5 * g.spike(S)
    assert mean_field_averages(half, g).mean_state == pytest.approx(S / 2)


def test_mfg_trivial_fixed_point():
    params = P.with_(omega1=0.0)
    cfg = SolverConfig(Ns=21, Nt=21)
    grid = cfg.grid(params)
    sol = solve_mfg(cfg, params, 0.0, grid.spike(0.0))
    assert sol.iterations == 1 and sol.converged
    assert np.allclose(sol.m, grid.spike(0.0))


def test_damping_identity():
    cfg = SolverConfig(Ns=31, Nt=31, max_iters=3, rho=0.5)
    sol = solve_mfg(cfg, P, 0.5, raise_on_failure=False)
    # recompute the first Picard step by hand: m^0 is m0 at every time
    grid = cfg.grid(P)
    m0 = np.tile(grid.spike(0.0), (grid.Nt, 1))
    v, c = solve_hjb_backward(m0, cfg, P, 0.5)
    m_tilde = solve_fpk_forward(c, grid.spike(0.0), cfg, P, 0.5)
    assert sol.residuals[0] == pytest.approx(cfg.rho * np.max(np.abs(m_tilde - m0)), rel=1e-12)


def test_no_convergence_carries_best_iterate():
    cfg = SolverConfig(Ns=31, Nt=31, max_iters=2, tol=1e-12)
    with pytest.raises(NoConvergenceError) as err:
        solve_mfg(cfg, P, 0.5)
    assert err.value.best.iterations == 2
    assert len(err.value.best.residuals) == 2
    assert not err.value.best.converged


def test_rejects_unnormalized_initial_density():
    cfg = SolverConfig(Ns=21, Nt=11)
    with pytest.raises(ValueError):
        solve_mfg(cfg, P, 0.0, np.ones(21))


def test_uniqueness_probe_reports_spread(caplog):
    cfg = SolverConfig(Ns=31, Nt=31)
    with caplog.at_level(logging.INFO):
        spread = uniqueness_probe(cfg, P, 0.5, [0.0, S])
    assert spread >= 0.0
    if spread >= 10 * cfg.tol:
        assert "differs across starts" in caplog.text


def test_capacity_examples():
    assert enforce_capacity([3, 1, 2], [S, 0, S], 2 * S).all()
    assert enforce_capacity([1, 2], [S, S], S).tolist() == [True, False]
    assert enforce_capacity([5, 5, 5], [S, S, S], 2 * S).tolist() == [True, True, False]
    assert enforce_capacity([1, 9], [S, S], S, rule="max_benefit").tolist() == [False, True]


def test_control_free_of_load_gradient_when_costs_vanish():
    g = np.zeros(5)
    assert np.all(caching_load(optimal_control(g, P), P) == 0.0)


def test_field_dumps(tmp_path):
    cfg = SolverConfig(Ns=5, Nt=3)
    sol = solve_mfg(cfg, P.with_(omega1=0.0), 0.0)
    write_fields_csv(tmp_path / "v.csv", [sol.v], {"config_hash": "abc"})
    write_residuals_csv(tmp_path / "r.csv", [sol])
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "file,t_index,s_index,value,config_hash"
    assert len(lines) == 1 + 3 * 5
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "0,1,0.0"
