"""Finite-difference solver for the per-file mean-field caching game.

The state of a generic F-AP is the number of cached bits ``s`` of one file.
The value function solves a backward HJB equation with an implicit upwind
scheme (policy iteration at each time step); the population density solves
the forward Fokker-Planck equation with a conservative donor-cell scheme.
The two are coupled through the share of the population holding the whole
file, which activates the "served by another F-AP" delivery case, and are
iterated to a damped fixed point.

Densities are stored per unit *normalized* state ``x = s / S``, so that
``sum(m[n] * grid.dx) == 1`` and a one-cell spike has height ``Ns - 1``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .cost import caching_load, discard_rate, expected_state_cost
from .model import CostParams

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonFiniteValueError(SolverError):
    pass


class CFLViolationError(SolverError):
    pass


class NoConvergenceError(SolverError):
    """Raised by :func:`solve_mfg` when the fixed point is not reached; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: "MFGSolution"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class Grid:
    Ns: int = 101
    Nt: int = 201
    S: float = 8.0e8
    T: float = 1.0

    def __post_init__(self):
        if self.Ns < 3 or self.Nt < 2:
            raise ValueError(f"need Ns >= 3 and Nt >= 2, got Ns={self.Ns}, Nt={self.Nt}")
        if not (self.S > 0 and self.T > 0):
            raise ValueError("S and T must be positive")

    @property
    def s(self) -> np.ndarray:
        return np.linspace(0.0, self.S, self.Ns)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.Ns)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt)

    @property
    def ds(self) -> float:
        return self.S / (self.Ns - 1)

    @property
    def dx(self) -> float:
        return 1.0 / (self.Ns - 1)

    @property
    def dt(self) -> float:
        return self.T / (self.Nt - 1)

    def spike(self, s0: float) -> np.ndarray:
        """Density with all mass in the cell nearest to ``s0``."""
        m = np.zeros(self.Ns)
        m[int(round(np.clip(s0 / self.ds, 0, self.Ns - 1)))] = 1.0 / self.dx
        return m

    def uniform(self, lo: float = 0.0, hi: float | None = None) -> np.ndarray:
        hi = self.S if hi is None else hi
        s = self.s
        m = ((s >= lo - 1e-9 * self.S) & (s <= hi + 1e-9 * self.S)).astype(float)
        return m / (m.sum() * self.dx)


@dataclass(frozen=True)
class SolverConfig:
    """Numerical settings of the fixed-point solver.

    ``own_rate`` and ``alt_rate`` are the population-average wireless rates
    (bits/s) from the default F-AP and from a case-2 server.
    ``eps_diffusion`` is artificial viscosity in bits^2 per unit time.
    """

    Ns: int = 101
    Nt: int = 201
    T: float = 1.0
    max_iters: int = 200
    tol: float = 1e-4
    rho: float = 0.5
    eps_diffusion: float = 0.0
    kappa: float = 50.0
    full_eps: float = 1e-3
    own_rate: float = 2.5e7
    alt_rate: float = 2.5e7
    hjb_tol: float = 1e-8
    max_policy_iters: int = 100
    max_substeps: int = 10_000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.eps_diffusion < 0:
            raise ValueError("eps_diffusion must be >= 0")

    def grid(self, params: CostParams) -> Grid:
        return Grid(self.Ns, self.Nt, params.S, self.T)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MeanFieldInputs:
    """Everything the running cost needs besides the own state and control."""

    q: float
    alt_activation: float
    own_rate: float
    alt_rate: float
    kappa: float = 50.0


@dataclass(frozen=True)
class MeanFieldSummary:
    mean_state: float
    mass_full: float


@dataclass
class MFGSolution:
    grid: Grid
    v: np.ndarray
    m: np.ndarray
    c: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)
    converged: bool = True

    def value_at(self, n: int, s: float) -> float:
        return float(np.interp(s, self.grid.s, self.v[n]))


# -- pointwise pieces -------------------------------------------------------

def optimal_control(dv_ds, params: CostParams):
    """Minimizer of the Hamiltonian over ``c in [0, 1]`` for a given value gradient."""
    raw = -(params.S * np.asarray(dv_ds, dtype=float) / params.omega2 + params.eta1) / params.eta2
    out = np.clip(raw, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def hamiltonian(s, c, dv_ds, inputs: MeanFieldInputs, params: CostParams):
    """Drift times value gradient plus the weighted running cost."""
    drift = params.S * (np.asarray(c, dtype=float) - discard_rate(inputs.q, params.a))
    running = expected_state_cost(s, inputs.q, inputs.alt_activation, params,
                                  inputs.own_rate, inputs.alt_rate, inputs.kappa)
    return drift * dv_ds + running + params.omega2 * caching_load(c, params)


def upwind_gradients(v: np.ndarray, ds: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward differences; zero where the stencil leaves the grid."""
    fwd = np.zeros_like(v)
    bwd = np.zeros_like(v)
    diff = np.diff(v) / ds
    fwd[:-1] = diff
    bwd[1:] = diff
    return fwd, bwd


def upwind_control(v: np.ndarray, ds: float, d: float, params: CostParams):
    """Godunov choice of control and drift at every node.

    Returns ``(c, drift, value)`` where ``value`` is the minimized
    ``drift * grad + control cost`` with the gradient taken on the upwind side.
    At ``s = 0`` and ``s = S`` motion out of the domain is clamped to zero.
    """
    S = params.S
    fwd, bwd = upwind_gradients(v, ds)

    c_up = np.clip(optimal_control(fwd, params), d, 1.0)
    c_up[-1] = d
    b_up = S * (c_up - d)
    val_up = b_up * fwd + params.omega2 * caching_load(c_up, params)

    c_dn = np.clip(optimal_control(bwd, params), 0.0, d)
    c_dn[0] = 0.0
    b_dn = S * (c_dn - d)
    b_dn[0] = 0.0
    val_dn = b_dn * bwd + params.omega2 * caching_load(c_dn, params)

    up = val_up < val_dn
    return np.where(up, c_up, c_dn), np.where(up, b_up, b_dn), np.where(up, val_up, val_dn)


def mean_field_averages(m_t: np.ndarray, grid: Grid, full_eps: float = 1e-3) -> MeanFieldSummary:
    """Population mean cache state (bits) and the mass holding at least ``S (1 - full_eps)``."""
    w = m_t * grid.dx
    full = grid.s >= grid.S * (1.0 - full_eps) - 1e-9 * grid.S
    return MeanFieldSummary(float(np.dot(grid.s, w)), float(w[full].sum()))


# -- backward HJB -----------------------------------------------------------

Boundary = Callable[[float], float]


def _transport_solve(b: np.ndarray, rhs: np.ndarray, dt: float, ds: float,
                     left: float | None, right: float | None) -> np.ndarray:
    bp = np.maximum(b, 0.0) * dt / ds
    bm = np.minimum(b, 0.0) * dt / ds
    ns = len(b)
    ab = np.zeros((3, ns))
    ab[1] = 1.0 + bp - bm
    ab[0, 1:] = -bp[:-1]
    ab[2, :-1] = bm[1:]
    rhs = rhs.copy()
    if left is not None:
        ab[1, 0], ab[0, 1], rhs[0] = 1.0, 0.0, left
    if right is not None:
        ab[1, -1], ab[2, -2], rhs[-1] = 1.0, 0.0, right
    return solve_banded((1, 1), ab, rhs)


def _hjb_residual(v, v_next, source, dt, ds, d, params, left, right):
    _, _, val = upwind_control(v, ds, d, params)
    res = v - v_next - dt * (val + source)
    if left is not None:
        res[0] = v[0] - left
    if right is not None:
        res[-1] = v[-1] - right
    return res


def solve_hjb_backward(
    m: np.ndarray | None,
    config: SolverConfig,
    params: CostParams,
    q: np.ndarray | float = 0.0,
    state_cost: np.ndarray | None = None,
    boundary: tuple[Boundary | None, Boundary | None] = (None, None),
    terminal: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """March the value function back from ``v(T) = terminal`` (zero by default).

    Each step solves ``v^n - dt * min_c[drift(c) D v^n + L(c)] = v^{n+1} + dt J(t^{n+1})``
    by policy iteration, where ``J`` is the control-free running cost built
    from ``m`` and ``q`` (or given directly as ``state_cost[n, j]``).
    ``boundary`` optionally pins ``v`` at ``s = 0`` / ``s = S`` to functions of t.

    Returns ``(v, c)``, both of shape ``(Nt, Ns)``.
    """
    grid = config.grid(params)
    Nt, Ns, dt, ds = grid.Nt, grid.Ns, grid.dt, grid.ds
    q = np.broadcast_to(np.asarray(q, dtype=float), (Nt,))
    if state_cost is None:
        if m is None:
            raise ValueError("need a density trajectory or an explicit state_cost")
        state_cost = model_state_cost(m, q, grid, config, params)
    t = grid.t
    left_fn, right_fn = boundary

    v = np.empty((Nt, Ns))
    c = np.empty((Nt, Ns))
    v[-1] = 0.0 if terminal is None else terminal
    c[-1] = upwind_control(v[-1], ds, discard_rate(q[-1], params.a), params)[0]

    for n in range(Nt - 2, -1, -1):
        d = float(discard_rate(q[n], params.a))
        left = None if left_fn is None else left_fn(t[n])
        right = None if right_fn is None else right_fn(t[n])
        rhs_base = v[n + 1] + dt * state_cost[n + 1]
        scale = max(1.0, float(np.max(np.abs(rhs_base))))
        vn = v[n + 1].copy()
        for _ in range(config.max_policy_iters):
            cn, b, _ = upwind_control(vn, ds, d, params)
            rhs = rhs_base + dt * params.omega2 * caching_load(cn, params)
            new = _transport_solve(b, rhs, dt, ds, left, right)
            if not np.all(np.isfinite(new)):
                raise NonFiniteValueError(f"value function diverged at time index {n}")
            step = np.max(np.abs(new - vn))
            vn = new
            if step <= 1e-12 * scale:
                break
        res = _hjb_residual(vn, v[n + 1], state_cost[n + 1], dt, ds, d, params, left, right)
        if np.max(np.abs(res)) > config.hjb_tol * scale:
            log.warning("HJB residual %.3e above tolerance at time index %d", np.max(np.abs(res)), n)
        v[n] = vn
        c[n] = upwind_control(vn, ds, d, params)[0]
    return v, c


def model_state_cost(m: np.ndarray, q: np.ndarray, grid: Grid, config: SolverConfig,
                     params: CostParams) -> np.ndarray:
    """Running cost ``J(t_n, s_j)`` without the control term, driven by density ``m``."""
    out = np.empty((grid.Nt, grid.Ns))
    for n in range(grid.Nt):
        active = mean_field_averages(m[n], grid, config.full_eps).mass_full
        out[n] = expected_state_cost(grid.s, q[n], active, params, config.own_rate,
                                     config.alt_rate, config.kappa)
    return out


# -- forward FPK ------------------------------------------------------------

def fpk_step(m: np.ndarray, velocity: np.ndarray, h: float, dx: float, eps: float = 0.0) -> np.ndarray:
    """One explicit donor-cell step with zero-flux walls (velocity and eps in normalized units)."""
    flux = np.maximum(velocity[:-1], 0.0) * m[:-1] + np.minimum(velocity[1:], 0.0) * m[1:]
    if eps > 0:
        flux -= eps * np.diff(m) / dx
    out = m.copy()
    out[:-1] -= h / dx * flux
    out[1:] += h / dx * flux
    return out


def _fpk_propagator(velocity: np.ndarray, nsub: int, h: float, dx: float, eps: float) -> np.ndarray:
    """Matrix of ``nsub`` consecutive :func:`fpk_step` calls; reused while the velocity repeats."""
    step = np.stack([fpk_step(col, velocity, h, dx, eps) for col in np.eye(len(velocity))], axis=1)
    return np.linalg.matrix_power(step, nsub)


def solve_fpk_forward(
    c: np.ndarray,
    m0: np.ndarray,
    config: SolverConfig,
    params: CostParams,
    q: np.ndarray | float = 0.0,
) -> np.ndarray:
    """Transport ``m0`` forward under the feedback control ``c[n, j]``."""
    grid = config.grid(params)
    Nt, dx, dt = grid.Nt, grid.dx, grid.dt
    q = np.broadcast_to(np.asarray(q, dtype=float), (Nt,))
    eps = config.eps_diffusion / params.S**2
    m = np.empty((Nt, grid.Ns))
    m[0] = m0
    propagators: dict = {}
    for n in range(Nt - 1):
        vel = c[n] - discard_rate(q[n], params.a)
        vel[0] = max(vel[0], 0.0)
        vel[-1] = min(vel[-1], 0.0)
        rate = float(np.max(np.abs(vel))) / dx + 2.0 * eps / dx**2
        nsub = max(1, math.ceil(dt * rate * (1 - 1e-12)))
        if nsub > config.max_substeps:
            raise CFLViolationError(f"{nsub} sub-steps needed at time index {n}")
        h = dt / nsub
        if nsub <= 4:
            cur = m[n]
            for _ in range(nsub):
                cur = fpk_step(cur, vel, h, dx, eps)
        else:
            key = (vel.tobytes(), nsub)
            if key not in propagators:
                propagators[key] = _fpk_propagator(vel, nsub, h, dx, eps)
            cur = propagators[key] @ m[n]
        neg = cur < 0
        if np.any(neg):
            cur = np.where(neg, 0.0, cur)
        m[n + 1] = cur
    return m


# -- fixed point ------------------------------------------------------------

def solve_mfg(
    config: SolverConfig,
    params: CostParams,
    q: np.ndarray | float = 0.0,
    m0: np.ndarray | None = None,
    raise_on_failure: bool = True,
) -> MFGSolution:
    """Damped Picard iteration between the HJB and FPK solves for one file.

    Starting from ``m^0(t) = m0`` the loop computes the best response to
    ``m^k``, transports ``m0`` under it to get ``m~`` and sets
    ``m^{k+1} = (1 - rho) m^k + rho m~`` until ``max |m^{k+1} - m^k| < tol``.
    """
    grid = config.grid(params)
    if m0 is None:
        m0 = grid.spike(0.0)
    m0 = np.asarray(m0, dtype=float)
    if abs(m0.sum() * grid.dx - 1.0) > 1e-9:
        raise ValueError("m0 must be normalized: sum(m0) * dx == 1")
    q = np.broadcast_to(np.asarray(q, dtype=float), (grid.Nt,))

    m = np.tile(m0, (grid.Nt, 1))
    residuals: list[float] = []
    v = c = None
    for k in range(1, config.max_iters + 1):
        v, c = solve_hjb_backward(m, config, params, q)
        m_tilde = solve_fpk_forward(c, m0, config, params, q)
        m_next = (1.0 - config.rho) * m + config.rho * m_tilde
        residuals.append(float(np.max(np.abs(m_next - m))))
        m = m_next
        if residuals[-1] < config.tol:
            return MFGSolution(grid, v, m, c, k, residuals, True)

    sol = MFGSolution(grid, v, m, c, config.max_iters, residuals, False)
    msg = f"no convergence after {config.max_iters} iterations (residual {residuals[-1]:.3e})"
    if raise_on_failure:
        raise NoConvergenceError(msg, sol)
    log.warning(msg)
    return sol


def solve_catalog(
    config: SolverConfig,
    params: CostParams,
    q_profile: np.ndarray,
    m0: np.ndarray | Sequence[np.ndarray] | None = None,
    raise_on_failure: bool = True,
) -> list[MFGSolution]:
    """Independent per-file solves; ``q_profile[n, t]`` are expected request counts."""
    q_profile = np.atleast_2d(np.asarray(q_profile, dtype=float))
    if m0 is None or np.ndim(m0) == 1:
        m0s = [m0] * len(q_profile)
    else:
        m0s = list(m0)
    return [solve_mfg(config, params, q_profile[n], m0s[n], raise_on_failure)
            for n in range(len(q_profile))]


def uniqueness_probe(config: SolverConfig, params: CostParams, q, starts: Sequence[float]) -> float:
    """Solve from one-cell spikes at each start state; return the max spread of ``v(0, .)``."""
    grid = config.grid(params)
    sols = [solve_mfg(config, params, q, grid.spike(s0)) for s0 in starts]
    v0 = np.array([sol.v[0] for sol in sols])
    spread = float(np.max(v0.max(axis=0) - v0.min(axis=0)))
    if spread >= 10 * config.tol:
        log.info("equilibrium value differs across starts by %.3e", spread)
    return spread


# -- capacity ---------------------------------------------------------------

CAPACITY_RULES = ("retain_min", "max_benefit")


def capacity_order(values: np.ndarray, rule: str = "retain_min") -> np.ndarray:
    """File indices in retention priority; ties go to the lower index.

    ``retain_min`` ranks cost-to-go values ascending. ``max_benefit`` expects
    the saving of a full copy, ``v(t, 0) - v(t, S)``, and ranks it descending.
    """
    values = np.asarray(values, dtype=float)
    if rule == "retain_min":
        return np.lexsort((np.arange(len(values)), values))
    if rule == "max_benefit":
        return np.lexsort((np.arange(len(values)), -values))
    raise ValueError(f"unknown capacity rule {rule!r}; expected one of {CAPACITY_RULES}")


def enforce_capacity(values, states, capacity: float, rule: str = "retain_min") -> np.ndarray:
    """Boolean mask of files allowed to keep caching.

    Files are ranked by ``values`` as in :func:`capacity_order` and the longest prefix whose cumulative cached bits fit
    in ``capacity`` is retained; every other file must stop caching.
    """
    states = np.asarray(states, dtype=float)
    keep = np.zeros(len(states), dtype=bool)
    if states.sum() <= capacity * (1 + 1e-12):
        keep[:] = True
        return keep
    used = 0.0
    for n in capacity_order(values, rule):
        if used + states[n] > capacity * (1 + 1e-12):
            break
        used += states[n]
        keep[n] = True
    return keep


# -- persistence ------------------------------------------------------------

def write_fields_csv(path: str | Path, fields_by_file: Sequence[np.ndarray],
                     extra: dict | None = None) -> None:
    """Rows ``file,t_index,s_index,value`` for a list of ``(Nt, Ns)`` arrays.

    ``extra`` maps column names to constants appended to every row.
    """
    tail = list((extra or {}).values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "t_index", "s_index", "value", *(extra or {})])
        for f, arr in enumerate(fields_by_file):
            for n in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    w.writerow([f, n, j, repr(float(arr[n, j])), *tail])


def write_residuals_csv(path: str | Path, solutions: Sequence[MFGSolution],
                        extra: dict | None = None) -> None:
    tail = list((extra or {}).values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "iteration", "residual", *(extra or {})])
        for f, sol in enumerate(solutions):
            for k, r in enumerate(sol.residuals, start=1):
                w.writerow([f, k, repr(r), *tail])
