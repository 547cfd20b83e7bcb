"""Cache-state dynamics, delivery-case conditions, delay, fronthaul load and total cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import CostParams


class InvalidRateError(ValueError):
    """A request would be served over a link with zero rate."""


def discard_rate(q, a: float):
    """Request-dependent discard rate ``e^(a-1) * a^q`` (fraction of S per unit time)."""
    return math.exp(a - 1.0) * np.power(a, q)


def cache_drift(s, c, q, params: CostParams):
    """Rate of change of the cached bits of one file.

    ``s`` is accepted for interface symmetry; the drift does not depend on it.
    The caller integrates and clamps the state to ``[0, S]``.
    """
    return params.S * (np.asarray(c, dtype=float) - discard_rate(q, params.a))


def integrate_cache(s, c, q, dt: float, params: CostParams):
    """One explicit Euler step of the cache dynamics, clamped to ``[0, S]``."""
    return np.clip(s + cache_drift(s, c, q, params) * dt, 0.0, params.S)


def heaviside(x, kappa: float = math.inf, scale: float = 1.0):
    """Step function with ``H(0) = 1``; logistic ``1/(1+exp(-kappa x/scale))`` for finite kappa."""
    x = np.asarray(x, dtype=float)
    if math.isinf(kappa):
        out = (x >= 0).astype(float)
    else:
        out = expit(kappa * x / scale)
    return float(out) if out.ndim == 0 else out


def case_conditions(s_n, s_alt, S: float, kappa: float = math.inf, full_eps: float = 0.0):
    """Occurrence weights ``(C1, C2, C3)`` of the three delivery cases.

    ``C1`` - served from the default F-AP's cache (``s_n >= S/2``);
    ``C2`` - served by another F-AP holding the whole file;
    ``C3`` - default F-AP retrieves the missing bits over the fronthaul.
    With ``full_eps > 0`` the "whole file" threshold becomes ``S (1 - full_eps)``.
    """
    c1 = heaviside(np.asarray(s_n, dtype=float) - 0.5 * S, kappa, S)
    alt = heaviside(np.asarray(s_alt, dtype=float) - S * (1.0 - full_eps), kappa, S)
    return c1, (1.0 - c1) * alt, (1.0 - c1) * (1.0 - alt)


@dataclass(frozen=True)
class DeliveryContext:
    """Requests for one file at one F-AP during a slot.

    ``own_rates`` and ``alt_rates`` hold one entry per requesting user: the
    rate from the default F-AP and from the alternative (case 2) server.
    """

    own_rates: np.ndarray
    alt_rates: np.ndarray
    s_alt: float

    @property
    def q(self) -> int:
        return len(self.own_rates)


def delay_cost(ctx: DeliveryContext, s_n: float, S: float, R_F: float,
               kappa: float = math.inf, full_eps: float = 0.0) -> float:
    """Total service delay (seconds) of the slot's requests for one file."""
    if ctx.q == 0:
        return 0.0
    c1, c2, c3 = case_conditions(s_n, ctx.s_alt, S, kappa, full_eps)
    own = np.asarray(ctx.own_rates, dtype=float)
    alt = np.asarray(ctx.alt_rates, dtype=float)
    total = 0.0
    if c1 + c3 > 0:
        if np.any(own <= 0):
            raise InvalidRateError("a requesting user has zero rate to its default F-AP")
        total += (c1 + c3) * float(np.sum(S / own + (S - s_n) / R_F))
    if c2 > 0:
        if np.any(alt <= 0):
            raise InvalidRateError("a requesting user has zero rate to the alternative F-AP")
        total += c2 * float(np.sum(S / alt))
    return total


def caching_load(c, params: CostParams):
    """Fronthaul load of the caching phase, ``eta1 c + eta2 c^2 / 2``."""
    c = np.asarray(c, dtype=float)
    return params.eta1 * c + 0.5 * params.eta2 * c * c


def fronthaul_load(c_n, s_n, q_n, conditions, params: CostParams):
    """Fronthaul load of one file: caching term plus retrieval for cases 1 and 3."""
    c1, _, c3 = conditions
    retrieval = params.eta * q_n * (params.S - np.asarray(s_n, dtype=float)) * (c1 + c3)
    return caching_load(c_n, params) + retrieval


def total_cost(D, O, omega1: float, omega2: float):
    return omega1 * D + omega2 * O


def expected_state_cost(s, q, alt_activation, params: CostParams, own_rate: float,
                        alt_rate: float, kappa: float = math.inf):
    """Control-free part of the weighted cost rate for ``q`` expected requests.

    ``alt_activation`` replaces ``H(s_alt - S)`` and is typically the share of
    the population holding the whole file. Vectorized over ``s``.
    """
    S = params.S
    c1 = heaviside(np.asarray(s, dtype=float) - 0.5 * S, kappa, S)
    c2 = (1.0 - c1) * alt_activation
    served_locally = 1.0 - c2
    delay = q * (served_locally * (S / own_rate + (S - s) / params.R_F) + c2 * S / alt_rate)
    retrieval = params.eta * q * (S - s) * served_locally
    return params.omega1 * delay + params.omega2 * retrieval
