"""Network geometry, SINR-based wireless rates and the Ornstein-Uhlenbeck channel."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CostParams

PATHLOSS_EXPONENT = 4.0
MIN_DISTANCE = 1.0


def lattice_points(radius: float, spacing: float) -> np.ndarray:
    """Square-lattice points with the given spacing that fall inside the disk."""
    n = int(math.floor(radius / spacing))
    ticks = np.arange(-n, n + 1) * spacing
    xx, yy = np.meshgrid(ticks, ticks, indexing="xy")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    inside = np.hypot(pts[:, 0], pts[:, 1]) <= radius * (1 + 1e-12)
    return pts[inside]


def uniform_disk(radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


@dataclass(frozen=True)
class Topology:
    radius: float
    fap_positions: np.ndarray = field(repr=False)
    user_positions: np.ndarray = field(repr=False)
    association: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        faps = np.asarray(self.fap_positions, dtype=float).reshape(-1, 2)
        users = np.asarray(self.user_positions, dtype=float).reshape(-1, 2)
        if len(faps) == 0:
            raise ValueError("topology has no F-APs")
        dist = np.hypot(faps[:, None, 0] - users[None, :, 0], faps[:, None, 1] - users[None, :, 1])
        # argmin returns the first minimum, i.e. the lowest F-AP index on ties
        assoc = np.argmin(dist, axis=0) if len(users) else np.zeros(0, dtype=np.int64)
        for arr in (faps, users, assoc):
            arr.setflags(write=False)
        object.__setattr__(self, "fap_positions", faps)
        object.__setattr__(self, "user_positions", users)
        object.__setattr__(self, "association", assoc.astype(np.int64))

    @property
    def n_faps(self) -> int:
        return len(self.fap_positions)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    def distances(self) -> np.ndarray:
        """``d[i, k]`` between F-AP ``i`` and user ``k``."""
        f, u = self.fap_positions, self.user_positions
        return np.hypot(f[:, None, 0] - u[None, :, 0], f[:, None, 1] - u[None, :, 1])

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.association == i) for i in range(self.n_faps)]

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.association, minlength=self.n_faps)

    def gains(self, exponent: float = PATHLOSS_EXPONENT) -> np.ndarray:
        return static_gain(self.distances(), exponent)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["entity", "index", "x", "y", "association"])
            for i, (x, y) in enumerate(self.fap_positions):
                writer.writerow(["fap", i, repr(float(x)), repr(float(y)), ""])
            for k, (x, y) in enumerate(self.user_positions):
                writer.writerow(["user", k, repr(float(x)), repr(float(y)), int(self.association[k])])

    @classmethod
    def from_csv(cls, path: str | Path, radius: float) -> "Topology":
        faps, users = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                target = faps if row["entity"] == "fap" else users
                target.append((float(row["x"]), float(row["y"])))
        return cls(radius, np.array(faps), np.array(users))


def build_topology(
    radius: float, ifd: float, n_users: int, rng: np.random.Generator | int | None
) -> Topology:
    """F-APs on a square lattice of spacing ``ifd`` clipped to the disk; users uniform in it."""
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if not ifd > 0:
        raise ValueError(f"ifd must be > 0, got {ifd}")
    faps = lattice_points(radius, ifd)
    if len(faps) == 0:
        raise ValueError("lattice produced no F-APs")
    rng = np.random.default_rng(rng)
    return Topology(radius, faps, uniform_disk(radius, n_users, rng))


def static_gain(distance, exponent: float = PATHLOSS_EXPONENT, d_min: float = MIN_DISTANCE):
    """Power-law path-loss gain ``max(d, d_min) ** -exponent``."""
    d = np.maximum(np.asarray(distance, dtype=float), d_min)
    g = d ** (-exponent)
    return float(g) if g.ndim == 0 else g


def transmission_rate(serving_gain: float, interfering_gains, params: CostParams) -> float:
    """Shannon rate of one link with every other F-AP transmitting at full power."""
    interference = float(np.sum(interfering_gains)) * params.P
    sinr = serving_gain * params.P / (params.sigma2 + interference)
    return params.W * math.log2(1.0 + sinr)


def rate_matrix(gains: np.ndarray, params: CostParams) -> np.ndarray:
    """``R[j, k]``: rate from F-AP ``j`` to user ``k`` under full-power interference."""
    received = gains * params.P
    total = received.sum(axis=0, keepdims=True)
    interference = np.maximum(total - received, 0.0)
    return params.W * np.log2(1.0 + received / (params.sigma2 + interference))


def serving_rates(topology: Topology, params: CostParams, exponent: float = PATHLOSS_EXPONENT) -> np.ndarray:
    rates = rate_matrix(topology.gains(exponent), params)
    return rates[topology.association, np.arange(topology.n_users)]


@dataclass
class ChannelState:
    """Channel coefficients ``h[i, k]`` evolving as a mean-reverting OU process."""

    h: np.ndarray
    mu_h: float
    sigma_h: float
    alpha: float

    def step(self, dt: float, rng: np.random.Generator) -> None:
        noise = rng.standard_normal(self.h.shape)
        self.h = ou_step(self.h, dt, self.mu_h, self.sigma_h, self.alpha, noise)

    def power_gains(self) -> np.ndarray:
        return np.abs(self.h) ** 2


def ou_step(h, dt: float, mu_h: float, sigma_h: float, alpha: float, noise):
    """Euler-Maruyama step of ``dh = alpha/2 (mu_h - h) dt + sigma_h dB``."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return h + 0.5 * alpha * (mu_h - h) * dt + sigma_h * math.sqrt(dt) * noise


def simulate_ou(h0, n_steps: int, dt: float, mu_h: float, sigma_h: float, alpha: float,
                rng: np.random.Generator | int | None) -> np.ndarray:
    """Path of ``n_steps + 1`` states (first is ``h0``); vectorized over the shape of ``h0``."""
    rng = np.random.default_rng(rng)
    h0 = np.asarray(h0, dtype=float)
    out = np.empty((n_steps + 1,) + h0.shape)
    out[0] = h0
    for n in range(n_steps):
        out[n + 1] = ou_step(out[n], dt, mu_h, sigma_h, alpha, rng.standard_normal(h0.shape))
    return out
