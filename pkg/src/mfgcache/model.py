"""Shared domain types: content catalog, Zipf popularity, requests and cost constants.

Files are indexed from 0 in every array (file ``n`` of the catalog is entry
``n - 1``); a user that issues no request in a slot is marked with ``-1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np

NO_REQUEST = -1

#: 100 MB expressed in bits.
DEFAULT_FILE_SIZE = 8.0e8


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class ContentCatalog:
    file_count: int = 15
    file_size: float = DEFAULT_FILE_SIZE

    def __post_init__(self):
        if self.file_count < 1:
            raise ValueError(f"file_count must be >= 1, got {self.file_count}")
        if not self.file_size > 0:
            raise ValueError(f"file_size must be > 0, got {self.file_size}")


@dataclass(frozen=True)
class ZipfPopularity:
    """Request probabilities over the catalog.

    ``probabilities`` is usually rank ordered (``p[0]`` largest) but after
    :func:`permute_popularity` the masses are reassigned to other files.
    """

    beta: float
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def zipf(cls, n_files: int, beta: float) -> "ZipfPopularity":
        return cls(beta, zipf_probabilities(n_files, beta))

    @property
    def n_files(self) -> int:
        return self.probabilities.size

    def ranking(self) -> np.ndarray:
        """File indices from most to least popular (stable on ties)."""
        return np.argsort(-self.probabilities, kind="stable")


@dataclass(frozen=True)
class RequestBatch:
    slot: int
    files: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.asarray(self.files, dtype=np.int64)
        f.setflags(write=False)
        object.__setattr__(self, "files", f)

    @property
    def n_users(self) -> int:
        return self.files.size

    @property
    def n_requests(self) -> int:
        return int(np.count_nonzero(self.files >= 0))

    def requesting_users(self) -> np.ndarray:
        return np.flatnonzero(self.files >= 0)


@dataclass(frozen=True)
class CostParams:
    """Scalar constants of the rate, cache-dynamics and cost model.

    Attributes
    ----------
    S : file size in bits.
    W : wireless bandwidth in Hz.
    P : transmit power of every F-AP in watts.
    sigma2 : noise power in watts.
    R_F : fronthaul rate in bits/s.
    a : steepness of the request-dependent discard rate, in (0, 1).
    eta, eta1, eta2 : fronthaul load coefficients (retrieval, linear and
        quadratic caching terms).
    omega1, omega2 : weights of delay and load in the total cost.
    C : cache capacity of one F-AP in bits.
    """

    S: float = DEFAULT_FILE_SIZE
    W: float = 10e6
    P: float = 1.0
    sigma2: float = dbm_to_watts(-77.0)
    R_F: float = 1e7
    a: float = 0.5
    eta: float = 0.3
    eta1: float = 1e-4
    eta2: float = 0.05
    omega1: float = 100.0
    omega2: float = 1e-6
    C: float = 5 * DEFAULT_FILE_SIZE

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"a must lie strictly inside (0, 1), got {self.a}")
        for name in ("S", "W", "P", "sigma2", "R_F", "C", "eta2", "omega2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("eta", "eta1", "omega1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def slots(self) -> int:
        """Number of whole files that fit in the cache."""
        return int(math.floor(self.C / self.S + 1e-12))

    def with_(self, **changes) -> "CostParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def zipf_probabilities(n_files: int, beta: float) -> np.ndarray:
    """Return ``p[n] = (n+1)**-beta / sum_j (j+1)**-beta`` for ``n = 0..N-1``."""
    if n_files < 1:
        raise ValueError(f"need at least one file, got {n_files}")
    if beta < 0 or not math.isfinite(beta):
        raise ValueError(f"beta must be finite and >= 0, got {beta}")
    ranks = np.arange(1, n_files + 1, dtype=float)
    weights = ranks ** (-beta)
    # math.fsum keeps the normalization exact to ~1 ulp for large catalogs
    return weights / math.fsum(weights)


def generate_requests(
    popularity: ZipfPopularity,
    n_users: int,
    rate: float,
    rng: np.random.Generator | int | None,
    slot: int = 0,
) -> RequestBatch:
    """Draw one slot of requests.

    Each user requests with probability ``min(1, rate)`` and, if it does,
    picks a file i.i.d. from ``popularity``.
    """
    if rate < 0:
        raise ValueError(f"request rate must be >= 0, got {rate}")
    rng = np.random.default_rng(rng)
    active = rng.random(n_users) < min(1.0, rate)
    choice = rng.choice(popularity.n_files, size=n_users, p=popularity.probabilities)
    return RequestBatch(slot, np.where(active, choice, NO_REQUEST))


def permute_popularity(
    popularity: ZipfPopularity, rng: np.random.Generator | int | None
) -> ZipfPopularity:
    rng = np.random.default_rng(rng)
    perm = rng.permutation(popularity.n_files)
    return ZipfPopularity(popularity.beta, popularity.probabilities[perm])


def request_counts(batch: RequestBatch, association: np.ndarray, n_faps: int, n_files: int) -> np.ndarray:
    """Per F-AP, per file request counts ``q[i, n]`` for one slot."""
    users = batch.requesting_users()
    q = np.zeros((n_faps, n_files), dtype=np.int64)
    np.add.at(q, (association[users], batch.files[users]), 1)
    return q


def write_request_trace(path: str | Path, batches: Iterable[RequestBatch]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "user", "file"])
        for batch in batches:
            for user in batch.requesting_users():
                writer.writerow([batch.slot, int(user), int(batch.files[user])])


def read_request_trace(path: str | Path, n_users: int) -> list[RequestBatch]:
    rows: dict[int, np.ndarray] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            slot = int(row["slot"])
            files = rows.setdefault(slot, np.full(n_users, NO_REQUEST, dtype=np.int64))
            files[int(row["user"])] = int(row["file"])
    return [RequestBatch(slot, rows[slot]) for slot in sorted(rows)]


def write_popularity(path: str | Path, schedule: Iterable[tuple[int, ZipfPopularity]]) -> None:
    """Write ``(first_slot, popularity)`` pairs as ``period_start,file,probability`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period_start", "file", "probability"])
        for start, pop in schedule:
            for n, p in enumerate(pop.probabilities):
                writer.writerow([start, n, repr(float(p))])
