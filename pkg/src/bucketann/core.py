"""Shared value types and the distance primitive used across the index.

All distances are squared Euclidean. Squaring preserves every ordering and
argmin decision while avoiding the root; the CLI converts back to plain
Euclidean for display. Vector components and scalars are stored as float32,
accumulation happens in float64, and the summation order is fixed so that
distance(a, b) is bitwise equal to distance(b, a).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatchError(ValueError):
    """Two vectors (or a vector and the index) disagree on dimensionality."""


class CapacityError(RuntimeError):
    """The store is out of preallocated slots; rebuild with a larger capacity."""


def sq_distances(q: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from ``q`` to every row of ``rows``.

    Inputs may be any real dtype; the computation upcasts to float64 before
    subtracting so results are independent of storage precision quirks.
    """
    q = np.asarray(q)
    rows = np.asarray(rows)
    if rows.ndim != 2 or q.ndim != 1 or rows.shape[1] != q.shape[0]:
        raise DimensionMismatchError(
            f"shape mismatch: query {q.shape} vs rows {rows.shape}"
        )
    diff = rows.astype(np.float64) - q.astype(np.float64)
    return np.einsum("ij,ij->i", diff, diff)


def sq_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two vectors of equal length."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(sq_distances(a, b.reshape(1, -1))[0])


@dataclass(frozen=True)
class RangePredicate:
    """Closed scalar interval [lower, upper] constraining a query."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not self.lower <= self.upper:
            raise ValueError(f"invalid range: lower {self.lower} > upper {self.upper}")

    def contains(self, s: float) -> bool:
        return self.lower <= s <= self.upper

    @classmethod
    def everything(cls) -> "RangePredicate":
        return cls(-np.inf, np.inf)


@dataclass(frozen=True)
class VectorRecord:
    """One indexable object: an embedding, its filterable scalar, and an id.

    The id is opaque to the index; lookups and results speak physical slots.
    """

    vector: np.ndarray
    scalar: float
    id: int = -1

    def __post_init__(self) -> None:
        if not np.isfinite(self.scalar):
            raise ValueError(f"scalar must be finite, got {self.scalar}")


@dataclass(frozen=True)
class BuildParams:
    """Construction-time knobs.

    k_max is the total per-node degree budget; the first k_local slots hold
    the intra-bucket backbone and the remaining k_remote slots receive
    cross-bucket edges (with local fallback). alpha < 1 shrinks a freshly
    inserted node's distance inside the pruning rule; alpha = 1 disables
    the bias.
    """

    k_max: int = 32
    k_local: int = 16
    bucket_capacity: int = 10_000
    proximal_fraction: float = 0.5
    proximal_window: float = 0.2
    alpha: float = 0.6
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.k_local <= self.k_max:
            raise ValueError(f"need 0 < k_local <= k_max, got {self.k_local}/{self.k_max}")
        if self.bucket_capacity < 1:
            raise ValueError("bucket_capacity must be >= 1")
        if not 0.0 <= self.proximal_fraction <= 1.0:
            raise ValueError("proximal_fraction must lie in [0, 1]")
        if not 0.0 < self.proximal_window <= 1.0:
            raise ValueError("proximal_window must lie in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def k_remote(self) -> int:
        return self.k_max - self.k_local


@dataclass(frozen=True)
class SearchParams:
    """Query-time knobs for the range-constrained beam search."""

    k: int = 10
    range: RangePredicate = field(default_factory=RangePredicate.everything)
    itopk: int = 128
    search_width: int = 4
    max_iterations: int = 50
    seed_count: int | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1 or self.k > self.itopk:
            raise ValueError(f"need 1 <= k <= itopk, got k={self.k} itopk={self.itopk}")
        if self.search_width < 1:
            raise ValueError("search_width must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.seed_count is not None and self.seed_count < 1:
            raise ValueError("seed_count must be >= 1")

    @property
    def effective_seed_count(self) -> int:
        if self.seed_count is not None:
            return self.seed_count
        return min(self.itopk, 32)
