"""Unified global storage and logical bucket metadata.

All vectors live in one preallocated row-major matrix and all neighbor lists
in one dense (capacity x k_max) table, so a physical slot index is stable for
the lifetime of the index. Buckets are a purely logical overlay: two small
maps translate between slots and bucket ids, which is what lets insertion
append at the tail regardless of scalar order (zero-shift appends).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .core import BuildParams, CapacityError, DimensionMismatchError, RangePredicate

SENTINEL = np.uint32(0xFFFFFFFF)


class VectorStore:
    """Append-only vector + scalar storage with a fixed capacity.

    Rows [0, count) are immutable once published. Slot ranges are claimed
    through a monotone counter (unique, contiguous per claim) and the public
    count only advances once every row below it has been written, so readers
    never observe half-written rows.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be >= 1")
        self.X = np.zeros((capacity, dim), dtype="<f4")
        self.scalars = np.zeros(capacity, dtype="<f4")
        self.ids = np.full(capacity, -1, dtype="<i8")
        self._capacity = capacity
        self._dim = dim
        self._lock = threading.Lock()
        self._claimed = 0
        self._count = 0
        self._completed: set[tuple[int, int]] = set()

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def count(self) -> int:
        return self._count

    def claim(self, n_rows: int) -> int:
        """Reserve ``n_rows`` contiguous slots and return the first index."""
        with self._lock:
            if self._claimed + n_rows > self._capacity:
                raise CapacityError(
                    f"capacity exhausted: {self._claimed} claimed + {n_rows} "
                    f"requested > {self._capacity}"
                )
            start = self._claimed
            self._claimed += n_rows
            return start

    def publish(self, start: int, n_rows: int) -> None:
        """Mark a claimed range as fully written; advances count when contiguous."""
        with self._lock:
            self._completed.add((start, n_rows))
            advanced = True
            while advanced:
                advanced = False
                for rng in self._completed:
                    if rng[0] == self._count:
                        self._count = rng[0] + rng[1]
                        self._completed.discard(rng)
                        advanced = True
                        break


@dataclass
class BucketMeta:
    """Bucket boundaries plus the slot<->bucket maps.

    ``boundaries`` holds m+1 strictly increasing scalar edges; bucket i covers
    [boundaries[i], boundaries[i+1]), with the last interval closed on the
    right. ``index_to_bucket`` is sized to the store capacity (-1 for
    unclaimed slots); ``bucket_to_index`` lists member slots per bucket in
    insertion order.
    """

    boundaries: np.ndarray
    index_to_bucket: np.ndarray
    bucket_to_index: list[list[int]]

    @property
    def m(self) -> int:
        return len(self.boundaries) - 1

    @property
    def span(self) -> float:
        return float(self.boundaries[-1]) - float(self.boundaries[0])


def partition_buckets(
    scalars: np.ndarray,
    target_capacity: int,
    *,
    strategy: str = "quantile",
    capacity: int | None = None,
) -> BucketMeta:
    """Derive bucket boundaries for ``scalars`` and assign each one a bucket.

    ``quantile`` places edges at empirical quantiles (equal-frequency), which
    keeps every bucket near ``target_capacity`` even for skewed scalars;
    ``width`` slices the scalar span into equal-width intervals. Duplicate
    edges produced by heavy ties are collapsed, so all-equal scalars yield a
    single bucket rather than an error.
    """
    scalars = np.asarray(scalars, dtype=np.float32)
    n = len(scalars)
    if n < 1:
        raise ValueError("cannot partition an empty scalar set")
    if target_capacity < 1:
        raise ValueError("target_capacity must be >= 1")
    m = -(-n // target_capacity)  # ceil
    if strategy == "quantile":
        sorted_s = np.sort(scalars)
        cuts = np.round(np.arange(m + 1) * (n / m)).astype(np.int64)
        cuts[-1] = n - 1
        edges = sorted_s[np.minimum(cuts, n - 1)]
    elif strategy == "width":
        edges = np.linspace(scalars.min(), scalars.max(), m + 1, dtype=np.float64)
        edges = edges.astype(np.float32)
        edges[-1] = scalars.max()
    else:
        raise ValueError(f"unknown bucket strategy: {strategy!r}")
    edges = np.unique(edges).astype("<f4")
    if len(edges) < 2:
        edges = np.array([edges[0], edges[0]], dtype="<f4")

    cap = capacity if capacity is not None else n
    meta = BucketMeta(
        boundaries=edges,
        index_to_bucket=np.full(cap, -1, dtype="<i4"),
        bucket_to_index=[[] for _ in range(len(edges) - 1)],
    )
    bids = bucket_ids_of(meta, scalars)
    meta.index_to_bucket[:n] = bids
    for slot, b in enumerate(bids):
        meta.bucket_to_index[b].append(slot)
    return meta


def bucket_ids_of(meta: BucketMeta, scalars: np.ndarray) -> np.ndarray:
    """Vectorized bucket lookup with clamping to the first/last bucket."""
    s = np.asarray(scalars, dtype=np.float32)
    return np.searchsorted(meta.boundaries[1:-1], s, side="right").astype(np.int32)

def bucket_of(meta: BucketMeta, s: float) -> int:
    """Bucket id containing scalar ``s`` (out-of-range values clamp)."""
    return int(bucket_ids_of(meta, np.array([s], dtype=np.float32))[0])


def intersecting_buckets(meta: BucketMeta, rng: RangePredicate) -> tuple[int, int]:
    """Inclusive bucket-id interval whose scalar intervals intersect the range.

    A range lying entirely outside the boundary span clamps to the first or
    last bucket; nodes inside still get scalar-checked at search time, so
    correctness is unaffected.
    """
    return bucket_of(meta, rng.lower), bucket_of(meta, rng.upper)


def new_adjacency(capacity: int, k_max: int) -> np.ndarray:
    return np.full((capacity, k_max), SENTINEL, dtype="<u4")


def append_batch(
    store: VectorStore,
    meta: BucketMeta | None,
    vectors: np.ndarray,
    scalars: np.ndarray,
    ids: np.ndarray | None = None,
) -> tuple[int, int]:
    """Append a batch of records at the tail; returns the [start, end) interval.

    Existing rows are never touched. Bucket maps are updated before the new
    count is published so a reader that observes the count also observes
    consistent metadata. Raises CapacityError when the batch does not fit.
    """
    vectors = np.asarray(vectors, dtype=np.float32)
    scalars = np.asarray(scalars, dtype=np.float32)
    b = len(vectors)
    if b == 0:
        c = store.count
        return c, c
    if vectors.ndim != 2 or vectors.shape[1] != store.dim:
        raise DimensionMismatchError(
            f"vectors have shape {vectors.shape}, index dimension is {store.dim}"
        )
    if len(scalars) != b:
        raise ValueError(f"{b} vectors but {len(scalars)} scalars")
    if not np.all(np.isfinite(scalars)):
        raise ValueError("scalars must be finite")

    start = store.claim(b)
    end = start + b
    store.X[start:end] = vectors
    store.scalars[start:end] = scalars
    if ids is not None:
        store.ids[start:end] = np.asarray(ids, dtype=np.int64)
    else:
        store.ids[start:end] = np.arange(start, end, dtype=np.int64)
    if meta is not None:
        bids = bucket_ids_of(meta, scalars)
        meta.index_to_bucket[start:end] = bids
        for offset, bid in enumerate(bids):
            meta.bucket_to_index[bid].append(start + offset)
    store.publish(start, b)
    return start, end


@dataclass
class GraphIndex:
    """The assembled index: storage, bucket metadata, adjacency, and params.

    ``meta`` is None until the first build populates it. The adjacency table
    always has exactly params.k_max columns; empty slots hold SENTINEL.
    """

    store: VectorStore
    meta: BucketMeta | None
    adjacency: np.ndarray
    params: BuildParams
    # per-thread visited tables so concurrent read-only searches stay safe
    _visit: threading.local = field(default_factory=threading.local, repr=False)

    @property
    def count(self) -> int:
        return self.store.count

    @property
    def dim(self) -> int:
        return self.store.dim


def create_index(dim: int, capacity: int, params: BuildParams) -> GraphIndex:
    """Allocate an empty index shell with fixed capacity and degree budget."""
    return GraphIndex(
        store=VectorStore(capacity, dim),
        meta=None,
        adjacency=new_adjacency(capacity, params.k_max),
        params=params,
    )
