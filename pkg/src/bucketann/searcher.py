"""Range-constrained greedy beam search over the fixed-degree graph.

Every query first narrows to the buckets intersecting its scalar range and
seeds the beam from them, so traversal starts inside the valid region.
During expansion each gathered neighbor passes a scalar pre-check before any
distance arithmetic happens; out-of-range nodes cost one comparison, never a
d-dimensional computation. The candidate queue is bounded (itopk) and a node
that has ever been scored is never admitted again.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import SearchParams, sq_distances
from .layout import SENTINEL, GraphIndex, intersecting_buckets


@dataclass
class SearchStats:
    iterations: int = 0
    dist_evals: int = 0
    seed_evals: int = 0
    gathered: int = 0
    in_range_new: int = 0
    precheck_rejected: int = 0
    seed_attempts: int = 0
    elapsed_s: float = 0.0


@dataclass
class SearchResult:
    """Slots and squared distances, ascending by (distance, slot).

    ``truncated`` is set when the search found at least one valid node but
    fewer than k; an empty result means nothing in the index satisfies the
    range at all.
    """

    slots: np.ndarray
    sq_dists: np.ndarray
    truncated: bool
    stats: SearchStats = field(default_factory=SearchStats)

    def __len__(self) -> int:
        return len(self.slots)


class CandidateQueue:
    """Bounded queue ordered ascending by (dist, slot) with expansion flags."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.slots = np.empty(0, dtype=np.int64)
        self.dists = np.empty(0, dtype=np.float64)
        self.expanded = np.empty(0, dtype=bool)

    def __len__(self) -> int:
        return len(self.slots)

    def admit(self, slots: np.ndarray, dists: np.ndarray) -> None:
        if len(slots) == 0:
            return
        s = np.concatenate([self.slots, slots])
        d = np.concatenate([self.dists, dists])
        e = np.concatenate([self.expanded, np.zeros(len(slots), dtype=bool)])
        order = np.lexsort((s, d))[: self.capacity]
        self.slots, self.dists, self.expanded = s[order], d[order], e[order]

    def frontier(self, width: int) -> np.ndarray:
        """Positions of the best unexpanded entries (up to ``width``).

        Empty once every queue entry has been expanded, which is the
        convergence condition: there is nothing left to pop.
        """
        return np.flatnonzero(~self.expanded)[:width]

    def top_k(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.slots[:k].copy(), self.dists[:k].copy()


def derive_query_seed(rng_seed: int, ordinal: int) -> int:
    """Deterministic per-query RNG seed for batched search."""
    return int(np.random.SeedSequence([rng_seed, ordinal]).generate_state(1, np.uint64)[0])


def _visit_table(index: GraphIndex) -> tuple[np.ndarray, int]:
    local = index._visit
    stamps = getattr(local, "stamps", None)
    if stamps is None or len(stamps) != index.store.capacity:
        local.stamps = np.zeros(index.store.capacity, dtype=np.int64)
        local.epoch = 0
        stamps = local.stamps
    local.epoch += 1
    return stamps, local.epoch


def _sample_seeds(
    index: GraphIndex,
    params: SearchParams,
    lo: int,
    hi: int,
    n_live: int,
    rng: np.random.Generator,
    stats: SearchStats,
) -> np.ndarray:
    """Uniform seed sampling over the valid buckets, with scan fallback.

    Sampling draws up to 4x seed_count attempts; if the boundary buckets are
    mostly out of range the remainder comes from a linear scan (boundary
    buckets first, then the fully valid middles), which also proves
    emptiness when no valid node exists.
    """
    meta = index.meta
    scalars = index.store.scalars
    lower, upper = params.range.lower, params.range.upper
    want = params.effective_seed_count
    lists = [meta.bucket_to_index[b] for b in range(lo, hi + 1)]
    sizes = np.array([len(l) for l in lists], dtype=np.int64)
    total = int(sizes.sum())
    picked: list[int] = []
    seen: set[int] = set()
    if total > 0:
        cum = np.cumsum(sizes)
        draws = rng.integers(0, total, size=4 * want)
        stats.seed_attempts += len(draws)
        for flat in draws:
            b = int(np.searchsorted(cum, flat, side="right"))
            slot = lists[b][int(flat - (cum[b - 1] if b else 0))]
            if slot in seen or slot >= n_live:
                continue
            seen.add(slot)
            if lower <= scalars[slot] <= upper:
                picked.append(slot)
                if len(picked) == want:
                    break
    if len(picked) < want:
        scan_order = [lo] + ([hi] if hi != lo else []) + list(range(lo + 1, hi))
        for b in scan_order:
            for slot in meta.bucket_to_index[b]:
                if slot in seen or slot >= n_live:
                    continue
                seen.add(slot)
                if lower <= scalars[slot] <= upper:
                    picked.append(slot)
                    if len(picked) == want:
                        break
            if len(picked) == want:
                break
    return np.array(picked, dtype=np.int64)


def search(
    index: GraphIndex,
    query: np.ndarray,
    params: SearchParams,
    *,
    live_count: int | None = None,
) -> SearchResult:
    """Top-k nearest neighbors of ``query`` whose scalar lies in params.range."""
    t0 = time.perf_counter()
    stats = SearchStats()
    n = index.store.count if live_count is None else live_count
    if n == 0 or index.meta is None:
        return SearchResult(
            slots=np.empty(0, dtype=np.int64),
            sq_dists=np.empty(0, dtype=np.float64),
            truncated=False,
            stats=stats,
        )
    q = np.asarray(query, dtype=np.float32)
    X = index.store.X
    scalars = index.store.scalars
    adjacency = index.adjacency
    lower, upper = params.range.lower, params.range.upper

    lo, hi = intersecting_buckets(index.meta, params.range)
    rng = np.random.default_rng(params.rng_seed)
    stamps, epoch = _visit_table(index)

    seeds = _sample_seeds(index, params, lo, hi, n, rng, stats)
    if len(seeds) == 0:
        stats.elapsed_s = time.perf_counter() - t0
        return SearchResult(
            slots=np.empty(0, dtype=np.int64),
            sq_dists=np.empty(0, dtype=np.float64),
            truncated=False,
            stats=stats,
        )
    seed_d = sq_distances(q, X[seeds])
    stats.dist_evals += len(seeds)
    stats.seed_evals += len(seeds)
    stamps[seeds] = epoch

    queue = CandidateQueue(params.itopk)
    queue.admit(seeds, seed_d)

    for _ in range(params.max_iterations):
        fr = queue.frontier(params.search_width)
        if fr.size == 0:
            break
        stats.iterations += 1
        queue.expanded[fr] = True
        nbrs = adjacency[queue.slots[fr]].ravel()
        nbrs = nbrs[nbrs != SENTINEL].astype(np.int64)
        nbrs = nbrs[nbrs < n]
        if nbrs.size == 0:
            continue
        nbrs = np.unique(nbrs)
        stats.gathered += nbrs.size
        fresh = stamps[nbrs] != epoch
        in_range = (scalars[nbrs] >= lower) & (scalars[nbrs] <= upper)
        stats.precheck_rejected += int(np.count_nonzero(fresh & ~in_range))
        elig = nbrs[fresh & in_range]
        if elig.size == 0:
            continue
        stats.in_range_new += elig.size
        d = sq_distances(q, X[elig])
        stats.dist_evals += elig.size
        stamps[elig] = epoch
        queue.admit(elig, d)

    slots, dists = queue.top_k(params.k)
    stats.elapsed_s = time.perf_counter() - t0
    return SearchResult(
        slots=slots,
        sq_dists=dists,
        truncated=0 < len(slots) < params.k,
        stats=stats,
    )


def search_batch(
    index: GraphIndex,
    queries: np.ndarray,
    params: SearchParams,
    *,
    live_count: int | None = None,
) -> list[SearchResult]:
    """Independent searches with per-query RNG streams derived from the seed."""
    results = []
    for i, q in enumerate(np.asarray(queries, dtype=np.float32)):
        p = replace(params, rng_seed=derive_query_seed(params.rng_seed, i))
        results.append(search(index, q, p, live_count=live_count))
    return results
