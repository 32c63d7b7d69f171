"""Batched append-only insertion.

A batch is appended at the tail (no existing row moves), then integrated in
three stages: candidate search (exact within the target bucket plus a
full-range graph search over the pre-batch prefix), forward selection under
the small-world pruning rule, and reverse rewiring so existing nodes point
back at the newcomers. During pruning a fresh node's distance is shrunk by
alpha (alpha^2 on squared distances), which counters the tendency of
entrenched neighborhoods to reject new arrivals.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import RangePredicate, SearchParams, sq_distances
from .layout import SENTINEL, GraphIndex, append_batch
from .searcher import derive_query_seed, search
from . import builder

# candidate budgets: exact intra-bucket pool and full-range graph-search pool
CANDIDATE_LOCAL_FACTOR = 2
CANDIDATE_SEARCH_ITOPK = 128
CANDIDATE_SEARCH_WIDTH = 4
CANDIDATE_SEARCH_MAX_ITER = 50


@dataclass
class InsertReport:
    batch_size: int = 0
    bulk_built: int = 0
    forward_accepted: int = 0
    forward_rejected: int = 0
    reverse_accepted: int = 0
    reverse_rejected: int = 0
    evictions_necessary: int = 0
    evictions_redundant: int = 0
    forced_links: int = 0
    rewired_rows: list[int] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def select_neighbors(
    store,
    target: int,
    candidates: list[tuple[int, float]],
    row_capacity: int,
    alpha: float,
    fresh,
) -> list[int]:
    """Greedy diversity selection over candidates sorted by ascending distance.

    A candidate c is kept iff d_eff(target, c) < dist(c, n) for every
    already-kept n, where d_eff shrinks by alpha when c is fresh (alpha^2
    here because distances are squared). Stops after ``row_capacity`` keeps.
    """
    if not candidates:
        return []
    alpha_sq = alpha * alpha
    X = store.X
    slots = np.array([c[0] for c in candidates], dtype=np.int64)
    dists = np.array([c[1] for c in candidates], dtype=np.float64)
    # min distance from each candidate to the accepted set so far
    nearest_kept = np.full(len(slots), np.inf)
    accepted: list[int] = []
    accepted_set: set[int] = set()
    for i, (slot, d) in enumerate(zip(slots, dists)):
        if len(accepted) == row_capacity:
            break
        if slot == target or slot in accepted_set:
            continue
        d_eff = alpha_sq * d if slot in fresh else d
        if not d_eff < nearest_kept[i]:
            continue
        accepted.append(int(slot))
        accepted_set.add(int(slot))
        np.minimum(nearest_kept, sq_distances(X[slot], X[slots]), out=nearest_kept)
    return accepted


def try_rewire(
    store,
    adjacency: np.ndarray,
    v: int,
    q: int,
    sq_dvq: float,
    alpha: float,
    k_local: int,
) -> tuple[bool, int]:
    """Offer fresh node ``q`` as a neighbor of ``v``; returns (accepted, evicted_pos).

    A sentinel slot is filled unconditionally. A full row accepts q only when
    the biased distance beats the diversity test against every current
    neighbor; the victim is then the farthest neighbor by distance to v,
    preferring the redundant region [k_local, k_max) so the local backbone
    survives. evicted_pos is -1 when nothing was evicted.
    """
    row = adjacency[v]
    if q in row:
        return False, -1
    empty = np.flatnonzero(row == SENTINEL)
    if empty.size:
        row[empty[0]] = q
        return True, -1
    neighbors = row.astype(np.int64)
    d_eff = alpha * alpha * sq_dvq
    d_qn = sq_distances(store.X[q], store.X[neighbors])
    if not np.all(d_eff < d_qn):
        return False, -1
    d_vn = sq_distances(store.X[v], store.X[neighbors])
    if len(row) > k_local:
        region = np.arange(k_local, len(row))
    else:
        region = np.arange(len(row))
    pos = int(region[np.argmax(d_vn[region])])
    row[pos] = q
    return True, pos


def _bucket_candidates(
    index: GraphIndex,
    fresh_slots: np.ndarray,
    budget: int,
) -> dict[int, np.ndarray]:
    """Exact nearest candidates within each fresh node's bucket.

    Only slots strictly below the fresh node are eligible, so earlier batch
    members can become neighbors of later ones but never the reverse.
    """
    store, meta = index.store, index.meta
    out: dict[int, np.ndarray] = {}
    buckets = meta.index_to_bucket[fresh_slots]
    for b in np.unique(buckets):
        qs = fresh_slots[buckets == b]
        members = np.asarray(meta.bucket_to_index[int(b)], dtype=np.int64)
        d = builder.pairwise_sq_dists(store.X[qs], store.X[members])
        d[members[None, :] >= qs[:, None]] = np.inf
        kc = min(budget, d.shape[1])
        ids = builder.topk_ids_by_distance(d, kc)
        picked = members[ids]
        dd = np.take_along_axis(d, ids, axis=1)
        for row_i, q in enumerate(qs):
            valid = np.isfinite(dd[row_i])
            out[int(q)] = picked[row_i][valid]
    return out


def insert_batch(
    index: GraphIndex,
    vectors: np.ndarray,
    scalars: np.ndarray,
    *,
    ids: np.ndarray | None = None,
    search_itopk: int = CANDIDATE_SEARCH_ITOPK,
) -> InsertReport:
    """Integrate one batch of records into a built (or empty) index.

    On an empty index the first bucket_capacity records are bulk-built and the
    rest follow the normal insertion path. Existing vector rows are never
    modified; adjacency changes outside the fresh range are limited to the
    rows listed in the report.
    """
    t0 = time.perf_counter()
    params = index.params
    vectors = np.asarray(vectors, dtype=np.float32)
    scalars = np.asarray(scalars, dtype=np.float32)
    report = InsertReport(batch_size=len(vectors))

    if index.store.count == 0:
        head = min(len(vectors), params.bucket_capacity)
        built, _ = builder.build_index(
            vectors[:head], scalars[:head], params, capacity=index.store.capacity
        )
        index.store = built.store
        index.meta = built.meta
        index.adjacency = built.adjacency
        report.bulk_built = head
        if head == len(vectors):
            report.wall_time_s = time.perf_counter() - t0
            return report
        vectors = vectors[head:]
        scalars = scalars[head:]
        ids = ids[head:] if ids is not None else None

    store, meta, adjacency = index.store, index.meta, index.adjacency
    n0 = store.count
    start, end = append_batch(store, meta, vectors, scalars, ids=ids)
    if start == end:
        report.wall_time_s = time.perf_counter() - t0
        return report
    fresh_slots = np.arange(start, end, dtype=np.int64)
    fresh = range(start, end)

    local_cands = _bucket_candidates(index, fresh_slots, CANDIDATE_LOCAL_FACTOR * params.k_max)

    full_range = RangePredicate.everything()
    reverse_requests: list[tuple[int, int, float]] = []
    rewired: set[int] = set()
    nearest_pre: dict[int, int] = {}

    for q in fresh_slots:
        cand_slots = local_cands.get(int(q), np.empty(0, dtype=np.int64))
        if n0 > 0:
            sp = SearchParams(
                k=search_itopk,
                range=full_range,
                itopk=search_itopk,
                search_width=CANDIDATE_SEARCH_WIDTH,
                max_iterations=CANDIDATE_SEARCH_MAX_ITER,
                rng_seed=derive_query_seed(params.rng_seed, int(q)),
            )
            found = search(index, store.X[q], sp, live_count=n0)
            cand_slots = np.union1d(cand_slots, found.slots)
        if cand_slots.size == 0:
            continue
        d = sq_distances(store.X[q], store.X[cand_slots])
        order = np.lexsort((cand_slots, d))
        cand_list = [(int(cand_slots[i]), float(d[i])) for i in order]
        for slot, _ in cand_list:
            if slot < start:
                nearest_pre[int(q)] = slot
                break
        accepted = select_neighbors(store, int(q), cand_list, params.k_max, params.alpha, fresh)
        report.forward_accepted += len(accepted)
        report.forward_rejected += len(cand_list) - len(accepted)
        if not accepted:
            continue
        acc_set = set(accepted)
        acc_d = {s: dd for s, dd in cand_list if s in acc_set}
        acc_arr = np.array(accepted, dtype=np.int64)
        intra = acc_arr[meta.index_to_bucket[acc_arr] == meta.index_to_bucket[q]]
        cross = acc_arr[meta.index_to_bucket[acc_arr] != meta.index_to_bucket[q]]
        row_order = np.concatenate([intra, cross])
        adjacency[q, : len(row_order)] = row_order
        for v in row_order:
            reverse_requests.append((int(v), int(q), acc_d[int(v)]))

    reverse_requests.sort()
    for v, q, d_vq in reverse_requests:
        ok, evicted_pos = try_rewire(store, adjacency, v, q, d_vq, params.alpha, params.k_local)
        if ok:
            report.reverse_accepted += 1
            rewired.add(v)
            if evicted_pos >= 0:
                if evicted_pos >= params.k_local:
                    report.evictions_redundant += 1
                else:
                    report.evictions_necessary += 1
        else:
            report.reverse_rejected += 1

    if n0 > 0:
        _heal_unreachable(index, start, end, nearest_pre, rewired, report)

    report.rewired_rows = sorted(rewired)
    report.wall_time_s = time.perf_counter() - t0
    return report


def _incoming_from_prefix(adjacency: np.ndarray, prefix: int, start: int, end: int) -> np.ndarray:
    """Incoming-edge counts for slots [start, end) from rows [0, prefix)."""
    flat = adjacency[:prefix].ravel()
    flat = flat[flat != SENTINEL].astype(np.int64)
    flat = flat[(flat >= start) & (flat < end)]
    return np.bincount(flat - start, minlength=end - start)


def _heal_unreachable(
    index: GraphIndex,
    start: int,
    end: int,
    nearest_pre: dict[int, int],
    rewired: set[int],
    report: InsertReport,
) -> None:
    """Force one incoming edge from a pre-batch node for any newcomer without one.

    Rewiring evictions can strip a link that an earlier request created, so
    this works off the actual adjacency state and repeats until stable.
    Victim slots prefer the redundant region and avoid same-batch nodes so a
    forced write cannot orphan another newcomer.
    """
    store, adjacency, params = index.store, index.adjacency, index.params
    for _ in range(4):
        counts = _incoming_from_prefix(adjacency, start, start, end)
        missing = np.flatnonzero(counts == 0)
        if missing.size == 0:
            return
        for off in missing:
            q = start + int(off)
            row_q = adjacency[q]
            targets = row_q[row_q != SENTINEL].astype(np.int64)
            targets = targets[targets < start]
            if targets.size:
                d_t = sq_distances(store.X[q], store.X[targets])
                v = int(targets[np.lexsort((targets, d_t))[0]])
            elif q in nearest_pre:
                v = nearest_pre[q]
            else:
                continue
            row = adjacency[v]
            empty = np.flatnonzero(row == SENTINEL)
            if empty.size:
                row[empty[0]] = q
            else:
                if len(row) > params.k_local:
                    region = np.arange(params.k_local, len(row))
                else:
                    region = np.arange(len(row))
                current = row.astype(np.int64)
                d_vn = sq_distances(store.X[v], store.X[current])
                stale = region[(current[region] < start) | (current[region] >= end)]
                pick_from = stale if stale.size else region
                pos = int(pick_from[np.argmax(d_vn[pick_from])])
                row[pos] = q
                report.evictions_redundant += 1
            report.forced_links += 1
            rewired.add(v)
