"""Two-pass static construction.

Pass 1 wires each bucket densely: exact all-pairs k-NN, reverse-edge
collection, and an interleaved forward/reverse merge whose leading k_local
entries form the necessary local backbone. Pass 2 builds one global graph
over the whole dataset (exact at desk scale, neighborhood descent above it),
then overwrites the redundant tail slots with cross-bucket remote edges,
split into a near-scalar (proximal) share and a long-range (global) share,
falling back to the original local edges when remote candidates run out.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import BuildParams, sq_distances
from .layout import (
    SENTINEL,
    BucketMeta,
    GraphIndex,
    VectorStore,
    append_batch,
    create_index,
    partition_buckets,
)

# Above this many live rows the global pass switches from exact brute-force
# k-NN to random init + neighborhood descent.
EXACT_GLOBAL_LIMIT = 100_000

_GEMM_BLOCK = 1024


@dataclass
class LocalGraphDraft:
    """Pass-1 output: per-node intra-bucket rows, before remote fusion.

    ``forward_rows`` are the exact in-bucket k-NN lists, ``rows`` the
    interleaved forward/reverse merge, both sentinel-padded to k_max.
    ``necessary_counts[u]`` tells how many leading entries of ``rows[u]``
    are necessary (min(k_local, merged length)); everything after them is a
    redundant slot available for remote overwriting.
    """

    forward_rows: np.ndarray
    rows: np.ndarray
    necessary_counts: np.ndarray
    isolated: list[int] = field(default_factory=list)


@dataclass
class GlobalGraph:
    """Distance-ranked neighbor rows over the whole dataset (sentinel-padded)."""

    rows: np.ndarray
    k_g: int


@dataclass
class BuildReport:
    n: int = 0
    m: int = 0
    phase1_seconds: float = 0.0
    phase2_seconds: float = 0.0
    fuse_seconds: float = 0.0
    total_seconds: float = 0.0
    bucket_sizes: list[int] = field(default_factory=list)
    isolated_nodes: int = 0
    cross_bucket_edge_ratio: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pairwise_sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All-pairs squared distances via the |a|^2 - 2ab + |b|^2 expansion (f32)."""
    A = np.ascontiguousarray(A, dtype=np.float32)
    B = np.ascontiguousarray(B, dtype=np.float32)
    a2 = np.einsum("ij,ij->i", A, A)
    b2 = np.einsum("ij,ij->i", B, B)
    d = a2[:, None] - 2.0 * (A @ B.T) + b2[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def topk_ids_by_distance(dists: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k smallest entries per row, ordered by (dist, col).

    Ties at the selection boundary are resolved exactly: rows where the k-th
    distance is shared by more columns than fit are re-ranked with a full
    (dist, col) sort, so lower column index always wins.
    """
    n_cols = dists.shape[1]
    k = min(k, n_cols)
    if k == n_cols:
        sel = np.tile(np.arange(n_cols), (dists.shape[0], 1))
    else:
        sel = np.argpartition(dists, k - 1, axis=1)[:, :k]
    sel.sort(axis=1)
    dsel = np.take_along_axis(dists, sel, axis=1)
    order = np.argsort(dsel, axis=1, kind="stable")
    ids = np.take_along_axis(sel, order, axis=1)
    if k < n_cols:
        kth = np.take_along_axis(dsel, order[:, -1:], axis=1)
        ambiguous = np.flatnonzero((dists <= kth).sum(axis=1) > k)
        for r in ambiguous:
            full = np.argsort(dists[r], kind="stable")[:k]
            ids[r] = full
    return ids


def exact_knn_graph(X: np.ndarray, k: int, block: int = _GEMM_BLOCK) -> np.ndarray:
    """Exact k-NN ids (no self-loops) for every row of X, ordered by (dist, slot)."""
    n = len(X)
    k = min(k, n - 1)
    out = np.empty((n, k), dtype=np.int64)
    X32 = np.ascontiguousarray(X, dtype=np.float32)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = pairwise_sq_dists(X32[start:stop], X32)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = topk_ids_by_distance(d, k)
    return out


def interleave_merge(forward: list[int], reverse: list[int], k_max: int) -> list[int]:
    """Alternate forward[0], reverse[0], forward[1], ... skipping duplicates.

    Reference implementation of the pass-1 merge rule; the bucket pipeline
    computes the same thing vectorized.
    """
    merged: list[int] = []
    seen: set[int] = set()
    fi = ri = 0
    while len(merged) < k_max and (fi < len(forward) or ri < len(reverse)):
        for lst, pos in ((forward, "f"), (reverse, "r")):
            idx = fi if pos == "f" else ri
            if idx < len(lst):
                cand = lst[idx]
                if pos == "f":
                    fi += 1
                else:
                    ri += 1
                if cand not in seen:
                    seen.add(cand)
                    merged.append(cand)
                    if len(merged) == k_max:
                        break
    return merged


def _group_starts(sorted_keys: np.ndarray, n_groups: int) -> np.ndarray:
    return np.searchsorted(sorted_keys, np.arange(n_groups + 1))


def _merge_ranked_edges(
    src: np.ndarray,
    dst: np.ndarray,
    rank: np.ndarray,
    n_nodes: int,
    width: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-source dedup (keep lowest rank) then take the first ``width`` by rank.

    Returns sentinel-padded (n_nodes, width) rows plus per-node entry counts.
    Sources/destinations are local indices in [0, n_nodes).
    """
    order = np.lexsort((rank, dst, src))
    src, dst, rank = src[order], dst[order], rank[order]
    first = np.ones(len(src), dtype=bool)
    first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    src, dst, rank = src[first], dst[first], rank[first]

    order = np.lexsort((rank, src))
    src, dst = src[order], dst[order]
    starts = _group_starts(src, n_nodes)
    pos = np.arange(len(src)) - starts[src]
    keep = pos < width
    rows = np.full((n_nodes, width), SENTINEL, dtype="<u4")
    rows[src[keep], pos[keep]] = dst[keep]
    counts = np.minimum(starts[1:] - starts[:-1], width).astype(np.int32)
    return rows, counts


def _build_bucket(
    draft: LocalGraphDraft,
    X: np.ndarray,
    members: np.ndarray,
    params: BuildParams,
) -> None:
    nb = len(members)
    if nb == 1:
        draft.isolated.append(int(members[0]))
        return
    k_max = params.k_max
    kf = min(k_max, nb - 1)
    Xb = np.ascontiguousarray(X[members], dtype=np.float32)
    fwd_rows = np.full((nb, k_max), SENTINEL, dtype="<u4")
    fwd_parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for start in range(0, nb, _GEMM_BLOCK):
        stop = min(start + _GEMM_BLOCK, nb)
        d = pairwise_sq_dists(Xb[start:stop], Xb)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        ids = topk_ids_by_distance(d, kf)
        fwd_rows[start:stop, :kf] = members[ids]
        e_src = np.repeat(np.arange(start, stop), kf)
        e_dst = ids.ravel()
        e_d = np.take_along_axis(d, ids, axis=1).ravel()
        fwd_parts.append((e_src, e_dst, e_d))

    f_src = np.concatenate([p[0] for p in fwd_parts])
    f_dst = np.concatenate([p[1] for p in fwd_parts])
    f_d = np.concatenate([p[2] for p in fwd_parts])
    f_rank = np.tile(np.arange(kf) * 2, nb)

    # reverse lists: edge u->v induces v->u, ordered by (dist, slot) per source
    order = np.lexsort((f_src, f_d, f_dst))
    r_src, r_dst = f_dst[order], f_src[order]
    starts = _group_starts(r_src, nb)
    r_rank = (np.arange(len(r_src)) - starts[r_src]) * 2 + 1

    src = np.concatenate([f_src, r_src])
    dst = np.concatenate([f_dst, r_dst])
    rank = np.concatenate([f_rank, r_rank])
    rows, counts = _merge_ranked_edges(src, dst, rank, nb, k_max)
    u4_members = members.astype("<u4")
    global_rows = np.where(rows == SENTINEL, SENTINEL, u4_members[np.minimum(rows, nb - 1)])
    draft.forward_rows[members] = fwd_rows
    draft.rows[members] = global_rows
    draft.necessary_counts[members] = np.minimum(counts, params.k_local)


def build_local_phase(
    store: VectorStore,
    meta: BucketMeta,
    params: BuildParams,
    n_threads: int = 1,
) -> LocalGraphDraft:
    """Pass 1: exact local router per bucket (independent across buckets)."""
    n = store.count
    draft = LocalGraphDraft(
        forward_rows=np.full((n, params.k_max), SENTINEL, dtype="<u4"),
        rows=np.full((n, params.k_max), SENTINEL, dtype="<u4"),
        necessary_counts=np.zeros(n, dtype=np.int32),
    )
    member_arrays = [
        np.asarray(lst, dtype=np.int64)
        for lst in meta.bucket_to_index
        if len(lst) > 0
    ]
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(lambda mem: _build_bucket(draft, store.X, mem, params), member_arrays))
    else:
        for mem in member_arrays:
            _build_bucket(draft, store.X, mem, params)
    return draft


def _gathered_sq_dists(X: np.ndarray, rows: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Squared distances from each row's own vector to its candidate ids (f32)."""
    diff = X[cands] - X[rows][:, None, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _reverse_topk(graph: np.ndarray, dists: np.ndarray, width: int) -> np.ndarray:
    """Per-node nearest reverse sources, -1 padded."""
    n, k = graph.shape
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = graph.ravel()
    d = dists.ravel()
    valid = dst >= 0
    src, dst, d = src[valid], dst[valid], d[valid]
    order = np.lexsort((src, d, dst))
    dst, src = dst[order], src[order]
    starts = _group_starts(dst, n)
    pos = np.arange(len(dst)) - starts[dst]
    keep = pos < width
    out = np.full((n, width), -1, dtype=np.int64)
    out[dst[keep], pos[keep]] = src[keep]
    return out


def _descent_round(
    X: np.ndarray,
    graph: np.ndarray,
    dists: np.ndarray,
    sample: int,
    rng: np.random.Generator,
    block: int = 1024,
) -> tuple[np.ndarray, np.ndarray]:
    """One neighborhood-descent pass: re-rank every node against the
    neighbors-of-neighbors of its joint forward/reverse neighborhood."""
    n, k = graph.shape
    s = min(sample, k)
    joint = np.concatenate([graph, _reverse_topk(graph, dists, k)], axis=1)
    hop_cols = rng.permutation(joint.shape[1])[: 2 * s]
    new_graph = np.empty_like(graph)
    new_dists = np.empty_like(dists)
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = np.arange(start, stop)
        own = joint[start:stop]
        hop_src = own[:, hop_cols]
        hops = joint[np.maximum(hop_src, 0).ravel()].reshape(stop - start, -1)
        hops[np.repeat(hop_src < 0, joint.shape[1], axis=1)] = -1
        cands = np.concatenate([own, hops], axis=1)
        missing = cands < 0
        d = _gathered_sq_dists(X, rows, np.maximum(cands, 0))
        d[missing] = np.inf
        # knock out self references and duplicate ids (keep first occurrence)
        d[cands == rows[:, None]] = np.inf
        id_order = np.argsort(cands, axis=1, kind="stable")
        sorted_ids = np.take_along_axis(cands, id_order, axis=1)
        dup = np.zeros_like(sorted_ids, dtype=bool)
        dup[:, 1:] = sorted_ids[:, 1:] == sorted_ids[:, :-1]
        dup_mask = np.zeros_like(dup)
        np.put_along_axis(dup_mask, id_order, dup, axis=1)
        d[dup_mask] = np.inf
        sel = topk_ids_by_distance(d, k)
        new_graph[start:stop] = np.take_along_axis(cands, sel, axis=1)
        new_dists[start:stop] = np.take_along_axis(d, sel, axis=1)
    return new_graph, new_dists


def _random_init_graph(X: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = len(X)
    graph = rng.integers(0, n - 1, size=(n, k), dtype=np.int64)
    graph[graph >= np.arange(n)[:, None]] += 1  # avoid self
    dists = _gathered_sq_dists(X, np.arange(n), graph)
    return graph, dists


def _reverse_merge_topk(graph: np.ndarray, X: np.ndarray, k_g: int, block: int = 4096) -> np.ndarray:
    """Union with reverse edges, dedup, keep closest k_g per node by (dist, slot)."""
    n, k = graph.shape
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = graph.ravel().astype(np.int64)
    all_src = np.concatenate([src, dst])
    all_dst = np.concatenate([dst, src])
    key = all_src * n + all_dst
    _, uniq_idx = np.unique(key, return_index=True)
    all_src, all_dst = all_src[uniq_idx], all_dst[uniq_idx]
    # distances recomputed per unique directed pair, blockwise
    d = np.empty(len(all_src), dtype=np.float32)
    for start in range(0, len(all_src), block * 64):
        stop = min(start + block * 64, len(all_src))
        diff = X[all_src[start:stop]].astype(np.float32) - X[all_dst[start:stop]]
        d[start:stop] = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((all_dst, d, all_src))
    all_src, all_dst = all_src[order], all_dst[order]
    starts = _group_starts(all_src, n)
    pos = np.arange(len(all_src)) - starts[all_src]
    keep = pos < k_g
    rows = np.full((n, k_g), SENTINEL, dtype="<u4")
    rows[all_src[keep], pos[keep]] = all_dst[keep]
    return rows


def build_global_graph(
    store: VectorStore,
    params: BuildParams,
    k_g: int | None = None,
    refine_rounds: int = 3,
    descent_sample: int = 8,
    exact_limit: int = EXACT_GLOBAL_LIMIT,
) -> GlobalGraph:
    """Pass-2 candidate pool: approximate k-NN, refine, reverse-merge, truncate.

    At desk scale (n <= exact_limit) the init graph is exact brute-force k-NN,
    which refinement provably cannot improve, so the rounds are skipped; above
    it, random init plus ``refine_rounds`` of neighborhood descent (each node
    re-ranks itself against neighbors-of-neighbors, subsampled) is used.
    """
    n = store.count
    if n < 2:
        raise ValueError("global graph needs at least 2 nodes")
    if k_g is None:
        k_g = params.k_max
    X = store.X[:n]
    if n <= exact_limit:
        graph = exact_knn_graph(X, k_g)
    else:
        rng = np.random.default_rng([params.rng_seed, 1])
        graph, dists = _random_init_graph(X, k_g, rng)
        for _ in range(refine_rounds):
            graph, dists = _descent_round(X, graph, dists, descent_sample, rng)
    rows = _reverse_merge_topk(graph, X, k_g)
    return GlobalGraph(rows=rows, k_g=k_g)


def fuse_remote_edges(
    draft: LocalGraphDraft,
    global_graph: GlobalGraph,
    store: VectorStore,
    meta: BucketMeta,
    params: BuildParams,
    adjacency: np.ndarray,
) -> None:
    """Overwrite redundant slots with remote edges; keep local edges as fallback.

    Remote candidates are the cross-bucket entries of each node's global row,
    classified proximal when the scalar gap is within proximal_window of the
    total span. Up to round(proximal_fraction * k_remote) proximal edges are
    written first, global edges fill the remaining redundant slots, and any
    slot with no remote candidate keeps its pass-1 local edge (or stays
    empty).
    """
    n = store.count
    G = global_graph.rows[:n]
    k_g = G.shape[1]
    k_max = params.k_max
    safe = np.where(G == SENTINEL, 0, G).astype(np.int64)
    valid = G != SENTINEL
    bucket_u = meta.index_to_bucket[:n]
    bucket_v = meta.index_to_bucket[safe]
    s_u = store.scalars[:n].astype(np.float64)
    s_v = store.scalars[safe].astype(np.float64)
    cross = valid & (bucket_v != bucket_u[:, None])
    window = params.proximal_window * meta.span
    prox = cross & (np.abs(s_v - s_u[:, None]) <= window)
    glob = cross & ~prox

    quota = int(round(params.proximal_fraction * params.k_remote))
    sel_p = prox & (np.cumsum(prox, axis=1) <= quota)
    start = draft.necessary_counts[:n].astype(np.int64)
    room = k_max - start
    budget = room - sel_p.sum(axis=1)
    sel_g = glob & (np.cumsum(glob, axis=1) <= budget[:, None])
    sel = sel_p | sel_g

    # proximal first, then global, each in ascending distance (column order)
    cls = np.full(G.shape, 2, dtype=np.int64)
    cls[sel_g] = 1
    cls[sel_p] = 0
    key = cls * k_g + np.arange(k_g)[None, :]
    order = np.argsort(key, axis=1, kind="stable")
    picked = np.take_along_axis(G, order, axis=1)

    adjacency[:n] = draft.rows[:n]
    take = sel.sum(axis=1)
    max_take = int(take.max()) if n else 0
    if max_take:
        width = np.arange(max_take)
        cols = start[:, None] + width[None, :]
        ok = width[None, :] < take[:, None]
        r_idx = np.broadcast_to(np.arange(n)[:, None], cols.shape)[ok]
        adjacency[r_idx, cols[ok]] = picked[:, :max_take][ok]


def reinforce_reachability(index: GraphIndex) -> int:
    """Give every zero-in-degree node an incoming edge from its nearest neighbor.

    Rank-based truncation can leave a few outliers that nobody points at,
    which both fragments the strongly connected structure and makes those
    nodes unreachable by traversal. Each one is written into the row of its
    own nearest kept neighbor, evicting that row's farthest redundant edge
    (avoiding victims that are themselves barely referenced). Returns the
    number of links added.
    """
    n = index.count
    if n == 0:
        return 0
    adjacency = index.adjacency
    X = index.store.X
    k_local = index.params.k_local
    added = 0
    for _ in range(4):
        live = adjacency[:n]
        flat = live[live != SENTINEL].astype(np.int64)
        indeg = np.bincount(flat, minlength=n)
        orphans = np.flatnonzero(indeg == 0)
        if orphans.size == 0:
            break
        for u in orphans:
            row_u = adjacency[u]
            targets = row_u[row_u != SENTINEL].astype(np.int64)
            if targets.size == 0:
                continue
            v = int(targets[0])
            row = adjacency[v]
            empty = np.flatnonzero(row == SENTINEL)
            if empty.size:
                row[empty[0]] = u
            else:
                region = np.arange(k_local, len(row)) if len(row) > k_local else np.arange(len(row))
                current = row.astype(np.int64)
                d_vn = sq_distances(X[v], X[current])
                safe = region[indeg[current[region]] >= 2]
                pick_from = safe if safe.size else region
                pos = int(pick_from[np.argmax(d_vn[pick_from])])
                indeg[row[pos]] -= 1
                row[pos] = u
            indeg[u] += 1
            added += 1
    return added


def build_index(
    vectors: np.ndarray,
    scalars: np.ndarray,
    params: BuildParams,
    *,
    capacity: int | None = None,
    headroom: float = 2.0,
    bucket_strategy: str = "quantile",
    n_threads: int = 1,
    k_g: int | None = None,
    refine_rounds: int = 3,
) -> tuple[GraphIndex, BuildReport]:
    """Full static build: partition, append, pass 1, pass 2, fuse."""
    vectors = np.asarray(vectors, dtype=np.float32)
    scalars = np.asarray(scalars, dtype=np.float32)
    n, dim = vectors.shape
    if capacity is None:
        capacity = max(int(n * headroom), n)
    index = create_index(dim, capacity, params)
    index.meta = partition_buckets(
        scalars, params.bucket_capacity, strategy=bucket_strategy, capacity=capacity
    )
    # maps were populated by the partition; append only the raw rows
    append_batch(index.store, None, vectors, scalars)

    report = BuildReport(n=n, m=index.meta.m)
    t0 = time.perf_counter()
    draft = build_local_phase(index.store, index.meta, params, n_threads=n_threads)
    t1 = time.perf_counter()
    if n >= 2:
        gg = build_global_graph(index.store, params, k_g=k_g, refine_rounds=refine_rounds)
    else:
        gg = GlobalGraph(rows=np.full((n, params.k_max), SENTINEL, dtype="<u4"), k_g=params.k_max)
    t2 = time.perf_counter()
    fuse_remote_edges(draft, gg, index.store, index.meta, params, index.adjacency)
    reinforce_reachability(index)
    t3 = time.perf_counter()

    report.phase1_seconds = t1 - t0
    report.phase2_seconds = t2 - t1
    report.fuse_seconds = t3 - t2
    report.total_seconds = t3 - t0
    report.bucket_sizes = [len(b) for b in index.meta.bucket_to_index]
    report.isolated_nodes = len(draft.isolated)
    report.cross_bucket_edge_ratio = cross_bucket_ratio(index)
    return index, report


def cross_bucket_ratio(index: GraphIndex) -> float:
    n = index.count
    if n == 0 or index.meta is None:
        return 0.0
    adj = index.adjacency[:n]
    valid = adj != SENTINEL
    if not valid.any():
        return 0.0
    safe = np.where(valid, adj, 0).astype(np.int64)
    cross = valid & (index.meta.index_to_bucket[safe] != index.meta.index_to_bucket[:n][:, None])
    return float(cross.sum() / valid.sum())
