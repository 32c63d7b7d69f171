import numpy as np
import pytest

from bucketann import (
    BuildParams,
    SENTINEL,
    build_global_graph,
    build_index,
    build_local_phase,
    sq_distance,
)
from bucketann.builder import (
    GlobalGraph,
    LocalGraphDraft,
    exact_knn_graph,
    fuse_remote_edges,
    interleave_merge,
    reinforce_reachability,
    topk_ids_by_distance,
)
from bucketann.dataio import gen_synthetic
from bucketann.layout import BucketMeta, VectorStore, append_batch, new_adjacency, partition_buckets


def exact_knn_oracle(X, k):
    """Independent all-pairs oracle: f64 distances, (dist, slot) order."""
    n = len(X)
    out = []
    for i in range(n):
        d = np.array([sq_distance(X[i], X[j]) if j != i else np.inf for j in range(n)])
        order = np.lexsort((np.arange(n), d))[: min(k, n - 1)]
        out.append(order)
    return np.array(out)


def build_store(vectors, scalars, bucket_capacity, params=None):
    params = params or BuildParams()
    vectors = np.asarray(vectors, dtype=np.float32)
    scalars = np.asarray(scalars, dtype=np.float32)
    store = VectorStore(len(vectors), vectors.shape[1])
    meta = partition_buckets(scalars, bucket_capacity, capacity=len(vectors))
    append_batch(store, None, vectors, scalars)
    return store, meta, params


def test_local_phase_three_collinear_points():
    vectors = np.array([[0.0], [1.0], [3.0]], dtype=np.float32)
    store, meta, params = build_store(vectors, [0.1, 0.2, 0.3], 10, BuildParams(k_max=2, k_local=1))
    draft = build_local_phase(store, meta, params)
    assert list(draft.forward_rows[0]) == [1, 2]
    assert list(draft.forward_rows[1]) == [0, 2]
    assert list(draft.forward_rows[2]) == [1, 0]


def test_local_phase_forward_lists_match_oracle_exactly():
    rng = np.random.default_rng(7)
    vectors = rng.standard_normal((200, 8)).astype(np.float32)
    scalars = rng.random(200, dtype=np.float32)
    store, meta, params = build_store(vectors, scalars, 200, BuildParams(k_max=32, k_local=16))
    draft = build_local_phase(store, meta, params)
    want = exact_knn_oracle(vectors, 32)
    assert np.array_equal(draft.forward_rows.astype(np.int64), want)


def test_local_phase_merged_rows_match_reference_merge():
    rng = np.random.default_rng(8)
    vectors = rng.standard_normal((40, 4)).astype(np.float32)
    scalars = rng.random(40, dtype=np.float32)
    params = BuildParams(k_max=8, k_local=4)
    store, meta, params = build_store(vectors, scalars, 40, params)
    draft = build_local_phase(store, meta, params)
    fwd = exact_knn_oracle(vectors, 8)
    # reverse lists per node, (dist, slot)-ordered
    rev = {u: [] for u in range(40)}
    for u in range(40):
        for v in fwd[u]:
            rev[int(v)].append((sq_distance(vectors[v], vectors[u]), u))
    for u in range(40):
        reference = interleave_merge(
            [int(x) for x in fwd[u]],
            [s for _, s in sorted(rev[u])],
            8,
        )
        got = [int(x) for x in draft.rows[u] if x != SENTINEL]
        assert got == reference


def test_interleave_merge_dedups_in_order():
    assert interleave_merge([1, 2], [2, 3], 3) == [1, 2, 3]
    assert interleave_merge([1, 2], [2, 3], 2) == [1, 2]
    assert interleave_merge([], [5, 6], 4) == [5, 6]
    assert interleave_merge([7], [], 4) == [7]


def test_local_phase_isolated_singleton_bucket():
    vectors = np.array([[0.0], [1.0], [1.1]], dtype=np.float32)
    scalars = np.array([0.05, 0.8, 0.9], dtype=np.float32)
    store = VectorStore(3, 1)
    meta = BucketMeta(
        boundaries=np.array([0.0, 0.5, 1.0], dtype=np.float32),
        index_to_bucket=np.array([0, 1, 1], dtype=np.int32),
        bucket_to_index=[[0], [1, 2]],
    )
    append_batch(store, None, vectors, scalars)
    draft = build_local_phase(store, meta, BuildParams(k_max=2, k_local=1))
    assert draft.isolated == [0]
    assert np.all(draft.rows[0] == SENTINEL)


def test_global_graph_three_points_is_complete():
    vectors = np.array([[0.0, 0], [1, 0], [0, 1]], dtype=np.float32)
    store, meta, params = build_store(vectors, [0.1, 0.5, 0.9], 10, BuildParams(k_max=2, k_local=1))
    gg = build_global_graph(store, params, k_g=2)
    rows = {tuple(sorted(int(x) for x in gg.rows[i])) for i in range(3)}
    assert rows == {(1, 2), (0, 2), (0, 1)}


def test_global_graph_descent_path_overlaps_exact_oracle():
    rng = np.random.default_rng(9)
    vectors = rng.standard_normal((2000, 16)).astype(np.float32)
    scalars = rng.random(2000, dtype=np.float32)
    store, meta, params = build_store(vectors, scalars, 500)
    gg = build_global_graph(store, params, k_g=32, refine_rounds=3, exact_limit=0)
    exact = exact_knn_graph(vectors, 32)
    overlaps = []
    for u in range(2000):
        got = set(int(x) for x in gg.rows[u] if x != SENTINEL)
        overlaps.append(len(got & set(int(x) for x in exact[u])) / 32)
    assert np.mean(overlaps) >= 0.95


def test_global_graph_zero_rounds_is_init_plus_reverse_merge():
    rng = np.random.default_rng(10)
    vectors = rng.standard_normal((300, 8)).astype(np.float32)
    scalars = rng.random(300, dtype=np.float32)
    store, meta, params = build_store(vectors, scalars, 100)
    from bucketann.builder import _random_init_graph, _reverse_merge_topk

    gg = build_global_graph(store, params, k_g=8, refine_rounds=0, exact_limit=0)
    rng2 = np.random.default_rng([params.rng_seed, 1])
    init, _ = _random_init_graph(store.X[:300], 8, rng2)
    want = _reverse_merge_topk(init, store.X[:300], 8)
    assert np.array_equal(gg.rows, want)


def test_topk_ids_handles_boundary_ties_by_lower_column():
    d = np.array([[1.0, 0.5, 0.5, 0.5, 2.0]])
    ids = topk_ids_by_distance(d, 2)
    assert list(ids[0]) == [1, 2]


def make_fuse_fixture():
    # node 0 in bucket 0 (s=0.5); 1..3 in bucket 1 with scalars .65/.9/.55
    vectors = np.array([[0.0], [1.0], [2.0], [3.0]], dtype=np.float32)
    scalars = np.array([0.5, 0.65, 0.9, 0.55], dtype=np.float32)
    store = VectorStore(4, 1)
    meta = BucketMeta(
        boundaries=np.array([0.0, 0.6, 1.0], dtype=np.float32),
        index_to_bucket=np.array([0, 1, 1, 0], dtype=np.int32),
        bucket_to_index=[[0, 3], [1, 2]],
    )
    append_batch(store, None, vectors, scalars)
    return store, meta


def test_fuse_classifies_proximal_vs_global_at_20pct_window():
    store, meta = make_fuse_fixture()
    params = BuildParams(k_max=4, k_local=2, proximal_fraction=0.5, proximal_window=0.2)
    draft = LocalGraphDraft(
        forward_rows=np.full((4, 4), SENTINEL, dtype="<u4"),
        rows=np.full((4, 4), SENTINEL, dtype="<u4"),
        necessary_counts=np.array([2, 0, 0, 0], dtype=np.int32),
    )
    draft.rows[0, :2] = [3, 3]  # placeholder necessary entries
    gg = GlobalGraph(rows=np.full((4, 4), SENTINEL, dtype="<u4"), k_g=4)
    gg.rows[0, :2] = [1, 2]  # candidates ascending by distance
    adjacency = new_adjacency(4, 4)
    fuse_remote_edges(draft, gg, store, meta, params, adjacency)
    # |0.65-0.5| <= 0.2*span -> proximal (first), |0.9-0.5| > 0.2 -> global (second)
    assert list(adjacency[0]) == [3, 3, 1, 2]


def test_fuse_keeps_local_fallback_when_global_row_is_intra_bucket():
    store, meta = make_fuse_fixture()
    params = BuildParams(k_max=4, k_local=2)
    draft = LocalGraphDraft(
        forward_rows=np.full((4, 4), SENTINEL, dtype="<u4"),
        rows=np.full((4, 4), SENTINEL, dtype="<u4"),
        necessary_counts=np.array([2, 0, 0, 0], dtype=np.int32),
    )
    draft.rows[0] = [3, 3, 3, 3]
    gg = GlobalGraph(rows=np.full((4, 4), SENTINEL, dtype="<u4"), k_g=4)
    gg.rows[0, 0] = 3  # same bucket as node 0: not a remote candidate
    adjacency = new_adjacency(4, 4)
    fuse_remote_edges(draft, gg, store, meta, params, adjacency)
    assert list(adjacency[0]) == [3, 3, 3, 3]


def test_full_build_cross_bucket_edges_present_and_fixed_degree():
    vectors, scalars = gen_synthetic(3000, 12, "clusters", rng_seed=3)
    params = BuildParams(k_max=16, k_local=8, bucket_capacity=300)
    index, report = build_index(vectors, scalars, params)
    n = index.count
    adj = index.adjacency[:n]
    assert adj.shape == (n, 16)
    i2b = index.meta.index_to_bucket
    gg_rows = build_global_graph(index.store, params, k_g=16).rows
    for u in range(0, n, 97):
        row = adj[u]
        live = row[row != SENTINEL].astype(np.int64)
        # no self loops, no duplicates
        assert u not in live
        assert len(set(live.tolist())) == len(live)
        # necessary prefix is intra-bucket
        nec = row[:8][row[:8] != SENTINEL].astype(np.int64)
        assert np.all(i2b[nec] == i2b[u])
        g_row = gg_rows[u]
        g_live = g_row[g_row != SENTINEL].astype(np.int64)
        if np.any(i2b[g_live] != i2b[u]):
            assert np.any(i2b[live] != i2b[u])
    assert report.bucket_sizes and sum(report.bucket_sizes) == n
    assert report.total_seconds > 0


def test_cross_bucket_edges_sit_at_or_after_k_local():
    vectors, scalars = gen_synthetic(2000, 8, rng_seed=4)
    params = BuildParams(k_max=16, k_local=8, bucket_capacity=500)
    index, _ = build_index(vectors, scalars, params)
    i2b = index.meta.index_to_bucket
    adj = index.adjacency[: index.count]
    for u in range(0, index.count, 53):
        row = adj[u]
        for pos in range(8):
            if row[pos] != SENTINEL:
                assert i2b[row[pos]] == i2b[u]


def test_reinforce_reachability_removes_zero_indegree():
    vectors, scalars = gen_synthetic(4000, 24, rng_seed=5)
    params = BuildParams(k_max=16, k_local=8, bucket_capacity=400)
    index, _ = build_index(vectors, scalars, params)
    n = index.count
    adj = index.adjacency[:n]
    flat = adj[adj != SENTINEL].astype(np.int64)
    indeg = np.bincount(flat, minlength=n)
    assert (indeg == 0).sum() == 0
    assert reinforce_reachability(index) == 0  # already repaired during build
