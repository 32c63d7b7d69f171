import numpy as np
import pytest

from bucketann import (
    BuildParams,
    RangePredicate,
    SearchParams,
    brute_force_search,
    build_index,
    recall_at_k,
    search,
    search_batch,
    sq_distance,
)
from bucketann.dataio import gen_synthetic
from bucketann.evaluate import generate_ranges
from bucketann.searcher import CandidateQueue, derive_query_seed


@pytest.fixture(scope="module")
def small_index():
    vectors, scalars = gen_synthetic(2000, 8, "clusters", rng_seed=1)
    params = BuildParams(k_max=16, k_local=8, bucket_capacity=250)
    index, _ = build_index(vectors, scalars, params)
    return index, vectors, scalars


@pytest.fixture(scope="module")
def mid_index():
    vectors, scalars = gen_synthetic(10_000 + 120, 16, "clusters", rng_seed=2)
    params = BuildParams(k_max=32, k_local=16, bucket_capacity=1000)
    index, _ = build_index(vectors[:10_000], scalars[:10_000], params)
    return index, vectors[10_000:], scalars[:10_000]


def test_exact_hit_returns_stored_slot(small_index):
    index, vectors, scalars = small_index
    q = vectors[123]
    res = search(index, q, SearchParams(k=1, itopk=32))
    assert res.slots[0] == 123
    assert res.sq_dists[0] == 0.0
    assert not res.truncated


def test_range_excluding_everything_returns_empty(small_index):
    index, vectors, _ = small_index
    res = search(index, vectors[0], SearchParams(k=5, range=RangePredicate(2.0, 3.0)))
    assert len(res) == 0
    assert not res.truncated


def test_truncated_flag_when_fewer_valid_than_k(small_index):
    index, vectors, scalars = small_index
    order = np.sort(scalars)
    rng = RangePredicate(float(order[0]), float(order[2]))  # exactly 3 valid nodes
    res = search(index, vectors[0], SearchParams(k=10, range=rng, itopk=64))
    assert 0 < len(res) < 10
    assert res.truncated


def test_recall_at_10pct_selectivity_beats_oracle_bar(mid_index):
    index, queries, scalars = mid_index
    ranges = generate_ranges(scalars, 0.10, len(queries), 7)
    recalls = []
    for i, (q, r) in enumerate(zip(queries, ranges)):
        p = SearchParams(
            k=10, range=r, itopk=128, search_width=4, max_iterations=50,
            rng_seed=derive_query_seed(7, i),
        )
        res = search(index, q, p)
        truth, _ = brute_force_search(index.store, q, 10, r)
        recalls.append(recall_at_k(res.slots, truth, 10))
    assert np.nanmean(recalls) >= 0.95


def test_range_and_distance_soundness(mid_index):
    index, queries, scalars = mid_index
    ranges = generate_ranges(scalars, 0.2, len(queries), 11)
    for i, (q, r) in enumerate(zip(queries, ranges)):
        res = search(index, q, SearchParams(k=10, range=r, rng_seed=i))
        s = index.store.scalars[res.slots]
        assert np.all((s >= r.lower) & (s <= r.upper))
        for slot, d in zip(res.slots, res.sq_dists):
            assert d == sq_distance(np.asarray(q, np.float32), index.store.X[slot])


def test_precheck_economy_counters(mid_index):
    index, queries, scalars = mid_index
    ranges = generate_ranges(scalars, 0.15, len(queries), 13)
    saw_rejections = 0
    for i, (q, r) in enumerate(zip(queries, ranges)):
        res = search(index, q, SearchParams(k=10, range=r, rng_seed=i))
        st = res.stats
        assert st.dist_evals == st.seed_evals + st.in_range_new
        saw_rejections += st.precheck_rejected
    assert saw_rejections > 0  # the filter must actually be exercised


def test_full_range_equivalent_to_unfiltered(mid_index):
    index, queries, scalars = mid_index
    span = RangePredicate(float(scalars.min()), float(scalars.max()))
    unbounded = RangePredicate(-np.inf, np.inf)
    for i, q in enumerate(queries[:25]):
        a = search(index, q, SearchParams(k=10, range=span, rng_seed=i))
        b = search(index, q, SearchParams(k=10, range=unbounded, rng_seed=i))
        assert np.array_equal(a.slots, b.slots)
        assert np.array_equal(a.sq_dists, b.sq_dists)
        assert a.stats.precheck_rejected == 0
        assert b.stats.precheck_rejected == 0


def test_batch_matches_serial_with_derived_seeds(mid_index):
    index, queries, scalars = mid_index
    qs = queries[:40]
    params = SearchParams(k=5, itopk=64, rng_seed=21)
    batch = search_batch(index, qs, params)
    for i, q in enumerate(qs):
        solo = search(
            index, q,
            SearchParams(k=5, itopk=64, rng_seed=derive_query_seed(21, i)),
        )
        assert np.array_equal(batch[i].slots, solo.slots)
        assert np.array_equal(batch[i].sq_dists, solo.sq_dists)


def test_batch_edge_sizes(mid_index):
    index, queries, _ = mid_index
    assert search_batch(index, queries[:0], SearchParams()) == []
    one = search_batch(index, queries[:1], SearchParams())
    assert len(one) == 1 and len(one[0].slots) > 0


def test_monotone_recall_in_itopk_and_iterations(mid_index):
    index, queries, scalars = mid_index
    ranges = generate_ranges(scalars, 0.2, len(queries), 17)
    truths = [
        brute_force_search(index.store, q, 10, r)[0]
        for q, r in zip(queries, ranges)
    ]

    def mean_recall(itopk, max_iter):
        vals = []
        for i, (q, r) in enumerate(zip(queries, ranges)):
            p = SearchParams(
                k=10, range=r, itopk=itopk, max_iterations=max_iter,
                rng_seed=derive_query_seed(3, i),
            )
            vals.append(recall_at_k(search(index, q, p).slots, truths[i], 10))
        return float(np.nanmean(vals))

    by_itopk = [mean_recall(it, 50) for it in (16, 64, 128)]
    assert by_itopk[0] <= by_itopk[1] + 0.005
    assert by_itopk[1] <= by_itopk[2] + 0.005
    by_iters = [mean_recall(128, mi) for mi in (2, 10, 50)]
    assert by_iters[0] <= by_iters[1] + 0.005
    assert by_iters[1] <= by_iters[2] + 0.005


def test_search_on_empty_index():
    from bucketann import create_index

    index = create_index(4, 16, BuildParams(k_max=4, k_local=2))
    res = search(index, np.zeros(4, dtype=np.float32), SearchParams(k=3, itopk=8))
    assert len(res) == 0 and not res.truncated


def test_candidate_queue_orders_and_bounds():
    q = CandidateQueue(4)
    q.admit(np.array([5, 3]), np.array([2.0, 1.0]))
    q.admit(np.array([9, 7, 8]), np.array([0.5, 1.0, 3.0]))
    assert list(q.slots) == [9, 3, 7, 5]  # (dist, slot) ascending, capacity 4
    assert list(q.dists) == [0.5, 1.0, 1.0, 2.0]
    fr = q.frontier(2)
    assert list(fr) == [0, 1]
    q.expanded[fr] = True
    assert list(q.frontier(2)) == [2, 3]


def test_queue_never_readmits_scored_nodes(mid_index):
    index, queries, scalars = mid_index
    res = search(index, queries[0], SearchParams(k=10, itopk=32, rng_seed=5))
    assert len(np.unique(res.slots)) == len(res.slots)
