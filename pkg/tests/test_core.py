import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bucketann import (
    BuildParams,
    DimensionMismatchError,
    RangePredicate,
    SearchParams,
    VectorRecord,
    sq_distance,
    sq_distances,
)


def naive_sq_distance(a, b):
    """Independent oracle: per-coordinate summation in plain Python floats."""
    total = 0.0
    for x, y in zip(a, b):
        diff = float(x) - float(y)
        total += diff * diff
    return total


def test_distance_identity():
    assert sq_distance(np.zeros(3), np.zeros(3)) == 0.0


def test_distance_3_4_5_triangle():
    assert sq_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 25.0


def test_distance_matches_naive_oracle_16d():
    rng = np.random.default_rng(42)
    a = rng.standard_normal(16).astype(np.float32)
    b = rng.standard_normal(16).astype(np.float32)
    got = sq_distance(a, b)
    want = naive_sq_distance(a, b)
    assert got == pytest.approx(want, rel=1e-6)


def test_distance_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        sq_distance(np.zeros(3), np.zeros(4))


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    q = rng.standard_normal(8).astype(np.float32)
    rows = rng.standard_normal((20, 8)).astype(np.float32)
    batch = sq_distances(q, rows)
    for i in range(20):
        assert batch[i] == sq_distance(q, rows[i])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_distance_bitwise_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(24).astype(np.float32)
    b = rng.standard_normal(24).astype(np.float32)
    assert sq_distance(a, b) == sq_distance(b, a)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_distance_nonnegative_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(8).astype(np.float32)
    b = a + np.float32(1e-3)
    assert sq_distance(a, a) == 0.0
    assert sq_distance(a, b) > 0.0


def test_topk_prefix_monotonicity():
    # with the (dist, slot) tie-break the top-k order is a fixed total order
    rng = np.random.default_rng(3)
    d = rng.random(50)
    d[10] = d[20]  # manufacture a tie
    order = np.lexsort((np.arange(50), d))
    for k in range(1, 50):
        assert list(order[:k]) == list(order[: k + 1])[:k]


def test_range_predicate_validation():
    RangePredicate(0.0, 0.0)
    with pytest.raises(ValueError):
        RangePredicate(1.0, 0.0)


def test_range_contains():
    r = RangePredicate(0.25, 0.75)
    assert r.contains(0.25) and r.contains(0.75) and r.contains(0.5)
    assert not r.contains(0.24) and not r.contains(0.76)


def test_vector_record_rejects_nonfinite_scalar():
    with pytest.raises(ValueError):
        VectorRecord(vector=np.zeros(2, dtype=np.float32), scalar=float("nan"))


def test_build_params_validation():
    p = BuildParams(k_max=32, k_local=16)
    assert p.k_remote == 16
    with pytest.raises(ValueError):
        BuildParams(k_max=8, k_local=9)
    with pytest.raises(ValueError):
        BuildParams(k_local=0)
    with pytest.raises(ValueError):
        BuildParams(alpha=0.0)
    with pytest.raises(ValueError):
        BuildParams(alpha=1.2)
    with pytest.raises(ValueError):
        BuildParams(proximal_window=0.0)


def test_search_params_validation():
    p = SearchParams(k=10, itopk=128)
    assert p.effective_seed_count == 32
    assert SearchParams(itopk=16).effective_seed_count == 16
    assert SearchParams(seed_count=5).effective_seed_count == 5
    with pytest.raises(ValueError):
        SearchParams(k=200, itopk=128)
    with pytest.raises(ValueError):
        SearchParams(search_width=0)
