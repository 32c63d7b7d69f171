"""Ground truth, recall, connectivity analysis, and the sweep harness."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RangePredicate, SearchParams, sq_distances
from .layout import SENTINEL, GraphIndex, VectorStore
from .searcher import derive_query_seed, search

_SCAN_BLOCK = 65_536


def brute_force_search(
    store: VectorStore,
    query: np.ndarray,
    k: int,
    rng: RangePredicate,
    live_count: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact range-filtered top-k by linear scan, ordered by (dist, slot).

    Returns fewer than k entries when the range admits fewer valid nodes.
    """
    n = store.count if live_count is None else live_count
    q = np.asarray(query, dtype=np.float32)
    scalars = store.scalars[:n]
    valid = np.flatnonzero((scalars >= rng.lower) & (scalars <= rng.upper))
    if valid.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    dists = np.empty(valid.size, dtype=np.float64)
    for s in range(0, valid.size, _SCAN_BLOCK):
        e = min(s + _SCAN_BLOCK, valid.size)
        dists[s:e] = sq_distances(q, store.X[valid[s:e]])
    order = np.argsort(dists, kind="stable")[:k]
    return valid[order].astype(np.int64), dists[order]


def recall_at_k(result_slots, truth_slots, k: int) -> float:
    """|result ∩ truth| / k; uses min(k, |truth|) when the truth is short.

    Returns NaN when the ground truth is empty (nothing was retrievable).
    """
    truth = set(int(s) for s in truth_slots)
    if not truth:
        return float("nan")
    denom = min(k, len(truth))
    hits = sum(1 for s in result_slots if int(s) in truth)
    return hits / denom


def scc_count(adjacency: np.ndarray, live_count: int, sentinel=SENTINEL) -> int:
    """Number of strongly connected components (iterative Tarjan).

    Sentinel entries and edges beyond ``live_count`` are ignored. The
    explicit stack keeps million-node graphs safe from recursion limits.
    """
    n = live_count
    if n == 0:
        return 0
    adj = adjacency[:n]
    mask = (adj != sentinel) & (adj.astype(np.int64) < n)
    counts = mask.sum(axis=1)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = adj[mask].astype(np.int64)

    index = np.full(n, -1, dtype=np.int64)
    lowlink = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=bool)
    tarjan_stack: list[int] = []
    counter = 0
    n_components = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            u, pi = work.pop()
            if pi == 0:
                index[u] = lowlink[u] = counter
                counter += 1
                tarjan_stack.append(u)
                on_stack[u] = True
            recursed = False
            lo, hi = offsets[u] + pi, offsets[u + 1]
            for i in range(lo, hi):
                v = flat[i]
                if index[v] == -1:
                    work.append((u, i - offsets[u] + 1))
                    work.append((v, 0))
                    recursed = True
                    break
                if on_stack[v]:
                    if index[v] < lowlink[u]:
                        lowlink[u] = index[v]
            if recursed:
                continue
            if lowlink[u] == index[u]:
                n_components += 1
                while True:
                    w = tarjan_stack.pop()
                    on_stack[w] = False
                    if w == u:
                        break
            if work:
                parent = work[-1][0]
                if lowlink[u] < lowlink[parent]:
                    lowlink[parent] = lowlink[u]
    return n_components


def generate_ranges(
    scalars: np.ndarray,
    selectivity: float,
    n_queries: int,
    rng_seed: int,
) -> list[RangePredicate]:
    """Fixed-width windows placed uniformly at random over the scalar span."""
    lo = float(np.min(scalars))
    hi = float(np.max(scalars))
    span = hi - lo
    width = selectivity * span
    rng = np.random.default_rng([rng_seed, 3, int(round(selectivity * 1_000_000))])
    starts = lo + rng.random(n_queries) * (span - width)
    return [RangePredicate(float(s), float(s + width)) for s in starts]


class GroundTruthCache:
    """Disk + memory cache of exact results keyed by data, queries, and ranges."""

    MAGIC = b"GTC1"

    def __init__(self, directory: str | Path | None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._memo: dict[str, list[np.ndarray]] = {}

    def _key(self, store, queries, k, ranges, live_count) -> str:
        n = store.count if live_count is None else live_count
        h = hashlib.sha256()
        h.update(store.X[:n].tobytes())
        h.update(store.scalars[:n].tobytes())
        h.update(np.asarray(queries, dtype=np.float32).tobytes())
        h.update(struct.pack("<q", k))
        for r in ranges:
            h.update(struct.pack("<dd", r.lower, r.upper))
        return h.hexdigest()

    def get(
        self,
        store: VectorStore,
        queries: np.ndarray,
        k: int,
        ranges: list[RangePredicate],
        live_count: int | None = None,
    ) -> list[np.ndarray]:
        key = self._key(store, queries, k, ranges, live_count)
        if key in self._memo:
            return self._memo[key]
        path = self.directory / f"{key}.gt" if self.directory else None
        if path and path.exists():
            truth = self._read(path)
        else:
            truth = [
                brute_force_search(store, q, k, r, live_count=live_count)[0]
                for q, r in zip(np.asarray(queries, dtype=np.float32), ranges)
            ]
            if path:
                self._write(path, truth, k)
        self._memo[key] = truth
        return truth

    def _write(self, path: Path, truth: list[np.ndarray], k: int) -> None:
        with open(path, "wb") as f:
            f.write(self.MAGIC)
            f.write(struct.pack("<II", len(truth), k))
            for slots in truth:
                f.write(struct.pack("<I", len(slots)))
                f.write(np.asarray(slots, dtype="<u4").tobytes())

    def _read(self, path: Path) -> list[np.ndarray]:
        raw = path.read_bytes()
        if raw[:4] != self.MAGIC:
            raise ValueError(f"not a ground-truth cache file: {path}")
        nq, _k = struct.unpack_from("<II", raw, 4)
        off = 12
        out = []
        for _ in range(nq):
            (m,) = struct.unpack_from("<I", raw, off)
            off += 4
            out.append(np.frombuffer(raw, dtype="<u4", count=m, offset=off).astype(np.int64))
            off += 4 * m
        return out


@dataclass
class SweepSpec:
    """Cartesian grid for the bench harness."""

    selectivities: list[float] = field(default_factory=lambda: [0.01, 0.1, 0.2, 1.0])
    itopk_values: list[int] = field(default_factory=lambda: [128])
    search_widths: list[int] = field(default_factory=lambda: [4])
    max_iterations_values: list[int] = field(default_factory=lambda: [50])
    k: int = 10
    query_count: int = 100
    rng_seed: int = 0


_CSV_COLUMNS = [
    "selectivity",
    "k",
    "itopk",
    "search_width",
    "max_iterations",
    "recall",
    "qps",
    "mean_latency_us",
    "p99_latency_us",
    "dist_evals_per_query",
    "scc",
]


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=_CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.rows, indent=2))


def run_sweep(
    index: GraphIndex,
    queries: np.ndarray,
    spec: SweepSpec,
    *,
    gt_cache: GroundTruthCache | None = None,
) -> EvalReport:
    """Evaluate the grid; recall comes from the exact oracle per query.

    Ranges are drawn once per selectivity (seeded) so every parameter cell
    of one selectivity shares queries, ranges, and cached ground truth.
    """
    queries = np.asarray(queries, dtype=np.float32)[: spec.query_count]
    cache = gt_cache or GroundTruthCache(None)
    n = index.count
    scalars = index.store.scalars[:n]
    scc = scc_count(index.adjacency, n)
    report = EvalReport()
    for sel in spec.selectivities:
        ranges = generate_ranges(scalars, sel, len(queries), spec.rng_seed)
        truth = cache.get(index.store, queries, spec.k, ranges)
        for itopk in spec.itopk_values:
            for width in spec.search_widths:
                for max_iter in spec.max_iterations_values:
                    t0 = time.perf_counter()
                    results = []
                    for i, (q, r) in enumerate(zip(queries, ranges)):
                        params = SearchParams(
                            k=spec.k,
                            range=r,
                            itopk=itopk,
                            search_width=width,
                            max_iterations=max_iter,
                            rng_seed=derive_query_seed(spec.rng_seed, i),
                        )
                        results.append(search(index, q, params))
                    elapsed = time.perf_counter() - t0
                    recalls = [
                        recall_at_k(res.slots, t, spec.k)
                        for res, t in zip(results, truth)
                    ]
                    lat = np.array([res.stats.elapsed_s for res in results])
                    evals = np.array([res.stats.dist_evals for res in results])
                    report.rows.append(
                        {
                            "selectivity": sel,
                            "k": spec.k,
                            "itopk": itopk,
                            "search_width": width,
                            "max_iterations": max_iter,
                            "recall": float(np.nanmean(recalls)),
                            "qps": len(queries) / elapsed if elapsed > 0 else 0.0,
                            "mean_latency_us": float(lat.mean() * 1e6),
                            "p99_latency_us": float(np.percentile(lat, 99) * 1e6),
                            "dist_evals_per_query": float(evals.mean()),
                            "scc": scc,
                        }
                    )
    return report
