"""Command-line surface: gen, build, insert, query, bench, analyze."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import builder, dataio, evaluate, updater
from .core import BuildParams, RangePredicate, SearchParams
from .searcher import derive_query_seed, search


class _JsonErrorParser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        sys.exit(2)


def _build_parser() -> argparse.ArgumentParser:
    p = _JsonErrorParser(prog="bucketann", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--distribution", choices=["gaussian", "clusters"], default="gaussian")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-queries", type=int, default=0)
    g.add_argument("--out", required=True, help="output path prefix")

    b = sub.add_parser("build", help="build an index from fvecs + scalar sidecar")
    b.add_argument("--data", required=True)
    b.add_argument("--scalars", required=True)
    b.add_argument("--kmax", type=int, default=32)
    b.add_argument("--klocal", type=int, default=16)
    b.add_argument("--bucket-cap", type=int, default=10_000)
    b.add_argument("--proximal-frac", type=float, default=0.5)
    b.add_argument("--proximal-window", type=float, default=0.2)
    b.add_argument("--alpha", type=float, default=0.6)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--headroom", type=float, default=2.0)
    b.add_argument("--bucket-strategy", choices=["quantile", "width"], default="quantile")
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--report", help="write the build report JSON here")
    b.add_argument("--out", required=True)

    i = sub.add_parser("insert", help="append records to an existing index")
    i.add_argument("--index", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--scalars", required=True)
    i.add_argument("--batch-size", type=int, default=1000)
    i.add_argument("--alpha", type=float, default=0.6)
    i.add_argument("--out", help="defaults to overwriting --index")

    q = sub.add_parser("query", help="range-constrained search")
    q.add_argument("--index", required=True)
    q.add_argument("--queries", required=True)
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--range", default=None, help="l,u (defaults to the full span)")
    q.add_argument("--itopk", type=int, default=128)
    q.add_argument("--width", type=int, default=4)
    q.add_argument("--max-iter", type=int, default=50)
    q.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("bench", help="selectivity/parameter sweep with oracle recall")
    e.add_argument("--index", required=True)
    e.add_argument("--selectivities", default="0.01,0.1,0.2,1.0")
    e.add_argument("--grid", help="JSON file with itopk/search_width/max_iterations lists")
    e.add_argument("--queries", help="fvecs query file; defaults to sampled base rows")
    e.add_argument("--query-count", type=int, default=100)
    e.add_argument("--k", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--gt-cache", help="directory for cached ground truth")
    e.add_argument("--out", required=True, help="output path prefix (.csv and .json)")

    a = sub.add_parser("analyze", help="index diagnostics")
    a.add_argument("--index", required=True)
    a.add_argument("--scc", action="store_true", help="print the strongly-connected-component count")

    return p


def _cmd_gen(args) -> int:
    vectors, scalars = dataio.gen_synthetic(args.n, args.d, args.distribution, args.seed)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_fvecs(f"{prefix}.base.fvecs", vectors)
    dataio.write_scalars(f"{prefix}.scalars.f32", scalars)
    out = {"base": f"{prefix}.base.fvecs", "scalars": f"{prefix}.scalars.f32"}
    if args.n_queries > 0:
        q, _ = dataio.gen_synthetic(args.n_queries, args.d, args.distribution, args.seed + 1)
        dataio.write_fvecs(f"{prefix}.queries.fvecs", q)
        out["queries"] = f"{prefix}.queries.fvecs"
    print(json.dumps(out))
    return 0


def _cmd_build(args) -> int:
    vectors = dataio.read_fvecs(args.data)
    scalars = dataio.read_scalars(args.scalars)
    params = BuildParams(
        k_max=args.kmax,
        k_local=args.klocal,
        bucket_capacity=args.bucket_cap,
        proximal_fraction=args.proximal_frac,
        proximal_window=args.proximal_window,
        alpha=args.alpha,
        rng_seed=args.seed,
    )
    index, report = builder.build_index(
        vectors,
        scalars,
        params,
        headroom=args.headroom,
        bucket_strategy=args.bucket_strategy,
        n_threads=args.threads,
    )
    dataio.save_index(index, args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2))
    print(json.dumps({"indexed": index.count, "buckets": index.meta.m, "out": args.out}))
    return 0


def _cmd_insert(args) -> int:
    index = dataio.load_index(args.index)
    index.params = BuildParams(
        k_max=index.params.k_max,
        k_local=index.params.k_local,
        alpha=args.alpha,
        rng_seed=index.params.rng_seed,
    )
    vectors = dataio.read_fvecs(args.data)
    scalars = dataio.read_scalars(args.scalars)
    if len(vectors) != len(scalars):
        raise ValueError(f"{len(vectors)} vectors but {len(scalars)} scalars")
    totals: dict[str, float] = {}
    n_batches = 0
    for s in range(0, len(vectors), args.batch_size):
        e = min(s + args.batch_size, len(vectors))
        report = updater.insert_batch(index, vectors[s:e], scalars[s:e])
        n_batches += 1
        for key, val in report.to_dict().items():
            if isinstance(val, (int, float)):
                totals[key] = totals.get(key, 0) + val
    dataio.save_index(index, args.out or args.index)
    totals["batches"] = n_batches
    totals["count"] = index.count
    print(json.dumps(totals))
    return 0


def _cmd_query(args) -> int:
    index = dataio.load_index(args.index)
    queries = dataio.read_fvecs(args.queries)
    if args.range:
        lo, hi = (float(x) for x in args.range.split(","))
    else:
        n = index.count
        lo = float(index.store.scalars[:n].min())
        hi = float(index.store.scalars[:n].max())
    base = SearchParams(
        k=args.k,
        range=RangePredicate(lo, hi),
        itopk=args.itopk,
        search_width=args.width,
        max_iterations=args.max_iter,
        rng_seed=args.seed,
    )
    for i, q in enumerate(queries):
        from dataclasses import replace

        res = search(index, q, replace(base, rng_seed=derive_query_seed(args.seed, i)))
        print(
            json.dumps(
                {
                    "query": i,
                    "slots": [int(s) for s in res.slots],
                    "ids": [int(index.store.ids[s]) for s in res.slots],
                    "dists": [math.sqrt(d) for d in res.sq_dists],
                    "truncated": res.truncated,
                }
            )
        )
    return 0


def _cmd_bench(args) -> int:
    index = dataio.load_index(args.index)
    selectivities = [float(s) for s in args.selectivities.split(",")]
    grid = {}
    if args.grid:
        grid = json.loads(Path(args.grid).read_text())
    spec = evaluate.SweepSpec(
        selectivities=selectivities,
        itopk_values=grid.get("itopk", [128]),
        search_widths=grid.get("search_width", [4]),
        max_iterations_values=grid.get("max_iterations", [50]),
        k=grid.get("k", args.k),
        query_count=grid.get("query_count", args.query_count),
        rng_seed=grid.get("rng_seed", args.seed),
    )
    if args.queries:
        queries = dataio.read_fvecs(args.queries)
    else:
        rng = np.random.default_rng(args.seed)
        pick = rng.choice(index.count, size=min(spec.query_count, index.count), replace=False)
        queries = index.store.X[np.sort(pick)]
    cache = evaluate.GroundTruthCache(args.gt_cache)
    report = evaluate.run_sweep(index, queries, spec, gt_cache=cache)
    report.write_csv(f"{args.out}.csv")
    report.write_json(f"{args.out}.json")
    print(json.dumps({"rows": len(report.rows), "csv": f"{args.out}.csv"}))
    return 0


def _cmd_analyze(args) -> int:
    index = dataio.load_index(args.index)
    if args.scc:
        print(evaluate.scc_count(index.adjacency, index.count))
        return 0
    n = index.count
    valid = index.adjacency[:n] != np.uint32(0xFFFFFFFF)
    print(
        json.dumps(
            {
                "count": n,
                "capacity": index.store.capacity,
                "dim": index.dim,
                "buckets": index.meta.m if index.meta else 0,
                "mean_degree": float(valid.sum(axis=1).mean()) if n else 0.0,
                "cross_bucket_edge_ratio": builder.cross_bucket_ratio(index),
            }
        )
    )
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "build": _cmd_build,
    "insert": _cmd_insert,
    "query": _cmd_query,
    "bench": _cmd_bench,
    "analyze": _cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # surface every failure as machine-readable JSON
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
