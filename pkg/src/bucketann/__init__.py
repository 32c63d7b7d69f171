"""Range-filtered ANN search over a bucket-partitioned fixed-degree graph."""

from .core import (
    BuildParams,
    CapacityError,
    DimensionMismatchError,
    RangePredicate,
    SearchParams,
    VectorRecord,
    sq_distance,
    sq_distances,
)
from .layout import (
    SENTINEL,
    BucketMeta,
    GraphIndex,
    VectorStore,
    append_batch,
    bucket_of,
    create_index,
    intersecting_buckets,
    partition_buckets,
)
from .builder import BuildReport, build_index, build_global_graph, build_local_phase
from .updater import InsertReport, insert_batch, select_neighbors, try_rewire
from .searcher import SearchResult, search, search_batch
from .evaluate import (
    EvalReport,
    GroundTruthCache,
    SweepSpec,
    brute_force_search,
    recall_at_k,
    run_sweep,
    scc_count,
)
from .dataio import (
    gen_synthetic,
    load_index,
    read_fvecs,
    read_scalars,
    save_index,
    write_fvecs,
    write_scalars,
)

__version__ = "0.1.0"

__all__ = [
    "BuildParams",
    "BuildReport",
    "BucketMeta",
    "CapacityError",
    "DimensionMismatchError",
    "EvalReport",
    "GraphIndex",
    "GroundTruthCache",
    "InsertReport",
    "RangePredicate",
    "SENTINEL",
    "SearchParams",
    "SearchResult",
    "SweepSpec",
    "VectorRecord",
    "VectorStore",
    "append_batch",
    "brute_force_search",
    "bucket_of",
    "build_global_graph",
    "build_index",
    "build_local_phase",
    "create_index",
    "gen_synthetic",
    "insert_batch",
    "intersecting_buckets",
    "load_index",
    "partition_buckets",
    "read_fvecs",
    "read_scalars",
    "recall_at_k",
    "run_sweep",
    "save_index",
    "scc_count",
    "search",
    "search_batch",
    "select_neighbors",
    "sq_distance",
    "sq_distances",
    "try_rewire",
    "write_fvecs",
    "write_scalars",
]
