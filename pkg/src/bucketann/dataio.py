"""File formats: fvecs vectors, the scalar sidecar, and the index container."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import BuildParams
from .layout import BucketMeta, GraphIndex, VectorStore, new_adjacency

CONTAINER_MAGIC = b"GRAB"
CONTAINER_VERSION = 1
METRIC_SQ_EUCLIDEAN = 0


class FvecsFormatError(ValueError):
    """Malformed fvecs content; ``offset`` points at the offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def read_fvecs(path: str | Path) -> np.ndarray:
    """Read an fvecs file: per record an i32 dimension header then d floats."""
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        return np.zeros((0, 0), dtype=np.float32)
    if len(raw) < 4:
        raise FvecsFormatError("file shorter than one dimension header", 0)
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d <= 0:
        raise FvecsFormatError(f"invalid dimension {d}", 0)
    record = 4 + 4 * d
    if len(raw) % record != 0:
        raise FvecsFormatError(
            f"truncated record: file size {len(raw)} not a multiple of {record}",
            (len(raw) // record) * record,
        )
    n = len(raw) // record
    table = np.frombuffer(raw, dtype="<i4").reshape(n, d + 1)
    dims = table[:, 0]
    bad = np.flatnonzero(dims != d)
    if bad.size:
        raise FvecsFormatError(
            f"inconsistent dimension {dims[bad[0]]} (expected {d})",
            int(bad[0]) * record,
        )
    return table[:, 1:].view("<f4").copy()


def write_fvecs(path: str | Path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    n, d = vectors.shape
    table = np.empty((n, d + 1), dtype="<i4")
    table[:, 0] = d
    table[:, 1:] = vectors.view("<i4")
    Path(path).write_bytes(table.tobytes())


def read_scalars(path: str | Path) -> np.ndarray:
    """Scalar sidecar: u64 count header then that many little-endian f32."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"scalar sidecar too short: {len(raw)} bytes")
    (n,) = struct.unpack_from("<Q", raw, 0)
    if len(raw) != 8 + 4 * n:
        raise ValueError(f"scalar sidecar header says {n} values, file has {(len(raw) - 8) // 4}")
    return np.frombuffer(raw, dtype="<f4", count=n, offset=8).copy()


def write_scalars(path: str | Path, scalars: np.ndarray) -> None:
    scalars = np.asarray(scalars, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(scalars)))
        f.write(scalars.tobytes())


def gen_synthetic(
    n: int,
    d: int,
    distribution: str = "gaussian",
    rng_seed: int = 0,
    n_clusters: int = 64,
    cluster_scale: float = 1.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic vectors plus uniform-[0,1] scalar predicates, seeded.

    ``gaussian`` draws standard normal coordinates; ``clusters`` draws a
    Gaussian mixture whose centers sit cluster_scale standard deviations
    out, giving the low intrinsic dimensionality typical of real embedding
    sets while keeping the blobs overlapping.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if distribution == "gaussian":
        vectors = rng.standard_normal((n, d), dtype=np.float32)
    elif distribution == "clusters":
        centers = rng.standard_normal((n_clusters, d)).astype(np.float32) * cluster_scale
        assign = rng.integers(0, n_clusters, size=n)
        vectors = centers[assign] + rng.standard_normal((n, d), dtype=np.float32)
    else:
        raise ValueError(f"unknown distribution: {distribution!r}")
    scalars = rng.random(n, dtype=np.float32)
    return vectors, scalars


_HEADER = struct.Struct("<4sIQQIIIIB")


def save_index(index: GraphIndex, path: str | Path) -> None:
    """Write the binary container (little-endian throughout)."""
    if index.meta is None:
        raise ValueError("cannot save an index that has never been built")
    store = index.store
    n = store.count
    meta = index.meta
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                CONTAINER_MAGIC,
                CONTAINER_VERSION,
                n,
                store.capacity,
                store.dim,
                index.params.k_max,
                index.params.k_local,
                meta.m,
                METRIC_SQ_EUCLIDEAN,
            )
        )
        f.write(store.X[:n].astype("<f4", copy=False).tobytes())
        f.write(store.scalars[:n].astype("<f4", copy=False).tobytes())
        f.write(index.adjacency[:n].astype("<u4", copy=False).tobytes())
        f.write(meta.boundaries.astype("<f4", copy=False).tobytes())
        f.write(meta.index_to_bucket[:n].astype("<u4", copy=False).tobytes())


def load_index(path: str | Path, params: BuildParams | None = None) -> GraphIndex:
    """Read a container back; bucket membership lists are rebuilt from the map."""
    raw = Path(path).read_bytes()
    if raw[:4] != CONTAINER_MAGIC:
        raise ValueError(f"not an index container: {path}")
    magic, version, n, n_cap, d, k_max, k_local, m, metric = _HEADER.unpack_from(raw, 0)
    if version != CONTAINER_VERSION:
        raise ValueError(f"unsupported container version {version}")
    if metric != METRIC_SQ_EUCLIDEAN:
        raise ValueError(f"unsupported metric code {metric}")
    off = _HEADER.size

    def take(dtype, count, shape=None):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += arr.nbytes
        return arr.reshape(shape) if shape else arr

    X = take("<f4", n * d, (n, d))
    scalars = take("<f4", n)
    adjacency_rows = take("<u4", n * k_max, (n, k_max))
    boundaries = take("<f4", m + 1)
    i2b = take("<u4", n).astype("<i4")

    if params is None:
        params = BuildParams(k_max=k_max, k_local=k_local)
    store = VectorStore(n_cap, d)
    store.X[:n] = X
    store.scalars[:n] = scalars
    store.ids[:n] = np.arange(n)
    start = store.claim(n)
    store.publish(start, n)

    index_to_bucket = np.full(n_cap, -1, dtype="<i4")
    index_to_bucket[:n] = i2b
    bucket_to_index: list[list[int]] = [[] for _ in range(m)]
    for slot in range(n):
        bucket_to_index[int(i2b[slot])].append(slot)
    meta = BucketMeta(
        boundaries=boundaries,
        index_to_bucket=index_to_bucket,
        bucket_to_index=bucket_to_index,
    )
    adjacency = new_adjacency(n_cap, k_max)
    adjacency[:n] = adjacency_rows
    return GraphIndex(store=store, meta=meta, adjacency=adjacency, params=params)
