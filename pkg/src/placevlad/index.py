"""Exhaustive nearest-neighbor search over image descriptors.

Descriptors are held in one contiguous float32 matrix. Search scans the
whole matrix in fixed chunks, keeps the best candidates per query, then
re-ranks the survivors with exact float64 distances so results are stable
and ties resolve by image id.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    DataError,
    Descriptor,
    DimensionError,
    InsufficientDataError,
    Method,
)

# Bounds the (query, chunk) float64 distance block built per scan step.
_SCAN_BLOCK_ELEMENTS = 8_000_000
_STACK_BLOCK_ROWS = 4096


@dataclass(frozen=True)
class RankedResult:
    """Nearest neighbors of one query: (image_id, distance) pairs, nearest first."""

    query_id: str
    hits: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        dists = [h[1] for h in self.hits]
        if any(b < a for a, b in zip(dists, dists[1:])):
            raise DataError("hit distances must be non-decreasing")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(h[0] for h in self.hits)


@dataclass(frozen=True)
class DescriptorIndex:
    """Immutable store of same-method, same-dimension descriptors."""

    method: Method
    ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        mat = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if mat.ndim != 2 or mat.shape[1] < 1:
            raise DimensionError(f"matrix must have shape (count, dim), got {mat.shape}")
        if len(self.ids) != mat.shape[0]:
            raise DimensionError(f"{len(self.ids)} ids for {mat.shape[0]} rows")
        if mat.shape[0] < 1:
            raise InsufficientDataError("index must contain at least one descriptor")
        if not np.all(np.isfinite(mat)):
            raise DataError("descriptor matrix contains non-finite values")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate image ids in index")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "_row_of", {image_id: row for row, image_id in enumerate(self.ids)})

    @property
    def count(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def payload_bytes(self) -> int:
        """Raw size of the stored descriptor values."""
        return self.count * self.dim * 4

    @property
    def approx_memory_bytes(self) -> int:
        """Matrix plus id strings; excludes fixed per-object overhead."""
        return int(self.matrix.nbytes) + sum(len(i.encode("utf-8")) + 8 for i in self.ids)

    def get(self, image_id: str) -> Descriptor:
        row = self._row_of.get(image_id)
        if row is None:
            raise DataError(f"image id not in index: {image_id}")
        return Descriptor(image_id=image_id, method=self.method, values=self.matrix[row].copy())


def build_index(descriptors: Iterable[Descriptor]) -> DescriptorIndex:
    """Stack descriptors into an index, enforcing a single method and dimension."""
    ids: list[str] = []
    blocks: list[np.ndarray] = []
    pending: list[np.ndarray] = []
    method: Method | None = None
    dim: int | None = None
    for desc in descriptors:
        if method is None:
            method, dim = desc.method, desc.dim
        elif desc.method is not method:
            raise DataError(f"mixed methods in index: {desc.method.value} vs {method.value}")
        elif desc.dim != dim:
            raise DimensionError(f"mixed dims in index: {desc.dim} vs {dim}")
        ids.append(desc.image_id)
        pending.append(desc.values)
        if len(pending) >= _STACK_BLOCK_ROWS:
            blocks.append(np.stack(pending))
            pending = []
    if pending:
        blocks.append(np.stack(pending))
    if method is None:
        raise InsufficientDataError("no descriptors to index")
    matrix = blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=0)
    return DescriptorIndex(method=method, ids=tuple(ids), matrix=matrix)


def _exact_sq_distances(q: np.ndarray, rows: np.ndarray) -> np.ndarray:
    diff = rows.astype(np.float64) - q
    return (diff * diff).sum(axis=1)


def search_knn_batch(
    index: DescriptorIndex,
    queries: Sequence[Descriptor],
    n: int,
) -> list[RankedResult]:
    """Exact top-n scan for a batch of queries.

    Returns min(n, index.count) hits per query, nearest first; equal
    distances are ordered by image id. Distances are Euclidean; on
    L2-normalized descriptors this ranks identically to cosine similarity.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not queries:
        return []
    for q in queries:
        if q.dim != index.dim:
            raise DimensionError(f"query dim {q.dim} does not match index dim {index.dim}")
        if q.method is not index.method:
            raise DataError(f"query method {q.method.value} does not match index method {index.method.value}")

    m = len(queries)
    qmat = np.stack([q.values for q in queries]).astype(np.float64)
    q_sq = (qmat * qmat).sum(axis=1)
    top = min(n, index.count)
    block = max(1, _SCAN_BLOCK_ELEMENTS // max(1, m))
    candidates: list[list[np.ndarray]] = [[] for _ in range(m)]
    for start in range(0, index.count, block):
        rows = index.matrix[start : start + block].astype(np.float64)
        r_sq = (rows * rows).sum(axis=1)
        d2 = q_sq[:, None] + r_sq[None, :] - 2.0 * (qmat @ rows.T)
        np.maximum(d2, 0.0, out=d2)
        keep = min(top, d2.shape[1])
        kth = np.partition(d2, keep - 1, axis=1)[:, keep - 1]
        # Keep everything at or just above the kth value; the exact re-rank
        # below sorts the survivors, so over-collection is harmless.
        slack = kth + 1e-9 * np.maximum(kth, 1.0)
        for qi in range(m):
            cols = np.nonzero(d2[qi] <= slack[qi])[0]
            candidates[qi].append(cols + start)

    results: list[RankedResult] = []
    for qi, query in enumerate(queries):
        cand = np.concatenate(candidates[qi])
        d2 = _exact_sq_distances(qmat[qi], index.matrix[cand])
        order = sorted(range(cand.shape[0]), key=lambda j: (d2[j], index.ids[cand[j]]))[:top]
        hits = tuple((index.ids[cand[j]], float(np.sqrt(d2[j]))) for j in order)
        results.append(RankedResult(query_id=query.image_id, hits=hits))
    return results


def search_knn(index: DescriptorIndex, query: Descriptor, n: int) -> RankedResult:
    """Exact top-n scan for a single query; see :func:`search_knn_batch`."""
    return search_knn_batch(index, [query], n)[0]
