"""Visual vocabulary: k-means training, hard assignment, feature sampling."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import (
    DataError,
    DimensionError,
    InsufficientDataError,
    LocalFeatureMap,
    STORAGE_DTYPE,
)

# Bounds the (chunk, k, d) float64 temporary used during assignment.
_ASSIGN_BLOCK_ELEMENTS = 16_000_000

DEFAULT_MAX_ITERS = 100


@dataclass(frozen=True)
class TrainingMeta:
    """Bookkeeping from one k-means run: iteration count and inertia trace."""

    iterations: int
    inertia_trace: tuple[float, ...]

    @property
    def final_inertia(self) -> float:
        return self.inertia_trace[-1]


@dataclass(frozen=True)
class Codebook:
    """A set of k visual-word centroids over d-dimensional descriptors."""

    centroids: np.ndarray
    training_meta: TrainingMeta | None = None

    def __post_init__(self) -> None:
        cents = np.ascontiguousarray(self.centroids, dtype=STORAGE_DTYPE)
        if cents.ndim != 2 or cents.shape[0] < 1 or cents.shape[1] < 1:
            raise DimensionError(f"centroids must have shape (k, d) with k, d >= 1, got {cents.shape}")
        if not np.all(np.isfinite(cents)):
            raise DataError("centroids contain non-finite values")
        if _min_pairwise_sq_distance(cents.astype(np.float64)) <= 0.0:
            raise DataError("centroids must be pairwise distinct")
        cents.setflags(write=False)
        object.__setattr__(self, "centroids", cents)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


def _min_pairwise_sq_distance(cents: np.ndarray) -> float:
    if cents.shape[0] < 2:
        return np.inf
    sq = (cents * cents).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (cents @ cents.T)
    np.fill_diagonal(d2, np.inf)
    return float(d2.min())


def _nearest_chunk(chunk: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Squared distances via explicit differences: matches a scalar scan
    # bit-for-bit, so ties resolve identically everywhere.
    diff = chunk[:, None, :] - centroids[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(idx.shape[0]), idx]


def _nearest(features: np.ndarray, centroids: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid index and squared distance per feature, in float64.

    Work is split into fixed chunks and recombined in chunk order, so the
    result does not depend on ``workers``. Ties go to the lowest index.
    """
    n = features.shape[0]
    k = centroids.shape[0]
    block = max(1, _ASSIGN_BLOCK_ELEMENTS // max(1, k * features.shape[1]))
    chunks = [features[start : start + block] for start in range(0, n, block)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _nearest_chunk(c, centroids), chunks))
    else:
        parts = [_nearest_chunk(c, centroids) for c in chunks]
    idx = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, dtype=np.int64)
    d2 = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, dtype=np.float64)
    return idx, d2


def _check_features(features, k: int | None = None) -> np.ndarray:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise DimensionError(f"features must have shape (n, d), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("features contain non-finite values")
    if k is not None and arr.shape[0] < k:
        raise InsufficientDataError(f"need at least k={k} features, got {arr.shape[0]}")
    return arr


def assign_batch(features, codebook: Codebook, workers: int = 1) -> np.ndarray:
    """Nearest-centroid index for each row of ``features``."""
    arr = _check_features(features)
    if arr.shape[1] != codebook.dim:
        raise DimensionError(f"feature dim {arr.shape[1]} does not match codebook dim {codebook.dim}")
    idx, _ = _nearest(arr, codebook.centroids.astype(np.float64), workers=workers)
    return idx


def assign(feature, codebook: Codebook) -> int:
    """Index of the centroid nearest to ``feature``; ties go to the lowest index."""
    arr = np.asarray(feature, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"feature must be 1-D, got shape {arr.shape}")
    return int(assign_batch(arr[None, :], codebook)[0])


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    diff = x - centers[0]
    d2 = (diff * diff).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            raise InsufficientDataError("fewer distinct features than requested clusters")
        pick = int(rng.choice(n, p=d2 / total))
        centers[j] = x[pick]
        diff = x - centers[j]
        d2 = np.minimum(d2, (diff * diff).sum(axis=1))
    return centers


def _cluster_means(x: np.ndarray, idx: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(idx, minlength=k).astype(np.float64)
    sums = np.empty((k, x.shape[1]), dtype=np.float64)
    for j in range(x.shape[1]):
        sums[:, j] = np.bincount(idx, weights=x[:, j], minlength=k)
    safe = np.where(counts > 0, counts, 1.0)
    return sums / safe[:, None], counts


def train_codebook(
    features,
    k: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    workers: int = 1,
) -> Codebook:
    """Lloyd's k-means with k-means++ seeding.

    Deterministic for a fixed seed regardless of ``workers``. Stops when the
    assignment no longer changes or after ``max_iters`` passes. Clusters that
    empty out are reseeded to the feature farthest from its current centroid.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    x = _check_features(features, k=k)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)

    trace: list[float] = []
    prev_idx: np.ndarray | None = None
    converged = False
    for _ in range(max_iters):
        idx, d2 = _nearest(x, centroids, workers=workers)
        trace.append(float(d2.sum()))
        if prev_idx is not None and np.array_equal(idx, prev_idx):
            converged = True
            break
        prev_idx = idx
        means, counts = _cluster_means(x, idx, k)
        for empty in np.nonzero(counts == 0)[0]:
            far = int(np.argmax(d2))
            if d2[far] <= 0.0:
                raise InsufficientDataError("fewer distinct features than requested clusters")
            means[empty] = x[far]
            d2[far] = -1.0  # claimed; the next empty cluster takes the next farthest
        centroids = means

    if not converged:
        # max_iters exhausted after an update: refresh assignment so the
        # recorded inertia matches the returned centroids.
        _, d2 = _nearest(x, centroids, workers=workers)
        trace.append(float(d2.sum()))

    meta = TrainingMeta(iterations=len(trace), inertia_trace=tuple(trace))
    return Codebook(centroids=centroids.astype(STORAGE_DTYPE), training_meta=meta)


def sample_features(maps: Iterable[LocalFeatureMap], target: int, seed: int = 0) -> np.ndarray:
    """Uniform reservoir sample of up to ``target`` descriptors from a map stream.

    Single pass, bounded memory, deterministic for a fixed seed and stream
    order. Returns an (m, d) float32 array with m = min(target, total).
    """
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    rng = np.random.default_rng(seed)
    reservoir: np.ndarray | None = None
    dim: int | None = None
    filled = 0
    total = 0
    saw_map = False
    for fmap in maps:
        saw_map = True
        if dim is None:
            dim = fmap.dim if fmap.count else None
        elif fmap.count and fmap.dim != dim:
            raise DimensionError(f"descriptor dim changed mid-stream: {fmap.dim} vs {dim}")
        m = fmap.count
        if m == 0:
            continue
        if reservoir is None:
            reservoir = np.empty((target, fmap.dim), dtype=STORAGE_DTYPE)
        rows = fmap.descriptors
        start = 0
        if filled < target:
            take = min(target - filled, m)
            reservoir[filled : filled + take] = rows[:take]
            filled += take
            total += take
            start = take
        if start < m:
            # Item at global 1-based position t replaces a random slot with
            # probability target / t (algorithm R, vectorized per map).
            highs = np.arange(total + 1, total + (m - start) + 1, dtype=np.int64)
            draws = rng.integers(0, highs)
            for offset in np.nonzero(draws < target)[0]:
                reservoir[draws[offset]] = rows[start + offset]
            total += m - start
    if not saw_map:
        raise InsufficientDataError("empty feature-map stream")
    if total == 0:
        raise InsufficientDataError("feature-map stream contained no features")
    assert reservoir is not None
    return reservoir[: min(filled, target)].copy()
