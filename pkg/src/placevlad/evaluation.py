"""Retrieval evaluation against geographic ground truth.

A retrieved image is correct when it lies strictly within a distance
threshold of the query's position. Recall@N counts queries with at least one
correct result in the top N; precision@N averages the fraction of correct
results over the top N. ``mean_correct_at_n`` reports the unnormalized
average count of correct results, which some summaries quote instead of the
per-N fraction; both are emitted so reports are unambiguous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import DataError, GeoRecord
from .index import RankedResult

EARTH_RADIUS_M = 6_371_000.0

_GT_QUERY_CHUNK = 512


def haversine_m(a: GeoRecord, b: GeoRecord) -> float:
    """Great-circle distance in meters between two geographic records."""
    lat1, lon1 = math.radians(a.latitude), math.radians(a.longitude)
    lat2, lon2 = math.radians(b.latitude), math.radians(b.longitude)
    sin_dlat = math.sin((lat2 - lat1) / 2.0)
    sin_dlon = math.sin((lon2 - lon1) / 2.0)
    h = sin_dlat * sin_dlat + math.cos(lat1) * math.cos(lat2) * sin_dlon * sin_dlon
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _haversine_block(qlat: np.ndarray, qlon: np.ndarray, dlat: np.ndarray, dlon: np.ndarray) -> np.ndarray:
    sin_dlat = np.sin((dlat[None, :] - qlat[:, None]) / 2.0)
    sin_dlon = np.sin((dlon[None, :] - qlon[:, None]) / 2.0)
    h = sin_dlat**2 + np.cos(qlat)[:, None] * np.cos(dlat)[None, :] * sin_dlon**2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


@dataclass(frozen=True)
class GroundTruth:
    """Per-query sets of image ids lying strictly within ``threshold_m``."""

    threshold_m: float
    correct: Mapping[str, frozenset[str]]

    @property
    def uncoverable(self) -> frozenset[str]:
        """Queries with no database image inside the threshold."""
        return frozenset(q for q, ids in self.correct.items() if not ids)


def build_ground_truth(
    queries: Sequence[GeoRecord],
    database: Sequence[GeoRecord],
    threshold_m: float,
) -> GroundTruth:
    """All-pairs haversine ground truth with a strict ``< threshold_m`` test."""
    if threshold_m <= 0.0:
        raise ValueError(f"threshold_m must be positive, got {threshold_m}")
    seen = set()
    for q in queries:
        if q.image_id in seen:
            raise DataError(f"duplicate query id: {q.image_id}")
        seen.add(q.image_id)
    db_ids = [r.image_id for r in database]
    if len(set(db_ids)) != len(db_ids):
        raise DataError("duplicate database ids")

    dlat = np.radians(np.array([r.latitude for r in database], dtype=np.float64))
    dlon = np.radians(np.array([r.longitude for r in database], dtype=np.float64))
    correct: dict[str, frozenset[str]] = {}
    for start in range(0, len(queries), _GT_QUERY_CHUNK):
        chunk = queries[start : start + _GT_QUERY_CHUNK]
        qlat = np.radians(np.array([r.latitude for r in chunk], dtype=np.float64))
        qlon = np.radians(np.array([r.longitude for r in chunk], dtype=np.float64))
        if len(database) == 0:
            for rec in chunk:
                correct[rec.image_id] = frozenset()
            continue
        dist = _haversine_block(qlat, qlon, dlat, dlon)
        for row, rec in enumerate(chunk):
            inside = np.nonzero(dist[row] < threshold_m)[0]
            correct[rec.image_id] = frozenset(db_ids[i] for i in inside)
    return GroundTruth(threshold_m=threshold_m, correct=correct)


def _eligible(
    results: Sequence[RankedResult],
    gt: GroundTruth,
    exclude_uncoverable: bool,
) -> list[RankedResult]:
    for res in results:
        if res.query_id not in gt.correct:
            raise DataError(f"query id missing from ground truth: {res.query_id}")
    if exclude_uncoverable:
        skip = gt.uncoverable
        results = [r for r in results if r.query_id not in skip]
    return list(results)


def _check_depth(results: Sequence[RankedResult], n: int) -> None:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    depth = min(len(r.hits) for r in results)
    if n > depth:
        raise ValueError(f"n={n} exceeds retrieved depth {depth}")


def recall_at_n(
    results: Sequence[RankedResult],
    gt: GroundTruth,
    n: int,
    *,
    exclude_uncoverable: bool = False,
) -> float:
    """Fraction of queries with at least one correct result in the top n."""
    rows = _eligible(results, gt, exclude_uncoverable)
    if not rows:
        raise ValueError("no queries to evaluate")
    _check_depth(rows, n)
    hits = 0
    for res in rows:
        good = gt.correct[res.query_id]
        if any(image_id in good for image_id, _ in res.hits[:n]):
            hits += 1
    return hits / len(rows)


def mean_correct_at_n(
    results: Sequence[RankedResult],
    gt: GroundTruth,
    n: int,
    *,
    exclude_uncoverable: bool = False,
) -> float:
    """Average count of correct results in the top n (not divided by n)."""
    rows = _eligible(results, gt, exclude_uncoverable)
    if not rows:
        raise ValueError("no queries to evaluate")
    _check_depth(rows, n)
    total = 0
    for res in rows:
        good = gt.correct[res.query_id]
        total += sum(1 for image_id, _ in res.hits[:n] if image_id in good)
    return total / len(rows)


def precision_at_n(
    results: Sequence[RankedResult],
    gt: GroundTruth,
    n: int,
    *,
    exclude_uncoverable: bool = False,
) -> float:
    """Average fraction of correct results in the top n."""
    return mean_correct_at_n(results, gt, n, exclude_uncoverable=exclude_uncoverable) / n


def first_hit_ranks(results: Sequence[RankedResult], gt: GroundTruth) -> dict[str, int | None]:
    """1-based rank of each query's first correct result, or None for a miss."""
    ranks: dict[str, int | None] = {}
    for res in _eligible(results, gt, False):
        good = gt.correct[res.query_id]
        rank = next((i + 1 for i, (image_id, _) in enumerate(res.hits) if image_id in good), None)
        ranks[res.query_id] = rank
    return ranks


@dataclass(frozen=True)
class EvalReport:
    """Metrics for one distance threshold across a set of cutoffs N."""

    threshold_m: float
    n_values: tuple[int, ...]
    recall_at: dict[int, float]
    precision_at: dict[int, float]
    mean_correct_at: dict[int, float]
    first_hit_rank: dict[str, int | None]


def evaluate(
    results: Sequence[RankedResult],
    queries: Sequence[GeoRecord],
    database: Sequence[GeoRecord],
    threshold_m: float,
    n_values: Sequence[int],
    *,
    exclude_uncoverable: bool = False,
) -> EvalReport:
    """Build ground truth at one threshold and compute all metrics."""
    if not n_values:
        raise ValueError("n_values must be non-empty")
    gt = build_ground_truth(queries, database, threshold_m)
    ns = tuple(sorted(set(int(v) for v in n_values)))
    recall = {n: recall_at_n(results, gt, n, exclude_uncoverable=exclude_uncoverable) for n in ns}
    mean_correct = {
        n: mean_correct_at_n(results, gt, n, exclude_uncoverable=exclude_uncoverable) for n in ns
    }
    precision = {n: mean_correct[n] / n for n in ns}
    return EvalReport(
        threshold_m=float(threshold_m),
        n_values=ns,
        recall_at=recall,
        precision_at=precision,
        mean_correct_at=mean_correct,
        first_hit_rank=first_hit_ranks(results, gt),
    )


def threshold_sweep(
    results: Sequence[RankedResult],
    queries: Sequence[GeoRecord],
    database: Sequence[GeoRecord],
    thresholds: Sequence[float],
    n_values: Sequence[int],
    *,
    exclude_uncoverable: bool = False,
) -> list[EvalReport]:
    """One :class:`EvalReport` per distance threshold, in ascending order."""
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    reports = []
    for d in sorted(set(float(t) for t in thresholds)):
        reports.append(
            evaluate(
                results,
                queries,
                database,
                d,
                n_values,
                exclude_uncoverable=exclude_uncoverable,
            )
        )
    return reports
