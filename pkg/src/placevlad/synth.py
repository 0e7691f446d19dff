"""Synthetic place-recognition corpora.

Locations sit on a metric grid; each location is a panorama of "objects"
whose descriptors come from a shared pool of structure prototypes, with a
configurable share drawn from one repetitive-pattern pool reused at every
location. A view is a window onto the panorama: it keeps the
features_per_image features nearest its yaw direction, so neighboring yaws
of one location overlap heavily but not completely. Queries are perturbed
copies of database views: the viewpoint pans (re-selecting the window),
per-feature parallax wobbles positions, and descriptors pick up jitter.
Output is byte-identical for a fixed config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataError, GeoRecord, LocalFeatureMap, STORAGE_DTYPE
from .evaluation import EARTH_RADIUS_M
from .io import Manifest, ManifestRecord, SPLIT_DATABASE, SPLIT_QUERY, save_feature_map, save_manifest

ORIGIN_LAT = 36.35
ORIGIN_LON = 127.38

# Corpus texture. Instances hug their prototypes, so places that draw the
# same prototypes look alike feature-by-feature and differ mainly in layout;
# repetitive instances hug tighter (the same pattern looks the same
# everywhere). Prototype popularity decays geometrically, so common
# structures dominate most locations.
_STRUCT_SIGMA = 0.08
_REP_SIGMA = 0.05
_PROTO_DECAY = 0.75
_REP_DECAY = 0.5
_PARALLAX_SCALE = 0.25
_TILT_SCALE = 0.1

# Each view keeps the features_per_image panorama features nearest its view
# center, out of _PANO_OVERDRAW * features_per_image total; its window
# therefore spans about 1 / _PANO_OVERDRAW of the panorama.
_PANO_OVERDRAW = 3

# nominal panorama size recorded in the feature files (metadata only)
_SOURCE_W = 2048
_SOURCE_H = 1024


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generated corpus; defaults give a small, easy dataset."""

    grid_rows: int = 10
    grid_cols: int = 10
    grid_step_m: float = 10.0
    yaw_count: int = 8
    features_per_image: int = 80
    descriptor_dim: int = 40
    cluster_count: int = 32
    repetitive_fraction: float = 0.3
    viewpoint_shift: float = 0.1
    descriptor_jitter: float = 0.1
    query_count: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise DataError("grid must be at least 1x1")
        if self.grid_step_m <= 0:
            raise DataError(f"grid_step_m must be positive, got {self.grid_step_m}")
        if self.yaw_count < 1:
            raise DataError(f"yaw_count must be >= 1, got {self.yaw_count}")
        if self.features_per_image < 1:
            raise DataError(f"features_per_image must be >= 1, got {self.features_per_image}")
        if self.descriptor_dim < 1:
            raise DataError(f"descriptor_dim must be >= 1, got {self.descriptor_dim}")
        if self.cluster_count < 1:
            raise DataError(f"cluster_count must be >= 1, got {self.cluster_count}")
        if not (0.0 <= self.repetitive_fraction <= 1.0):
            raise DataError(f"repetitive_fraction must be in [0, 1], got {self.repetitive_fraction}")
        if self.viewpoint_shift < 0 or self.descriptor_jitter < 0:
            raise DataError("viewpoint_shift and descriptor_jitter must be non-negative")
        if self.query_count < 1:
            raise DataError(f"query_count must be >= 1, got {self.query_count}")


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(count, dim))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return rows / norms


def _grid_degrees(step_m: float) -> tuple[float, float]:
    dlat = math.degrees(step_m / EARTH_RADIUS_M)
    dlon = math.degrees(step_m / (EARTH_RADIUS_M * math.cos(math.radians(ORIGIN_LAT))))
    return dlat, dlon


@dataclass(frozen=True)
class _Location:
    row: int
    col: int
    latitude: float
    longitude: float
    pano_x: np.ndarray
    pano_y: np.ndarray
    descriptors: np.ndarray


def _build_locations(config: SynthConfig, rng: np.random.Generator) -> list[_Location]:
    n = _PANO_OVERDRAW * config.features_per_image
    rep_count = int(round(config.repetitive_fraction * n))
    struct_count = n - rep_count

    structure = _unit_rows(rng, config.cluster_count, config.descriptor_dim)
    rep_pool = _unit_rows(rng, max(2, config.cluster_count // 4), config.descriptor_dim)
    pool_n = rep_pool.shape[0]
    weights = _PROTO_DECAY ** np.arange(config.cluster_count, dtype=np.float64)
    weights = weights / weights.sum()
    # Pattern popularity is heavily skewed: one facade grid dominates the
    # city. Concentrating the shared mass is what drags different locations'
    # histograms toward each other.
    rep_weights = _REP_DECAY ** np.arange(pool_n, dtype=np.float64)
    rep_weights = rep_weights / rep_weights.sum()

    dlat, dlon = _grid_degrees(config.grid_step_m)
    locations = []
    for row in range(config.grid_rows):
        for col in range(config.grid_cols):
            struct_idx = rng.choice(config.cluster_count, size=struct_count, p=weights)
            rep_idx = rng.choice(pool_n, size=rep_count, p=rep_weights)
            desc = np.concatenate(
                [
                    structure[struct_idx] + _STRUCT_SIGMA * rng.normal(size=(struct_count, config.descriptor_dim)),
                    rep_pool[rep_idx] + _REP_SIGMA * rng.normal(size=(rep_count, config.descriptor_dim)),
                ]
            )
            norms = np.linalg.norm(desc, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            desc = (desc / norms).astype(STORAGE_DTYPE)
            locations.append(
                _Location(
                    row=row,
                    col=col,
                    latitude=ORIGIN_LAT + row * dlat,
                    longitude=ORIGIN_LON + col * dlon,
                    pano_x=rng.uniform(0.0, 1.0, size=n),
                    pano_y=rng.uniform(0.0, 1.0, size=n),
                    descriptors=desc,
                )
            )
    return locations


def _view_features(loc: _Location, center: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``count`` panorama features nearest ``center``, in panorama order,
    with wrapped offsets mapped so the nominal window [-0.25, 0.25) fills [0, 1)."""
    d = np.mod(loc.pano_x - center + 0.5, 1.0)
    keep = np.sort(np.argsort(np.abs(d - 0.5), kind="stable")[:count])
    x = np.clip(2.0 * (d[keep] - 0.25), 0.0, 1.0)
    xy = np.column_stack([x, loc.pano_y[keep]]).astype(STORAGE_DTYPE)
    return xy, loc.descriptors[keep]


def generate_synthetic(config: SynthConfig, out_dir: Path | str) -> Manifest:
    """Write a synthetic corpus (feature files plus ``manifest.csv``) under
    ``out_dir`` and return the manifest."""
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    locations = _build_locations(config, rng)

    records: list[ManifestRecord] = []
    views: list[tuple[_Location, int, str]] = []
    for loc in locations:
        for yaw_i in range(config.yaw_count):
            image_id = f"db_r{loc.row:03d}c{loc.col:03d}_y{yaw_i}"
            views.append((loc, yaw_i, image_id))
            xy, desc = _view_features(loc, yaw_i / config.yaw_count, config.features_per_image)
            fmap = LocalFeatureMap(
                image_id=image_id,
                xy=xy,
                descriptors=desc,
                source_width=_SOURCE_W,
                source_height=_SOURCE_H,
            )
            path = features_dir / f"{image_id}.pvfm"
            save_feature_map(fmap, path, normalized=True)
            records.append(
                ManifestRecord(
                    image_id=image_id,
                    path=path,
                    geo=GeoRecord(
                        image_id=image_id,
                        latitude=loc.latitude,
                        longitude=loc.longitude,
                        yaw=360.0 * yaw_i / config.yaw_count,
                    ),
                    split=SPLIT_DATABASE,
                )
            )

    picks = rng.choice(len(views), size=config.query_count, replace=config.query_count > len(views))
    for qi, view_i in enumerate(picks):
        loc, yaw_i, _source_id = views[int(view_i)]
        center = yaw_i / config.yaw_count
        if config.viewpoint_shift > 0:
            # The pan moves the whole window, so features enter and leave the
            # view and the survivors shift together.
            center = (center + config.viewpoint_shift * rng.uniform(-0.5, 0.5)) % 1.0
        xy32, desc = _view_features(loc, center, config.features_per_image)
        xy = xy32.astype(np.float64)
        if config.viewpoint_shift > 0:
            parallax = config.viewpoint_shift * _PARALLAX_SCALE * rng.uniform(-1.0, 1.0, size=xy.shape[0])
            tilt = config.viewpoint_shift * _TILT_SCALE * rng.normal(size=xy.shape[0])
            xy[:, 0] = np.clip(xy[:, 0] + parallax, 0.0, 1.0)
            xy[:, 1] = np.clip(xy[:, 1] + tilt, 0.0, 1.0)
        if config.descriptor_jitter > 0:
            jittered = desc.astype(np.float64) + config.descriptor_jitter * rng.normal(size=desc.shape)
            norms = np.linalg.norm(jittered, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            desc = (jittered / norms).astype(STORAGE_DTYPE)
        image_id = f"q{qi:04d}"
        fmap = LocalFeatureMap(
            image_id=image_id,
            xy=xy.astype(STORAGE_DTYPE),
            descriptors=desc,
            source_width=_SOURCE_W,
            source_height=_SOURCE_H,
        )
        path = features_dir / f"{image_id}.pvfm"
        save_feature_map(fmap, path, normalized=True)
        records.append(
            ManifestRecord(
                image_id=image_id,
                path=path,
                geo=GeoRecord(
                    image_id=image_id,
                    latitude=loc.latitude,
                    longitude=loc.longitude,
                    yaw=360.0 * yaw_i / config.yaw_count,
                ),
                split=SPLIT_QUERY,
            )
        )

    manifest = Manifest(records=tuple(records))
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
