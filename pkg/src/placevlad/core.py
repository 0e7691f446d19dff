"""Shared domain types and vector primitives for the retrieval engine.

Values persisted to disk are float32; accumulations and norms are computed
in float64 to keep argmin/ordering decisions stable.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

STORAGE_DTYPE = np.float32
NORM_EPS = 1e-12
UNIT_NORM_TOL = 1e-5


class EngineError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(EngineError):
    """Vector, matrix, or file dimensions disagree."""


class InsufficientDataError(EngineError):
    """Not enough input data to carry out the operation."""


class DataError(EngineError):
    """Malformed, corrupt, or out-of-range input data."""


class Method(str, enum.Enum):
    """Descriptor construction methods supported by the engine."""

    SPVP = "spvp"
    VLAD = "vlad"
    BOVW = "bovw"
    MAC = "mac"
    SPOC = "spoc"
    GEM = "gem"

    def __str__(self) -> str:
        return self.value


# Stable one-byte tags used by the binary index format.
METHOD_TAGS: dict[Method, int] = {
    Method.SPVP: 1,
    Method.VLAD: 2,
    Method.BOVW: 3,
    Method.MAC: 4,
    Method.SPOC: 5,
    Method.GEM: 6,
}
TAG_METHODS: dict[int, Method] = {tag: method for method, tag in METHOD_TAGS.items()}


def _as_float_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    Vectors with norm at most 1e-12 (in particular the zero vector) are
    returned unchanged, so downstream code never divides by zero.
    """
    arr = _as_float_vector(v, "v")
    norm = float(np.linalg.norm(arr.astype(np.float64, copy=False)))
    if norm <= NORM_EPS:
        return arr.copy()
    return (arr.astype(np.float64, copy=False) / norm).astype(arr.dtype)


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise :func:`l2_normalize` for a 2-D array; zero rows pass through."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    scale = np.where(norms > NORM_EPS, norms, 1.0)
    return arr / scale[:, None]


def euclidean_distance(a, b) -> float:
    """L2 distance between two vectors of equal length."""
    av = _as_float_vector(a, "a").astype(np.float64, copy=False)
    bv = _as_float_vector(b, "b").astype(np.float64, copy=False)
    if av.shape != bv.shape:
        raise DimensionError(f"length mismatch: {av.shape[0]} vs {bv.shape[0]}")
    return float(np.linalg.norm(av - bv))


def _frozen_array(values, dtype, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LocalFeature:
    """A single local feature: normalized image coordinates plus descriptor."""

    x: float
    y: float
    descriptor: np.ndarray

    def __post_init__(self) -> None:
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise DataError(f"feature coordinates outside [0, 1]: ({self.x}, {self.y})")
        desc = _frozen_array(self.descriptor, STORAGE_DTYPE, "descriptor")
        if desc.ndim != 1 or desc.size == 0:
            raise DimensionError(f"descriptor must be a non-empty 1-D vector, got shape {desc.shape}")
        object.__setattr__(self, "descriptor", desc)


@dataclass(frozen=True)
class LocalFeatureMap:
    """All local features extracted from one image.

    ``xy`` is an (n, 2) array of coordinates normalized to [0, 1] and
    ``descriptors`` an (n, d) array; rows correspond. Arrays are frozen at
    construction, so maps can be shared across threads without copying.
    """

    image_id: str
    xy: np.ndarray
    descriptors: np.ndarray
    source_width: int = 0
    source_height: int = 0

    def __post_init__(self) -> None:
        if not self.image_id:
            raise DataError("image_id must be non-empty")
        xy = _frozen_array(self.xy, STORAGE_DTYPE, "xy")
        desc = _frozen_array(self.descriptors, STORAGE_DTYPE, "descriptors")
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise DimensionError(f"xy must have shape (n, 2), got {xy.shape}")
        if desc.ndim != 2:
            raise DimensionError(f"descriptors must have shape (n, d), got {desc.shape}")
        if xy.shape[0] != desc.shape[0]:
            raise DimensionError(
                f"feature count mismatch: {xy.shape[0]} coordinates vs {desc.shape[0]} descriptors"
            )
        if desc.shape[0] > 0 and desc.shape[1] == 0:
            raise DimensionError("descriptors must have d >= 1")
        if xy.size and (xy.min() < 0.0 or xy.max() > 1.0):
            raise DataError("feature coordinates outside [0, 1]")
        if self.source_width < 0 or self.source_height < 0:
            raise DataError("source dimensions must be non-negative")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "descriptors", desc)

    @property
    def count(self) -> int:
        return int(self.descriptors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.descriptors.shape[1])

    def features(self):
        """Iterate the map as :class:`LocalFeature` values."""
        for i in range(self.count):
            yield LocalFeature(float(self.xy[i, 0]), float(self.xy[i, 1]), self.descriptors[i])

    def descriptors_normalized(self, tol: float = UNIT_NORM_TOL) -> bool:
        """True when every descriptor row has unit L2 norm within ``tol``."""
        if self.count == 0:
            return True
        norms = np.linalg.norm(self.descriptors.astype(np.float64), axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= tol))


@dataclass(frozen=True)
class Descriptor:
    """An image-level descriptor produced by one of the supported methods."""

    image_id: str
    method: Method
    values: np.ndarray

    def __post_init__(self) -> None:
        if not self.image_id:
            raise DataError("image_id must be non-empty")
        if not isinstance(self.method, Method):
            raise DataError(f"unknown method: {self.method!r}")
        vals = _frozen_array(self.values, STORAGE_DTYPE, "values")
        if vals.ndim != 1 or vals.size == 0:
            raise DimensionError(f"values must be a non-empty 1-D vector, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class GeoRecord:
    """Geographic position (and optional heading) attached to an image id."""

    image_id: str
    latitude: float
    longitude: float
    yaw: float | None = None

    def __post_init__(self) -> None:
        if not self.image_id:
            raise DataError("image_id must be non-empty")
        if not (-90.0 <= self.latitude <= 90.0):
            raise DataError(f"latitude out of range: {self.latitude}")
        if not (-180.0 <= self.longitude <= 180.0):
            raise DataError(f"longitude out of range: {self.longitude}")
        if self.yaw is not None and not (0.0 <= self.yaw < 360.0):
            raise DataError(f"yaw out of range [0, 360): {self.yaw}")
