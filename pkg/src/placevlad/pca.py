"""PCA projection with optional whitening, used to shrink patch descriptors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DataError,
    DimensionError,
    InsufficientDataError,
    STORAGE_DTYPE,
    l2_normalize_rows,
)

# Eigenvalues below this floor are treated as the floor when whitening.
EIGENVALUE_FLOOR = 1e-10

_ORTHO_TOL = 1e-4
_ORTHO_CHECK_ROWS = 64


@dataclass(frozen=True)
class PCAModel:
    """A fitted linear projection: mean, orthonormal rows, eigenvalues."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    whiten: bool = False

    def __post_init__(self) -> None:
        mean = np.ascontiguousarray(self.mean, dtype=STORAGE_DTYPE)
        comps = np.ascontiguousarray(self.components, dtype=STORAGE_DTYPE)
        evals = np.ascontiguousarray(self.eigenvalues, dtype=STORAGE_DTYPE)
        if mean.ndim != 1 or comps.ndim != 2 or evals.ndim != 1:
            raise DimensionError("mean and eigenvalues must be 1-D, components 2-D")
        out_dim, in_dim = comps.shape
        if out_dim < 1 or in_dim < 1:
            raise DimensionError(f"components must be non-empty, got shape {comps.shape}")
        if out_dim > in_dim:
            raise DimensionError(f"out_dim {out_dim} exceeds in_dim {in_dim}")
        if mean.shape[0] != in_dim or evals.shape[0] != out_dim:
            raise DimensionError("mean/eigenvalue lengths do not match components")
        for arr, name in ((mean, "mean"), (comps, "components"), (evals, "eigenvalues")):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if np.any(evals < 0) or np.any(np.diff(evals.astype(np.float64)) > 0):
            raise DataError("eigenvalues must be non-negative and non-increasing")
        _check_orthonormal_rows(comps.astype(np.float64))
        for arr in (mean, comps, evals):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "eigenvalues", evals)

    @property
    def in_dim(self) -> int:
        return int(self.components.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.components.shape[0])


def _check_orthonormal_rows(comps: np.ndarray) -> None:
    # Self-dots are checked for every row; cross terms on a subset so large
    # models stay cheap to validate.
    norms = (comps * comps).sum(axis=1)
    if np.max(np.abs(norms - 1.0)) > _ORTHO_TOL:
        raise DataError("component rows are not unit length")
    rows = comps if comps.shape[0] <= _ORTHO_CHECK_ROWS else comps[:: max(1, comps.shape[0] // _ORTHO_CHECK_ROWS)]
    gram = rows @ rows.T
    np.fill_diagonal(gram, 0.0)
    if np.max(np.abs(gram)) > _ORTHO_TOL:
        raise DataError("component rows are not orthogonal")


def _fix_signs(comps: np.ndarray) -> np.ndarray:
    # Deterministic orientation: the entry with the largest magnitude in each
    # row is made positive; ties resolve to the first such entry.
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(comps.shape[0]), lead])
    signs[signs == 0] = 1.0
    return comps * signs[:, None]


def pca_fit(samples, out_dim: int, whiten: bool = False) -> PCAModel:
    """Fit a PCA projection to ``samples`` (one row per sample).

    Uses an eigendecomposition of the sample covariance; when the input
    dimensionality exceeds the sample count the Gram-matrix form of the same
    problem is solved instead, which is much smaller. Eigenvalues use the
    unbiased (n - 1) normalization and are clamped at zero.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"samples must have shape (n, in_dim), got {x.shape}")
    n, in_dim = x.shape
    if out_dim < 1:
        raise ValueError(f"out_dim must be >= 1, got {out_dim}")
    if out_dim > in_dim:
        raise DimensionError(f"out_dim {out_dim} exceeds input dim {in_dim}")
    if n <= out_dim:
        raise InsufficientDataError(f"need more than out_dim={out_dim} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise DataError("samples contain non-finite values")

    mean = x.mean(axis=0)
    xc = x - mean
    if in_dim <= n:
        cov = (xc.T @ xc) / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals, kind="stable")[::-1][:out_dim]
        lam = evals[order]
        comps = evecs[:, order].T
    else:
        gram = (xc @ xc.T) / (n - 1)
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals, kind="stable")[::-1][:out_dim]
        lam = evals[order]
        if lam[-1] <= EIGENVALUE_FLOOR:
            raise InsufficientDataError(
                f"sample rank is below the requested {out_dim} components"
            )
        comps = (xc.T @ evecs[:, order]).T / np.sqrt(lam * (n - 1))[:, None]

    lam = np.maximum(lam, 0.0)
    comps = _fix_signs(comps)
    return PCAModel(
        mean=mean.astype(STORAGE_DTYPE),
        components=comps.astype(STORAGE_DTYPE),
        eigenvalues=lam.astype(STORAGE_DTYPE),
        whiten=whiten,
    )


def pca_apply(model: PCAModel, v, *, normalize: bool = False) -> np.ndarray:
    """Project one vector or a batch of row vectors through ``model``.

    With ``model.whiten`` each output coordinate is divided by the square
    root of its eigenvalue (floored at 1e-10). ``normalize`` additionally
    rescales each projected vector to unit L2 norm.
    """
    arr = np.asarray(v, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"expected a vector or batch of vectors, got shape {arr.shape}")
    if arr.shape[1] != model.in_dim:
        raise DimensionError(f"input dim {arr.shape[1]} does not match model in_dim {model.in_dim}")
    proj = (arr - model.mean.astype(np.float64)) @ model.components.astype(np.float64).T
    if model.whiten:
        proj /= np.sqrt(np.maximum(model.eigenvalues.astype(np.float64), EIGENVALUE_FLOOR))
    if normalize:
        proj = l2_normalize_rows(proj)
    out = proj.astype(STORAGE_DTYPE)
    return out[0] if single else out
