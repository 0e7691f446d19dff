"""Image-level descriptor constructions.

``vlad_encode`` aggregates residuals against a codebook; ``spvp_encode``
applies it per cell of a multi-resolution grid and concatenates the cells in
a fixed order, so the result is sensitive to where features sit, not just
which features occur. ``bovw_encode`` and ``pool_baseline`` provide the
orderless reference methods.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .codebook import Codebook, assign_batch
from .core import (
    DataError,
    DimensionError,
    InsufficientDataError,
    Descriptor,
    LocalFeatureMap,
    Method,
    NORM_EPS,
    STORAGE_DTYPE,
)
from .pca import PCAModel, pca_apply

DEFAULT_GEM_P = 3.0


@dataclass(frozen=True)
class PyramidConfig:
    """Grid resolutions for pyramid pooling, plus the optional per-cell dim.

    ``levels`` lists grid sizes; level g contributes g*g cells. Cells are
    concatenated level by level in the order given here and row-major within
    a level. ``per_patch_dim`` declares the reduced per-cell dimensionality
    when a patch PCA is in play.
    """

    levels: tuple[int, ...] = (1, 2, 4)
    per_patch_dim: int | None = None

    def __post_init__(self) -> None:
        levels = tuple(int(g) for g in self.levels)
        if not levels:
            raise DataError("levels must be non-empty")
        if any(g < 1 for g in levels):
            raise DataError(f"levels must be >= 1, got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise DataError(f"levels must be strictly increasing, got {levels}")
        if self.per_patch_dim is not None and self.per_patch_dim < 1:
            raise DataError(f"per_patch_dim must be >= 1, got {self.per_patch_dim}")
        object.__setattr__(self, "levels", levels)

    @property
    def total_patches(self) -> int:
        return sum(g * g for g in self.levels)

    def output_dim(self, k: int, dim: int) -> int:
        """Length of the concatenated descriptor for a (k, d) codebook."""
        per_patch = self.per_patch_dim if self.per_patch_dim is not None else k * dim
        return self.total_patches * per_patch


@dataclass(frozen=True)
class TfIdfStats:
    """Corpus statistics for TF-IDF weighting: image count and per-word document frequency."""

    image_count: int
    doc_freq: np.ndarray

    def __post_init__(self) -> None:
        if self.image_count < 1:
            raise DataError(f"image_count must be >= 1, got {self.image_count}")
        df = np.ascontiguousarray(self.doc_freq, dtype=np.int64)
        if df.ndim != 1 or df.size == 0:
            raise DimensionError(f"doc_freq must be a non-empty 1-D array, got shape {df.shape}")
        if df.min() < 0 or df.max() > self.image_count:
            raise DataError("doc_freq entries must lie in [0, image_count]")
        df.setflags(write=False)
        object.__setattr__(self, "doc_freq", df)

    @property
    def vocab_size(self) -> int:
        return int(self.doc_freq.shape[0])


def update_tfidf_stats(presence_sets: Iterable, vocab_size: int) -> TfIdfStats:
    """Fold per-image word-presence sets into corpus statistics."""
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    doc_freq = np.zeros(vocab_size, dtype=np.int64)
    image_count = 0
    for present in presence_sets:
        idx = np.unique(np.fromiter(iter(present), dtype=np.int64, count=-1))
        if idx.size and (idx.min() < 0 or idx.max() >= vocab_size):
            raise DataError(f"word index outside [0, {vocab_size}) in presence set")
        doc_freq[idx] += 1
        image_count += 1
    if image_count == 0:
        raise InsufficientDataError("no presence sets provided")
    return TfIdfStats(image_count=image_count, doc_freq=doc_freq)


def _descriptor_matrix(descriptors, codebook: Codebook) -> np.ndarray:
    arr = np.asarray(descriptors, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"descriptors must have shape (n, d), got {arr.shape}")
    if arr.shape[0] > 0 and arr.shape[1] != codebook.dim:
        raise DimensionError(f"descriptor dim {arr.shape[1]} does not match codebook dim {codebook.dim}")
    if not np.all(np.isfinite(arr)):
        raise DataError("descriptors contain non-finite values")
    return arr


def _vlad_from_assignments(
    x: np.ndarray,
    idx: np.ndarray,
    codebook: Codebook,
    intra_norm: bool,
) -> np.ndarray:
    k, d = codebook.k, codebook.dim
    if x.shape[0] == 0:
        return np.zeros(k * d, dtype=STORAGE_DTYPE)
    sums = np.empty((k, d), dtype=np.float64)
    for j in range(d):
        sums[:, j] = np.bincount(idx, weights=x[:, j], minlength=k)
    counts = np.bincount(idx, minlength=k).astype(np.float64)
    blocks = sums - counts[:, None] * codebook.centroids.astype(np.float64)
    if intra_norm:
        norms = np.linalg.norm(blocks, axis=1)
        blocks = blocks / np.where(norms > NORM_EPS, norms, 1.0)[:, None]
    flat = blocks.reshape(-1)
    flat = np.sign(flat) * np.sqrt(np.abs(flat))
    norm = float(np.linalg.norm(flat))
    if norm > NORM_EPS:
        flat = flat / norm
    return flat.astype(STORAGE_DTYPE)


def vlad_encode(descriptors, codebook: Codebook, *, intra_norm: bool = False) -> np.ndarray:
    """Aggregate descriptors into a (k*d,) residual vector.

    Each descriptor contributes its residual against the nearest centroid;
    the concatenated residual sums pass through a signed square root and a
    final L2 normalization. Empty input yields the zero vector (which skips
    normalization). ``intra_norm`` L2-normalizes each centroid block before
    the signed square root.
    """
    x = _descriptor_matrix(descriptors, codebook)
    if x.shape[0] == 0:
        return np.zeros(codebook.k * codebook.dim, dtype=STORAGE_DTYPE)
    idx = assign_batch(x, codebook)
    return _vlad_from_assignments(x, idx, codebook, intra_norm)


def _cell_indices(xy: np.ndarray, level: int) -> np.ndarray:
    # A coordinate of exactly 1.0 belongs to the last cell.
    cols = np.minimum((xy[:, 0] * level).astype(np.int64), level - 1)
    rows = np.minimum((xy[:, 1] * level).astype(np.int64), level - 1)
    return rows * level + cols


def spvp_encode(
    fmap: LocalFeatureMap,
    codebook: Codebook,
    config: PyramidConfig | None = None,
    patch_pca: PCAModel | None = None,
    *,
    intra_norm: bool = False,
    normalize_patches: bool = True,
) -> Descriptor:
    """Spatially pooled VLAD: one VLAD per grid cell, concatenated, L2-normalized.

    Cell order is fixed (levels as configured, row-major within a level), so
    two images with the same features in different cells produce different
    descriptors. Empty cells contribute zero blocks. When ``patch_pca`` is
    given each non-empty cell is projected to ``patch_pca.out_dim`` first and,
    with ``normalize_patches``, re-normalized after projection.
    """
    config = config if config is not None else PyramidConfig()
    k, d = codebook.k, codebook.dim
    per_patch = k * d
    if patch_pca is not None:
        if patch_pca.in_dim != k * d:
            raise DimensionError(
                f"patch PCA expects in_dim {patch_pca.in_dim}, codebook produces {k * d}"
            )
        per_patch = patch_pca.out_dim
    if config.per_patch_dim is not None and config.per_patch_dim != per_patch:
        raise DimensionError(
            f"config declares per_patch_dim {config.per_patch_dim}, cells produce {per_patch}"
        )

    x = _descriptor_matrix(fmap.descriptors, codebook)
    idx = assign_batch(x, codebook) if x.shape[0] else np.empty(0, dtype=np.int64)
    blocks: list[np.ndarray] = []
    for level in config.levels:
        cells = _cell_indices(fmap.xy, level) if x.shape[0] else np.empty(0, dtype=np.int64)
        for cell in range(level * level):
            mask = cells == cell
            if not mask.any():
                blocks.append(np.zeros(per_patch, dtype=STORAGE_DTYPE))
                continue
            vec = _vlad_from_assignments(x[mask], idx[mask], codebook, intra_norm)
            if patch_pca is not None:
                vec = pca_apply(patch_pca, vec, normalize=normalize_patches)
            blocks.append(vec.astype(STORAGE_DTYPE))
    flat = np.concatenate(blocks).astype(np.float64)
    norm = float(np.linalg.norm(flat))
    if norm > NORM_EPS:
        flat = flat / norm
    return Descriptor(image_id=fmap.image_id, method=Method.SPVP, values=flat.astype(STORAGE_DTYPE))


def bovw_encode(
    descriptors,
    codebook: Codebook,
    stats: TfIdfStats,
    *,
    normalize: bool = True,
) -> np.ndarray:
    """TF-IDF weighted visual-word histogram.

    Word i gets (n_id / n_d) * log(N / N_i), where n_id counts occurrences in
    this image, n_d the image's feature total, N the corpus image count, and
    N_i the word's document frequency. Words with N_i = 0 or N_i = N carry no
    information and get weight zero. Empty input yields the zero vector.
    """
    if stats.vocab_size != codebook.k:
        raise DimensionError(f"stats cover {stats.vocab_size} words, codebook has {codebook.k}")
    x = _descriptor_matrix(descriptors, codebook)
    if x.shape[0] == 0:
        return np.zeros(codebook.k, dtype=STORAGE_DTYPE)
    idx = assign_batch(x, codebook)
    counts = np.bincount(idx, minlength=codebook.k)
    return tfidf_from_counts(counts, stats, normalize=normalize)


def tfidf_from_counts(word_counts, stats: TfIdfStats, *, normalize: bool = True) -> np.ndarray:
    """TF-IDF vector from a per-word occurrence count vector."""
    counts = np.asarray(word_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.shape[0] != stats.vocab_size:
        raise DimensionError(f"expected {stats.vocab_size} word counts, got shape {counts.shape}")
    total = float(counts.sum())
    if total <= 0:
        return np.zeros(stats.vocab_size, dtype=STORAGE_DTYPE)
    tf = counts / total
    df = stats.doc_freq.astype(np.float64)
    informative = (df > 0) & (df < stats.image_count)
    idf = np.zeros(stats.vocab_size, dtype=np.float64)
    idf[informative] = np.log(stats.image_count / df[informative])
    weighted = tf * idf
    if normalize:
        norm = float(np.linalg.norm(weighted))
        if norm > NORM_EPS:
            weighted = weighted / norm
    return weighted.astype(STORAGE_DTYPE)


def pool_baseline(descriptors, method: Method, p: float = DEFAULT_GEM_P) -> np.ndarray:
    """Orderless pooling baselines: elementwise max (MAC), mean (SPoC), or
    generalized mean (GeM) over the feature set, L2-normalized.

    GeM requires p >= 1; when negative components are present the whole set
    is shifted by its minimum so the fractional power is defined. SPoC of an
    empty set is the zero vector; MAC and GeM need at least one feature.
    """
    arr = np.asarray(descriptors, dtype=np.float64)
    if arr.ndim != 2 or (arr.shape[0] > 0 and arr.shape[1] < 1):
        raise DimensionError(f"descriptors must have shape (n, d), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("descriptors contain non-finite values")
    if arr.shape[0] == 0:
        if method is Method.SPOC:
            return np.zeros(arr.shape[1], dtype=STORAGE_DTYPE)
        raise InsufficientDataError(f"{method.value} pooling needs at least one feature")

    if method is Method.MAC:
        pooled = arr.max(axis=0)
    elif method is Method.SPOC:
        pooled = arr.mean(axis=0)
    elif method is Method.GEM:
        if p < 1.0:
            raise ValueError(f"GeM exponent must be >= 1, got {p}")
        shifted = arr
        low = arr.min()
        if low < 0.0:
            shifted = arr - low
        pooled = np.power(shifted, p).mean(axis=0) ** (1.0 / p)
    else:
        raise ValueError(f"{method.value} is not a pooling baseline")

    norm = float(np.linalg.norm(pooled))
    if norm > NORM_EPS:
        pooled = pooled / norm
    return pooled.astype(STORAGE_DTYPE)


def encode_map(
    fmap: LocalFeatureMap,
    method: Method,
    *,
    codebook: Codebook | None = None,
    config: PyramidConfig | None = None,
    patch_pca: PCAModel | None = None,
    stats: TfIdfStats | None = None,
    gem_p: float = DEFAULT_GEM_P,
    final_pca: PCAModel | None = None,
    intra_norm: bool = False,
    normalize_patches: bool = True,
) -> Descriptor:
    """Encode one feature map with the requested method, as a :class:`Descriptor`."""
    if method is Method.SPVP:
        if codebook is None:
            raise ValueError("spvp requires a codebook")
        desc = spvp_encode(
            fmap,
            codebook,
            config,
            patch_pca,
            intra_norm=intra_norm,
            normalize_patches=normalize_patches,
        )
    elif method is Method.VLAD:
        if codebook is None:
            raise ValueError("vlad requires a codebook")
        values = vlad_encode(fmap.descriptors, codebook, intra_norm=intra_norm)
        desc = Descriptor(image_id=fmap.image_id, method=method, values=values)
    elif method is Method.BOVW:
        if codebook is None or stats is None:
            raise ValueError("bovw requires a codebook and corpus statistics")
        values = bovw_encode(fmap.descriptors, codebook, stats)
        desc = Descriptor(image_id=fmap.image_id, method=method, values=values)
    else:
        values = pool_baseline(fmap.descriptors, method, p=gem_p)
        desc = Descriptor(image_id=fmap.image_id, method=method, values=values)

    if final_pca is not None:
        projected = pca_apply(final_pca, desc.values, normalize=True)
        desc = Descriptor(image_id=desc.image_id, method=desc.method, values=projected)
    return desc
