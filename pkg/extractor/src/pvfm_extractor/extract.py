"""Run the bundled model over images and write one feature file per image.

Images are batched by size for inference; score standardization happens per
image inside the model, so results do not depend on how batches are grouped.
Unreadable images are skipped with a warning in the summary; everything else
about a job failing is an error, because a partial silent result would poison
the downstream index.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

from .core import DataError
from .model import LoadedBundle
from .pvfm import write_feature_file

_BATCH_LIMIT = 8
_MIN_NORM = 1e-6


@dataclass(frozen=True)
class ExtractionJob:
    """What to extract: which images, where to, and the selection knobs."""

    image_paths: tuple[Path, ...]
    out_dir: Path
    descriptor_dim: int = 40
    max_features: int = 200
    score_threshold: float = 0.75

    def __post_init__(self) -> None:
        if not self.image_paths:
            raise ValueError("image_paths must be non-empty")
        if self.descriptor_dim < 1:
            raise ValueError(f"descriptor_dim must be >= 1, got {self.descriptor_dim}")
        if self.max_features < 1:
            raise ValueError(f"max_features must be >= 1, got {self.max_features}")
        if not np.isfinite(self.score_threshold) or self.score_threshold < 0:
            raise ValueError(f"score_threshold must be finite and >= 0, got {self.score_threshold}")
        stems: dict[str, Path] = {}
        for path in self.image_paths:
            other = stems.setdefault(Path(path).stem, Path(path))
            if other != Path(path):
                raise ValueError(f"duplicate output name {Path(path).stem!r}: {other} and {path}")


@dataclass(frozen=True)
class ImageResult:
    """Outcome for one input image; ``skipped`` holds the reason when set."""

    image_path: Path
    out_path: Path | None
    feature_count: int
    skipped: str | None = None


@dataclass(frozen=True)
class ExtractionSummary:
    results: tuple[ImageResult, ...]

    @property
    def written(self) -> tuple[ImageResult, ...]:
        return tuple(r for r in self.results if r.skipped is None)

    @property
    def skipped(self) -> tuple[ImageResult, ...]:
        return tuple(r for r in self.results if r.skipped is not None)


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def _batches_by_size(
    loaded: Sequence[tuple[Path, np.ndarray]],
) -> Iterator[list[tuple[Path, np.ndarray]]]:
    groups: dict[tuple[int, int], list[tuple[Path, np.ndarray]]] = {}
    for item in loaded:
        groups.setdefault(item[1].shape[:2], []).append(item)
    for group in groups.values():
        for start in range(0, len(group), _BATCH_LIMIT):
            yield group[start : start + _BATCH_LIMIT]


def _select_features(
    job: ExtractionJob, bundle: LoadedBundle, feat_map: np.ndarray, score_map: np.ndarray, size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    height, width = size
    rows, cols = np.nonzero(score_map > job.score_threshold)
    order = np.lexsort((cols, rows, -score_map[rows, cols]))[: job.max_features]
    rows, cols = rows[order], cols[order]

    desc = feat_map[:, rows, cols].T.astype(np.float64)
    xy = np.column_stack(
        [
            np.clip((cols + 0.5) * bundle.stride / width, 0.0, 1.0),
            np.clip((rows + 0.5) * bundle.stride / height, 0.0, 1.0),
        ]
    )
    norms = np.linalg.norm(desc, axis=1)
    keep = norms > _MIN_NORM
    desc, xy = desc[keep] / norms[keep, None], xy[keep]

    projected = (desc - bundle.pca_mean.astype(np.float64)) @ bundle.pca_components.astype(np.float64).T
    norms = np.linalg.norm(projected, axis=1)
    keep = norms > _MIN_NORM
    return xy[keep], (projected[keep] / norms[keep, None]).astype(np.float32)


def extract_features(job: ExtractionJob, bundle: LoadedBundle) -> ExtractionSummary:
    """Write ``<stem>.pvfm`` per readable image; returns per-image outcomes
    in input order."""
    if job.descriptor_dim != bundle.descriptor_dim:
        raise DataError(
            f"job wants {job.descriptor_dim}-D descriptors, bundle projects to {bundle.descriptor_dim}"
        )
    torch.set_num_threads(1)
    outcomes: dict[Path, ImageResult] = {}
    loaded = []
    for path in job.image_paths:
        path = Path(path)
        try:
            loaded.append((path, _load_rgb(path)))
        except (OSError, ValueError) as exc:
            outcomes[path] = ImageResult(path, None, 0, skipped=str(exc))

    for batch in _batches_by_size(loaded):
        stack = torch.from_numpy(np.stack([rgb for _, rgb in batch])).permute(0, 3, 1, 2)
        with torch.no_grad():
            feats, scores = bundle.model(stack)
        for i, (path, rgb) in enumerate(batch):
            height, width = rgb.shape[:2]
            xy, desc = _select_features(
                job, bundle, feats[i].numpy(), scores[i].numpy(), (height, width)
            )
            if desc.shape[0] == 0:
                desc = np.empty((0, job.descriptor_dim), dtype=np.float32)
                xy = np.empty((0, 2), dtype=np.float32)
            out_path = Path(job.out_dir) / f"{path.stem}.pvfm"
            write_feature_file(out_path, xy, desc, width, height)
            outcomes[path] = ImageResult(path, out_path, desc.shape[0])

    return ExtractionSummary(results=tuple(outcomes[Path(p)] for p in job.image_paths))
