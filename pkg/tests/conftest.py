import numpy as np
import pytest

from placevlad import Codebook, LocalFeatureMap


def unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_map(image_id: str, xy, descriptors, **kwargs) -> LocalFeatureMap:
    return LocalFeatureMap(
        image_id=image_id,
        xy=np.asarray(xy, dtype=np.float32),
        descriptors=np.asarray(descriptors, dtype=np.float32),
        **kwargs,
    )


def random_map(rng: np.random.Generator, image_id: str, count: int, dim: int) -> LocalFeatureMap:
    return make_map(image_id, rng.uniform(0, 1, size=(count, 2)), unit_rows(rng, count, dim))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def small_codebook() -> Codebook:
    rng = np.random.default_rng(11)
    return Codebook(centroids=unit_rows(rng, 8, 4))
