import numpy as np
import pytest
from PIL import Image

from pvfm_extractor import load_bundle, make_bundle


@pytest.fixture(scope="session")
def bundle_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "model.pt"
    make_bundle(path, seed=0)
    return path


@pytest.fixture(scope="session")
def bundle(bundle_path):
    return load_bundle(bundle_path)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    """Three noisy scenes (mixed sizes and formats) plus one solid-color image."""
    out = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(3)
    for name, (width, height) in (
        ("scene_0.png", (96, 64)),
        ("scene_1.jpg", (128, 96)),
        ("scene_2.png", (64, 64)),
    ):
        arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        Image.fromarray(arr).save(out / name)
    Image.new("RGB", (96, 64), (120, 80, 40)).save(out / "blank.png")
    return out
