"""The extraction model: a small attentive CNN plus a fitted projection.

A bundle file carries everything inference needs: backbone weights, the
attention head, and the projection that takes backbone channels down to the
target descriptor dimension. ``make_bundle`` builds one deterministically
from a seed; any bundle with the same tensor schema drops in without code
changes, which is how better-trained weights would ship.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import DataError

BUNDLE_VERSION = 1

# Noise images used to fit the projection: enough cells across a few aspect
# ratios to make the retained directions full rank.
_CALIBRATION_SIZES = ((96, 128), (80, 96), (64, 64))
_CALIBRATION_PER_SIZE = 6


class AttentiveCnn(nn.Module):
    """Three stride-2 conv blocks and a 1x1 attention head.

    Replicate padding keeps the response to a single-color image constant
    across space, which is what pins attention scores at their resting value
    on blank input (see ``forward``).
    """

    def __init__(self, channels: int = 128):
        super().__init__()
        widths = (channels // 4, channels // 2, channels)
        layers: list[nn.Module] = []
        prev = 3
        for width in widths:
            layers.append(nn.Conv2d(prev, width, 3, stride=2, padding=1, padding_mode="replicate"))
            layers.append(nn.ReLU())
            prev = width
        self.backbone = nn.Sequential(*layers)
        self.attention = nn.Conv2d(channels, 1, 1)
        self.stride = 2 ** len(widths)
        self.channels = channels

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(b, 3, h, w) images in [0, 1] -> (channel maps, attention scores).

        Scores are softplus of per-image standardized attention logits: they
        sit at log 2 (~0.69) wherever the logit map is spatially constant and
        spread above and below it everywhere else, so a fixed threshold a bit
        above log 2 selects nothing on a blank image.
        """
        feats = self.backbone(images)
        logits = self.attention(feats).flatten(1)
        centered = logits - logits.mean(dim=1, keepdim=True)
        z = centered / (logits.std(dim=1, keepdim=True, correction=0) + 1e-6)
        scores = nn.functional.softplus(z)
        return feats, scores.reshape(feats.shape[0], feats.shape[2], feats.shape[3])


@dataclass(frozen=True)
class LoadedBundle:
    """A model ready for inference plus its projection, all on CPU."""

    model: AttentiveCnn
    pca_mean: np.ndarray
    pca_components: np.ndarray
    descriptor_dim: int

    @property
    def stride(self) -> int:
        return self.model.stride


def make_bundle(path: Path | str, seed: int = 0, channels: int = 128, descriptor_dim: int = 40) -> None:
    """Build a deterministic bundle: seeded weights, projection fitted on
    seeded noise images."""
    if channels < 8 or channels % 4:
        raise ValueError(f"channels must be a multiple of 4 and >= 8, got {channels}")
    if not 1 <= descriptor_dim <= channels:
        raise ValueError(f"descriptor_dim must be in [1, {channels}], got {descriptor_dim}")
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    model = AttentiveCnn(channels)
    model.eval()

    rng = np.random.default_rng(seed)
    collected = []
    with torch.no_grad():
        for height, width in _CALIBRATION_SIZES:
            for _ in range(_CALIBRATION_PER_SIZE):
                noise = rng.uniform(size=(1, 3, height, width)).astype(np.float32)
                feats, _ = model(torch.from_numpy(noise))
                collected.append(feats[0].flatten(1).T.numpy())
    sample = np.concatenate(collected).astype(np.float64)
    sample /= np.maximum(np.linalg.norm(sample, axis=1, keepdims=True), 1e-12)

    mean = sample.mean(axis=0)
    centered = sample - mean
    cov = centered.T @ centered / (sample.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    components = evecs[:, np.argsort(evals)[::-1][:descriptor_dim]].T
    # Fix each row's sign so refits are reproducible bit for bit.
    flips = np.sign(components[np.arange(descriptor_dim), np.argmax(np.abs(components), axis=1)])
    components *= flips[:, None]

    blob = {
        "version": BUNDLE_VERSION,
        "channels": channels,
        "descriptor_dim": descriptor_dim,
        "state": model.state_dict(),
        "pca_mean": torch.from_numpy(mean.astype(np.float32)),
        "pca_components": torch.from_numpy(components.astype(np.float32)),
    }
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, out)


def load_bundle(path: Path | str) -> LoadedBundle:
    """Load a bundle; any failure here aborts extraction, by contract."""
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise DataError(f"cannot load model bundle {path}: {exc}") from exc
    required = {"version", "channels", "descriptor_dim", "state", "pca_mean", "pca_components"}
    if not isinstance(blob, dict) or not required.issubset(blob):
        raise DataError(f"{path}: not a model bundle (missing {sorted(required - set(blob or ()))})")
    if blob["version"] != BUNDLE_VERSION:
        raise DataError(f"{path}: unsupported bundle version {blob['version']}")
    model = AttentiveCnn(int(blob["channels"]))
    try:
        model.load_state_dict(blob["state"])
    except RuntimeError as exc:
        raise DataError(f"{path}: bundle weights do not fit the model: {exc}") from exc
    model.eval()
    mean = blob["pca_mean"].numpy().astype(np.float32)
    components = blob["pca_components"].numpy().astype(np.float32)
    dim = int(blob["descriptor_dim"])
    if components.shape != (dim, model.channels) or mean.shape != (model.channels,):
        raise DataError(f"{path}: projection shapes {components.shape}/{mean.shape} do not match the model")
    return LoadedBundle(model=model, pca_mean=mean, pca_components=components, descriptor_dim=dim)
