"""Attentive CNN local-feature extraction to PVFM feature files.

Bridges real photographs into the place-recognition pipeline: a bundled
model scores every spatial cell of its feature map, the highest-scoring
cells become keypoints, and their channel vectors are projected to the
target dimension and written to one PVFM file per image.
"""
from .core import DataError, ExtractorError
from .extract import ExtractionJob, ExtractionSummary, ImageResult, extract_features
from .model import AttentiveCnn, LoadedBundle, load_bundle, make_bundle
from .pvfm import write_feature_file

__version__ = "0.1.0"

__all__ = [
    "AttentiveCnn",
    "DataError",
    "ExtractionJob",
    "ExtractionSummary",
    "ExtractorError",
    "ImageResult",
    "LoadedBundle",
    "extract_features",
    "load_bundle",
    "make_bundle",
    "write_feature_file",
]
