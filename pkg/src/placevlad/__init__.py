"""Place-recognition retrieval: local features in, ranked place matches out.

The library covers the full pipeline: codebook training over sampled local
descriptors, image encoding (spatial-pyramid VLAD plus the usual pooled
baselines), exact nearest-neighbor search, and geographic evaluation. The
``placevlad`` command drives the same code from the shell.
"""
from .codebook import Codebook, TrainingMeta, assign, assign_batch, sample_features, train_codebook
from .core import (
    DataError,
    Descriptor,
    DimensionError,
    EngineError,
    GeoRecord,
    InsufficientDataError,
    LocalFeature,
    LocalFeatureMap,
    Method,
    euclidean_distance,
    l2_normalize,
    l2_normalize_rows,
)
from .encoders import (
    PyramidConfig,
    TfIdfStats,
    bovw_encode,
    encode_map,
    pool_baseline,
    spvp_encode,
    tfidf_from_counts,
    update_tfidf_stats,
    vlad_encode,
)
from .evaluation import (
    EvalReport,
    GroundTruth,
    build_ground_truth,
    evaluate,
    first_hit_ranks,
    haversine_m,
    mean_correct_at_n,
    precision_at_n,
    recall_at_n,
    threshold_sweep,
)
from .index import DescriptorIndex, RankedResult, build_index, search_knn, search_knn_batch
from .io import (
    Manifest,
    ManifestRecord,
    iter_feature_maps,
    load_codebook,
    load_feature_map,
    load_index,
    load_manifest,
    load_pca_model,
    load_results,
    save_codebook,
    save_feature_map,
    save_index,
    save_manifest,
    save_pca_model,
    save_results,
)
from .pca import PCAModel, pca_apply, pca_fit
from .synth import SynthConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "DataError",
    "Descriptor",
    "DescriptorIndex",
    "DimensionError",
    "EngineError",
    "EvalReport",
    "GeoRecord",
    "GroundTruth",
    "InsufficientDataError",
    "LocalFeature",
    "LocalFeatureMap",
    "Manifest",
    "ManifestRecord",
    "Method",
    "PCAModel",
    "PyramidConfig",
    "RankedResult",
    "SynthConfig",
    "TfIdfStats",
    "TrainingMeta",
    "assign",
    "assign_batch",
    "bovw_encode",
    "build_ground_truth",
    "build_index",
    "encode_map",
    "euclidean_distance",
    "evaluate",
    "first_hit_ranks",
    "generate_synthetic",
    "haversine_m",
    "l2_normalize",
    "l2_normalize_rows",
    "iter_feature_maps",
    "load_codebook",
    "load_feature_map",
    "load_index",
    "load_manifest",
    "load_pca_model",
    "load_results",
    "mean_correct_at_n",
    "pca_apply",
    "pca_fit",
    "pool_baseline",
    "precision_at_n",
    "recall_at_n",
    "sample_features",
    "save_codebook",
    "save_feature_map",
    "save_index",
    "save_manifest",
    "save_pca_model",
    "save_results",
    "search_knn",
    "search_knn_batch",
    "spvp_encode",
    "tfidf_from_counts",
    "threshold_sweep",
    "train_codebook",
    "update_tfidf_stats",
    "vlad_encode",
]
