"""Command-line interface.

Subcommands cover each pipeline stage (synth, sample, train-codebook,
fit-pca, encode, index, search, evaluate, sweep) plus the data checks
(validate-manifest, inspect-features) and a ``pipeline`` command that chains
the stages over one working directory. Exit codes: 0 success, 1 usage error,
2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codebook import Codebook, assign_batch, sample_features, train_codebook
from .core import (
    DataError,
    Descriptor,
    EngineError,
    LocalFeatureMap,
    Method,
    STORAGE_DTYPE,
)
from .encoders import (
    DEFAULT_GEM_P,
    PyramidConfig,
    TfIdfStats,
    encode_map,
    tfidf_from_counts,
    update_tfidf_stats,
    vlad_encode,
)
from .evaluation import threshold_sweep
from .index import DescriptorIndex, build_index, search_knn_batch
from .io import (
    Manifest,
    SPLIT_DATABASE,
    SPLIT_QUERY,
    atomic_write,
    iter_feature_maps,
    load_codebook,
    load_feature_map,
    load_index,
    load_manifest,
    load_pca_model,
    load_results,
    save_codebook,
    save_index,
    save_pca_model,
    save_results,
)
from .pca import PCAModel, pca_fit
from .report import render_report_figures, write_first_hit_table, write_report_table
from .synth import SynthConfig, generate_synthetic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

WORKERS_ENV = "PLACEVLAD_WORKERS"

DEFAULT_TOP_N = 20
DEFAULT_THRESHOLDS = (10.0, 20.0, 30.0, 40.0, 50.0)
DEFAULT_N_VALUES = (1, 5, 10, 20)


class UsageError(Exception):
    """Flag combination that argparse alone cannot reject."""


class _Progress:
    """Throttled progress lines on stderr: stage, items done, rate."""

    def __init__(self, stage: str, total: int, interval: float = 0.5):
        self.stage = stage
        self.total = total
        self.done = 0
        self.interval = interval
        self.started = time.monotonic()
        self.last_emit = 0.0

    def step(self, count: int = 1) -> None:
        self.done += count
        now = time.monotonic()
        if now - self.last_emit >= self.interval:
            self._emit(now)

    def finish(self) -> None:
        self._emit(time.monotonic())

    def _emit(self, now: float) -> None:
        elapsed = max(now - self.started, 1e-9)
        rate = self.done / elapsed
        print(f"[{self.stage}] {self.done}/{self.total} ({rate:.1f}/s)", file=sys.stderr)
        self.last_emit = now


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_levels(text: str) -> tuple[int, ...]:
    try:
        levels = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"levels must be comma-separated integers, got {text!r}") from exc
    if not levels:
        raise UsageError("levels must be non-empty")
    return levels


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"{flag} must be comma-separated numbers, got {text!r}") from exc
    if not values:
        raise UsageError(f"{flag} must be non-empty")
    return values


def _parse_ints(text: str, flag: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _parse_floats(text, flag))


def _require_files(*paths: Path | str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise DataError(f"input file not found: {p}")


# ---------------------------------------------------------------------------
# stage helpers shared by individual commands and the pipeline

def _load_sample_file(path: Path | str) -> np.ndarray:
    _require_files(path)
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read sample file {path}: {exc}") from exc
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError(f"{path}: expected a non-empty (n, d) array, got shape {arr.shape}")
    return arr.astype(STORAGE_DTYPE)


def _sample_from_manifest(manifest: Manifest, target: int, seed: int, split: str) -> np.ndarray:
    records = manifest.split(split)
    if not records:
        raise DataError(f"manifest has no {split} rows to sample")
    progress = _Progress("sample", len(records))

    def _maps():
        for fmap in iter_feature_maps(records):
            progress.step()
            yield fmap

    sample = sample_features(_maps(), target, seed=seed)
    progress.finish()
    return sample


def _encode_split(
    manifest: Manifest,
    split: str,
    method: Method,
    *,
    codebook: Codebook | None,
    config: PyramidConfig,
    patch_pca: PCAModel | None,
    final_pca: PCAModel | None,
    stats: TfIdfStats | None,
    gem_p: float,
    intra_norm: bool,
    workers: int,
) -> list[Descriptor]:
    records = manifest.split(split)
    if not records:
        raise DataError(f"manifest has no {split} rows")
    progress = _Progress(f"encode:{split}", len(records))

    def one(fmap: LocalFeatureMap) -> Descriptor:
        desc = encode_map(
            fmap,
            method,
            codebook=codebook,
            config=config if method is Method.SPVP else None,
            patch_pca=patch_pca,
            stats=stats,
            gem_p=gem_p,
            final_pca=final_pca,
            intra_norm=intra_norm,
        )
        progress.step()
        return desc

    maps = iter_feature_maps(records)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, maps))
    else:
        out = [one(fmap) for fmap in maps]
    progress.finish()
    return out


def _bovw_stats(manifest: Manifest, codebook: Codebook) -> tuple[TfIdfStats, dict[str, np.ndarray]]:
    """Word counts per database image and the resulting corpus statistics."""
    records = manifest.database
    if not records:
        raise DataError("manifest has no database rows")
    progress = _Progress("tfidf", len(records))
    counts: dict[str, np.ndarray] = {}
    for fmap in iter_feature_maps(records):
        if fmap.count:
            idx = assign_batch(fmap.descriptors, codebook)
            counts[fmap.image_id] = np.bincount(idx, minlength=codebook.k)
        else:
            counts[fmap.image_id] = np.zeros(codebook.k, dtype=np.int64)
        progress.step()
    progress.finish()
    presence = (np.nonzero(c)[0] for c in counts.values())
    return update_tfidf_stats(presence, codebook.k), counts


def _encode_bovw_database(manifest: Manifest, codebook: Codebook, stats: TfIdfStats, counts: dict[str, np.ndarray]) -> list[Descriptor]:
    out = []
    for rec in manifest.database:
        values = tfidf_from_counts(counts[rec.image_id], stats)
        out.append(Descriptor(image_id=rec.image_id, method=Method.BOVW, values=values))
    return out


def _descriptors_to_file(descriptors: Sequence[Descriptor], path: Path | str) -> DescriptorIndex:
    index = build_index(descriptors)
    save_index(index, path)
    return index


def _index_to_descriptors(index: DescriptorIndex) -> Iterable[Descriptor]:
    for image_id in index.ids:
        yield index.get(image_id)


def _fit_pca_from_manifest(
    manifest: Manifest,
    codebook: Codebook,
    *,
    out_dim: int,
    whiten: bool,
    placement: str,
    config: PyramidConfig,
    intra_norm: bool,
    max_images: int,
    max_samples: int,
) -> PCAModel:
    records = manifest.database[:max_images]
    if not records:
        raise DataError("manifest has no database rows")
    progress = _Progress(f"fit-pca:{placement}", len(records))
    samples: list[np.ndarray] = []
    for fmap in iter_feature_maps(records):
        if placement == "patch":
            x = fmap.descriptors.astype(np.float64)
            idx = assign_batch(x, codebook) if fmap.count else np.empty(0, dtype=np.int64)
            for level in config.levels:
                cells = _cell_ids(fmap, level)
                for cell in range(level * level):
                    mask = cells == cell
                    if mask.any():
                        samples.append(vlad_encode(x[mask], codebook, intra_norm=intra_norm))
        else:
            from .encoders import spvp_encode

            samples.append(spvp_encode(fmap, codebook, config, intra_norm=intra_norm).values)
        progress.step()
        if len(samples) >= max_samples:
            break
    progress.finish()
    if not samples:
        raise DataError("no non-empty cells available to fit the projection")
    return pca_fit(np.stack(samples[:max_samples]), out_dim, whiten=whiten)


def _cell_ids(fmap: LocalFeatureMap, level: int) -> np.ndarray:
    if fmap.count == 0:
        return np.empty(0, dtype=np.int64)
    cols = np.minimum((fmap.xy[:, 0] * level).astype(np.int64), level - 1)
    rows = np.minimum((fmap.xy[:, 1] * level).astype(np.int64), level - 1)
    return rows * level + cols


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig(
        grid_rows=args.grid_rows,
        grid_cols=args.grid_cols,
        grid_step_m=args.grid_step_m,
        yaw_count=args.yaw_count,
        features_per_image=args.features_per_image,
        descriptor_dim=args.descriptor_dim,
        cluster_count=args.cluster_count,
        repetitive_fraction=args.repetitive_fraction,
        viewpoint_shift=args.viewpoint_shift,
        descriptor_jitter=args.descriptor_jitter,
        query_count=args.query_count,
        seed=args.seed,
    )
    manifest = generate_synthetic(config, args.out)
    print(f"wrote {len(manifest.database)} database and {len(manifest.queries)} query images to {args.out}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    if args.target < 1:
        raise UsageError("--target must be >= 1")
    _require_files(args.manifest)
    manifest = load_manifest(args.manifest)
    sample = _sample_from_manifest(manifest, args.target, args.seed, args.split)
    with atomic_write(args.out) as handle:
        np.save(handle, sample)
    print(f"sampled {sample.shape[0]} descriptors of dim {sample.shape[1]} to {args.out}")
    return EXIT_OK


def cmd_train_codebook(args: argparse.Namespace) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    if args.max_iters < 1:
        raise UsageError("--max-iters must be >= 1")
    sample = _load_sample_file(args.features)
    codebook = train_codebook(sample, args.k, max_iters=args.max_iters, seed=args.seed, workers=args.workers)
    save_codebook(codebook, args.out)
    meta = codebook.training_meta
    assert meta is not None
    print(
        f"trained k={codebook.k} codebook in {meta.iterations} iterations, "
        f"final inertia {meta.final_inertia:.6g}, wrote {args.out}"
    )
    return EXIT_OK


def cmd_fit_pca(args: argparse.Namespace) -> int:
    if args.out_dim < 1:
        raise UsageError("--out-dim must be >= 1")
    if args.max_images < 1 or args.max_samples < 1:
        raise UsageError("--max-images and --max-samples must be >= 1")
    levels = _parse_levels(args.levels)
    _require_files(args.manifest, args.codebook)
    manifest = load_manifest(args.manifest)
    codebook = load_codebook(args.codebook)
    model = _fit_pca_from_manifest(
        manifest,
        codebook,
        out_dim=args.out_dim,
        whiten=args.whiten,
        placement=args.placement,
        config=PyramidConfig(levels=levels),
        intra_norm=args.intra_norm,
        max_images=args.max_images,
        max_samples=args.max_samples,
    )
    save_pca_model(model, args.out)
    print(f"fit {model.in_dim}->{model.out_dim} projection (whiten={model.whiten}), wrote {args.out}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    method = Method(args.method)
    if args.gem_p < 1.0:
        raise UsageError("--gem-p must be >= 1")
    splits = [SPLIT_DATABASE, SPLIT_QUERY] if args.split == "both" else [args.split]
    outs = {SPLIT_DATABASE: args.out_db, SPLIT_QUERY: args.out_query}
    for split in splits:
        if outs[split] is None:
            flag = "--out-db" if split == SPLIT_DATABASE else "--out-query"
            raise UsageError(f"{flag} is required for split {split}")
    needs_codebook = method in (Method.SPVP, Method.VLAD, Method.BOVW)
    if needs_codebook and args.codebook is None:
        raise UsageError(f"--codebook is required for method {method.value}")
    levels = _parse_levels(args.levels)
    _require_files(args.manifest, args.codebook, args.patch_pca, args.final_pca)

    manifest = load_manifest(args.manifest)
    codebook = load_codebook(args.codebook) if args.codebook else None
    patch_pca = load_pca_model(args.patch_pca) if args.patch_pca else None
    final_pca = load_pca_model(args.final_pca) if args.final_pca else None
    config = PyramidConfig(levels=levels)

    stats: TfIdfStats | None = None
    counts: dict[str, np.ndarray] | None = None
    if method is Method.BOVW:
        assert codebook is not None
        stats, counts = _bovw_stats(manifest, codebook)

    for split in splits:
        if method is Method.BOVW and split == SPLIT_DATABASE:
            assert stats is not None and counts is not None
            descriptors = _encode_bovw_database(manifest, codebook, stats, counts)
        else:
            descriptors = _encode_split(
                manifest,
                split,
                method,
                codebook=codebook,
                config=config,
                patch_pca=patch_pca,
                final_pca=final_pca,
                stats=stats,
                gem_p=args.gem_p,
                intra_norm=args.intra_norm,
                workers=args.workers,
            )
        index = _descriptors_to_file(descriptors, outs[split])
        print(f"encoded {index.count} {split} descriptors of dim {index.dim} to {outs[split]}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    _require_files(*args.descriptors)
    parts = [load_index(p) for p in args.descriptors]
    merged: list[Descriptor] = []
    for part in parts:
        merged.extend(_index_to_descriptors(part))
    index = build_index(merged)
    save_index(index, args.out)
    print(f"indexed {index.count} descriptors of dim {index.dim} ({index.method.value}) to {args.out}")
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    if args.top_n < 1:
        raise UsageError("--top-n must be >= 1")
    _require_files(args.index, args.queries)
    index = load_index(args.index)
    queries = load_index(args.queries)
    batch = list(_index_to_descriptors(queries))
    results = search_knn_batch(index, batch, args.top_n)
    save_results(results, args.out)
    print(f"searched {len(results)} queries (top {min(args.top_n, index.count)}), wrote {args.out}")
    return EXIT_OK


def _run_reports(args: argparse.Namespace, thresholds: Sequence[float]) -> int:
    n_values = _parse_ints(args.n_values, "--n-values")
    if any(n < 1 for n in n_values):
        raise UsageError("--n-values entries must be >= 1")
    if any(t <= 0 for t in thresholds):
        raise UsageError("thresholds must be positive")
    _require_files(args.results, args.manifest)
    results = load_results(args.results)
    manifest = load_manifest(args.manifest, check_files=False)
    reports = threshold_sweep(
        results,
        manifest.geo_records(SPLIT_QUERY),
        manifest.geo_records(SPLIT_DATABASE),
        thresholds,
        n_values,
        exclude_uncoverable=args.exclude_uncoverable,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_table(reports, out_dir / "report.tsv")
    write_first_hit_table(reports, out_dir / "first_hits.tsv")
    written = [out_dir / "report.tsv", out_dir / "first_hits.tsv"]
    if args.figures:
        written += render_report_figures(reports, out_dir / "figures")
    for report in reports:
        summary = ", ".join(f"r@{n}={report.recall_at[n]:.3f}" for n in report.n_values)
        print(f"D={report.threshold_m:g}m: {summary}")
    print(f"wrote {', '.join(str(p) for p in written)}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.threshold_m <= 0:
        raise UsageError("--threshold-m must be positive")
    return _run_reports(args, [args.threshold_m])


def cmd_sweep(args: argparse.Namespace) -> int:
    thresholds = _parse_floats(args.thresholds, "--thresholds")
    return _run_reports(args, thresholds)


def cmd_validate_manifest(args: argparse.Namespace) -> int:
    _require_files(args.manifest)
    manifest = load_manifest(args.manifest, check_files=True)
    dim = None
    if args.check_features:
        total = 0
        for fmap in iter_feature_maps(manifest.records):
            dim = fmap.dim if dim is None else dim
            total += fmap.count
        print(f"features: {total} across {len(manifest.records)} files, dim {dim}")
    print(
        f"manifest OK: {len(manifest.database)} database rows, "
        f"{len(manifest.queries)} query rows"
    )
    return EXIT_OK


def cmd_inspect_features(args: argparse.Namespace) -> int:
    _require_files(*args.paths)
    for path in args.paths:
        fmap = load_feature_map(path)
        if fmap.count:
            norms = np.linalg.norm(fmap.descriptors.astype(np.float64), axis=1)
            norm_range = f"[{norms.min():.6f}, {norms.max():.6f}]"
            x_range = f"[{fmap.xy[:, 0].min():.4f}, {fmap.xy[:, 0].max():.4f}]"
            y_range = f"[{fmap.xy[:, 1].min():.4f}, {fmap.xy[:, 1].max():.4f}]"
        else:
            norm_range = x_range = y_range = "[]"
        print(
            f"{path}: OK count={fmap.count} dim={fmap.dim} "
            f"normalized={fmap.descriptors_normalized()} norms={norm_range} "
            f"x={x_range} y={y_range} source={fmap.source_width}x{fmap.source_height}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class PipelineConfig:
    """Everything the end-to-end pipeline needs; flags override config-file
    values, which override these defaults."""

    manifest: Path
    workdir: Path
    method: Method = Method.SPVP
    k: int = 64
    sample_target: int = 20000
    max_iters: int = 100
    levels: tuple[int, ...] = (1, 2, 4)
    pca_dim: int | None = None
    pca_placement: str = "patch"
    whiten: bool = False
    intra_norm: bool = False
    gem_p: float = DEFAULT_GEM_P
    top_n: int = DEFAULT_TOP_N
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    n_values: tuple[int, ...] = DEFAULT_N_VALUES
    exclude_uncoverable: bool = False
    figures: bool = True
    seed: int = 0
    workers: int = 1
    force: bool = False

    def __post_init__(self) -> None:
        if self.k < 1 or self.sample_target < 1 or self.max_iters < 1:
            raise UsageError("k, sample_target, and max_iters must be >= 1")
        if self.top_n < 1:
            raise UsageError("top_n must be >= 1")
        if any(n < 1 for n in self.n_values):
            raise UsageError("n_values entries must be >= 1")
        if max(self.n_values) > self.top_n:
            raise UsageError(f"n_values go up to {max(self.n_values)} but top_n is {self.top_n}")
        if any(t <= 0 for t in self.thresholds):
            raise UsageError("thresholds must be positive")
        if self.pca_placement not in ("patch", "final"):
            raise UsageError(f"pca_placement must be 'patch' or 'final', got {self.pca_placement!r}")
        if self.gem_p < 1.0:
            raise UsageError("gem_p must be >= 1")


def run_pipeline(cfg: PipelineConfig) -> Path:
    """Run sample -> train -> (fit-pca) -> encode -> index -> search -> sweep.

    Stage outputs live under ``cfg.workdir`` and are reused when present
    (unless ``force``), so an interrupted run resumes where it stopped.
    Returns the report directory.
    """
    _require_files(cfg.manifest)
    manifest = load_manifest(cfg.manifest)
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    def fresh(path: Path) -> bool:
        return cfg.force or not path.exists()

    method = cfg.method
    needs_codebook = method in (Method.SPVP, Method.VLAD, Method.BOVW)
    config = PyramidConfig(levels=cfg.levels)

    codebook = None
    codebook_path = workdir / "codebook.pvcb"
    if needs_codebook:
        if fresh(codebook_path):
            sample_path = workdir / "samples.npy"
            if fresh(sample_path):
                sample = _sample_from_manifest(manifest, cfg.sample_target, cfg.seed, SPLIT_DATABASE)
                with atomic_write(sample_path) as handle:
                    np.save(handle, sample)
            else:
                sample = _load_sample_file(sample_path)
            codebook = train_codebook(sample, cfg.k, max_iters=cfg.max_iters, seed=cfg.seed, workers=cfg.workers)
            save_codebook(codebook, codebook_path)
        else:
            codebook = load_codebook(codebook_path)

    patch_pca = final_pca = None
    if cfg.pca_dim is not None and method is Method.SPVP:
        pca_path = workdir / "pca.pvpc"
        if fresh(pca_path):
            assert codebook is not None
            model = _fit_pca_from_manifest(
                manifest,
                codebook,
                out_dim=cfg.pca_dim,
                whiten=cfg.whiten,
                placement=cfg.pca_placement,
                config=config,
                intra_norm=cfg.intra_norm,
                max_images=len(manifest.database),
                max_samples=max(4 * cfg.pca_dim, 1024),
            )
            save_pca_model(model, pca_path)
        else:
            model = load_pca_model(pca_path)
        if cfg.pca_placement == "patch":
            patch_pca = model
        else:
            final_pca = model
    elif cfg.pca_dim is not None:
        raise UsageError(f"pca_dim only applies to method spvp, not {method.value}")

    db_path = workdir / "db.pvix"
    query_path = workdir / "query.pvix"
    stats = counts = None
    if method is Method.BOVW and (fresh(db_path) or fresh(query_path)):
        assert codebook is not None
        stats, counts = _bovw_stats(manifest, codebook)
    for split, out_path in ((SPLIT_DATABASE, db_path), (SPLIT_QUERY, query_path)):
        if not fresh(out_path):
            continue
        if method is Method.BOVW and split == SPLIT_DATABASE:
            assert codebook is not None and stats is not None and counts is not None
            descriptors = _encode_bovw_database(manifest, codebook, stats, counts)
        else:
            descriptors = _encode_split(
                manifest,
                split,
                method,
                codebook=codebook,
                config=config,
                patch_pca=patch_pca,
                final_pca=final_pca,
                stats=stats,
                gem_p=cfg.gem_p,
                intra_norm=cfg.intra_norm,
                workers=cfg.workers,
            )
        _descriptors_to_file(descriptors, out_path)

    index_path = workdir / "index.pvix"
    if fresh(index_path):
        save_index(load_index(db_path), index_path)

    results_path = workdir / "results.tsv"
    if fresh(results_path):
        index = load_index(index_path)
        queries = list(_index_to_descriptors(load_index(query_path)))
        results = search_knn_batch(index, queries, cfg.top_n)
        save_results(results, results_path)

    report_dir = workdir / "report"
    results = load_results(results_path)
    reports = threshold_sweep(
        results,
        manifest.geo_records(SPLIT_QUERY),
        manifest.geo_records(SPLIT_DATABASE),
        cfg.thresholds,
        cfg.n_values,
        exclude_uncoverable=cfg.exclude_uncoverable,
    )
    report_dir.mkdir(parents=True, exist_ok=True)
    write_report_table(reports, report_dir / "report.tsv")
    write_first_hit_table(reports, report_dir / "first_hits.tsv")
    if cfg.figures:
        render_report_figures(reports, report_dir / "figures")
    return report_dir


def _pipeline_config_from_args(args: argparse.Namespace) -> PipelineConfig:
    file_values: dict = {}
    if args.config is not None:
        _require_files(args.config)
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"cannot parse config file {args.config}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise DataError(f"config file {args.config} must hold a JSON object")
        allowed = {f.name for f in fields(PipelineConfig)}
        unknown = set(file_values) - allowed
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def pick(name: str, default, convert=None):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in file_values:
            value = file_values[name]
            return convert(value) if convert else value
        return default

    manifest = pick("manifest", None)
    workdir = pick("workdir", None)
    if manifest is None or workdir is None:
        raise UsageError("manifest and workdir are required (flags or config file)")
    return PipelineConfig(
        manifest=Path(manifest),
        workdir=Path(workdir),
        method=Method(pick("method", Method.SPVP.value)),
        k=int(pick("k", 64)),
        sample_target=int(pick("sample_target", 20000)),
        max_iters=int(pick("max_iters", 100)),
        levels=_parse_levels(args.levels) if args.levels is not None else tuple(file_values.get("levels", (1, 2, 4))),
        pca_dim=pick("pca_dim", None),
        pca_placement=pick("pca_placement", "patch"),
        whiten=bool(pick("whiten", False)),
        intra_norm=bool(pick("intra_norm", False)),
        gem_p=float(pick("gem_p", DEFAULT_GEM_P)),
        top_n=int(pick("top_n", DEFAULT_TOP_N)),
        thresholds=_parse_floats(args.thresholds, "--thresholds")
        if args.thresholds is not None
        else tuple(float(t) for t in file_values.get("thresholds", DEFAULT_THRESHOLDS)),
        n_values=_parse_ints(args.n_values, "--n-values")
        if args.n_values is not None
        else tuple(int(n) for n in file_values.get("n_values", DEFAULT_N_VALUES)),
        exclude_uncoverable=bool(pick("exclude_uncoverable", False)),
        figures=not args.no_figures and bool(file_values.get("figures", True)),
        seed=int(pick("seed", 0)),
        workers=int(pick("workers", _default_workers())),
        force=args.force,
    )


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _pipeline_config_from_args(args)
    report_dir = run_pipeline(cfg)
    print(f"report written to {report_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_workers_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--workers",
        type=int,
        default=_default_workers(),
        help=f"worker threads (default: ${WORKERS_ENV} or 1)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="placevlad", description="Place-recognition retrieval pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--grid-rows", type=int, default=10)
    p.add_argument("--grid-cols", type=int, default=10)
    p.add_argument("--grid-step-m", type=float, default=10.0)
    p.add_argument("--yaw-count", type=int, default=8)
    p.add_argument("--features-per-image", type=int, default=80)
    p.add_argument("--descriptor-dim", type=int, default=40)
    p.add_argument("--cluster-count", type=int, default=32)
    p.add_argument("--repetitive-fraction", type=float, default=0.3)
    p.add_argument("--viewpoint-shift", type=float, default=0.1)
    p.add_argument("--descriptor-jitter", type=float, default=0.1)
    p.add_argument("--query-count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="reservoir-sample descriptors for training")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--target", required=True, type=int)
    p.add_argument("--split", choices=[SPLIT_DATABASE, SPLIT_QUERY], default=SPLIT_DATABASE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train-codebook", help="k-means over sampled descriptors")
    p.add_argument("--features", required=True, type=Path, help="sample file from the sample stage (.npy)")
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_workers_flag(p)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_train_codebook)

    p = sub.add_parser("fit-pca", help="fit the per-cell (or final) projection")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--codebook", required=True, type=Path)
    p.add_argument("--out-dim", required=True, type=int)
    p.add_argument("--whiten", action="store_true")
    p.add_argument("--placement", choices=["patch", "final"], default="patch")
    p.add_argument("--levels", default="1,2,4")
    p.add_argument("--intra-norm", action="store_true")
    p.add_argument("--max-images", type=int, default=1000)
    p.add_argument("--max-samples", type=int, default=50000)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_fit_pca)

    p = sub.add_parser("encode", help="encode feature maps into image descriptors")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    p.add_argument("--codebook", type=Path)
    p.add_argument("--levels", default="1,2,4")
    p.add_argument("--patch-pca", type=Path)
    p.add_argument("--final-pca", type=Path)
    p.add_argument("--gem-p", type=float, default=DEFAULT_GEM_P)
    p.add_argument("--intra-norm", action="store_true")
    p.add_argument("--split", choices=[SPLIT_DATABASE, SPLIT_QUERY, "both"], default="both")
    p.add_argument("--out-db", type=Path)
    p.add_argument("--out-query", type=Path)
    _add_workers_flag(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("index", help="merge descriptor files into a search index")
    p.add_argument("--descriptors", required=True, nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="exact nearest-neighbor search")
    p.add_argument("--index", required=True, type=Path)
    p.add_argument("--queries", required=True, type=Path)
    p.add_argument("--top-n", type=int, default=DEFAULT_TOP_N)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="metrics at one distance threshold")
    p.add_argument("--results", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--threshold-m", type=float, default=25.0)
    p.add_argument("--n-values", default="1,5,10,20")
    p.add_argument("--exclude-uncoverable", action="store_true")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="metrics across distance thresholds")
    p.add_argument("--results", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--thresholds", default="10,20,30,40,50")
    p.add_argument("--n-values", default="1,5,10,20")
    p.add_argument("--exclude-uncoverable", action="store_true")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate-manifest", help="check manifest structure and files")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--no-check-features", dest="check_features", action="store_false")
    p.set_defaults(func=cmd_validate_manifest)

    p = sub.add_parser("inspect-features", help="validate and summarize feature files")
    p.add_argument("paths", nargs="+", type=Path)
    p.set_defaults(func=cmd_inspect_features)

    p = sub.add_parser("pipeline", help="run every stage over one working directory")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--workdir", type=Path)
    p.add_argument("--config", type=Path, help="JSON file with PipelineConfig fields; flags win")
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--k", type=int)
    p.add_argument("--sample-target", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--levels")
    p.add_argument("--pca-dim", type=int)
    p.add_argument("--pca-placement", choices=["patch", "final"])
    p.add_argument("--whiten", action="store_const", const=True)
    p.add_argument("--intra-norm", action="store_const", const=True)
    p.add_argument("--gem-p", type=float)
    p.add_argument("--top-n", type=int)
    p.add_argument("--thresholds")
    p.add_argument("--n-values")
    p.add_argument("--exclude-uncoverable", action="store_const", const=True)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
