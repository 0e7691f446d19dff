"""On-disk formats: feature maps, codebooks, PCA models, descriptor indexes,
and the dataset manifest.

Binary files open with a four-byte magic and close with an eight-byte
checksum over everything in between. Loaders verify the checksum before
parsing a single field, so a corrupted or truncated file always fails with a
clear error instead of being misread. All integers and floats are
little-endian; vector data is float32.
"""
from __future__ import annotations

import csv
import hashlib
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .codebook import Codebook
from .core import (
    DataError,
    DimensionError,
    GeoRecord,
    LocalFeatureMap,
    Method,
    METHOD_TAGS,
    STORAGE_DTYPE,
    TAG_METHODS,
    UNIT_NORM_TOL,
    l2_normalize_rows,
)
from .index import DescriptorIndex, RankedResult
from .pca import PCAModel

FORMAT_VERSION = 1

MAGIC_FEATURES = b"PVFM"
MAGIC_CODEBOOK = b"PVCB"
MAGIC_PCA = b"PVPC"
MAGIC_INDEX = b"PVIX"

_CHECKSUM_LEN = 8

SPLIT_DATABASE = "database"
SPLIT_QUERY = "query"
_SPLITS = (SPLIT_DATABASE, SPLIT_QUERY)

MANIFEST_COLUMNS = ("image_id", "path", "latitude", "longitude", "yaw", "split")


# ---------------------------------------------------------------------------
# framing helpers

def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=_CHECKSUM_LEN).digest()


@contextmanager
def atomic_write(path: Path | str) -> Iterator:
    """Write to a sibling temp file and rename into place on success.

    On any failure the temp file is removed, so a crash never leaves a
    partial file at the target path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    tmp = Path(tmp_name)
    try:
        with os.fdopen(fd, "wb") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _write_framed(path: Path | str, magic: bytes, payload: bytes) -> None:
    with atomic_write(path) as handle:
        handle.write(magic)
        handle.write(payload)
        handle.write(_checksum(payload))


def _read_framed(path: Path | str, magic: bytes) -> bytes:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(data) < len(magic) + _CHECKSUM_LEN:
        raise DataError(f"{path}: file truncated ({len(data)} bytes)")
    if data[: len(magic)] != magic:
        raise DataError(f"{path}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
    payload, stored = data[len(magic) : -_CHECKSUM_LEN], data[-_CHECKSUM_LEN:]
    if _checksum(payload) != stored:
        raise DataError(f"{path}: checksum mismatch, file is corrupt")
    return payload


class _Reader:
    """Sequential struct reader over a verified payload."""

    def __init__(self, payload: bytes, path: Path | str):
        self.payload = payload
        self.path = path
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.payload):
            raise DataError(f"{self.path}: payload truncated")
        out = struct.unpack_from(fmt, self.payload, self.pos)
        self.pos += size
        return out

    def take_bytes(self, size: int) -> bytes:
        if size < 0 or self.pos + size > len(self.payload):
            raise DataError(f"{self.path}: payload truncated")
        out = self.payload[self.pos : self.pos + size]
        self.pos += size
        return out

    def take_f32(self, count: int) -> np.ndarray:
        raw = self.take_bytes(count * 4)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(STORAGE_DTYPE)

    def expect_end(self) -> None:
        if self.pos != len(self.payload):
            raise DataError(f"{self.path}: {len(self.payload) - self.pos} trailing bytes")

    def expect_version(self, version: int) -> None:
        if version != FORMAT_VERSION:
            raise DataError(f"{self.path}: unsupported format version {version}")


# ---------------------------------------------------------------------------
# feature maps

def save_feature_map(fmap: LocalFeatureMap, path: Path | str, normalized: bool | None = None) -> None:
    """Serialize a feature map. ``normalized`` defaults to whether every
    descriptor row actually has unit norm."""
    if normalized is None:
        normalized = fmap.descriptors_normalized()
    if fmap.dim > 65535 or fmap.source_width > 65535 or fmap.source_height > 65535:
        raise DataError("dim and source size must fit in 16-bit header fields")
    header = struct.pack(
        "<HBIHHH",
        FORMAT_VERSION,
        1 if normalized else 0,
        fmap.count,
        fmap.dim,
        fmap.source_width,
        fmap.source_height,
    )
    rows = np.hstack([fmap.xy, fmap.descriptors]).astype("<f4") if fmap.count else np.empty((0, 0), "<f4")
    _write_framed(path, MAGIC_FEATURES, header + rows.tobytes())


def load_feature_map(path: Path | str, expect_dim: int | None = None) -> LocalFeatureMap:
    """Load a feature map; descriptors are re-normalized when the file's
    normalized flag is unset."""
    reader = _Reader(_read_framed(path, MAGIC_FEATURES), path)
    version, normalized, count, dim, width, height = reader.take("<HBIHHH")
    reader.expect_version(version)
    if dim < 1:
        raise DataError(f"{path}: descriptor dim must be >= 1")
    if expect_dim is not None and dim != expect_dim:
        raise DimensionError(f"{path}: descriptor dim {dim} does not match expected {expect_dim}")
    rows = reader.take_f32(count * (2 + dim)).reshape(count, 2 + dim) if count else np.empty((0, 2 + dim), STORAGE_DTYPE)
    reader.expect_end()
    xy = rows[:, :2]
    desc = rows[:, 2:]
    if not normalized and count:
        desc = l2_normalize_rows(desc).astype(STORAGE_DTYPE)
    image_id = Path(path).stem
    return LocalFeatureMap(
        image_id=image_id,
        xy=xy,
        descriptors=desc,
        source_width=width,
        source_height=height,
    )


# ---------------------------------------------------------------------------
# codebooks

def save_codebook(codebook: Codebook, path: Path | str) -> None:
    header = struct.pack("<HII", FORMAT_VERSION, codebook.k, codebook.dim)
    _write_framed(path, MAGIC_CODEBOOK, header + codebook.centroids.astype("<f4").tobytes())


def load_codebook(path: Path | str) -> Codebook:
    reader = _Reader(_read_framed(path, MAGIC_CODEBOOK), path)
    version, k, dim = reader.take("<HII")
    reader.expect_version(version)
    if k < 1 or dim < 1:
        raise DataError(f"{path}: k and dim must be >= 1")
    centroids = reader.take_f32(k * dim).reshape(k, dim)
    reader.expect_end()
    return Codebook(centroids=centroids)


# ---------------------------------------------------------------------------
# PCA models

def save_pca_model(model: PCAModel, path: Path | str) -> None:
    header = struct.pack("<HIIB", FORMAT_VERSION, model.in_dim, model.out_dim, 1 if model.whiten else 0)
    body = (
        model.mean.astype("<f4").tobytes()
        + model.components.astype("<f4").tobytes()
        + model.eigenvalues.astype("<f4").tobytes()
    )
    _write_framed(path, MAGIC_PCA, header + body)


def load_pca_model(path: Path | str) -> PCAModel:
    reader = _Reader(_read_framed(path, MAGIC_PCA), path)
    version, in_dim, out_dim, whiten = reader.take("<HIIB")
    reader.expect_version(version)
    if in_dim < 1 or out_dim < 1:
        raise DataError(f"{path}: dimensions must be >= 1")
    mean = reader.take_f32(in_dim)
    components = reader.take_f32(out_dim * in_dim).reshape(out_dim, in_dim)
    eigenvalues = reader.take_f32(out_dim)
    reader.expect_end()
    return PCAModel(mean=mean, components=components, eigenvalues=eigenvalues, whiten=bool(whiten))


# ---------------------------------------------------------------------------
# descriptor indexes

def save_index(index: DescriptorIndex, path: Path | str) -> None:
    parts = [struct.pack("<HBIQ", FORMAT_VERSION, METHOD_TAGS[index.method], index.dim, index.count)]
    for row, image_id in enumerate(index.ids):
        encoded = image_id.encode("utf-8")
        if len(encoded) > 65535:
            raise DataError(f"image id too long to serialize: {image_id[:32]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(index.matrix[row].astype("<f4").tobytes())
    _write_framed(path, MAGIC_INDEX, b"".join(parts))


def load_index(path: Path | str) -> DescriptorIndex:
    reader = _Reader(_read_framed(path, MAGIC_INDEX), path)
    version, tag, dim, count = reader.take("<HBIQ")
    reader.expect_version(version)
    method = TAG_METHODS.get(tag)
    if method is None:
        raise DataError(f"{path}: unknown method tag {tag}")
    if dim < 1:
        raise DataError(f"{path}: dim must be >= 1")
    ids: list[str] = []
    matrix = np.empty((count, dim), dtype=STORAGE_DTYPE)
    for row in range(count):
        (id_len,) = reader.take("<H")
        raw = reader.take_bytes(id_len)
        try:
            ids.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: image id is not valid UTF-8") from exc
        matrix[row] = reader.take_f32(dim)
    reader.expect_end()
    return DescriptorIndex(method=method, ids=tuple(ids), matrix=matrix)


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class ManifestRecord:
    """One dataset row: id, feature-file path, position, split."""

    image_id: str
    path: Path
    geo: GeoRecord
    split: str

    def __post_init__(self) -> None:
        if self.split not in _SPLITS:
            raise DataError(f"split must be one of {_SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class Manifest:
    """All dataset rows, with unique image ids across both splits."""

    records: tuple[ManifestRecord, ...]

    def __post_init__(self) -> None:
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate image ids in manifest")
        object.__setattr__(self, "records", tuple(self.records))

    def split(self, name: str) -> tuple[ManifestRecord, ...]:
        if name not in _SPLITS:
            raise ValueError(f"split must be one of {_SPLITS}, got {name!r}")
        return tuple(r for r in self.records if r.split == name)

    @property
    def database(self) -> tuple[ManifestRecord, ...]:
        return self.split(SPLIT_DATABASE)

    @property
    def queries(self) -> tuple[ManifestRecord, ...]:
        return self.split(SPLIT_QUERY)

    def geo_records(self, name: str) -> list[GeoRecord]:
        return [r.geo for r in self.split(name)]


def save_manifest(manifest: Manifest, path: Path | str) -> None:
    """Write the manifest as UTF-8 CSV; paths are stored relative to it when possible."""
    path = Path(path)
    base = path.resolve().parent
    with atomic_write(path) as handle:
        text = _TextShim(handle)
        writer = csv.writer(text, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for rec in manifest.records:
            try:
                rel = rec.path.resolve().relative_to(base)
            except ValueError:
                rel = rec.path
            writer.writerow(
                [
                    rec.image_id,
                    rel.as_posix(),
                    repr(rec.geo.latitude),
                    repr(rec.geo.longitude),
                    "" if rec.geo.yaw is None else repr(rec.geo.yaw),
                    rec.split,
                ]
            )


class _TextShim:
    """Minimal text-mode adapter so csv can write through a binary handle."""

    def __init__(self, handle):
        self._handle = handle

    def write(self, text: str) -> None:
        self._handle.write(text.encode("utf-8"))


def _parse_float(value: str, column: str, line: int, path) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise DataError(f"{path}:{line}: {column} is not a number: {value!r}") from exc


def load_manifest(path: Path | str, *, check_files: bool = True) -> Manifest:
    """Parse and validate a manifest CSV.

    Relative feature paths resolve against the manifest's directory. With
    ``check_files`` every referenced file must exist; nothing is returned if
    any row fails validation.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: missing header line")
    if tuple(rows[0]) != MANIFEST_COLUMNS:
        raise DataError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
    base = path.resolve().parent
    records = []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_COLUMNS):
            raise DataError(f"{path}:{line}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
        image_id, rel_path, lat, lon, yaw, split = row
        geo = GeoRecord(
            image_id=image_id,
            latitude=_parse_float(lat, "latitude", line, path),
            longitude=_parse_float(lon, "longitude", line, path),
            yaw=None if yaw == "" else _parse_float(yaw, "yaw", line, path),
        )
        feature_path = Path(rel_path)
        if not feature_path.is_absolute():
            feature_path = base / feature_path
        records.append(ManifestRecord(image_id=image_id, path=feature_path, geo=geo, split=split))
    manifest = Manifest(records=tuple(records))
    if check_files:
        missing = [str(r.path) for r in manifest.records if not r.path.is_file()]
        if missing:
            raise DataError(f"{path}: {len(missing)} referenced feature files missing, first: {missing[0]}")
    return manifest


# ---------------------------------------------------------------------------
# search results

RESULT_COLUMNS = ("query_id", "rank", "image_id", "distance")


def save_results(results: Sequence[RankedResult], path: Path | str) -> None:
    """Tab-separated search results: one row per (query, rank)."""
    lines = ["\t".join(RESULT_COLUMNS)]
    for res in results:
        for rank, (image_id, distance) in enumerate(res.hits, start=1):
            lines.append(f"{res.query_id}\t{rank}\t{image_id}\t{distance!r}")
    with atomic_write(path) as handle:
        handle.write(("\n".join(lines) + "\n").encode("utf-8"))


def load_results(path: Path | str) -> list[RankedResult]:
    """Parse a results table; rows for one query must be contiguous and
    ranked 1..K in order."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or tuple(lines[0].split("\t")) != RESULT_COLUMNS:
        raise DataError(f"{path}: missing results header")
    results: list[RankedResult] = []
    current_id: str | None = None
    hits: list[tuple[str, float]] = []
    seen: set[str] = set()

    def flush() -> None:
        if current_id is not None:
            results.append(RankedResult(query_id=current_id, hits=tuple(hits)))

    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(RESULT_COLUMNS):
            raise DataError(f"{path}:{line_no}: expected {len(RESULT_COLUMNS)} fields")
        query_id, rank_text, image_id, dist_text = parts
        try:
            rank = int(rank_text)
            distance = float(dist_text)
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: malformed rank or distance") from exc
        if query_id != current_id:
            flush()
            if query_id in seen:
                raise DataError(f"{path}:{line_no}: rows for query {query_id} are not contiguous")
            seen.add(query_id)
            current_id = query_id
            hits = []
        if rank != len(hits) + 1:
            raise DataError(f"{path}:{line_no}: expected rank {len(hits) + 1}, got {rank}")
        hits.append((image_id, distance))
    flush()
    if not results:
        raise DataError(f"{path}: no result rows")
    return results


def iter_feature_maps(
    records: Iterable[ManifestRecord],
    expect_dim: int | None = None,
) -> Iterator[LocalFeatureMap]:
    """Load feature maps for manifest rows, enforcing one dataset-wide dim.

    The map's image id is taken from the manifest row, not the filename.
    """
    dim = expect_dim
    for rec in records:
        fmap = load_feature_map(rec.path, expect_dim=dim)
        if dim is None:
            dim = fmap.dim
        if fmap.image_id != rec.image_id:
            fmap = LocalFeatureMap(
                image_id=rec.image_id,
                xy=fmap.xy,
                descriptors=fmap.descriptors,
                source_width=fmap.source_width,
                source_height=fmap.source_height,
            )
        yield fmap
