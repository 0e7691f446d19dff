"""Writer for the PVFM local-feature file format.

This byte layout is the whole contract with downstream consumers, so it is
spelled out here rather than imported from one of them: magic b"PVFM", then a
little-endian header ``<HBIHHH`` (format version u16, normalized flag u8,
feature count u32, descriptor dim u16, source width u16, source height u16),
then count rows of (x, y, descriptor...) float32 with coordinates in [0, 1],
and finally an 8-byte BLAKE2b checksum over everything after the magic.
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import DataError

MAGIC = b"PVFM"
FORMAT_VERSION = 1

_HEADER = "<HBIHHH"
_CHECKSUM_LEN = 8
_UNIT_NORM_TOL = 1e-4


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    # Temp file + rename so a crash never leaves a partial file behind.
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    tmp = Path(tmp_name)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_feature_file(
    path: Path | str,
    xy: np.ndarray,
    descriptors: np.ndarray,
    source_width: int,
    source_height: int,
) -> None:
    """Atomically write one image's features.

    ``xy`` is (n, 2) in [0, 1], ``descriptors`` (n, d) with unit-norm rows;
    both are validated here because a file that fails the consumer's checks
    is worse than no file at all.
    """
    coords = np.ascontiguousarray(xy, dtype="<f4")
    desc = np.ascontiguousarray(descriptors, dtype="<f4")
    if coords.ndim != 2 or coords.shape[1] != 2 or desc.ndim != 2:
        raise DataError(f"expected (n, 2) coordinates and (n, d) descriptors, got {coords.shape} and {desc.shape}")
    if coords.shape[0] != desc.shape[0]:
        raise DataError(f"{coords.shape[0]} coordinates for {desc.shape[0]} descriptors")
    count, dim = desc.shape
    if dim < 1:
        raise DataError("descriptors must have d >= 1")
    if count and (coords.min() < 0.0 or coords.max() > 1.0):
        raise DataError("coordinates outside [0, 1]")
    if count:
        norms = np.linalg.norm(desc.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > _UNIT_NORM_TOL:
            raise DataError("descriptor rows must be unit-norm")
    if dim > 65535 or not 0 <= source_width <= 65535 or not 0 <= source_height <= 65535:
        raise DataError("dim and source size must fit in 16-bit header fields")
    header = struct.pack(_HEADER, FORMAT_VERSION, 1, count, dim, source_width, source_height)
    rows = np.hstack([coords, desc]).astype("<f4").tobytes() if count else b""
    payload = header + rows
    checksum = hashlib.blake2b(payload, digest_size=_CHECKSUM_LEN).digest()
    _atomic_write_bytes(Path(path), MAGIC + payload + checksum)
