"""Low-level binary payload format.

All payloads are little-endian and bit-exact on round-trip:

* feature payload  -- magic ``PWEB`` | version u32 | n u64 | d u32 | n*d float32, row-major
* label payload    -- magic ``PWLB`` | version u32 | n u64 | n * u32 class ids
* split payload    -- magic ``PWSP`` | version u32 | n u64 | n * u8 (0=train, 1=val, 2=test)

Trailing bytes, short reads, or header/manifest disagreements are DataError.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1

FEATURE_MAGIC = b"PWEB"
LABEL_MAGIC = b"PWLB"
SPLIT_MAGIC = b"PWSP"

_HEADER = struct.Struct("<4sIQ")  # magic, version, n


def _read_header(raw: bytes, magic: bytes, path: Path) -> tuple[int, bytes]:
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    got_magic, version, n = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise DataError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    return n, raw[_HEADER.size:]


def write_features(path: Path, features: np.ndarray) -> None:
    """Write a 2-D float array as a feature payload (float32 LE, row-major)."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"feature payload must be 2-D, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, n))
        f.write(struct.pack("<I", d))
        f.write(arr.tobytes())


def read_features(path: Path) -> np.ndarray:
    """Read a feature payload; returns a (n, d) float32 array."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing feature payload: {path}")
    raw = path.read_bytes()
    n, rest = _read_header(raw, FEATURE_MAGIC, path)
    if len(rest) < 4:
        raise DataError(f"{path}: truncated header (no dimension field)")
    (d,) = struct.unpack_from("<I", rest)
    body = rest[4:]
    expected = n * d * 4
    if len(body) != expected:
        raise DataError(
            f"{path}: payload is {len(body)} bytes but header declares "
            f"n={n}, d={d} ({expected} bytes)"
        )
    return np.frombuffer(body, dtype="<f4").reshape(n, d).copy()


def write_labels(path: Path, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"label payload must be 1-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
        raise ValueError("labels do not fit in u32")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, arr.size))
        f.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def read_labels(path: Path) -> np.ndarray:
    """Read a label payload; returns a (n,) int64 array."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing label payload: {path}")
    raw = path.read_bytes()
    n, body = _read_header(raw, LABEL_MAGIC, path)
    if len(body) != n * 4:
        raise DataError(f"{path}: payload is {len(body)} bytes, expected {n * 4}")
    return np.frombuffer(body, dtype="<u4").astype(np.int64)


def write_splits(path: Path, splits: np.ndarray) -> None:
    arr = np.asarray(splits)
    if arr.ndim != 1:
        raise ValueError(f"split payload must be 1-D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SPLIT_MAGIC, FORMAT_VERSION, arr.size))
        f.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def read_splits(path: Path) -> np.ndarray:
    """Read a split payload; returns a (n,) uint8 array of {0, 1, 2}."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing split payload: {path}")
    raw = path.read_bytes()
    n, body = _read_header(raw, SPLIT_MAGIC, path)
    if len(body) != n:
        raise DataError(f"{path}: payload is {len(body)} bytes, expected {n}")
    arr = np.frombuffer(body, dtype=np.uint8).copy()
    if arr.size and arr.max() > 2:
        bad = int(np.argmax(arr > 2))
        raise DataError(f"{path}: invalid split tag {arr[bad]} at row {bad}")
    return arr
