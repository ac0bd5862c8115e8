"""
fmap_io.py

FMAP binary files for feature maps and embedding vectors.

Layout (all little-endian):
    magic    4 bytes  b"FMAP"
    version  u32      FMAP_VERSION
    H, W, C  u32 × 3
    payload  H·W·C float32, row-major, channel fastest

Values are computed in float64 and stored as float32; reading widens back to
float64, so write → read → write reproduces the file byte-for-byte.
Embedding vectors are stored as 1×1×C maps.

Every file write in the package goes through atomic_write (temp file in the
target directory, then os.replace).
"""

import logging
import os
import struct
import tempfile

import numpy as np

from tensors import EmbeddingVector, FeatureMap, ShapeError

logger = logging.getLogger(__name__)

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FmapError(ValueError):
    """Malformed FMAP file. `code` names the failure."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


# ── Encode / decode ────────────────────────────────────────────────────────────

def encode_fmap(fmap: FeatureMap) -> bytes:
    payload = np.asarray(fmap.data, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise FmapError("FMAP_NON_FINITE", "values overflow float32 storage")
    header = _HEADER.pack(FMAP_MAGIC, FMAP_VERSION, fmap.height, fmap.width, fmap.channels)
    return header + payload.tobytes(order="C")


def decode_fmap(raw: bytes) -> FeatureMap:
    if len(raw) < _HEADER.size:
        raise FmapError("FMAP_TRUNCATED", f"header needs {_HEADER.size} bytes, file has {len(raw)}")
    magic, version, height, width, channels = _HEADER.unpack_from(raw)
    if magic != FMAP_MAGIC:
        raise FmapError("FMAP_BAD_MAGIC", f"expected {FMAP_MAGIC!r}, found {magic!r}")
    if version == 0 or version > FMAP_VERSION:
        raise FmapError("FMAP_BAD_VERSION", f"unsupported version {version} (reader knows {FMAP_VERSION})")

    expected = height * width * channels * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise FmapError(
            "FMAP_TRUNCATED",
            f"header {height}×{width}×{channels} needs {expected} payload bytes, found {actual}",
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if not np.all(np.isfinite(values)):
        raise FmapError("FMAP_NON_FINITE", "payload contains NaN or Inf")
    return FeatureMap(values.astype(np.float64).reshape(height, width, channels))


# ── Files ──────────────────────────────────────────────────────────────────────

def write_fmap(fmap: FeatureMap, path: str) -> None:
    atomic_write(path, encode_fmap(fmap))
    logger.debug(f"Wrote {fmap.height}×{fmap.width}×{fmap.channels} map to {path}")


def read_fmap(path: str) -> FeatureMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_fmap(raw)


def write_vector(vec: EmbeddingVector, path: str) -> None:
    write_fmap(FeatureMap(np.asarray(vec.data).reshape(1, 1, vec.dim)), path)


def read_vector(path: str) -> EmbeddingVector:
    fmap = read_fmap(path)
    if fmap.height != 1 or fmap.width != 1:
        raise ShapeError(
            f"{path} holds a {fmap.height}×{fmap.width} map; vectors are stored as 1×1×C."
        )
    return EmbeddingVector(fmap.data.ravel())
