"""
checkpoint.py

Binary checkpoints for a query/key encoder pair.

    magic    b"SEMD"
    version  u32
    count    u32                       number of tensors
    per tensor, in topology order (query.* first, then key.*):
        name_len u16, name utf-8, ndim u32, dims u32 × ndim
    payload  every tensor as little-endian float64, same order

The descriptor block fixes the topology; loading rejects a file whose names
or shapes differ from the current encoder.
"""

import logging
import struct

import numpy as np

from encoder import PARAM_NAMES, PARAM_SHAPES, EncoderParams
from fmap_io import atomic_write

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SEMD"
CHECKPOINT_VERSION = 1
_PREFIXES = ("query", "key")


class CheckpointError(ValueError):
    code = "CHECKPOINT_INVALID"


def _entries(theta: EncoderParams, xi: EncoderParams):
    for prefix, params in zip(_PREFIXES, (theta, xi)):
        for name in PARAM_NAMES:
            yield f"{prefix}.{name}", params[name]


def encode_checkpoint(theta: EncoderParams, xi: EncoderParams) -> bytes:
    entries = list(_entries(theta, xi))
    parts = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(entries))]
    for name, arr in entries:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
    for _, arr in entries:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes) -> tuple[EncoderParams, EncoderParams]:
    try:
        magic, version, count = struct.unpack_from("<4sII", raw, 0)
    except struct.error as exc:
        raise CheckpointError(f"Checkpoint header is truncated: {exc}") from exc
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Bad checkpoint magic {magic!r}.")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}.")

    expected = [name for name, _ in _entries(EncoderParams.zeros(), EncoderParams.zeros())]
    if count != len(expected):
        raise CheckpointError(f"Checkpoint holds {count} tensors, encoder needs {len(expected)}.")

    offset = 12
    shapes: list[tuple[str, tuple[int, ...]]] = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            dims = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            shapes.append((name, tuple(dims)))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"Checkpoint descriptor is malformed: {exc}") from exc

    topology = dict(PARAM_SHAPES)
    for (name, shape), want in zip(shapes, expected):
        if name != want or shape != topology[name.split(".", 1)[1]]:
            raise CheckpointError(f"Checkpoint tensor {name}{shape} does not match encoder tensor {want}.")

    total = sum(int(np.prod(shape)) for _, shape in shapes)
    if len(raw) - offset != total * 8:
        raise CheckpointError(
            f"Checkpoint payload has {len(raw) - offset} bytes, topology needs {total * 8}."
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)

    tensors: dict[str, dict[str, np.ndarray]] = {p: {} for p in _PREFIXES}
    cursor = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        prefix, pname = name.split(".", 1)
        tensors[prefix][pname] = flat[cursor:cursor + size].reshape(shape).copy()
        cursor += size
    return EncoderParams(tensors["query"]), EncoderParams(tensors["key"])


def save_checkpoint(path: str, theta: EncoderParams, xi: EncoderParams) -> None:
    atomic_write(path, encode_checkpoint(theta, xi))
    logger.info(f"Checkpoint saved to {path}")


def load_checkpoint(path: str) -> tuple[EncoderParams, EncoderParams]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
