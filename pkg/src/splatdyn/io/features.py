"""Binary tensor container for exchanging feature maps with model hosts.

Layout (little-endian): u32 rank, u64 dims[rank], u32 element type code
(1 = float32, the only defined code), u32 tag length, tag bytes (UTF-8),
then the row-major float32 payload.  The tag names the layer tap the
tensor came from (see propagate.LAYER_TAPS).
"""

from __future__ import annotations

import struct

import numpy as np

DTYPE_F32 = 1
MAX_RANK = 8


def write_feature(array: np.ndarray, tag: str, path) -> None:
    array = np.asarray(array)
    if array.ndim == 0 or array.ndim > MAX_RANK:
        raise ValueError(f"feature rank must be 1..{MAX_RANK}, got {array.ndim}")
    array = np.ascontiguousarray(array, dtype="<f4")
    if not np.isfinite(array).all():
        raise ValueError("feature tensor holds non-finite values")
    tag_bytes = tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(struct.pack("<II", DTYPE_F32, len(tag_bytes)))
        fh.write(tag_bytes)
        fh.write(array.tobytes())


def read_feature(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(fmt, offset):
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise ValueError(f"{path}: feature file truncated in the header")
        return struct.unpack_from(fmt, blob, offset), offset + size

    (rank,), offset = take("<I", 0)
    if not 1 <= rank <= MAX_RANK:
        raise ValueError(f"{path}: feature rank {rank} outside 1..{MAX_RANK}")
    dims, offset = take(f"<{rank}Q", offset)
    (code, tag_len), offset = take("<II", offset)
    if code != DTYPE_F32:
        raise ValueError(f"{path}: unknown element type code {code}")
    if offset + tag_len > len(blob):
        raise ValueError(f"{path}: feature file truncated in the tag")
    tag = blob[offset:offset + tag_len].decode("utf-8")
    offset += tag_len
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - offset != 4 * count:
        raise ValueError(f"{path}: payload is {len(blob) - offset} bytes, "
                         f"expected {4 * count} for dims {tuple(dims)}")
    array = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return array.reshape(dims).copy(), tag
