"""Flat binary parameter container.

Layout (all integers little-endian):

    magic   4 bytes  b"NKCP"
    version u32      1
    count   u32      number of records
    record  repeated, sorted by name:
        name_len u32
        name     utf-8 bytes
        rank     u32
        dims     u64 * rank
        values   float64 little-endian, C order

Round-trips are bit-exact; loading verifies magic/version and trailing bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from ..errors import ParseError
from .tensor import Tensor

MAGIC = b"NKCP"
VERSION = 1


def save_params(params: Mapping[str, Union[Tensor, np.ndarray]], path: Union[str, Path]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        arr = params[name]
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        data = np.asarray(data, dtype=np.float64)  # keep 0-d shapes intact
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape) if data.ndim else b"")
        chunks.append(data.astype("<f8").tobytes(order="C"))
    path.write_bytes(b"".join(chunks))


def load_params(path: Union[str, Path]) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
        offset += 8 * rank
        n_values = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=n_values, offset=offset)
        offset += 8 * n_values
        out[name] = values.reshape(dims).astype(np.float64)
    if offset != len(raw):
        raise ParseError(f"{path}: {len(raw) - offset} trailing bytes after records")
    return out
