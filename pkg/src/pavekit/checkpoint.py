"""Binary checkpoint format for named float32 arrays.

Layout (all integers little-endian):

    magic   4 bytes  b"I2PC"
    version u16      currently 1
    count   u32      number of entries
    entry*  name_len u16, name UTF-8, rank u8, dims u32[rank],
            payload float32[] little-endian

Round-trips must be bit-exact; loading verifies magic and version and
that the payload length matches the declared dims.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"I2PC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(arrays: dict[str, np.ndarray], path: Path | str) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4")  # tobytes() below emits C order
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"rank too large for {name!r}: {arr.ndim}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: Path | str) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {blob[:4]!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = blob[offset : offset + 4 * n_elem]
        if len(payload) != 4 * n_elem:
            raise CheckpointError(f"truncated payload for {name!r}")
        offset += 4 * n_elem
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes in {path}")
    return out
