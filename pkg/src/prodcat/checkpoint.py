"""Binary checkpoint files: named float32 parameter blocks plus a config hash.

Layout (all integers little-endian):

    magic "PCKP" | u32 version | u32 hash length | hash bytes (utf-8 hex)
    u32 block count
    per block: u32 name length | name utf-8 | u32 ndim | u64 dims... | data

Data is raw little-endian float32, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PCKP"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a valid checkpoint or does not match expectations."""


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], config_hash: str) -> None:
    hash_bytes = config_hash.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hash_bytes)))
        fh.write(hash_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(
    path: str | Path, expected_hash: str | None = None
) -> tuple[dict[str, np.ndarray], str]:
    """Read back parameter blocks; optionally verify the stored config hash."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hash_len = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    config_hash = bytes(view[offset : offset + hash_len]).decode("utf-8")
    offset += hash_len
    if expected_hash is not None and config_hash != expected_hash:
        raise CheckpointError(
            f"{path}: config hash mismatch (file {config_hash[:12]}.., expected {expected_hash[:12]}..)"
        )
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, offset)
        offset += 4
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", view, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, offset)
        offset += 8 * ndim
        nbytes = 4 * int(np.prod(shape)) if ndim else 4
        flat = np.frombuffer(view, dtype="<f4", count=nbytes // 4, offset=offset)
        offset += nbytes
        arrays[name] = flat.reshape(shape).astype(np.float32, copy=True)
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last parameter block")
    return arrays, config_hash
