"""Versioned binary checkpoint.

Layout (little endian)::

    b"ALSC" | u32 version | 64-byte ascii config digest | u32 tensor count
    per tensor: u16 name length | name utf-8 | u8 ndim | u32 * ndim shape | float64 data

Written with ``struct`` rather than ``np.savez`` because zip members carry
timestamps, which would break byte-identical reruns.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError

MAGIC = b"ALSC"
VERSION = 1


def dumps(state: dict[str, np.ndarray], digest: str) -> bytes:
    if len(digest) != 64:
        raise ContractError("config digest must be a 64-character sha256 hex string")
    parts = [MAGIC, struct.pack("<I", VERSION), digest.encode("ascii"), struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], str]:
    """Return ``(state, digest)``."""
    if blob[:4] != MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    digest = blob[8:72].decode("ascii")
    (count,) = struct.unpack_from("<I", blob, 72)
    pos, state = 76, {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2 : pos + 2 + nlen].decode()
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            shape = struct.unpack_from(f"<{ndim}I", blob, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(blob):
                raise ContractError("truncated checkpoint")
            state[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise ContractError("truncated checkpoint") from exc
    if pos != len(blob):
        raise ContractError("trailing bytes after checkpoint payload")
    return state, digest


def save(path, state: dict[str, np.ndarray], digest: str) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(state, digest))


def load(path) -> tuple[dict[str, np.ndarray], str]:
    with open(path, "rb") as fh:
        return loads(fh.read())
