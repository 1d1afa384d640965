"""Binary checkpoint format for named float64 tensors.

Layout, all integers little-endian unsigned 32-bit:

    magic b'NNCK' | version | tensor count
    per tensor: name length | name bytes (utf-8) | rank | dims... | payload

Payloads are little-endian float64 in row-major order, so a save/load round
trip is bit-exact. Model hyperparameters ride along as scalar meta tensors.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"NNCK"
VERSION = 1


def save_tensors(tensors: list[tuple[str, np.ndarray]]) -> bytes:
    """Serialize named tensors in the given order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors:
        data = np.asarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated while reading {what}: need {n} bytes at offset "
                f"{self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_tensors(data: bytes) -> list[tuple[str, np.ndarray]]:
    """Parse checkpoint bytes back into named tensors."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}, expected {VERSION}")
    count = r.u32("tensor count")
    tensors = []
    for i in range(count):
        name_len = r.u32(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        rank = r.u32(f"tensor {name!r} rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"tensor {name!r} dims"))
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(8 * n_items, f"tensor {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        tensors.append((name, arr))
    if r.pos != len(data):
        raise CheckpointError(
            f"{len(data) - r.pos} trailing bytes after last tensor"
        )
    return tensors


def save_checkpoint(path, tensors: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(save_tensors(tensors))


def load_checkpoint(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return load_tensors(fh.read())


def meta(name: str, value) -> tuple[str, np.ndarray]:
    """Scalar-or-vector hyperparameter tensor under the meta/ prefix."""
    return (f"meta/{name}", np.atleast_1d(np.asarray(value, dtype=np.float64)))


def meta_value(tensors: dict[str, np.ndarray], name: str) -> float:
    key = f"meta/{name}"
    if key not in tensors:
        raise CheckpointError(f"checkpoint is missing {key}")
    return float(tensors[key].reshape(-1)[0])
