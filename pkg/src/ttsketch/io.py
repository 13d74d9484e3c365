"""Flat binary containers for tensor trains and moment dumps.

Tensor-train layout (all integers unsigned little-endian)::

    magic   4 bytes  b"TTSK"
    version u32      1
    tag     u8       0 = real, 1 = complex
    d       u64
    dims    u64 * d
    ranks   u64 * (d + 1)
    payload cores 0..d-1 in row-major order as little-endian float64;
            complex entries are stored as (real, imag) pairs

Array-list layout (moment dumps) uses magic b"TTAL", the same version and
tag fields, a u64 array count, then per array a u64 ndim, u64 shape entries
and the row-major float64 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .tt_core import TensorTrain

_TT_MAGIC = b"TTSK"
_AL_MAGIC = b"TTAL"
_VERSION = 1


def _payload(a: np.ndarray, complex_: bool) -> bytes:
    if complex_:
        a = np.asarray(a, dtype="<c16")
        return np.ascontiguousarray(a).view("<f8").tobytes()
    return np.ascontiguousarray(np.asarray(a, dtype="<f8")).tobytes()


def _read(buf: memoryview, off: int, shape, complex_: bool) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape)) if len(shape) else 1
    nfloat = count * (2 if complex_ else 1)
    raw = np.frombuffer(buf, dtype="<f8", count=nfloat, offset=off)
    if complex_:
        arr = raw.view("<c16").reshape(shape).astype(np.complex128)
    else:
        arr = raw.reshape(shape).astype(np.float64)
    return arr, off + 8 * nfloat


def tt_to_bytes(tt: TensorTrain) -> bytes:
    complex_ = tt.is_complex
    head = _TT_MAGIC + struct.pack("<IBQ", _VERSION, int(complex_), tt.d)
    head += struct.pack(f"<{tt.d}Q", *tt.dims)
    head += struct.pack(f"<{tt.d + 1}Q", *tt.ranks)
    return head + b"".join(_payload(c, complex_) for c in tt.cores)


def tt_from_bytes(data: bytes) -> TensorTrain:
    buf = memoryview(data)
    if bytes(buf[:4]) != _TT_MAGIC:
        raise ValueError("not a tensor-train container")
    version, tag, d = struct.unpack_from("<IBQ", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = 4 + struct.calcsize("<IBQ")
    dims = struct.unpack_from(f"<{d}Q", buf, off)
    off += 8 * d
    ranks = struct.unpack_from(f"<{d + 1}Q", buf, off)
    off += 8 * (d + 1)
    cores = []
    for k in range(d):
        c, off = _read(buf, off, (ranks[k], dims[k], ranks[k + 1]), bool(tag))
        cores.append(c)
    if off != len(buf):
        raise ValueError("trailing bytes after tensor-train payload")
    return TensorTrain(cores)


def save_tt(path: str | Path, tt: TensorTrain) -> None:
    Path(path).write_bytes(tt_to_bytes(tt))


def load_tt(path: str | Path) -> TensorTrain:
    return tt_from_bytes(Path(path).read_bytes())


def arrays_to_bytes(arrays: Sequence[np.ndarray]) -> bytes:
    complex_ = any(np.iscomplexobj(a) for a in arrays)
    out = [_AL_MAGIC, struct.pack("<IBQ", _VERSION, int(complex_), len(arrays))]
    for a in arrays:
        a = np.asarray(a)
        out.append(struct.pack(f"<Q{a.ndim}Q", a.ndim, *a.shape))
        out.append(_payload(a, complex_))
    return b"".join(out)


def arrays_from_bytes(data: bytes) -> list[np.ndarray]:
    buf = memoryview(data)
    if bytes(buf[:4]) != _AL_MAGIC:
        raise ValueError("not an array-list container")
    version, tag, count = struct.unpack_from("<IBQ", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = 4 + struct.calcsize("<IBQ")
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<Q", buf, off)
        off += 8
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        a, off = _read(buf, off, shape, bool(tag))
        arrays.append(a)
    return arrays
