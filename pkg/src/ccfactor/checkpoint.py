"""Flat binary tensor archive ("FCTM").

Layout, all integers little-endian::

    b"FCTM"  u32 version
    repeated until EOF:
        u32 name_len, name (utf-8), u32 rank, u64 dims[rank], f64 payload[prod(dims)]

Round trips are bit-exact. Writes go to a temporary file in the target
directory and are renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import ValidationError

MAGIC = b"FCTM"
VERSION = 1


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValidationError("not an FCTM file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported FCTM version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if pos + 8 * count > len(blob):
                raise ValidationError(f"truncated payload for {name!r}")
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            out[name] = arr.reshape(dims)
    except struct.error as exc:
        raise ValidationError(f"truncated FCTM file: {exc}") from None
    return out


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensors(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, encode(tensors))


def load_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
