"""Binary checkpoints.

Layout (all integers little-endian)::

    b"SCNR"                      magic
    u32 version                  currently 1
    u32 d
    u32 n_users, n_items, n_categories, n_scenes
    u32 variant                  index into Variant (full, noitem, nosce, noatt)
    u32 n_tensors
    n_tensors x { u64 count; count x f64 }   ParameterSet fields, declaration order
    u32 crc32                    of every preceding byte

Matrices are stored row-major.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .model import ParameterSet, Variant

MAGIC = b"SCNR"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIII")
_VARIANTS = list(Variant)


class CheckpointError(ValueError):
    pass


def dumps(params: ParameterSet, variant: Variant = Variant.FULL) -> bytes:
    n_u, n_i, n_c, n_s = params.counts
    names = ParameterSet.names()
    parts = [_HEADER.pack(MAGIC, VERSION, params.d, n_u, n_i, n_c, n_s,
                          _VARIANTS.index(Variant(variant)), len(names))]
    for _, arr in params.items():
        flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        parts.append(struct.pack("<Q", flat.size))
        parts.append(flat.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes) -> tuple[ParameterSet, Variant]:
    if len(blob) < _HEADER.size + 4:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    magic, version, d, n_u, n_i, n_c, n_s, var, n_t = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if var >= len(_VARIANTS):
        raise CheckpointError(f"unknown variant code {var}")
    shapes = ParameterSet.shapes(n_u, n_i, n_c, n_s, d)
    if n_t != len(shapes):
        raise CheckpointError(f"expected {len(shapes)} tensors, found {n_t}")
    off = _HEADER.size
    arrays = {}
    for name in ParameterSet.names():
        (count,) = struct.unpack_from("<Q", body, off)
        off += 8
        shape = shapes[name]
        if count != int(np.prod(shape)):
            raise CheckpointError(f"tensor {name}: {count} values, expected {int(np.prod(shape))}")
        end = off + 8 * count
        if end > len(body):
            raise CheckpointError("checkpoint truncated")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off = end
    if off != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return ParameterSet(**arrays), _VARIANTS[var]


def save(path: Path | str, params: ParameterSet, variant: Variant = Variant.FULL) -> None:
    Path(path).write_bytes(dumps(params, variant))


def load(path: Path | str) -> tuple[ParameterSet, Variant]:
    return loads(Path(path).read_bytes())
