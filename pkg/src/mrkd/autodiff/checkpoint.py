# src/mrkd/autodiff/checkpoint.py
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from ..errors import CorruptCacheError
from ..features.cache import atomic_write_bytes
from .nn import Module
from .optim import SGD

MAGIC = b"MRKP"
VERSION = 1

_HEAD = struct.Struct("<4sHI")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")

CHECKPOINT_SUFFIX = ".mrkp"


def encode_entries(entries: Dict[str, np.ndarray]) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, len(entries))]
    for name, array in entries.items():
        raw_name = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f4")
        parts.append(_U16.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_U8.pack(data.ndim))
        parts.extend(_U32.pack(d) for d in data.shape)
        parts.append(data.tobytes(order="C"))
    return b"".join(parts)


def decode_entries(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < _HEAD.size:
        raise CorruptCacheError("checkpoint is shorter than its header")
    magic, version, count = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptCacheError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptCacheError(f"unsupported checkpoint version {version}")

    entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = _HEAD.size
    try:
        for _ in range(count):
            (name_len,) = _U16.unpack_from(blob, offset)
            offset += _U16.size
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = _U8.unpack_from(blob, offset)
            offset += _U8.size
            dims = tuple(_U32.unpack_from(blob, offset + i * _U32.size)[0] for i in range(ndim))
            offset += ndim * _U32.size
            n_bytes = int(np.prod(dims, dtype=np.int64)) * 4
            if offset + n_bytes > len(blob):
                raise CorruptCacheError(f"truncated payload for checkpoint entry {name!r}")
            entries[name] = np.frombuffer(blob, dtype="<f4", count=n_bytes // 4, offset=offset).reshape(dims).copy()
            offset += n_bytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptCacheError(f"malformed checkpoint: {exc}") from exc
    if offset != len(blob):
        raise CorruptCacheError(f"{len(blob) - offset} trailing bytes after {count} checkpoint entries")
    return entries


def save_checkpoint(path: Union[str, Path], model: Module, optimizer: Optional[SGD] = None) -> None:
    entries: "OrderedDict[str, np.ndarray]" = OrderedDict(model.state_dict())
    if optimizer is not None:
        entries.update(optimizer.state_dict())
    atomic_write_bytes(Path(path), encode_entries(entries))


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    return decode_entries(Path(path).read_bytes())


def restore(entries: Dict[str, np.ndarray], model: Module, optimizer: Optional[SGD] = None) -> None:
    model.load_state_dict(entries)
    if optimizer is not None:
        optimizer.load_state_dict(entries)
