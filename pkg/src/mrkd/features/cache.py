# src/mrkd/features/cache.py
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import CorruptCacheError
from .extractors import FeatureMap, RepresentationTag

MAGIC = b"MRKD"
VERSION = 1
DTYPE_F32 = 1

# magic, version u16, tag u8, reserved u8, dtype u8, ndim u8, dims 3 x u32, hop f32, 6 байт резерва
HEADER = struct.Struct("<4sHBBBB3If6x")
assert HEADER.size == 32

CACHE_SUFFIX = ".mrkd"


def encode(fm: FeatureMap) -> bytes:
    data = np.ascontiguousarray(fm.data, dtype="<f4")
    header = HEADER.pack(
        MAGIC,
        VERSION,
        fm.representation_tag.code,
        0,
        DTYPE_F32,
        3,
        *data.shape,
        fm.frame_hop,
    )
    return header + data.tobytes(order="C")


def decode(blob: bytes, clip_id: str = "") -> FeatureMap:
    if len(blob) < HEADER.size:
        raise CorruptCacheError(f"cache blob of {len(blob)} bytes is shorter than the header")
    magic, version, tag_code, _reserved, dtype_code, ndim, d0, d1, d2, hop = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCacheError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptCacheError(f"unsupported cache version {version}, expected {VERSION}")
    if dtype_code != DTYPE_F32 or ndim != 3:
        raise CorruptCacheError(f"unsupported dtype code {dtype_code} / ndim {ndim}")
    try:
        tag = RepresentationTag.from_code(tag_code)
    except ValueError as exc:
        raise CorruptCacheError(str(exc)) from exc

    expected = d0 * d1 * d2 * 4
    payload = blob[HEADER.size :]
    if len(payload) != expected:
        raise CorruptCacheError(f"truncated payload: {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(d0, d1, d2)
    return FeatureMap(data=data, representation_tag=tag, frame_hop=hop, clip_id=clip_id)


def atomic_write_bytes(path: Path, blob: bytes) -> None:
    """Запись во временный файл рядом и rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def cache_write(fm: FeatureMap, path: Union[str, Path]) -> None:
    atomic_write_bytes(Path(path), encode(fm))


def cache_read(path: Union[str, Path], clip_id: Optional[str] = None) -> FeatureMap:
    path = Path(path)
    blob = path.read_bytes()
    if clip_id is None:
        clip_id = path.name.removesuffix(CACHE_SUFFIX)
    return decode(blob, clip_id=clip_id)


def matrix_to_feature_map(values: np.ndarray, name: str = "") -> FeatureMap:
    """Матрица N x M как FeatureMap 1 x N x M (дампы мягких меток)."""
    return FeatureMap(
        data=np.asarray(values, dtype=np.float32)[None],
        representation_tag=RepresentationTag.MATRIX,
        frame_hop=0.0,
        clip_id=name,
    )
