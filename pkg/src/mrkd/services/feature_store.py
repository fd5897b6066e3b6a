# src/mrkd/services/feature_store.py
from __future__ import annotations

import asyncio
import logging
import threading
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..audio_io import CropMode, load_canonical, tile_or_crop
from ..data.manifest import DatasetManifest
from ..errors import CorruptCacheError, MissingFeatureError
from ..features.cache import CACHE_SUFFIX, cache_read, cache_write
from ..features.extractors import FeatureConfig, FeatureStats, extract
from ..schemas import ManifestEntry
from ..workspace import Workspace

logger = logging.getLogger(__name__)


class FeatureStore:
    """
    Стандартизованные карты признаков целых клипов (C x T x F) в памяти.
    Окно обучения вырезается по оси времени при выдаче батча.
    """

    def __init__(self, representation: str, maps: Mapping[str, np.ndarray], n_frames: int) -> None:
        self.representation = representation
        self.n_frames = n_frames
        self._maps: Dict[str, np.ndarray] = {}
        for clip_id, data in maps.items():
            data = np.ascontiguousarray(data, dtype=np.float32)
            data.setflags(write=False)
            self._maps[clip_id] = data

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        n_frames: Optional[int] = None,
        representation: str = "matrix",
        stats: Optional[FeatureStats] = None,
    ) -> "FeatureStore":
        maps = {cid: stats.apply(a) if stats is not None else a for cid, a in arrays.items()}
        if n_frames is None:
            n_frames = min(a.shape[1] for a in maps.values())
        return cls(representation, maps, n_frames)

    @classmethod
    def load(
        cls,
        cache_dir: Path,
        ids: Sequence[str],
        n_frames: int,
        representation: str,
        stats: Optional[FeatureStats] = None,
    ) -> "FeatureStore":
        maps: Dict[str, np.ndarray] = {}
        for clip_id in ids:
            path = cache_dir / f"{clip_id}{CACHE_SUFFIX}"
            if not path.is_file():
                raise MissingFeatureError(clip_id, representation)
            data = cache_read(path, clip_id).data
            maps[clip_id] = stats.apply(data) if stats is not None else data
        logger.info("Loaded %d %s feature maps from %s", len(maps), representation, cache_dir)
        return cls(representation, maps, n_frames)

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._maps

    def __len__(self) -> int:
        return len(self._maps)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        first = next(iter(self._maps.values()))
        return first.shape[0], self.n_frames, first.shape[2]

    def full(self, clip_id: str) -> np.ndarray:
        try:
            return self._maps[clip_id]
        except KeyError:
            raise MissingFeatureError(clip_id, self.representation) from None

    def window(self, clip_id: str, mode: CropMode, seed: int = 0) -> np.ndarray:
        return tile_or_crop(self.full(clip_id), self.n_frames, mode, seed, axis=1)

    def batch(self, ids: Sequence[str], mode: CropMode = CropMode.EVAL_CENTER, seed: int = 0) -> np.ndarray:
        """Батч B x C x n_frames x F; для случайных окон seed разворачивается в seed на образец."""
        if CropMode(mode) is CropMode.TRAIN_RANDOM:
            seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=len(ids))
        else:
            seeds = np.zeros(len(ids), dtype=np.int64)
        return np.stack([self.window(cid, mode, int(s)) for cid, s in zip(ids, seeds)])


# ---------- Кэш хранилищ на процесс ----------

_store_cache: Dict[Tuple[str, str, int, Tuple[str, ...]], FeatureStore] = {}
_store_lock = threading.Lock()


def get_feature_store(
    workspace: Workspace,
    representation: str,
    ids: Sequence[str],
    n_frames: int,
    standardize: bool = True,
) -> FeatureStore:
    """
    Одно хранилище на (каталог, представление, окно, набор id): ветки с общим
    представлением делят его, данные только для чтения.
    """
    cache_dir = workspace.features_dir(representation)
    key = (str(cache_dir.resolve()), representation, n_frames, tuple(ids))
    with _store_lock:
        store = _store_cache.get(key)
        if store is None:
            stats = FeatureStats.load(workspace.stats_path(representation)) if standardize else None
            store = FeatureStore.load(cache_dir, ids, n_frames, representation, stats)
            _store_cache[key] = store
        return store


def clear_store_cache() -> None:
    with _store_lock:
        _store_cache.clear()


# ---------- Извлечение ----------


def extract_one(
    manifest: DatasetManifest,
    entry: ManifestEntry,
    feature_cfg: FeatureConfig,
    path: Path,
    canonical_length: int,
    force: bool = False,
) -> np.ndarray:
    """Извлекает и кэширует признаки одного клипа; возвращает C x T x F."""
    if path.is_file() and not force:
        try:
            return cache_read(path, entry.clip_id).data
        except CorruptCacheError as exc:
            logger.warning("Cache %s is unreadable (%s), extracting again", path, exc)
    clip = load_canonical(
        manifest.resolve(entry),
        sample_rate=feature_cfg.sample_rate,
        min_length=canonical_length,
        source_id=entry.clip_id,
    )
    fm = extract(clip, feature_cfg)
    cache_write(fm, path)
    logger.debug("Extracted %s %s -> %s", feature_cfg.representation.value, entry.clip_id, path)
    return fm.data


async def extract_all(
    manifest: DatasetManifest,
    feature_cfg: FeatureConfig,
    workspace: Workspace,
    canonical_length: int,
    workers: int = 1,
    force: bool = False,
) -> FeatureStats:
    """
    Кэширует признаки всех клипов манифеста и считает статистики стандартизации
    по train-сплиту. Существующий читаемый кэш не пересчитывается без force.
    """
    tag = feature_cfg.cache_tag
    semaphore = asyncio.Semaphore(max(1, workers))

    async def _one(entry: ManifestEntry) -> np.ndarray:
        path = workspace.feature_path(tag, entry.clip_id)
        if workers <= 1:
            return extract_one(manifest, entry, feature_cfg, path, canonical_length, force)
        async with semaphore:
            return await asyncio.to_thread(
                extract_one, manifest, entry, feature_cfg, path, canonical_length, force
            )

    results: List[np.ndarray] = await asyncio.gather(*(_one(e) for e in manifest.entries))
    train = [data for entry, data in zip(manifest.entries, results) if entry.split == "train"]
    stats = FeatureStats.from_maps(train)
    stats.save(workspace.stats_path(tag))
    logger.info("Features %s: %d clips cached, stats over %d train frames", tag, len(results), stats.n_frames)
    return stats
