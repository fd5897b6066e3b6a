# src/mrkd/features/extractors.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from ..audio_io import CANONICAL_SAMPLE_RATE, AudioClip
from ..errors import InvalidInputError, ParameterError
from . import dsp

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10


class RepresentationTag(str, Enum):
    MATRIX = "matrix"  # служебный тег: дампы матриц мягких меток
    LOGMEL64 = "logmel64"
    LOGMEL128 = "logmel128"
    MFCC = "mfcc"
    CQT = "cqt"

    @property
    def code(self) -> int:
        return _TAG_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "RepresentationTag":
        for tag, value in _TAG_CODES.items():
            if value == code:
                return tag
        raise ValueError(f"unknown representation code {code}")

    @property
    def is_feature(self) -> bool:
        return self is not RepresentationTag.MATRIX


_TAG_CODES = {
    RepresentationTag.MATRIX: 0,
    RepresentationTag.LOGMEL64: 1,
    RepresentationTag.LOGMEL128: 2,
    RepresentationTag.MFCC: 3,
    RepresentationTag.CQT: 4,
}

FEATURE_TAGS = [tag.value for tag in RepresentationTag if tag.is_feature]


@dataclass(frozen=True)
class FeatureConfig:
    representation: RepresentationTag = RepresentationTag.LOGMEL64
    sample_rate: int = CANONICAL_SAMPLE_RATE
    frame_len: int = 3528  # 80 мс
    hop: int = 441  # 10 мс
    f_min: float = 0.0
    f_max: Optional[float] = None
    mel_scale: str = "slaney"
    n_mels_mfcc: int = 64
    n_mfcc: int = 40
    cqt_f_min: float = 32.70
    cqt_bins_per_octave: int = 12
    cqt_n_bins: int = 84
    channels: Optional[int] = None  # None: 3 для logMel/MFCC, 1 для CQT
    delta_half_window: int = 4  # окно 9

    def __post_init__(self) -> None:
        object.__setattr__(self, "representation", RepresentationTag(self.representation))

    @property
    def n_channels(self) -> int:
        if self.channels is not None:
            return self.channels
        return 1 if self.representation is RepresentationTag.CQT else 3

    @property
    def cache_tag(self) -> str:
        """Имя каталога кэша: представление, плюс число каналов, если оно не по умолчанию."""
        default = 1 if self.representation is RepresentationTag.CQT else 3
        if self.n_channels == default:
            return self.representation.value
        return f"{self.representation.value}_{self.n_channels}ch"

    @property
    def n_mels(self) -> int:
        if self.representation is RepresentationTag.LOGMEL128:
            return 128
        if self.representation is RepresentationTag.LOGMEL64:
            return 64
        return self.n_mels_mfcc

    @property
    def hop_seconds(self) -> float:
        return self.hop / float(self.sample_rate)

    def for_representation(self, tag: RepresentationTag | str, channels: Optional[int] = None) -> "FeatureConfig":
        return replace(self, representation=RepresentationTag(tag), channels=channels)

    def validate(self) -> None:
        if self.n_channels not in (1, 3):
            raise ParameterError(f"channels must be 1 or 3, got {self.n_channels}")
        if self.frame_len < 2 or self.hop < 1:
            raise ParameterError(f"invalid framing: frame_len={self.frame_len}, hop={self.hop}")
        if self.delta_half_window < 1:
            raise ParameterError(f"delta_half_window must be >= 1, got {self.delta_half_window}")
        if self.mel_scale not in ("slaney", "htk"):
            raise ParameterError(f"mel_scale must be 'slaney' or 'htk', got {self.mel_scale!r}")
        if self.representation is RepresentationTag.MFCC and self.n_mfcc > self.n_mels:
            raise ParameterError(f"n_mfcc={self.n_mfcc} exceeds n_mels={self.n_mels}")


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # channels x time x frequency, float32
    representation_tag: RepresentationTag
    frame_hop: float
    clip_id: str = ""

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise InvalidInputError(f"FeatureMap expects 3 dims (C, T, F), got shape {data.shape}")
        if data.shape[0] not in (1, 3) and self.representation_tag is not RepresentationTag.MATRIX:
            raise InvalidInputError(f"FeatureMap channels must be 1 or 3, got {data.shape[0]}")
        if not np.isfinite(data).all():
            raise InvalidInputError(f"FeatureMap for {self.clip_id!r} has non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "representation_tag", RepresentationTag(self.representation_tag))
        # hop хранится в f32 в кэше, держим то же значение в памяти
        object.__setattr__(self, "frame_hop", float(np.float32(self.frame_hop)))

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[1])


# ---------- Дельты ----------


def delta(static: np.ndarray, half_window: int = 4, axis: int = 0) -> np.ndarray:
    """
    d_t = sum_n n * (c_{t+n} - c_{t-n}) / (2 * sum_n n^2), крайние кадры повторяются.
    """
    if half_window < 1:
        raise ParameterError(f"half_window must be >= 1, got {half_window}")
    static = np.asarray(static, dtype=np.float64)
    if static.ndim == 0 or static.shape[axis] < 1:
        raise InvalidInputError("delta needs at least one frame")

    moved = np.moveaxis(static, axis, 0)
    length = moved.shape[0]
    pad_width = [(half_window, half_window)] + [(0, 0)] * (moved.ndim - 1)
    padded = np.pad(moved, pad_width, mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, half_window + 1))

    out = np.zeros_like(moved)
    for n in range(1, half_window + 1):
        ahead = padded[half_window + n : half_window + n + length]
        behind = padded[half_window - n : half_window - n + length]
        out += n * (ahead - behind)
    return np.moveaxis(out / denom, 0, axis)


def stack_deltas(static: np.ndarray, half_window: int) -> np.ndarray:
    """time x freq -> 3 x time x freq: [static, delta, delta-delta]."""
    d1 = delta(static, half_window)
    d2 = delta(d1, half_window)
    return np.stack([static, d1, d2])


# ---------- Представления ----------


@lru_cache(maxsize=8)
def _mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: Optional[float], htk: bool):
    return dsp.build_mel_filterbank(sample_rate, n_fft, n_mels, f_min, f_max, htk=htk)


@lru_cache(maxsize=4)
def _cqt_kernel(sample_rate: int, f_min: float, bins_per_octave: int, n_bins: int):
    return dsp.build_cqt_kernel(sample_rate, f_min, bins_per_octave, n_bins)


def _check_rate(clip: AudioClip, cfg: FeatureConfig) -> None:
    if clip.sample_rate != cfg.sample_rate:
        raise InvalidInputError(
            f"clip {clip.source_id!r} is at {clip.sample_rate} Hz, extractor expects {cfg.sample_rate} Hz"
        )


def logmel_static(clip: AudioClip, cfg: FeatureConfig, n_mels: Optional[int] = None) -> np.ndarray:
    _check_rate(clip, cfg)
    fb = _mel_filterbank(
        cfg.sample_rate, cfg.frame_len, n_mels or cfg.n_mels, cfg.f_min, cfg.f_max, cfg.mel_scale == "htk"
    )
    power = dsp.power_spectrogram(clip.samples, cfg.frame_len, cfg.hop)
    return np.log(fb.apply(power) + LOG_FLOOR)


def _finish(static: np.ndarray, clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    data = stack_deltas(static, cfg.delta_half_window) if cfg.n_channels == 3 else static[None]
    return FeatureMap(
        data=data,
        representation_tag=cfg.representation,
        frame_hop=cfg.hop_seconds,
        clip_id=clip.source_id,
    )


def logmel(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    if cfg.representation not in (RepresentationTag.LOGMEL64, RepresentationTag.LOGMEL128):
        cfg = cfg.for_representation(RepresentationTag.LOGMEL64, cfg.channels)
    cfg.validate()
    return _finish(logmel_static(clip, cfg), clip, cfg)


def mfcc_static(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    if cfg.n_mfcc > cfg.n_mels_mfcc:
        raise ParameterError(f"n_mfcc={cfg.n_mfcc} exceeds n_mels={cfg.n_mels_mfcc}")
    log_mel = logmel_static(clip, cfg, n_mels=cfg.n_mels_mfcc)
    return dsp.dct_ii(log_mel, cfg.n_mfcc)


def mfcc(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    if cfg.representation is not RepresentationTag.MFCC:
        cfg = cfg.for_representation(RepresentationTag.MFCC, cfg.channels)
    cfg.validate()
    return _finish(mfcc_static(clip, cfg), clip, cfg)


def cqt_static(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    _check_rate(clip, cfg)
    kernel = _cqt_kernel(cfg.sample_rate, cfg.cqt_f_min, cfg.cqt_bins_per_octave, cfg.cqt_n_bins)
    return np.log(dsp.cqt_power(clip.samples, kernel, cfg.frame_len, cfg.hop) + LOG_FLOOR)


def cqt(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    if cfg.representation is not RepresentationTag.CQT:
        cfg = cfg.for_representation(RepresentationTag.CQT, cfg.channels)
    cfg.validate()
    return _finish(cqt_static(clip, cfg), clip, cfg)


_EXTRACTORS = {
    RepresentationTag.LOGMEL64: logmel,
    RepresentationTag.LOGMEL128: logmel,
    RepresentationTag.MFCC: mfcc,
    RepresentationTag.CQT: cqt,
}


def extract(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    try:
        extractor = _EXTRACTORS[cfg.representation]
    except KeyError:
        raise ParameterError(f"no extractor for representation {cfg.representation.value!r}") from None
    return extractor(clip, cfg)


# ---------- Стандартизация ----------


@dataclass(frozen=True)
class FeatureStats:
    """Среднее и СКО по обучающей выборке для каждого (канал, частотный бин)."""

    mean: np.ndarray  # C x F
    std: np.ndarray  # C x F
    n_frames: int = field(default=0, compare=False)

    @classmethod
    def from_maps(cls, maps) -> "FeatureStats":
        total = None
        total_sq = None
        count = 0
        for data in maps:
            data = np.asarray(data, dtype=np.float64)
            s = data.sum(axis=1)
            sq = (data * data).sum(axis=1)
            total = s if total is None else total + s
            total_sq = sq if total_sq is None else total_sq + sq
            count += data.shape[1]
        if total is None or count == 0:
            raise InvalidInputError("cannot compute feature statistics from an empty set")
        mean = total / count
        var = np.maximum(total_sq / count - mean * mean, 0.0)
        return cls(mean=mean, std=np.sqrt(var), n_frames=count)

    def apply(self, data: np.ndarray) -> np.ndarray:
        std = np.maximum(self.std, 1e-8)
        return ((data - self.mean[:, None, :]) / std[:, None, :]).astype(np.float32)

    def save(self, path) -> None:
        np.savez(path, mean=self.mean, std=self.std, n_frames=np.array(self.n_frames))

    @classmethod
    def load(cls, path) -> "FeatureStats":
        with np.load(path) as payload:
            return cls(mean=payload["mean"], std=payload["std"], n_frames=int(payload["n_frames"]))
