# src/mrkd/audio_io.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np
import soundfile as sf

from .errors import AudioDecodeError, InvalidInputError, ParameterError, UnsupportedFormatError

logger = logging.getLogger(__name__)

CANONICAL_SAMPLE_RATE = 44100
# 1.5 с: кадры 80 мс с шагом 10 мс дают ~150 кадров
CANONICAL_LENGTH = 66150

INT16_SCALE = 32768.0


class CropMode(str, Enum):
    TRAIN_RANDOM = "train_random"
    EVAL_CENTER = "eval_center"


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"AudioClip expects mono samples, got shape {samples.shape}")
        if not self._checked:
            if not np.isfinite(samples).all():
                raise InvalidInputError(f"clip {self.source_id!r} contains non-finite samples")
            if samples.size and np.abs(samples).max() > 1.0:
                raise InvalidInputError(f"clip {self.source_id!r} has samples outside [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / float(self.sample_rate)

    def with_samples(self, samples: np.ndarray, sample_rate: int | None = None) -> "AudioClip":
        return AudioClip(
            samples=samples,
            sample_rate=self.sample_rate if sample_rate is None else sample_rate,
            source_id=self.source_id,
        )


def load_wav(path: Union[str, Path], source_id: str | None = None) -> AudioClip:
    """
    Читает WAV (PCM 16 bit, 1–2 канала) и приводит к моно в диапазоне [-1, 1].
    int16 делится на 32768, стерео усредняется по каналам.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"audio file not found: {path}")

    try:
        info = sf.info(str(path))
    except RuntimeError as exc:
        # soundfile.LibsndfileError наследуется от RuntimeError
        raise AudioDecodeError(f"malformed WAV header in {path}: {exc}") from exc

    if info.format not in ("WAV", "WAVEX"):
        raise UnsupportedFormatError("container", info.format, "RIFF/WAVE")
    if info.subtype != "PCM_16":
        raise UnsupportedFormatError("subtype", info.subtype, "PCM_16 (16-bit integer PCM)")
    if info.channels not in (1, 2):
        raise UnsupportedFormatError("channels", info.channels, "1 or 2")

    try:
        data, sample_rate = sf.read(str(path), dtype="int16", always_2d=True)
    except RuntimeError as exc:
        raise AudioDecodeError(f"failed to decode {path}: {exc}") from exc

    samples = data.astype(np.float64) / INT16_SCALE
    mono = samples.mean(axis=1) if samples.shape[1] > 1 else samples[:, 0]
    return AudioClip(
        samples=mono,
        sample_rate=int(sample_rate),
        source_id=source_id if source_id is not None else path.stem,
        _checked=True,
    )


def write_wav(clip: AudioClip, path: Union[str, Path]) -> None:
    """
    Пишет клип как моно PCM 16 bit. Обратное отображение: round(x * 32768) с насыщением.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ints = np.clip(np.round(clip.samples * INT16_SCALE), -32768, 32767).astype(np.int16)
    sf.write(str(path), ints, clip.sample_rate, subtype="PCM_16", format="WAV")


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ParameterError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip

    n_in = len(clip)
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    if n_in == 0 or n_out == 0:
        return clip.with_samples(np.zeros(0), sample_rate=target_rate)

    positions = np.arange(n_out, dtype=np.float64) * (clip.sample_rate / float(target_rate))
    # за последним отсчётом держим крайнее значение
    resampled = np.interp(positions, np.arange(n_in, dtype=np.float64), clip.samples)
    logger.debug("Resampled %s: %d Hz -> %d Hz", clip.source_id, clip.sample_rate, target_rate)
    return AudioClip(samples=resampled, sample_rate=target_rate, source_id=clip.source_id, _checked=True)


def crop_offset(length: int, target_len: int, mode: CropMode, seed: int = 0) -> int:
    if length <= target_len:
        return 0
    if CropMode(mode) is CropMode.EVAL_CENTER:
        return (length - target_len) // 2
    rng = np.random.default_rng(seed)
    return int(rng.integers(0, length - target_len + 1))


def tile_or_crop(
    array: np.ndarray,
    target_len: int,
    mode: CropMode = CropMode.EVAL_CENTER,
    seed: int = 0,
    axis: int = 0,
) -> np.ndarray:
    """
    Короткий массив повторяется (tile) и обрезается, из длинного вырезается окно.
    Работает вдоль произвольной оси, поэтому годится и для карт признаков.
    """
    if target_len <= 0:
        raise ParameterError(f"target_len must be positive, got {target_len}")
    length = array.shape[axis]
    if length == 0:
        raise InvalidInputError("cannot pad or crop an empty sequence")

    if length < target_len:
        reps = -(-target_len // length)
        tiled = np.concatenate([array] * reps, axis=axis)
        return np.take(tiled, np.arange(target_len), axis=axis)

    offset = crop_offset(length, target_len, mode, seed)
    return np.take(array, np.arange(offset, offset + target_len), axis=axis)


def pad_or_crop(clip: AudioClip, target_len: int, mode: CropMode, seed: int = 0) -> AudioClip:
    if len(clip) == 0:
        raise InvalidInputError(f"clip {clip.source_id!r} is empty")
    if len(clip) == target_len:
        return clip
    samples = tile_or_crop(clip.samples, target_len, mode, seed)
    return AudioClip(samples=samples, sample_rate=clip.sample_rate, source_id=clip.source_id, _checked=True)


def load_canonical(
    path: Union[str, Path],
    sample_rate: int = CANONICAL_SAMPLE_RATE,
    min_length: int | None = None,
    source_id: str | None = None,
) -> AudioClip:
    """
    Загрузка + приведение к канонической частоте; короткие клипы дополняются повтором
    до min_length (длинные не обрезаются, окно выбирается позже).
    """
    clip = load_wav(path, source_id=source_id)
    if clip.sample_rate != sample_rate:
        logger.warning("Clip %s has rate %d Hz, resampling to %d Hz", clip.source_id, clip.sample_rate, sample_rate)
        clip = resample_linear(clip, sample_rate)
    if min_length is not None and len(clip) < min_length:
        clip = pad_or_crop(clip, min_length, CropMode.EVAL_CENTER)
    return clip
