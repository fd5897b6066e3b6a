# src/mrkd/data/synthetic.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy import fft as sp_fft

from ..audio_io import CANONICAL_LENGTH, CANONICAL_SAMPLE_RATE, AudioClip, write_wav
from ..errors import InvalidInputError, ParameterError
from ..schemas import ManifestEntry
from .manifest import DatasetManifest, load_manifest, write_manifest

logger = logging.getLogger(__name__)

BASE_FUNDAMENTAL = 180.0
FUNDAMENTAL_RATIO = 1.22
FUNDAMENTAL_JITTER = 0.03
N_PARTIALS = 3
SNR_DB = 10.0
PEAK = 0.9
AM_RATE_HZ = 4.0
CHIRP_SPAN = 0.25  # частота растёт на 25% за клип
TEST_FRACTION = 0.2

ENVELOPES = ("steady", "am", "chirp")

# отдельный поток случайности для порчи меток
_CORRUPTION_STREAM = 7919


def class_name(c: int) -> str:
    return f"class_{c:02d}"


def class_fundamental(c: int) -> float:
    return BASE_FUNDAMENTAL * FUNDAMENTAL_RATIO**c


def class_envelope(c: int) -> str:
    return ENVELOPES[c % len(ENVELOPES)]


def partial_amplitudes(c: int) -> np.ndarray:
    """Амплитуды k = 1..3 как k^(-slope); наклон свой у каждого класса."""
    slope = 0.3 + 0.45 * (c % 5)
    k = np.arange(1, N_PARTIALS + 1, dtype=np.float64)
    return k ** (-slope)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    spectrum = sp_fft.rfft(white)
    scale = np.ones(spectrum.shape[0])
    scale[1:] = 1.0 / np.sqrt(np.arange(1, spectrum.shape[0]))
    scale[0] = 0.0
    noise = sp_fft.irfft(spectrum * scale, n=n)
    return noise / max(float(np.sqrt(np.mean(noise**2))), 1e-12)


def synth_signal(
    c: int,
    rng: np.random.Generator,
    sample_rate: int = CANONICAL_SAMPLE_RATE,
    n_samples: int = CANONICAL_LENGTH,
) -> np.ndarray:
    """
    Один клип класса c: гармонический стек + огибающая класса + розовый шум 10 дБ SNR,
    пик нормирован к 0.9.
    """
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    duration = n_samples / sample_rate
    f0 = class_fundamental(c) * (1.0 + rng.uniform(-FUNDAMENTAL_JITTER, FUNDAMENTAL_JITTER))
    envelope = class_envelope(c)

    if envelope == "chirp":
        # мгновенная частота f0 * (1 + span * t / duration)
        base_phase = 2 * np.pi * f0 * (t + 0.5 * CHIRP_SPAN * t * t / duration)
        top = f0 * (1.0 + CHIRP_SPAN)
    else:
        base_phase = 2 * np.pi * f0 * t
        top = f0

    tone = np.zeros(n_samples)
    for k, amp in enumerate(partial_amplitudes(c), start=1):
        if k * top >= 0.95 * sample_rate / 2:
            break
        tone += amp * np.sin(k * base_phase + rng.uniform(0, 2 * np.pi))

    if envelope == "am":
        tone *= 0.5 * (1.0 + np.sin(2 * np.pi * AM_RATE_HZ * t + rng.uniform(0, 2 * np.pi)))

    signal_rms = float(np.sqrt(np.mean(tone**2)))
    noise = pink_noise(n_samples, rng) * signal_rms / 10 ** (SNR_DB / 20)
    mixed = tone + noise
    return mixed * (PEAK / float(np.max(np.abs(mixed))))


def stratified_test_indices(clips_per_class: int, seed: int, c: int) -> np.ndarray:
    n_test = int(round(TEST_FRACTION * clips_per_class))
    order = np.random.default_rng([seed, c]).permutation(clips_per_class)
    return np.sort(order[:n_test])


def gen_synthetic(
    out_dir: Union[str, Path],
    n_classes: int = 10,
    clips_per_class: int = 100,
    seed: int = 7,
    label_corruption: float = 0.0,
    sample_rate: int = CANONICAL_SAMPLE_RATE,
    n_samples: int = CANONICAL_LENGTH,
) -> DatasetManifest:
    """
    Пишет корпус out_dir/class_XX/class_XX_iiii.wav и out_dir/manifest.csv.
    Разбиение 80/20 стратифицировано по классам; label_corruption портит долю
    меток обучающего сплита (аудио не меняется, test остаётся чистым).
    """
    problems = []
    if n_classes < 2:
        problems.append(f"n_classes must be >= 2, got {n_classes}")
    if clips_per_class < 1:
        problems.append(f"clips_per_class must be >= 1, got {clips_per_class}")
    if not 0.0 <= label_corruption <= 1.0:
        problems.append(f"label_corruption must be in [0, 1], got {label_corruption}")
    if n_classes >= 2 and class_fundamental(n_classes - 1) * (1 + FUNDAMENTAL_JITTER) >= sample_rate / 2:
        problems.append(f"n_classes={n_classes} puts the top fundamental above Nyquist")
    if problems:
        raise ParameterError("; ".join(problems))

    out_dir = Path(out_dir)
    entries: List[ManifestEntry] = []
    try:
        for c in range(n_classes):
            name = class_name(c)
            (out_dir / name).mkdir(parents=True, exist_ok=True)
            test_idx = set(stratified_test_indices(clips_per_class, seed, c).tolist())
            for i in range(clips_per_class):
                rng = np.random.default_rng([seed, c, i])
                rel = f"{name}/{name}_{i:04d}.wav"
                clip = AudioClip(
                    samples=synth_signal(c, rng, sample_rate, n_samples), sample_rate=sample_rate, source_id=rel
                )
                write_wav(clip, out_dir / rel)
                entries.append(ManifestEntry(path=rel, label=name, split="test" if i in test_idx else "train"))
            logger.debug("Class %s: %d clips written", name, clips_per_class)

        if label_corruption > 0:
            _corrupt_labels(entries, n_classes, label_corruption, seed)
        manifest_path = write_manifest(out_dir / "manifest.csv", entries)
    except OSError as exc:
        raise InvalidInputError(f"cannot write synthetic corpus to {out_dir}: {exc}") from exc

    logger.info("Synthetic corpus: %d clips, %d classes in %s", len(entries), n_classes, out_dir)
    return load_manifest(manifest_path)


def _corrupt_labels(entries: List[ManifestEntry], n_classes: int, fraction: float, seed: int) -> None:
    train = [e for e in entries if e.split == "train"]
    n_corrupt = int(round(fraction * len(train)))
    rng = np.random.default_rng([seed, _CORRUPTION_STREAM])
    for pos in rng.choice(len(train), size=n_corrupt, replace=False):
        entry = train[int(pos)]
        true_c = int(entry.label.rsplit("_", 1)[1])
        # любой класс, кроме истинного
        shift = int(rng.integers(1, n_classes))
        entry.label = class_name((true_c + shift) % n_classes)
    logger.info("Corrupted %d of %d training labels", n_corrupt, len(train))
