# src/mrkd/features/dsp.py
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from ..errors import InvalidInputError, ParameterError

WINDOWS = ("hann", "rect")


def frame_count(length: int, frame_len: int, hop: int) -> int:
    if length < frame_len:
        return 0
    return (length - frame_len) // hop + 1


def analysis_window(name: str, frame_len: int) -> np.ndarray:
    if name == "rect":
        return np.ones(frame_len)
    if name == "hann":
        # периодическое окно, как в librosa
        return get_window("hann", frame_len, fftbins=True)
    raise ParameterError(f"unknown window {name!r}, expected one of {WINDOWS}")


def frames(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Кадр t покрывает отсчёты [t*hop, t*hop + frame_len)."""
    if hop < 1:
        raise ParameterError(f"hop must be >= 1, got {hop}")
    if frame_len < 1:
        raise ParameterError(f"frame_len must be >= 1, got {frame_len}")
    if samples.shape[0] < frame_len:
        raise InvalidInputError(
            f"clip of {samples.shape[0]} samples is shorter than one frame ({frame_len})"
        )
    return sliding_window_view(samples, frame_len)[::hop]


def stft(samples: np.ndarray, frame_len: int, hop: int, window: str = "hann") -> np.ndarray:
    """
    Односторонний спектр: time x (frame_len // 2 + 1), complex128.
    """
    framed = frames(np.asarray(samples, dtype=np.float64), frame_len, hop)
    return scipy.fft.rfft(framed * analysis_window(window, frame_len), axis=-1)


def power_spectrogram(samples: np.ndarray, frame_len: int, hop: int, window: str = "hann") -> np.ndarray:
    spec = stft(samples, frame_len, hop, window)
    return spec.real ** 2 + spec.imag ** 2


# ---------- Мел-шкала ----------

_SLANEY_F_SP = 200.0 / 3.0
_SLANEY_MIN_LOG_HZ = 1000.0
_SLANEY_MIN_LOG_MEL = _SLANEY_MIN_LOG_HZ / _SLANEY_F_SP
_SLANEY_LOGSTEP = math.log(6.4) / 27.0


def hz_to_mel(freqs, htk: bool = False) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=np.float64)
    if htk:
        return 2595.0 * np.log10(1.0 + freqs / 700.0)
    mels = freqs / _SLANEY_F_SP
    log_region = freqs >= _SLANEY_MIN_LOG_HZ
    mels = np.where(
        log_region,
        _SLANEY_MIN_LOG_MEL + np.log(np.maximum(freqs, _SLANEY_MIN_LOG_HZ) / _SLANEY_MIN_LOG_HZ) / _SLANEY_LOGSTEP,
        mels,
    )
    return mels


def mel_to_hz(mels, htk: bool = False) -> np.ndarray:
    mels = np.asarray(mels, dtype=np.float64)
    if htk:
        return 700.0 * (10.0 ** (mels / 2595.0) - 1.0)
    freqs = _SLANEY_F_SP * mels
    log_region = mels >= _SLANEY_MIN_LOG_MEL
    return np.where(
        log_region,
        _SLANEY_MIN_LOG_HZ * np.exp(_SLANEY_LOGSTEP * (mels - _SLANEY_MIN_LOG_MEL)),
        freqs,
    )


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # n_mels x n_fft_bins
    n_mels: int
    f_min: float
    f_max: float
    sample_rate: int
    band_edges: np.ndarray  # n_mels + 2 частот в Гц: края и центры треугольников

    @property
    def centers(self) -> np.ndarray:
        return self.band_edges[1:-1]

    def apply(self, power: np.ndarray) -> np.ndarray:
        return power @ self.weights.T


def build_mel_filterbank(
    sample_rate: int,
    n_fft: int,
    n_mels: int,
    f_min: float = 0.0,
    f_max: float | None = None,
    htk: bool = False,
) -> MelFilterbank:
    """
    Треугольные фильтры с центрами, равномерными по мел-шкале, нормировка по площади (Slaney).
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    problems = []
    if n_mels < 2:
        problems.append(f"n_mels must be >= 2, got {n_mels}")
    if not 0.0 <= f_min < f_max:
        problems.append(f"need 0 <= f_min < f_max, got f_min={f_min}, f_max={f_max}")
    if f_max > sample_rate / 2.0:
        problems.append(f"f_max={f_max} exceeds Nyquist {sample_rate / 2.0}")
    if n_fft < 2:
        problems.append(f"n_fft must be >= 2, got {n_fft}")
    if problems:
        raise ParameterError("; ".join(problems))

    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    mel_points = np.linspace(hz_to_mel(f_min, htk), hz_to_mel(f_max, htk), n_mels + 2)
    edges = mel_to_hz(mel_points, htk)

    fdiff = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))

    enorm = 2.0 / (edges[2 : n_mels + 2] - edges[:n_mels])
    weights *= enorm[:, None]

    return MelFilterbank(
        weights=weights,
        n_mels=n_mels,
        f_min=float(f_min),
        f_max=float(f_max),
        sample_rate=sample_rate,
        band_edges=edges,
    )


# ---------- DCT ----------


def dct_matrix(n: int) -> np.ndarray:
    """Ортонормированная матрица DCT-II: coeffs = M @ x."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)


def dct_ii(values: np.ndarray, n_coeffs: int | None = None) -> np.ndarray:
    coeffs = scipy.fft.dct(values, type=2, norm="ortho", axis=-1)
    if n_coeffs is not None:
        coeffs = coeffs[..., :n_coeffs]
    return coeffs


# ---------- CQT ----------


@dataclass(frozen=True)
class CqtKernel:
    atoms: Tuple[np.ndarray, ...]  # комплексные атомы, по одному на бин
    f_min: float
    bins_per_octave: int
    n_bins: int
    q: float
    sample_rate: int

    @property
    def frequencies(self) -> np.ndarray:
        return cqt_frequencies(self.f_min, self.bins_per_octave, self.n_bins)

    @property
    def bandwidths(self) -> np.ndarray:
        return self.frequencies / self.q

    @property
    def lengths(self) -> np.ndarray:
        return np.array([atom.shape[0] for atom in self.atoms])


def cqt_frequencies(f_min: float, bins_per_octave: int, n_bins: int) -> np.ndarray:
    return f_min * 2.0 ** (np.arange(n_bins, dtype=np.float64) / bins_per_octave)


def build_cqt_kernel(
    sample_rate: int,
    f_min: float = 32.70,
    bins_per_octave: int = 12,
    n_bins: int = 84,
) -> CqtKernel:
    if bins_per_octave < 1 or n_bins < 1 or f_min <= 0:
        raise ParameterError(
            f"invalid CQT geometry: f_min={f_min}, bins_per_octave={bins_per_octave}, n_bins={n_bins}"
        )
    top = f_min * 2.0 ** (n_bins / bins_per_octave)
    if top > sample_rate / 2.0:
        raise ParameterError(
            f"CQT range f_min*2^(n_bins/bins_per_octave)={top:.1f} Hz exceeds Nyquist {sample_rate / 2.0} Hz"
        )

    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    atoms = []
    for freq in cqt_frequencies(f_min, bins_per_octave, n_bins):
        length = int(math.ceil(q * sample_rate / freq))
        window = get_window("hann", length, fftbins=True)
        # центрированная фаза, нормировка по L1 окна
        n = np.arange(length) - length // 2
        atom = window * np.exp(2j * np.pi * freq * n / sample_rate) / window.sum()
        atoms.append(atom)
    return CqtKernel(
        atoms=tuple(atoms),
        f_min=float(f_min),
        bins_per_octave=bins_per_octave,
        n_bins=n_bins,
        q=q,
        sample_rate=sample_rate,
    )


def cqt_power(samples: np.ndarray, kernel: CqtKernel, frame_len: int, hop: int) -> np.ndarray:
    """
    |<сегмент, атом>|^2 на той же сетке кадров, что и STFT (центр кадра t = t*hop + frame_len//2).
    Возвращает time x n_bins.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n_frames = frame_count(samples.shape[0], frame_len, hop)
    if n_frames == 0:
        raise InvalidInputError(
            f"clip of {samples.shape[0]} samples is shorter than one frame ({frame_len})"
        )
    max_len = int(kernel.lengths.max())
    pad = max_len // 2 + 1
    padded = np.pad(samples, (pad, pad))
    centers = np.arange(n_frames) * hop + frame_len // 2 + pad

    out = np.empty((n_frames, kernel.n_bins), dtype=np.float64)
    for k, atom in enumerate(kernel.atoms):
        length = atom.shape[0]
        windows = sliding_window_view(padded, length)
        segments = windows[centers - length // 2]
        response = segments @ np.conj(atom)
        out[:, k] = response.real ** 2 + response.imag ** 2
    return out
