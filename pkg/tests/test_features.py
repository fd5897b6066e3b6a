# tests/test_features.py
import math

import numpy as np
import pytest

from mrkd.audio_io import CANONICAL_LENGTH, AudioClip
from mrkd.errors import CorruptCacheError, InvalidInputError, ParameterError
from mrkd.features import dsp
from mrkd.features.cache import HEADER, cache_read, cache_write, decode, encode
from mrkd.features.extractors import (
    LOG_FLOOR,
    FeatureConfig,
    FeatureMap,
    FeatureStats,
    RepresentationTag,
    delta,
    extract,
    logmel_static,
)

SR = 44100


def _sine(freq: float, n: int = CANONICAL_LENGTH, amp: float = 0.5) -> AudioClip:
    t = np.arange(n) / SR
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), SR, "sine")


# ---------- STFT ----------


def test_frame_count_of_canonical_clip():
    assert dsp.frame_count(CANONICAL_LENGTH, 3528, 441) == 143
    assert dsp.frame_count(100, 3528, 441) == 0


def test_zero_clip_zero_spectrum():
    spec = dsp.stft(np.zeros(4000), 1024, 256)
    assert spec.shape == (dsp.frame_count(4000, 1024, 256), 513)
    assert not spec.any()


def test_rect_window_sine_hits_its_bin():
    n, k = 64, 5
    x = np.cos(2 * np.pi * k * np.arange(n) / n)
    power = np.abs(dsp.stft(x, n, n, window="rect")[0]) ** 2
    assert int(np.argmax(power)) == k
    others = np.delete(power, k)
    assert others.max() < 1e-12 * power[k]


def test_rfft_matches_direct_dft(rng):
    n = 1024
    x = rng.standard_normal(n)
    fast = dsp.stft(x, n, n, window="rect")[0]
    k = np.arange(n // 2 + 1)
    direct = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n) @ x
    assert np.max(np.abs(fast - direct)) / np.max(np.abs(direct)) < 1e-6


def test_parseval(rng):
    frame_len, hop = 256, 64
    x = rng.uniform(-1, 1, 2000)
    spec = dsp.stft(x, frame_len, hop)
    power = np.abs(spec) ** 2
    two_sided = power[:, 0] + power[:, -1] + 2.0 * power[:, 1:-1].sum(axis=1)
    windowed = dsp.frames(x, frame_len, hop) * dsp.analysis_window("hann", frame_len)
    energy = frame_len * (windowed ** 2).sum(axis=1)
    np.testing.assert_allclose(two_sided, energy, rtol=1e-6)


def test_stft_clip_shorter_than_frame():
    with pytest.raises(InvalidInputError):
        dsp.stft(np.zeros(10), 64, 16)


# ---------- мел-фильтры ----------


def test_mel_filterbank_shape_and_rows():
    fb = dsp.build_mel_filterbank(SR, 3528, 64)
    assert fb.weights.shape == (64, 1765)
    assert (fb.weights >= 0).all()
    assert (fb.weights.sum(axis=1) > 0).all()
    assert (np.diff(fb.centers) > 0).all()
    for row in fb.weights:
        support = np.flatnonzero(row > 0)
        # одна непрерывная область
        assert support[-1] - support[0] + 1 == support.size


def test_every_bin_in_range_is_covered():
    fb = dsp.build_mel_filterbank(SR, 3528, 64)
    freqs = np.linspace(0, SR / 2, 1765)
    inside = (freqs > fb.band_edges[0]) & (freqs < fb.band_edges[-1])
    assert (fb.weights[:, inside].sum(axis=0) > 0).all()


def test_sine_at_band_center_selects_that_band():
    fb = dsp.build_mel_filterbank(SR, 3528, 64)
    n = np.arange(3528)
    for m, center in enumerate(fb.centers):
        frame = np.sin(2 * np.pi * center * n / SR)
        energy = fb.apply(dsp.power_spectrogram(frame, 3528, 441))[0]
        assert int(np.argmax(energy)) == m


def test_mel_filterbank_rejects_bad_range():
    with pytest.raises(ParameterError):
        dsp.build_mel_filterbank(SR, 3528, 64, f_min=5000, f_max=1000)
    with pytest.raises(ParameterError):
        dsp.build_mel_filterbank(SR, 3528, 1)
    with pytest.raises(ParameterError):
        dsp.build_mel_filterbank(SR, 3528, 64, f_max=30000)


@pytest.mark.parametrize("n_mels,htk", [(64, False), (128, False), (64, True)])
def test_mel_filterbank_matches_librosa(n_mels, htk):
    librosa = pytest.importorskip("librosa")
    fb = dsp.build_mel_filterbank(SR, 3528, n_mels, htk=htk)
    reference = librosa.filters.mel(
        sr=SR, n_fft=3528, n_mels=n_mels, fmin=0.0, fmax=SR / 2, htk=htk, norm="slaney", dtype=np.float64
    )
    np.testing.assert_allclose(fb.weights, reference, rtol=1e-9, atol=1e-12)


def test_htk_scale_roundtrip():
    freqs = np.array([0.0, 440.0, 1000.0, 8000.0])
    for htk in (False, True):
        np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel(freqs, htk), htk), freqs, atol=1e-8)


# ---------- logMel ----------


def test_silence_is_log_floor():
    fm = extract(AudioClip(np.zeros(CANONICAL_LENGTH), SR), FeatureConfig())
    assert fm.shape == (3, 143, 64)
    np.testing.assert_allclose(fm.data[0], math.log(LOG_FLOOR), rtol=1e-6)
    assert math.log(LOG_FLOOR) == pytest.approx(-23.0259, abs=1e-4)
    assert not fm.data[1:].any()


def test_scaling_by_ten_adds_log_100(rng):
    x = 0.05 * rng.uniform(-1, 1, 20000)
    cfg = FeatureConfig()
    quiet = logmel_static(AudioClip(x, SR), cfg)
    loud = logmel_static(AudioClip(10 * x, SR), cfg)
    mask = quiet > math.log(LOG_FLOOR) + 10
    assert mask.mean() > 0.9
    np.testing.assert_allclose((loud - quiet)[mask], math.log(100.0), atol=1e-6)


def test_logmel64_and_128_share_time_axis(rng):
    clip = AudioClip(0.3 * rng.uniform(-1, 1, CANONICAL_LENGTH), SR)
    a = extract(clip, FeatureConfig(representation="logmel64"))
    b = extract(clip, FeatureConfig(representation="logmel128"))
    assert a.shape == (3, 143, 64)
    assert b.shape == (3, 143, 128)


def test_extraction_is_deterministic(rng):
    clip = AudioClip(0.3 * rng.uniform(-1, 1, 10000), SR)
    for tag in ("logmel64", "mfcc", "cqt"):
        cfg = FeatureConfig(representation=tag)
        assert extract(clip, cfg).data.tobytes() == extract(clip, cfg).data.tobytes()


def test_extractor_rejects_other_rate():
    with pytest.raises(InvalidInputError):
        extract(AudioClip(np.zeros(8000), 22050), FeatureConfig())


# ---------- MFCC / DCT ----------


def test_dct_of_constant_row():
    coeffs = dsp.dct_ii(np.full(64, 2.5))
    assert coeffs[0] == pytest.approx(2.5 * math.sqrt(64))
    np.testing.assert_allclose(coeffs[1:], 0.0, atol=1e-12)


def test_dct_matrix_is_orthonormal():
    m = dsp.dct_matrix(64)
    np.testing.assert_allclose(m @ m.T, np.eye(64), atol=1e-10)


def test_dct_matches_direct_summation(rng):
    x = rng.standard_normal(64)
    n = x.shape[0]
    k = np.arange(n)[:, None]
    idx = np.arange(n)[None, :]
    scale = np.where(k == 0, math.sqrt(1.0 / n), math.sqrt(2.0 / n))
    direct = (scale * np.cos(np.pi * k * (2 * idx + 1) / (2 * n))) @ x
    np.testing.assert_allclose(dsp.dct_ii(x, 40), direct[:40], atol=1e-10)


def test_mfcc_shape_and_coefficient_limit(rng):
    clip = AudioClip(0.3 * rng.uniform(-1, 1, 10000), SR)
    fm = extract(clip, FeatureConfig(representation="mfcc"))
    assert fm.shape[0] == 3 and fm.shape[2] == 40
    with pytest.raises(ParameterError):
        extract(clip, FeatureConfig(representation="mfcc", n_mfcc=80))


# ---------- CQT ----------


def test_cqt_frequencies_double_per_octave():
    freqs = dsp.cqt_frequencies(32.70, 12, 84)
    assert freqs[12] == pytest.approx(65.40)
    np.testing.assert_allclose(freqs[12:] / freqs[:-12], 2.0)


def test_cqt_quality_factor_is_constant():
    kernel = dsp.build_cqt_kernel(SR)
    ratio = kernel.frequencies / kernel.bandwidths
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-6)
    assert kernel.q == pytest.approx(1.0 / (2 ** (1 / 12) - 1))
    expected = np.ceil(kernel.q * SR / kernel.frequencies)
    np.testing.assert_array_equal(kernel.lengths, expected)
    assert (np.diff(kernel.lengths) <= 0).all()


def test_cqt_atoms_pick_their_own_sine():
    kernel = dsp.build_cqt_kernel(SR)
    longest = int(kernel.lengths.max())
    n = np.arange(longest + 2) - (longest + 2) // 2
    for k, freq in enumerate(kernel.frequencies):
        signal = np.sin(2 * np.pi * freq * n / SR)
        responses = []
        for atom in kernel.atoms:
            half = atom.shape[0] // 2
            center = (longest + 2) // 2
            segment = signal[center - half : center - half + atom.shape[0]]
            responses.append(abs(segment @ np.conj(atom)))
        assert int(np.argmax(responses)) == k


CQT_STATIC = FeatureConfig(representation="cqt", channels=1)


@pytest.mark.parametrize("k", range(84))
def test_cqt_map_peaks_at_sine_bin(k):
    freq = dsp.cqt_frequencies(32.70, 12, 84)[k]
    fm = extract(_sine(freq), CQT_STATIC)
    assert fm.shape == (1, 143, 84)
    assert int(np.argmax(fm.data[0, 71])) == k


def test_cqt_silence_and_range_check():
    fm = extract(AudioClip(np.zeros(5000), SR), FeatureConfig(representation="cqt"))
    np.testing.assert_allclose(fm.data, math.log(LOG_FLOOR), rtol=1e-6)
    with pytest.raises(ParameterError):
        dsp.build_cqt_kernel(SR, f_min=2000.0)


# ---------- дельты ----------


def test_delta_of_constant_is_zero():
    assert not delta(np.full((20, 4), 3.0), 4).any()


def test_delta_of_ramp_is_one_inside():
    ramp = np.repeat(np.arange(30, dtype=float)[:, None], 2, axis=1)
    d = delta(ramp, 4)
    np.testing.assert_allclose(d[4:-4], 1.0)


def test_delta_matches_formula(rng):
    c = rng.standard_normal((20, 3))
    half = 4
    denom = 2 * sum(n * n for n in range(1, half + 1))
    expected = np.zeros_like(c)
    for t in range(20):
        for n in range(1, half + 1):
            ahead = c[min(t + n, 19)]
            behind = c[max(t - n, 0)]
            expected[t] += n * (ahead - behind)
    np.testing.assert_allclose(delta(c, half), expected / denom, atol=1e-12)


def test_delta_matches_librosa(rng):
    librosa = pytest.importorskip("librosa")
    c = rng.standard_normal((40, 6))
    reference = librosa.feature.delta(c, width=9, order=1, axis=0, mode="nearest")
    np.testing.assert_allclose(delta(c, 4), reference, atol=1e-10)


def test_delta_is_linear(rng):
    x, y = rng.standard_normal((2, 25, 5))
    np.testing.assert_allclose(delta(2.0 * x - 3.0 * y), 2.0 * delta(x) - 3.0 * delta(y), atol=1e-9)


def test_channel_order_static_delta_deltadelta(rng):
    clip = AudioClip(0.3 * rng.uniform(-1, 1, 12000), SR)
    cfg = FeatureConfig()
    fm = extract(clip, cfg)
    static = logmel_static(clip, cfg)
    np.testing.assert_allclose(fm.data[0], static.astype(np.float32))
    np.testing.assert_allclose(fm.data[1], delta(static, 4).astype(np.float32), atol=1e-5)
    np.testing.assert_allclose(fm.data[2], delta(delta(static, 4), 4).astype(np.float32), atol=1e-5)
    one = extract(clip, FeatureConfig(channels=1))
    assert one.shape[0] == 1


def test_cache_tag_marks_non_default_channels():
    assert FeatureConfig(representation="logmel64").cache_tag == "logmel64"
    assert FeatureConfig(representation="logmel64", channels=1).cache_tag == "logmel64_1ch"
    assert FeatureConfig(representation="cqt").cache_tag == "cqt"
    assert FeatureConfig(representation="cqt", channels=3).cache_tag == "cqt_3ch"


# ---------- кэш ----------


def _fmap(rng, shape=(3, 143, 64)):
    return FeatureMap(rng.standard_normal(shape).astype(np.float32), RepresentationTag.LOGMEL64, 0.01, "clip")


def test_cache_round_trip_is_bit_exact(tmp_path, rng):
    fm = _fmap(rng)
    cache_write(fm, tmp_path / "clip.mrkd")
    back = cache_read(tmp_path / "clip.mrkd")
    assert back.data.tobytes() == fm.data.tobytes()
    assert back.representation_tag is RepresentationTag.LOGMEL64
    assert back.frame_hop == fm.frame_hop
    assert back.clip_id == "clip"


def test_cache_size_arithmetic(rng):
    assert HEADER.size == 32
    assert len(encode(_fmap(rng))) == 3 * 143 * 64 * 4 + 32


def test_cache_rejects_bad_blobs(rng):
    blob = encode(_fmap(rng, (1, 4, 4)))
    with pytest.raises(CorruptCacheError):
        decode(b"XXXX" + blob[4:])
    with pytest.raises(CorruptCacheError):
        decode(blob[:-4])
    with pytest.raises(CorruptCacheError):
        decode(blob[:4] + (2).to_bytes(2, "little") + blob[6:])
    with pytest.raises(CorruptCacheError):
        decode(blob[:10])


# ---------- стандартизация ----------


def test_stats_standardize_per_channel_and_bin(rng, tmp_path):
    maps = [rng.normal(5.0, 2.0, (3, 50, 8)) for _ in range(4)]
    stats = FeatureStats.from_maps(maps)
    assert stats.mean.shape == (3, 8)
    assert stats.n_frames == 200
    z = np.concatenate([stats.apply(m) for m in maps], axis=1)
    np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-5)
    np.testing.assert_allclose(z.std(axis=1), 1.0, atol=1e-4)

    stats.save(tmp_path / "stats.npz")
    loaded = FeatureStats.load(tmp_path / "stats.npz")
    np.testing.assert_array_equal(loaded.mean, stats.mean)
    assert loaded.n_frames == 200
