# tests/test_audio_io.py
import numpy as np
import pytest

from mrkd.audio_io import (
    AudioClip,
    CropMode,
    load_canonical,
    load_wav,
    pad_or_crop,
    resample_linear,
    tile_or_crop,
    write_wav,
)
from mrkd.errors import AudioDecodeError, InvalidInputError, UnsupportedFormatError


def test_zero_signal(wav_writer):
    clip = load_wav(wav_writer("zeros.wav", [0, 0, 0]))
    assert clip.samples.tolist() == [0.0, 0.0, 0.0]
    assert clip.sample_rate == 44100
    assert clip.source_id == "zeros"


def test_int16_extremes_map_by_32768(wav_writer):
    clip = load_wav(wav_writer("ext.wav", [32767, -32768]))
    assert clip.samples[0] == pytest.approx(32767 / 32768)
    assert clip.samples[0] == pytest.approx(0.99997, abs=1e-5)
    assert clip.samples[1] == -1.0


def test_stereo_is_channel_average(wav_writer):
    clip = load_wav(wav_writer("st.wav", [[16384, 0]]))
    assert clip.samples.tolist() == [0.25]


def test_header_sample_rate_is_kept(wav_writer):
    clip = load_wav(wav_writer("sr.wav", [1, 2, 3], sample_rate=22050))
    assert clip.sample_rate == 22050


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFF\x00\x00\x00\x00NOPE")
    with pytest.raises(AudioDecodeError):
        load_wav(path)


def test_unsupported_bit_depth_names_field(tmp_path):
    import soundfile as sf

    path = tmp_path / "float.wav"
    sf.write(str(path), np.zeros(16, dtype=np.float32), 44100, subtype="FLOAT", format="WAV")
    with pytest.raises(UnsupportedFormatError) as info:
        load_wav(path)
    assert info.value.field == "subtype"


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "nope.wav")


def test_write_then_load_within_one_lsb(tmp_path, rng):
    samples = rng.uniform(-1.0, 1.0, size=1000)
    write_wav(AudioClip(samples, 44100, "x"), tmp_path / "x.wav")
    back = load_wav(tmp_path / "x.wav")
    assert np.max(np.abs(back.samples - samples)) <= 1.0 / 32768


def test_clip_rejects_out_of_range():
    with pytest.raises(InvalidInputError):
        AudioClip(np.array([0.0, 1.5]), 44100)
    with pytest.raises(InvalidInputError):
        AudioClip(np.array([0.0, np.nan]), 44100)
    with pytest.raises(InvalidInputError):
        AudioClip(np.zeros(3), 0)


# ---------- resample_linear ----------


def test_resample_identity_is_bit_exact(rng):
    clip = AudioClip(rng.uniform(-1, 1, size=257), 44100)
    assert resample_linear(clip, 44100) is clip


def test_resample_midpoint_and_edge_hold():
    out = resample_linear(AudioClip(np.array([0.0, 1.0]), 2), 4)
    assert out.sample_rate == 4
    np.testing.assert_allclose(out.samples, [0.0, 0.5, 1.0, 1.0])


def test_resample_output_length():
    clip = AudioClip(np.zeros(1001), 22050)
    assert len(resample_linear(clip, 44100)) == round(1001 * 44100 / 22050)


def _dominant_hz(samples: np.ndarray, sample_rate: int) -> float:
    n = samples.shape[0]
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    # прямое ДПФ как оракул
    basis = np.exp(-2j * np.pi * np.outer(k, t) / n)
    power = np.abs(basis @ samples) ** 2
    return k[np.argmax(power)] * sample_rate / n


def test_resample_keeps_sine_frequency():
    sr = 22050
    n = 441  # 20 мс: 1 кГц попадает ровно в бин
    t = np.arange(n) / sr
    clip = AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), sr)
    up = resample_linear(clip, 44100)
    assert _dominant_hz(clip.samples, sr) == pytest.approx(1000.0)
    assert _dominant_hz(up.samples, 44100) == pytest.approx(1000.0, abs=44100 / len(up))


# ---------- pad_or_crop ----------


def test_pad_or_crop_identity():
    clip = AudioClip(np.linspace(-1, 1, 10), 8000)
    assert pad_or_crop(clip, 10, CropMode.EVAL_CENTER) is clip


def test_short_clip_is_tiled():
    clip = AudioClip(np.array([0.1, 0.2, 0.3, 0.4]), 8000)
    out = pad_or_crop(clip, 6, CropMode.TRAIN_RANDOM, seed=3)
    np.testing.assert_array_equal(out.samples, [0.1, 0.2, 0.3, 0.4, 0.1, 0.2])


def test_center_crop():
    samples = np.arange(100) / 100.0
    out = pad_or_crop(AudioClip(samples, 8000), 50, CropMode.EVAL_CENTER)
    np.testing.assert_array_equal(out.samples, samples[25:75])


@pytest.mark.parametrize("length", [1, 2, 7, 50, 51, 99, 100, 333])
def test_always_target_length(length):
    clip = AudioClip(np.full(length, 0.1), 8000)
    for mode in CropMode:
        assert len(pad_or_crop(clip, 50, mode, seed=length)) == 50


def test_random_crop_is_seeded():
    samples = np.linspace(-1, 1, 1000)
    clip = AudioClip(samples, 8000)
    a = pad_or_crop(clip, 100, CropMode.TRAIN_RANDOM, seed=11)
    b = pad_or_crop(clip, 100, CropMode.TRAIN_RANDOM, seed=11)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_empty_clip_is_invalid():
    with pytest.raises(InvalidInputError):
        pad_or_crop(AudioClip(np.zeros(0), 8000), 5, CropMode.EVAL_CENTER)


def test_tile_or_crop_along_time_axis():
    fmap = np.arange(2 * 5 * 3).reshape(2, 5, 3)
    out = tile_or_crop(fmap, 3, CropMode.EVAL_CENTER, axis=1)
    np.testing.assert_array_equal(out, fmap[:, 1:4])


def test_load_canonical_resamples_and_tiles(wav_writer):
    path = wav_writer("short.wav", np.full(100, 1000), sample_rate=22050)
    clip = load_canonical(path, sample_rate=44100, min_length=500)
    assert clip.sample_rate == 44100
    assert len(clip) == 500
