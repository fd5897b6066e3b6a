# tests/conftest.py
from pathlib import Path

import numpy as np
import pytest
import soundfile as sf

from mrkd.services.feature_store import clear_store_cache


def write_int16(path: Path, ints, sample_rate: int = 44100) -> Path:
    """WAV из сырых int16: одномерный массив = моно, N x 2 = стерео."""
    data = np.asarray(ints, dtype=np.int16)
    sf.write(str(path), data, sample_rate, subtype="PCM_16", format="WAV")
    return path


@pytest.fixture
def wav_writer(tmp_path):
    def _write(name: str, ints, sample_rate: int = 44100) -> Path:
        return write_int16(tmp_path / name, ints, sample_rate)

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    # окружение разработчика не должно влиять на тесты
    for name in ("MRKD_WORK_DIR", "MRKD_LOG_LEVEL", "MRKD_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    clear_store_cache()
    yield
    clear_store_cache()
