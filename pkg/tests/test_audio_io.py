import numpy as np
import pytest
from scipy.io import wavfile

from modfit import audio_io
from modfit.errors import DataError, UnsupportedFormatError


class TestWav:
    def test_float32_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = 0.5 * rng.normal(size=1024)
        path = audio_io.write_wav(tmp_path / "a.wav", 44100, x)
        rate, back = audio_io.read_wav(path)
        assert rate == 44100
        assert np.max(np.abs(back - x)) < 1e-7  # float32 quantisation

    def test_pcm16_accepted(self, tmp_path):
        x = (np.sin(np.arange(256) * 0.1) * 20000).astype(np.int16)
        wavfile.write(tmp_path / "a.wav", 44100, x)
        rate, back = audio_io.read_wav(tmp_path / "a.wav")
        assert rate == 44100
        assert np.max(np.abs(back - x / 32768.0)) < 1e-9

    def test_unsupported_dtype_rejected(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 44100, np.zeros(64, dtype=np.uint8))
        with pytest.raises(UnsupportedFormatError):
            audio_io.read_wav(tmp_path / "a.wav")

    def test_stereo_rejected(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 44100,
                      np.zeros((64, 2), dtype=np.float32))
        with pytest.raises(UnsupportedFormatError):
            audio_io.read_wav(tmp_path / "a.wav")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            audio_io.read_wav(tmp_path / "nope.wav")


class TestSeriesCsv:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        a = rng.normal(size=37)
        b = rng.normal(size=37) * 1e-17
        path = audio_io.write_series_csv(tmp_path / "s.csv", ["a", "b"], [a, b])
        header, cols = audio_io.read_series_csv(path)
        assert header == ["a", "b"]
        assert np.array_equal(cols[0], a)
        assert np.array_equal(cols[1], b)

    def test_ragged_columns_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            audio_io.write_series_csv(tmp_path / "s.csv", ["a", "b"],
                                      [np.zeros(3), np.zeros(4)])
