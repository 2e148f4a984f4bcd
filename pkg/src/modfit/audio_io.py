"""WAV and CSV file handling.

Accepted WAV input: mono, 16-bit PCM or 32-bit float. Output is always
32-bit float. Signals are used as-is -- no peak normalisation -- because
the error-to-signal metrics are scale-sensitive.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, UnsupportedFormatError


def read_wav(path) -> tuple[int, np.ndarray]:
    """Read a mono WAV file; returns (sample_rate, float64 signal)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise UnsupportedFormatError(
            f"{path}: expected mono audio, got {data.ndim} channels"
        )
    if data.dtype == np.int16:
        signal = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        signal = data.astype(np.float64)
    elif data.dtype == np.float64:
        signal = data.copy()
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample format {data.dtype}; "
            "accepted: 16-bit PCM, 32-bit float"
        )
    return int(rate), signal


def write_wav(path, sample_rate: int, signal: np.ndarray) -> Path:
    """Write a mono 32-bit float WAV file."""
    path = Path(path)
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError("expected a 1-D mono signal")
    wavfile.write(path, int(sample_rate), signal.astype(np.float32))
    return path


def write_series_csv(path, header: list[str], columns: list[np.ndarray]) -> Path:
    """Column-oriented CSV with repr-formatted floats (bit-exact round trips)."""
    path = Path(path)
    columns = [np.asarray(c) for c in columns]
    if any(c.size != columns[0].size for c in columns):
        raise ValueError("all columns must have equal length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])
    return path


def read_series_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader]
    return header, np.asarray(rows, dtype=np.float64).T
