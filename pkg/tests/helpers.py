"""Independent oracles shared by the test suite.

These deliberately avoid the library's own code paths: the DFT oracle is
the O(N^2) definition, the all-pass impulse response comes from
polynomial long division, and filter responses are evaluated bin by bin
with plain complex arithmetic.
"""

from __future__ import annotations

import numpy as np


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(N^2) full DFT straight from the definition."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    k = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return w @ x


def naive_idft(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    n = spectrum.size
    k = np.arange(n)
    w = np.exp(2j * np.pi * np.outer(k, k) / n)
    return (w @ spectrum) / n


def naive_half_dft(x: np.ndarray) -> np.ndarray:
    """Nonnegative-frequency bins of the full naive DFT."""
    return naive_dft(x)[: x.size // 2 + 1]


def full_from_half(half: np.ndarray, n: int) -> np.ndarray:
    """Rebuild a conjugate-symmetric full spectrum from its half."""
    half = np.asarray(half, dtype=np.complex128).copy()
    half[0] = half[0].real
    half[-1] = half[-1].real
    return np.concatenate([half, np.conj(half[-2:0:-1])])


def allpass_ir_longdiv(pole: float, n_samples: int) -> np.ndarray:
    """Impulse response of (p - z^-1)/(1 - p z^-1) by long division."""
    out = np.zeros(n_samples)
    num = [pole, -1.0]
    carry = np.zeros(n_samples + 2)
    carry[: len(num)] = num
    for i in range(n_samples):
        out[i] = carry[i]
        # subtract out[i] * (1 - p z^-1) shifted to position i
        carry[i + 1] += pole * out[i]
    return out


def cascade_ir_longdiv(pole: float, count: int, n_samples: int) -> np.ndarray:
    """Impulse response of a cascade of identical all-pass sections."""
    h = np.zeros(n_samples)
    h[0] = 1.0
    for _ in range(count):
        out = np.zeros(n_samples)
        prev_in = 0.0
        prev_out = 0.0
        for i in range(n_samples):
            out[i] = pole * h[i] - prev_in + pole * prev_out
            prev_in = h[i]
            prev_out = out[i]
        h = out
    return h


def pluck_signal(
    length: int,
    register: str = "guitar",
    seed: int = 1234,
    sample_rate: float = 44100.0,
) -> np.ndarray:
    """Deterministic validation stand-in: decaying harmonic plucks.

    ``register`` selects the fundamental range and harmonic ceiling:
    "bass" covers 41-98 Hz (capped at 1.2 kHz), "guitar" 82-330 Hz
    (capped at 2.5 kHz). Harmonic amplitudes roll off as 1/h^2.
    """
    lo, hi, fmax = {
        "bass": (41.0, 98.0, 1200.0),
        "guitar": (82.0, 330.0, 2500.0),
    }[register]
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    x = np.zeros(length)
    span = length / sample_rate
    onsets = np.linspace(0.0, 0.8 * span, 5)
    for onset in onsets:
        f0 = rng.uniform(lo, hi)
        for h in range(1, 13):
            fh = f0 * h
            if fh > fmax:
                break
            amp = rng.uniform(0.5, 1.0) / h**2
            env = np.exp(-2.5 * np.maximum(t - onset, 0.0)) * (t >= onset)
            x += amp * np.sin(2 * np.pi * fh * (t - onset)) * env
    return 0.25 * x


def best_shift_correlation(series: np.ndarray, target: np.ndarray) -> float:
    """Pearson correlation maximised over cyclic shifts of ``series``."""
    series = np.asarray(series, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return max(
        float(np.corrcoef(np.roll(series, s), target)[0, 1])
        for s in range(series.size)
    )
