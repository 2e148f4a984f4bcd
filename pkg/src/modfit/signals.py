"""Training-signal generators and frame assembly.

The training input one frame at a time is a short kernel (triangle or a
spectrally flat chirp) of length n_kernel followed by zeros up to the
frame length, repeated identically for every frame. Kernels:

* ``tri`` -- symmetric triangle; low-passed spectrum that widens the
  convex region of delay-estimation losses.
* ``lin_chirp`` -- unit-magnitude spectrum with group delay rising
  linearly from 0 to n_kernel-1 samples across the band.
* ``ap_chirp`` -- impulse response of a cascade of identical first-order
  all-pass sections; spectrally flat with a frequency-dependent sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import spectral
from .errors import InstabilityError

KERNEL_KINDS = ("tri", "lin_chirp", "ap_chirp")

# Cascade defaults: the sweep spans roughly count*(1+p)/(1-p) samples at
# DC down to count*(1-p)/(1+p) at Nyquist; these keep it inside
# n_kernel = 512 when n_fft = 1024.
AP_CHIRP_SECTIONS = 100
AP_CHIRP_POLE = 0.6


@dataclass(frozen=True)
class Kernel:
    samples: np.ndarray
    kind: str

    @property
    def length(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class FramedInput:
    """M identical frames, each a kernel padded with zeros to n_fft."""

    frames: np.ndarray  # (M, N)
    kernel_len: int

    @property
    def n_fft(self) -> int:
        return int(self.frames.shape[1])

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def signal(self) -> np.ndarray:
        """Flattened length M*N time signal."""
        return self.frames.reshape(-1)


def gen_triangular(n_kernel: int) -> Kernel:
    """Symmetric triangle: samples[n] = 1 - |2n - (n_kernel-1)| / max(n_kernel-1, 1).

    Unnormalised; peak value 1 for odd lengths (and the degenerate
    length-1 unit impulse). No window is applied.
    """
    if n_kernel < 1:
        raise ValueError("kernel length must be >= 1")
    n = np.arange(n_kernel, dtype=np.float64)
    samples = 1.0 - np.abs(2.0 * n - (n_kernel - 1)) / max(n_kernel - 1, 1)
    return Kernel(samples=samples, kind="tri")


def lin_chirp_spectrum(n_kernel: int, n_fft: int) -> np.ndarray:
    """Half spectrum of the linear-group-delay chirp (unit modulus).

    Group delay rises linearly from 0 to n_kernel-1 samples across bins
    0..N/2; the phase is the cumulative sum of -2*pi*tau(k)/N.
    """
    if n_kernel > n_fft:
        raise ValueError("kernel length cannot exceed the DFT length")
    if n_fft % 2 != 0:
        raise ValueError("DFT length must be even")
    k = np.arange(n_fft // 2 + 1, dtype=np.float64)
    tau = (n_kernel - 1) * k / (n_fft / 2)
    phase = np.concatenate(([0.0], np.cumsum(-2.0 * np.pi * tau[1:] / n_fft)))
    return np.exp(1j * phase)


def gen_lin_chirp(n_kernel: int, n_fft: int) -> Kernel:
    """Flat-spectrum chirp built in the frequency domain, truncated to n_kernel."""
    if n_kernel < 1:
        raise ValueError("kernel length must be >= 1")
    spec = lin_chirp_spectrum(n_kernel, n_fft)
    samples = spectral.irfft(spec)[:n_kernel]
    return Kernel(samples=np.ascontiguousarray(samples), kind="lin_chirp")


def gen_ap_chirp(
    n_sections: int = AP_CHIRP_SECTIONS,
    pole: float = AP_CHIRP_POLE,
    n_kernel: int = 512,
) -> Kernel:
    """Impulse response of ``n_sections`` cascaded first-order all-pass
    sections (p - z^-1)/(1 - p z^-1) with shared pole, truncated to n_kernel."""
    if abs(pole) >= 1.0:
        raise InstabilityError(f"all-pass pole must satisfy |p| < 1, got {pole}")
    if n_sections < 1:
        raise ValueError("section count must be >= 1")
    if n_kernel < 1:
        raise ValueError("kernel length must be >= 1")
    h = np.zeros(n_kernel)
    h[0] = 1.0
    for _ in range(n_sections):
        h = lfilter([pole, -1.0], [1.0, -pole], h)
    return Kernel(samples=h, kind="ap_chirp")


def make_kernel(kind: str, n_kernel: int, n_fft: int) -> Kernel:
    if kind == "tri":
        return gen_triangular(n_kernel)
    if kind == "lin_chirp":
        return gen_lin_chirp(n_kernel, n_fft)
    if kind == "ap_chirp":
        return gen_ap_chirp(n_kernel=n_kernel)
    raise ValueError(f"unknown kernel kind {kind!r} (expected one of {KERNEL_KINDS})")


def build_training_input(kernel: Kernel, n_fft: int, num_frames: int) -> FramedInput:
    """Repeat the zero-padded kernel for ``num_frames`` identical frames."""
    if kernel.length > n_fft:
        raise ValueError(
            f"kernel length {kernel.length} exceeds frame length {n_fft}"
        )
    if num_frames < 1:
        raise ValueError("frame count must be >= 1")
    frame = np.zeros(n_fft)
    frame[: kernel.length] = kernel.samples
    frames = np.tile(frame, (num_frames, 1))
    return FramedInput(frames=frames, kernel_len=kernel.length)


def frame_signal(x: np.ndarray, n_fft: int) -> np.ndarray:
    """Split a signal into non-overlapping rows of length n_fft.

    Frame m covers samples [m*N, (m+1)*N); a trailing partial frame is
    zero-padded to full length. Frame m is centred at time
    (m + 0.5) * N / sample_rate.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D signal")
    if n_fft < 1:
        raise ValueError("frame length must be >= 1")
    remainder = x.size % n_fft
    if remainder:
        x = np.concatenate([x, np.zeros(n_fft - remainder)])
    return x.reshape(-1, n_fft)
