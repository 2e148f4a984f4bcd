"""Half-spectrum DFT utilities and closed-form frequency responses.

A "half spectrum" is the complex vector of the nonnegative-frequency
bins of an even-length real DFT: length N/2+1, with bins 0 and N/2 at
DC and Nyquist. All responses are sampled on the unit-circle grid
z[k] = exp(2j*pi*k/N), k = 0..N/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import InstabilityError, SingularFilterError


@dataclass(frozen=True)
class FreqGrid:
    """Unit-circle evaluation points for an even DFT length."""

    n_fft: int
    z: np.ndarray  # exp(2j*pi*k/N), k = 0..N/2

    @classmethod
    def for_length(cls, n_fft: int) -> "FreqGrid":
        if n_fft < 2 or n_fft % 2 != 0:
            raise ValueError(f"DFT length must be even and >= 2, got {n_fft}")
        k = np.arange(n_fft // 2 + 1)
        return cls(n_fft=n_fft, z=np.exp(2j * np.pi * k / n_fft))

    @property
    def num_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.num_bins)


def rfft(frame: np.ndarray) -> np.ndarray:
    """Forward DFT of a real frame, nonnegative bins only."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or frame.size % 2 != 0 or frame.size == 0:
        raise ValueError("rfft expects a 1-D real frame of even length")
    return np.fft.rfft(frame)


def irfft(spec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rfft`.

    Imaginary parts at DC and Nyquist are forced to zero before
    inversion; they carry no information for a real signal and zeroing
    them avoids numerical drift.
    """
    spec = np.asarray(spec, dtype=np.complex128).copy()
    if spec.ndim != 1 or spec.size < 2:
        raise ValueError("irfft expects a 1-D half spectrum")
    spec[0] = spec[0].real
    spec[-1] = spec[-1].real
    return np.fft.irfft(spec, n=2 * (spec.size - 1))


def rfft_frames(frames: np.ndarray) -> np.ndarray:
    """Row-wise forward DFT of an (M, N) frame matrix."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] % 2 != 0:
        raise ValueError("expected an (M, N) matrix with even N")
    return np.fft.rfft(frames, axis=1)


def irfft_frames(spec: np.ndarray) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.complex128).copy()
    spec[:, 0] = spec[:, 0].real
    spec[:, -1] = spec[:, -1].real
    return np.fft.irfft(spec, n=2 * (spec.shape[1] - 1), axis=1)


def delay_response(delay: float, grid: FreqGrid) -> np.ndarray:
    """Frequency response of a pure delay of ``delay`` samples."""
    k = grid.bins
    return np.exp(-2j * np.pi * k * float(delay) / grid.n_fft)


def apf_cascade_response(pole: float, count: int, grid: FreqGrid) -> np.ndarray:
    """Response of ``count`` identical first-order all-pass sections.

    Each section is (p - z^-1) / (1 - p z^-1) with shared real pole p.
    """
    if abs(pole) >= 1.0:
        raise InstabilityError(f"all-pass pole must satisfy |p| < 1, got {pole}")
    if count < 1:
        raise ValueError("section count must be >= 1")
    zinv = np.conj(grid.z)
    section = (pole - zinv) / (1.0 - pole * zinv)
    return section**count


@lru_cache(maxsize=8)
def parseval_weights(n_fft: int) -> np.ndarray:
    """Conjugate-symmetry multiplicity of each half-spectrum bin.

    Interior bins count twice (they stand for a conjugate pair), DC and
    Nyquist once. With these weights the half-spectrum energy norm
    equals N times the time-domain frame energy.
    """
    w = np.full(n_fft // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    w.setflags(write=False)
    return w


# -- state-variable-filter biquad ---------------------------------------
#
# The raw (unconstrained) parameters live on the SVF parameter object:
#   f_raw -> corner frequency f = 0.5*sigmoid(f_raw), in (0, 0.5) cyc/sample
#   r_raw -> resonance R = softplus(r_raw) > 0 (R -> 0 is self-oscillation)
#   mix_low / mix_band / mix_high -> output mixing gains.
# These maps guarantee a stable filter for any finite raw values. The
# functions below accept either plain floats or autodiff Vars.


# keeps f strictly inside (0, 0.5) where sigmoid rounds to 1.0 in float64
_OPEN_INTERVAL_SCALE = 1.0 - 1e-12


def svf_constrained(svf):
    """Map raw SVF parameters to (g, R) with g = tan(pi*f)."""
    f = 0.5 * _OPEN_INTERVAL_SCALE * ad.sigmoid(svf.f_raw)
    g = ad.tan(np.pi * f)
    # softplus; below -20 the naive form underflows to exactly 0 while
    # exp(x) is still positive and equal to softplus within 1e-9 relative
    if float(ad.value_of(svf.r_raw)) > -20.0:
        res = ad.log(1.0 + ad.exp(svf.r_raw))
    else:
        res = ad.exp(svf.r_raw)
    return g, res


def svf_polynomials(svf):
    """Numerator/denominator coefficients in z^-1 of the SVF biquad."""
    g, res = svf_constrained(svf)
    g2 = g * g
    b0 = g2 * svf.mix_low + g * svf.mix_band + svf.mix_high
    b1 = 2.0 * g2 * svf.mix_low - 2.0 * svf.mix_high
    b2 = g2 * svf.mix_low - g * svf.mix_band + svf.mix_high
    a0 = g2 + 2.0 * res + 1.0
    a1 = 2.0 * g2 - 2.0
    a2 = g2 - 2.0 * res + 1.0
    return (b0, b1, b2), (a0, a1, a2)


def svf_response(svf, grid: FreqGrid) -> np.ndarray:
    """Half-spectrum frequency response of the SVF biquad.

    ``svf`` is any object with fields f_raw, r_raw, mix_low, mix_band,
    mix_high holding plain floats. ``svf=None`` returns the identity
    response (bypass hook used by tests).
    """
    if svf is None:
        return np.ones(grid.num_bins, dtype=np.complex128)
    (b0, b1, b2), (a0, a1, a2) = svf_polynomials(svf)
    zinv = np.conj(grid.z)
    num = b0 + b1 * zinv + b2 * zinv**2
    den = a0 + a1 * zinv + a2 * zinv**2
    small = np.abs(den) < 1e-12
    if np.any(small):
        k = int(np.argmax(small))
        raise SingularFilterError(f"biquad denominator vanished at bin {k}")
    return num / den
