"""Zero-latency time-domain rendering of a trained model.

The per-sample structure of one channel mirrors the training-time
frequency response exactly:

    v[n]   = x[n] + a1 * fb[n]          (fb tapped per feedback config)
    tap[n] = phase shifter applied to v (fractional delay or APF cascade)
    w[n]   = wet-filter biquad of tap
    y[n]   = output-filter biquad of (b0*v[n] + b1*w[n])

The all-pass cascade has an instantaneous path (gain p^K), so with
feedback the loop is algebraic; it is solved in closed form each sample,
which realises the rational response 1/(1 - a1*q) exactly. The delay
read only ever touches past samples (the interpolation stencil is
shifted to end at n-1 when the delay drops below the stencil span), so
output sample n never depends on inputs beyond n.

Also provided: LFO wavetable extraction/rendering (fundamental-frequency
estimation of the learned frame-rate control signal, one period
resampled to audio rate with cubic interpolation) and the digital toy
targets used for in-domain recovery experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import diffmodel
from .diffmodel import ChannelParams, FeedbackConfig, ModelParams, Variant
from .errors import (
    FeedbackSingularError,
    InstabilityError,
    NoPeriodicityError,
)
from .spectral import svf_polynomials

_STATUS_OK = 0
_STATUS_BLOWUP = 1
_STATUS_SINGULAR = 2

_IDENTITY_B = np.array([1.0, 0.0, 0.0])
_IDENTITY_A = np.array([0.0, 0.0])


# -- numba kernels -------------------------------------------------------


@njit(cache=True)
def _lagrange4(y0, y1, y2, y3, t):
    # 4-point Lagrange basis for nodes at offsets {-1, 0, 1, 2}
    # relative to the second node, evaluated at offset t.
    w0 = -t * (t - 1.0) * (t - 2.0) / 6.0
    w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w2 = -(t + 1.0) * t * (t - 2.0) / 2.0
    w3 = (t + 1.0) * t * (t - 1.0) / 6.0
    return w0 * y0 + w1 * y1 + w2 * y2 + w3 * y3


@njit(cache=True)
def _read_delayed(buf, n, delay):
    # Cubic read of buf at position n - delay using only samples <= n-1;
    # indices before the start of the buffer read as silence. Delays
    # below one sample are clamped to 1: a shorter read would extrapolate
    # past the newest sample, which turns any feedback around the delay
    # line into an unstable loop.
    if delay < 1.0:
        delay = 1.0
    pos = n - delay
    i1 = int(math.floor(pos))
    shift = i1 + 2 - (n - 1)
    if shift > 0:
        i1 -= shift
    t = pos - i1
    y0 = buf[i1 - 1] if i1 - 1 >= 0 else 0.0
    y1 = buf[i1] if i1 >= 0 else 0.0
    y2 = buf[i1 + 1] if i1 + 1 >= 0 else 0.0
    y3 = buf[i1 + 2] if i1 + 2 >= 0 else 0.0
    return _lagrange4(y0, y1, y2, y3, t)


@njit(cache=True)
def _delay_channel_kernel(x, delay, fb, dry, wet, wb, wa, ob, oa, fb_filtered):
    n_samp = x.shape[0]
    v = np.zeros(n_samp)
    y = np.zeros(n_samp)
    w_s1 = 0.0
    w_s2 = 0.0
    o_s1 = 0.0
    o_s2 = 0.0
    for n in range(n_samp):
        tap = _read_delayed(v, n, delay[n])
        w = wb[0] * tap + w_s1
        w_s1 = wb[1] * tap - wa[0] * w + w_s2
        w_s2 = wb[2] * tap - wa[1] * w
        if fb_filtered:
            vn = x[n] + fb * w
        else:
            vn = x[n] + fb * tap
        v[n] = vn
        u = dry * vn + wet * w
        out = ob[0] * u + o_s1
        o_s1 = ob[1] * u - oa[0] * out + o_s2
        o_s2 = ob[2] * u - oa[1] * out
        y[n] = out
        if not np.isfinite(out) or abs(out) > 1e12:
            return y, _STATUS_BLOWUP, n
    return y, _STATUS_OK, -1


@njit(cache=True)
def _allpass_channel_kernel(x, pole, n_ap, fb, dry, wet, wb, wa, ob, oa, fb_filtered):
    n_samp = x.shape[0]
    y = np.zeros(n_samp)
    states = np.zeros(n_ap)
    w_s1 = 0.0
    w_s2 = 0.0
    o_s1 = 0.0
    o_s2 = 0.0
    for n in range(n_samp):
        p = pole[n]
        # cascade output on input v is g*v + hist with g the
        # instantaneous gain p^K and hist the state contribution
        g = 1.0
        hist = 0.0
        for i in range(n_ap):
            hist = p * hist + (p * p - 1.0) * states[i]
            g *= p
        if fb_filtered:
            den = 1.0 - fb * wb[0] * g
            drive = fb * (wb[0] * hist + w_s1)
        else:
            den = 1.0 - fb * g
            drive = fb * hist
        if abs(den) < 1e-9:
            return y, _STATUS_SINGULAR, n
        vn = (x[n] + drive) / den
        u = vn
        for i in range(n_ap):
            t = u + p * states[i]
            u = p * t - states[i]
            states[i] = t
        tap = u
        w = wb[0] * tap + w_s1
        w_s1 = wb[1] * tap - wa[0] * w + w_s2
        w_s2 = wb[2] * tap - wa[1] * w
        q = dry * vn + wet * w
        out = ob[0] * q + o_s1
        o_s1 = ob[1] * q - oa[0] * out + o_s2
        o_s2 = ob[2] * q - oa[1] * out
        y[n] = out
        if not np.isfinite(out) or abs(out) > 1e12:
            return y, _STATUS_BLOWUP, n
    return y, _STATUS_OK, -1


@njit(cache=True)
def _wavetable_read_kernel(table, step, phase, n_out):
    n_tab = table.shape[0]
    out = np.empty(n_out)
    pos = phase % n_tab
    for i in range(n_out):
        i1 = int(math.floor(pos))
        t = pos - i1
        y0 = table[(i1 - 1) % n_tab]
        y1 = table[i1 % n_tab]
        y2 = table[(i1 + 1) % n_tab]
        y3 = table[(i1 + 2) % n_tab]
        out[i] = _lagrange4(y0, y1, y2, y3, t)
        pos += step
        if pos >= n_tab:
            pos -= n_tab * math.floor(pos / n_tab)
    return out


# -- biquad coefficients and watchdog -------------------------------------


def _biquad_coeffs(svf):
    """Normalised (b, a) arrays of an SVF biquad; None bypasses (identity)."""
    if svf is None:
        return _IDENTITY_B, _IDENTITY_A
    (b0, b1, b2), (a0, a1, a2) = svf_polynomials(svf)
    b = np.array([b0 / a0, b1 / a0, b2 / a0])
    a = np.array([a1 / a0, a2 / a0])
    return b, a


def _watchdog(y: np.ndarray, x: np.ndarray, status: int, where: int) -> None:
    if status == _STATUS_SINGULAR:
        raise FeedbackSingularError(
            f"feedback loop singular at sample {where}"
        )
    if status == _STATUS_BLOWUP:
        raise InstabilityError(f"output diverged at sample {where}")
    rms_in = float(np.sqrt(np.mean(x**2)))
    if rms_in == 0.0:
        return
    block = 1024
    n_full = y.size // block
    if n_full:
        blocks = y[: n_full * block].reshape(n_full, block)
        rms = np.sqrt(np.mean(blocks**2, axis=1))
        worst = int(np.argmax(rms))
        # 60 dB over the input level: fail loudly instead of writing garbage
        if rms[worst] > 1e3 * rms_in:
            raise InstabilityError(
                f"output RMS exceeded 60 dB over input near sample {worst * block}"
            )


# -- per-channel processing ------------------------------------------------


def process_flanger(
    ch: ChannelParams, control: np.ndarray, x: np.ndarray, n_fft: int
) -> np.ndarray:
    """Render the delay-line variant with a per-sample control signal."""
    x = np.asarray(x, dtype=np.float64)
    control = np.asarray(control, dtype=np.float64)
    if control.shape != x.shape:
        raise ValueError("control and input must have equal length")
    delay = diffmodel.delay_from_control(control, n_fft)
    wb, wa = _biquad_coeffs(ch.svf2)
    ob, oa = _biquad_coeffs(ch.svf1)
    y, status, where = _delay_channel_kernel(
        x,
        delay,
        float(ch.comb.a1),
        float(ch.comb.b0),
        float(ch.comb.b1),
        wb,
        wa,
        ob,
        oa,
        ch.fb_config is FeedbackConfig.II,
    )
    _watchdog(y, x, status, where)
    return y


def process_phaser(ch: ChannelParams, control: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Render the all-pass-cascade variant with a per-sample control signal."""
    x = np.asarray(x, dtype=np.float64)
    control = np.asarray(control, dtype=np.float64)
    if control.shape != x.shape:
        raise ValueError("control and input must have equal length")
    if ch.apf_count < 1:
        raise ValueError("all-pass cascade needs at least one section")
    pole = diffmodel.pole_from_control(control)
    wb, wa = _biquad_coeffs(ch.svf2)
    ob, oa = _biquad_coeffs(ch.svf1)
    y, status, where = _allpass_channel_kernel(
        x,
        pole,
        int(ch.apf_count),
        float(ch.comb.a1),
        float(ch.comb.b0),
        float(ch.comb.b1),
        wb,
        wa,
        ob,
        oa,
        ch.fb_config is FeedbackConfig.II,
    )
    _watchdog(y, x, status, where)
    return y


def process_channel(
    ch: ChannelParams, control: np.ndarray, x: np.ndarray, n_fft: int
) -> np.ndarray:
    if ch.variant is Variant.DELAY_LINE:
        return process_flanger(ch, control, x, n_fft)
    return process_phaser(ch, control, x)


# -- LFO wavetable -----------------------------------------------------------


@dataclass(frozen=True)
class LfoWavetable:
    """One period of the control signal resampled to audio rate."""

    table: np.ndarray
    f0: float  # fundamental of the frame-rate control signal, Hz
    frame_rate: float  # F_s / N, Hz


def _parabolic_peak(mag: np.ndarray, peak: int) -> float:
    """Sub-bin peak position from the log magnitude around ``peak``."""
    if not 1 <= peak < mag.size - 1:
        return float(peak)
    eps = 1e-30
    la = math.log(mag[peak - 1] + eps)
    lb = math.log(mag[peak] + eps)
    lc = math.log(mag[peak + 1] + eps)
    denom = la - 2.0 * lb + lc
    offset = 0.5 * (la - lc) / denom if denom != 0.0 else 0.0
    return peak + min(0.5, max(-0.5, offset))


def estimate_f0(c: np.ndarray, frame_rate: float) -> float:
    """Fundamental frequency of a frame-rate control series.

    Peak bin of the 8x zero-padded magnitude spectrum of the windowed,
    mean-removed series, refined by parabolic interpolation of the log
    magnitude around the peak and then by a golden-section search for
    the period whose cyclic extension best matches the series. The
    refinement matters: spectral leakage alone biases the estimate by
    around a percent on non-integer cycle counts, which is enough phase
    drift to ruin a rendered LFO after a few periods. For signals
    holding barely one cycle there is no extension to match, and the
    unpadded spectral peak (exact on whole cycles) is used instead.
    """
    c = np.asarray(c, dtype=np.float64)
    m = c.size
    if m < 8:
        raise ValueError("need at least 8 control samples")
    centred = c - np.mean(c)
    mag_u = np.abs(np.fft.rfft(centred))
    p0 = int(np.argmax(mag_u))
    floor = 1e-9 * m * max(1.0, float(np.max(np.abs(c))))
    if p0 < 1 or mag_u[p0] <= floor:
        raise NoPeriodicityError("control signal has no spectral peak")
    cand_unpadded = _parabolic_peak(mag_u, p0) * frame_rate / m

    # below ~3 cycles the hann mainlobe of the negative-frequency image
    # overlaps the peak and biases it, so window only above that
    n_fft = 8 * m
    windowed = centred * np.hanning(m) if p0 >= 3 else centred
    mag_p = np.abs(np.fft.rfft(windowed, n_fft))
    cand_padded = _parabolic_peak(mag_p, int(np.argmax(mag_p))) * frame_rate / n_fft

    idx = np.arange(m, dtype=np.float64)

    def extension_error(p: float) -> float:
        ref = _cubic_sample(c, np.mod(idx, p))
        tail = idx >= p
        return float(np.sum((c - ref)[tail] ** 2))

    def refine_period(period: float) -> float:
        a, b = 0.94 * period, min(1.06 * period, float(m) - 1.0)
        invphi = (np.sqrt(5.0) - 1.0) / 2.0
        x1 = b - invphi * (b - a)
        x2 = a + invphi * (b - a)
        f1, f2 = extension_error(x1), extension_error(x2)
        for _ in range(60):
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - invphi * (b - a)
                f1 = extension_error(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + invphi * (b - a)
                f2 = extension_error(x2)
        return 0.5 * (a + b)

    best = None
    for cand in (cand_padded, cand_unpadded):
        if cand <= 0:
            continue
        period = frame_rate / cand
        if 1.02 * period + 2.0 >= m:
            continue
        refined = refine_period(period)
        err = extension_error(refined)
        if best is None or err < best[0]:
            best = (err, refined)
    if best is not None:
        return frame_rate / best[1]
    # no measurable extension: single-cycle regime
    return cand_unpadded if p0 <= 2 else cand_padded


def _cubic_sample(y: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """4-point Lagrange interpolation with the stencil clamped inside y."""
    y = np.asarray(y, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    if y.size < 4:
        raise ValueError("need at least 4 samples to interpolate")
    i1 = np.floor(pos).astype(np.intp)
    i0 = np.clip(i1 - 1, 0, y.size - 4)
    t = pos - (i0 + 1)
    w0 = -t * (t - 1.0) * (t - 2.0) / 6.0
    w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w2 = -(t + 1.0) * t * (t - 2.0) / 2.0
    w3 = (t + 1.0) * t * (t - 1.0) / 6.0
    return w0 * y[i0] + w1 * y[i0 + 1] + w2 * y[i0 + 2] + w3 * y[i0 + 3]


def extract_wavetable(
    c: np.ndarray, frame_rate: float, sample_rate: float
) -> LfoWavetable:
    """Slice one period of the control series and resample it to audio rate.

    A slight period overestimate on barely-one-cycle signals is clamped
    to the available window (recomputing f0 so table length and
    fundamental stay consistent); a gross overestimate means there is no
    usable cycle and raises.
    """
    c = np.asarray(c, dtype=np.float64)
    f0 = estimate_f0(c, frame_rate)
    period_frames = frame_rate / f0
    if period_frames > 1.6 * c.size:
        raise NoPeriodicityError(
            "estimated period exceeds the control signal length"
        )
    if period_frames > c.size:
        period_frames = float(c.size)
        f0 = frame_rate / period_frames
    n_table = int(round(sample_rate / f0))
    pos = np.arange(n_table) * (period_frames / n_table)
    # continue the series periodically for a few samples so stencils at
    # the right edge interpolate instead of extrapolating
    wrap = _cubic_sample(c, np.arange(c.size, c.size + 4.0) - period_frames)
    table = _cubic_sample(np.concatenate([c, wrap]), pos)
    return LfoWavetable(table=table, f0=f0, frame_rate=frame_rate)


def render_lfo(
    wt: LfoWavetable, rate_scale: float, length: int, phase: float = 0.0
) -> np.ndarray:
    """Phase-accumulator wavetable read with cubic interpolation.

    The effective LFO frequency is rate_scale * f0; ``phase`` is the
    starting read position in table samples.
    """
    if rate_scale <= 0.0:
        raise ValueError("rate_scale must be positive")
    if length < 0:
        raise ValueError("length must be nonnegative")
    if length == 0:
        return np.empty(0)
    return _wavetable_read_kernel(
        np.ascontiguousarray(wt.table), float(rate_scale), float(phase), int(length)
    )


# -- whole-model inference ---------------------------------------------------


def channel_wavetables(params: ModelParams) -> list[LfoWavetable]:
    """Extract one LFO wavetable per channel from the trained control signals."""
    frame_rate = params.sample_rate / params.frame_len
    tables = []
    for ch in params.channels:
        c = np.asarray(diffmodel.control_signal(ch.lfo), dtype=np.float64)
        tables.append(extract_wavetable(c, frame_rate, params.sample_rate))
    return tables


def _frame_interp_control(ch: ChannelParams, params: ModelParams, length: int):
    # debug path: linear interpolation of the frame-rate control signal,
    # frame m centred at (m + 0.5) * N samples
    c = np.asarray(diffmodel.control_signal(ch.lfo), dtype=np.float64)
    centres = (np.arange(c.size) + 0.5) * params.frame_len
    t = np.arange(length, dtype=np.float64)
    return np.interp(t, centres, c)


def process(
    params: ModelParams,
    x: np.ndarray,
    rate_scale: float = 1.0,
    lfo_mode: str = "wavetable",
    align_frame: int = 0,
    wavetables: list[LfoWavetable] | None = None,
) -> np.ndarray:
    """Render audio through every channel and sum the outputs.

    ``align_frame`` shifts every channel's LFO start by that many
    training frames (cyclically); used by the validation alignment
    search. ``lfo_mode="frame-interp"`` bypasses the wavetable and
    linearly interpolates the frame-rate control signal (debug mode).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D mono signal")
    if lfo_mode not in ("wavetable", "frame-interp"):
        raise ValueError(f"unknown lfo_mode {lfo_mode!r}")
    total = np.zeros_like(x)
    if lfo_mode == "wavetable" and wavetables is None:
        wavetables = channel_wavetables(params)
    for i, ch in enumerate(params.channels):
        if lfo_mode == "wavetable":
            wt = wavetables[i]
            # table[0] holds the control value of frame 0, whose centre
            # sits half a frame into the signal; start the read half a
            # frame early so rendered and trained control lines line up
            offset = (align_frame - 0.5) * params.frame_len * rate_scale
            phase = offset % wt.table.size
            control = render_lfo(wt, rate_scale, x.size, phase=phase)
        else:
            control = _frame_interp_control(ch, params, x.size)
        total += process_channel(ch, control, x, params.frame_len)
    return total


# -- digital toy targets ------------------------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    """Reference effect used for in-domain parameter recovery.

    Comb gains are fixed at b0 = b1 = 1 with feedback 0.5 and both
    biquads bypassed. The flanger delay sweeps 0..n_fft/2 samples
    sinusoidally; the phaser break frequency sweeps f_lo..f_hi on a
    log-frequency sinusoid mapped to the pole via
    p = (1 - tan(pi*f_b/F_s)) / (1 + tan(pi*f_b/F_s)). LFO phases start
    at zero.
    """

    rate_hz: float = 0.5
    n_fft: int = 1024
    delay_min: float = 0.0  # flanger sweep floor in samples
    depth: float | None = None  # flanger sweep span in samples; None = n_fft/2
    f_lo: float = 100.0
    f_hi: float = 4000.0
    feedback: float = 0.5
    apf_count: int = 6
    sample_rate: float = 44100.0

    @property
    def delay_span(self) -> float:
        return self.n_fft / 2.0 if self.depth is None else self.depth


def toy_channel(kind: str, cfg: ToyConfig) -> ChannelParams:
    lfo = diffmodel.LfoParams(
        lut=np.zeros(1),
        mlp_w1=np.zeros(diffmodel.MLP_HIDDEN),
        mlp_b1=np.zeros(diffmodel.MLP_HIDDEN),
        mlp_w2=np.zeros(diffmodel.MLP_HIDDEN),
        mlp_b2=0.0,
    )
    variant = Variant.DELAY_LINE if kind == "flanger" else Variant.APF_CASCADE
    return ChannelParams(
        comb=diffmodel.CombParams(b0=1.0, b1=1.0, a1=cfg.feedback),
        svf1=None,
        svf2=None,
        lfo=lfo,
        variant=variant,
        fb_config=FeedbackConfig.I,
        apf_count=cfg.apf_count,
    )


def toy_control(kind: str, length: int, cfg: ToyConfig) -> np.ndarray:
    """Per-sample control signal that realises the toy LFO trajectories."""
    t = np.arange(length) / cfg.sample_rate
    if kind == "flanger":
        # delay sweeps delay_min .. delay_min + span sinusoidally; invert
        # the control activation so the engine reproduces it exactly
        d = cfg.delay_min + 0.5 * cfg.delay_span * (
            1.0 - np.cos(2.0 * np.pi * cfg.rate_hz * t)
        )
        return np.arccos(np.clip(1.0 - 4.0 * d / cfg.n_fft, -1.0, 1.0)) / np.pi
    if kind == "phaser":
        lo, hi = math.log(cfg.f_lo), math.log(cfg.f_hi)
        log_fb = lo + (hi - lo) * 0.5 * (1.0 - np.cos(2.0 * np.pi * cfg.rate_hz * t))
        fb_hz = np.exp(log_fb)
        warp = np.tan(np.pi * fb_hz / cfg.sample_rate)
        pole = (1.0 - warp) / (1.0 + warp)
        return (np.arctanh(pole) - 0.5) / np.pi
    raise ValueError(f"unknown toy kind {kind!r}")


def toy_pole_trajectory(length: int, cfg: ToyConfig) -> np.ndarray:
    return diffmodel.pole_from_control(toy_control("phaser", length, cfg))


def toy_delay_trajectory(length: int, cfg: ToyConfig) -> np.ndarray:
    return diffmodel.delay_from_control(
        toy_control("flanger", length, cfg), cfg.n_fft
    )


def make_toy_target(kind: str, x: np.ndarray, cfg: ToyConfig | None = None) -> np.ndarray:
    """Process audio through the reference digital flanger or phaser."""
    cfg = cfg or ToyConfig()
    x = np.asarray(x, dtype=np.float64)
    ch = toy_channel(kind, cfg)
    control = toy_control(kind, x.size, cfg)
    return process_channel(ch, control, x, cfg.n_fft)
