"""Differentiable frequency-sampling model of a modulation effect.

One channel = learnable LFO (lookup table + small MLP) driving either a
fractional delay line or a cascade of first-order all-pass sections,
wrapped in a feed-forward/feedback comb and two state-variable-filter
biquads. The per-frame frequency response is

    h_m = h_svf1 * (b0 + b1 * h_svf2 * s_m) / (1 - a1 * q_m)

with s_m the variant response at frame m and q_m = s_m (feedback config
"i", tap before the wet filter) or q_m = h_svf2 * s_m (config "ii", tap
after it). Multiple channels share the input and their outputs are
summed.

Every forward function here is written against :mod:`modfit.autodiff`'s
dispatching math, so the same code evaluates with plain numpy arrays
(inference, metrics, finite differences) or with tape Vars (training).
Complex quantities are carried as (real, imag) pairs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import DataError, FeedbackSingularError
from .spectral import FreqGrid, svf_polynomials

MLP_HIDDEN = 16

PARAMS_FORMAT_VERSION = 1


class Variant(str, Enum):
    """Phase-shifting core of a channel."""

    DELAY_LINE = "delay_line"  # flanger / chorus
    APF_CASCADE = "apf_cascade"  # phaser


class FeedbackConfig(str, Enum):
    """Where the feedback signal is tapped (switch position)."""

    I = "i"  # directly from the phase-shifted signal
    II = "ii"  # after the wet-path filter


@dataclass
class SVFParams:
    """Raw (unconstrained) state-variable-filter parameters.

    See :func:`modfit.spectral.svf_constrained` for the stabilising maps.
    """

    f_raw: float
    r_raw: float
    mix_low: float
    mix_band: float
    mix_high: float


@dataclass
class CombParams:
    b0: float = 1.0  # feed-forward dry gain
    b1: float = 1.0  # wet gain
    a1: float = 0.0  # feedback gain


@dataclass
class LfoParams:
    """Lookup table (one entry per training frame) plus scalar-in/scalar-out MLP."""

    lut: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: float

    @property
    def num_frames(self) -> int:
        return int(np.asarray(self.lut).size)


@dataclass
class ChannelParams:
    comb: CombParams
    svf1: SVFParams | None  # output filter; None = bypass (test hook)
    svf2: SVFParams | None  # wet-path filter; None = bypass (test hook)
    lfo: LfoParams
    variant: Variant = Variant.DELAY_LINE
    fb_config: FeedbackConfig = FeedbackConfig.I
    apf_count: int = 1

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.fb_config = FeedbackConfig(self.fb_config)
        if self.variant is Variant.APF_CASCADE and self.apf_count < 1:
            raise ValueError("all-pass cascade needs at least one section")


@dataclass
class ModelParams:
    channels: list[ChannelParams]
    frame_len: int  # N
    sample_rate: float = 44100.0

    def __post_init__(self):
        if not self.channels:
            raise ValueError("model needs at least one channel")

    @property
    def num_frames(self) -> int:
        return self.channels[0].lfo.num_frames


# -- control signal and activations -------------------------------------


def control_signal(lfo, frames=None):
    """MLP(LUT[m]) for all frames (or a subset given by ``frames``)."""
    lut = lfo.lut if frames is None else ad.gather(lfo.lut, frames)
    pre = ad.reshape(lut, (-1, 1)) * lfo.mlp_w1 + lfo.mlp_b1
    hidden = ad.tanh(pre)
    return ad.sum(hidden * lfo.mlp_w2, axis=1) + lfo.mlp_b2


def delay_from_control(c, n_fft: int):
    """Map control value to a delay in [0, N/2] samples (no time aliasing)."""
    return (n_fft / 4.0) * (1.0 - ad.cos(np.pi * c))


# keeps constrained values strictly inside their open intervals even
# where tanh/sigmoid round to exactly 1.0 in float64
_OPEN_INTERVAL_SCALE = 1.0 - 1e-12


def pole_from_control(c):
    """Map control value to a stable all-pass pole in (-1, 1).

    The +0.5 offset inside the tanh biases the initial distribution
    toward poles near 1, i.e. lower break frequencies.
    """
    return _OPEN_INTERVAL_SCALE * ad.tanh(np.pi * c + 0.5)


# -- complex (re, im) pair helpers ---------------------------------------


def _cmul(ar, ai, br, bi):
    return ar * br - ai * bi, ar * bi + ai * br


def _cinv(br, bi):
    m = br * br + bi * bi
    return br / m, -bi / m


def _cdiv(ar, ai, br, bi):
    ir, ii = _cinv(br, bi)
    return _cmul(ar, ai, ir, ii)


def _cpow(ar, ai, k: int):
    # square-and-multiply; k >= 1
    rr, ri = None, None
    br, bi = ar, ai
    e = int(k)
    while e > 0:
        if e & 1:
            (rr, ri) = (br, bi) if rr is None else _cmul(rr, ri, br, bi)
        e >>= 1
        if e:
            br, bi = _cmul(br, bi, br, bi)
    return rr, ri


# -- frequency-response evaluation ---------------------------------------


@dataclass(frozen=True)
class ResponseConsts:
    """Precomputed unit-circle trigonometry for one DFT length."""

    n_fft: int
    phase_per_sample: np.ndarray  # 2*pi*k/N, (Nh,)
    cos1: np.ndarray  # cos(2*pi*k/N)
    sin1: np.ndarray
    cos2: np.ndarray  # cos(4*pi*k/N)
    sin2: np.ndarray


@lru_cache(maxsize=8)
def response_consts(n_fft: int) -> ResponseConsts:
    theta = 2.0 * np.pi * np.arange(n_fft // 2 + 1) / n_fft
    return ResponseConsts(
        n_fft=n_fft,
        phase_per_sample=theta,
        cos1=np.cos(theta),
        sin1=np.sin(theta),
        cos2=np.cos(2 * theta),
        sin2=np.sin(2 * theta),
    )


def svf_response_pair(svf, consts: ResponseConsts):
    """(re, im) response of an SVF biquad over all bins; None = identity."""
    nh = consts.cos1.size
    if svf is None:
        return np.ones(nh), np.zeros(nh)
    (b0, b1, b2), (a0, a1, a2) = svf_polynomials(svf)
    num_re = b0 + b1 * consts.cos1 + b2 * consts.cos2
    num_im = -(b1 * consts.sin1 + b2 * consts.sin2)
    den_re = a0 + a1 * consts.cos1 + a2 * consts.cos2
    den_im = -(a1 * consts.sin1 + a2 * consts.sin2)
    return _cdiv(num_re, num_im, den_re, den_im)


def variant_response_pair(ch: ChannelParams, c, consts: ResponseConsts):
    """Per-frame phase-shifter response s_m; returns (re, im, control-path value)."""
    if ch.variant is Variant.DELAY_LINE:
        d = delay_from_control(c, consts.n_fft)
        phase = ad.reshape(d, (-1, 1)) * consts.phase_per_sample
        return ad.cos(phase), -ad.sin(phase), d
    p = pole_from_control(c)
    pr = ad.reshape(p, (-1, 1))
    num_re = pr - consts.cos1
    num_im = consts.sin1
    den_re = 1.0 - pr * consts.cos1
    den_im = pr * consts.sin1
    a_re, a_im = _cdiv(num_re, num_im, den_re, den_im)
    s_re, s_im = _cpow(a_re, a_im, ch.apf_count)
    return s_re, s_im, p


def _guard_feedback(den_re, den_im):
    dr = ad.value_of(den_re)
    di = ad.value_of(den_im)
    mag2 = dr * dr + di * di
    if np.min(mag2) < 1e-18:  # |1 - a1*q| < 1e-9
        flat = int(np.argmin(mag2))
        m, k = np.unravel_index(flat, np.broadcast_shapes(dr.shape, di.shape))
        raise FeedbackSingularError(
            f"feedback denominator within 1e-9 of zero at frame {m}, bin {k}"
        )


def channel_response_pair(ch: ChannelParams, consts: ResponseConsts, frames=None):
    """(re, im) frame responses of one channel, shape (M, Nh)."""
    c = control_signal(ch.lfo, frames)
    s_re, s_im, _ = variant_response_pair(ch, c, consts)
    h2_re, h2_im = svf_response_pair(ch.svf2, consts)
    h1_re, h1_im = svf_response_pair(ch.svf1, consts)
    wet_re, wet_im = _cmul(h2_re, h2_im, s_re, s_im)
    num_re = ch.comb.b0 + ch.comb.b1 * wet_re
    num_im = ch.comb.b1 * wet_im
    if ch.fb_config is FeedbackConfig.I:
        den_re = 1.0 - ch.comb.a1 * s_re
        den_im = -(ch.comb.a1 * s_im)
    else:
        den_re = 1.0 - ch.comb.a1 * wet_re
        den_im = -(ch.comb.a1 * wet_im)
    _guard_feedback(den_re, den_im)
    q_re, q_im = _cdiv(num_re, num_im, den_re, den_im)
    return _cmul(h1_re, h1_im, q_re, q_im)


def predict_pair(params, x_re, x_im, consts: ResponseConsts, frames=None):
    """Predicted output spectra: sum over channels of X_m * h_m."""
    tot_re = tot_im = None
    for ch in params.channels:
        h_re, h_im = channel_response_pair(ch, consts, frames)
        y_re, y_im = _cmul(x_re, x_im, h_re, h_im)
        if tot_re is None:
            tot_re, tot_im = y_re, y_im
        else:
            tot_re = tot_re + y_re
            tot_im = tot_im + y_im
    return tot_re, tot_im


# -- public single-shot (numpy) operations --------------------------------


def lfo_forward(lfo: LfoParams, m: int) -> float:
    """Control value c_m for one frame index."""
    if not 0 <= m < lfo.num_frames:
        raise IndexError(f"frame index {m} out of range [0, {lfo.num_frames})")
    return float(control_signal(lfo, frames=np.array([m]))[0])


def delay_variant_response(c: float, grid: FreqGrid):
    """Delay-line response for one control value; returns (spectrum, delay)."""
    d = float(delay_from_control(float(c), grid.n_fft))
    theta = response_consts(grid.n_fft).phase_per_sample * d
    return np.cos(theta) - 1j * np.sin(theta), d


def phaser_variant_response(c: float, count: int, grid: FreqGrid):
    """All-pass cascade response for one control value; returns (spectrum, pole)."""
    if count < 1:
        raise ValueError("section count must be >= 1")
    from .spectral import apf_cascade_response

    p = float(pole_from_control(float(c)))
    return apf_cascade_response(p, count, grid), p


def frame_response(ch: ChannelParams, m: int, grid: FreqGrid) -> np.ndarray:
    """Complex frame response h_m of one channel at frame m."""
    consts = response_consts(grid.n_fft)
    h_re, h_im = channel_response_pair(ch, consts, frames=np.array([m]))
    return (h_re + 1j * h_im)[0]


def fs_forward(params: ModelParams, x_spectra: np.ndarray) -> np.ndarray:
    """Frequency-sampling forward pass over all frames.

    ``x_spectra`` is the (M, N/2+1) complex matrix of input frame
    spectra; M must equal the LUT length.
    """
    x_spectra = np.asarray(x_spectra, dtype=np.complex128)
    consts = response_consts(params.frame_len)
    if x_spectra.ndim != 2 or x_spectra.shape[1] != consts.cos1.size:
        raise ValueError("input spectra must have shape (M, N/2+1)")
    if x_spectra.shape[0] != params.num_frames:
        raise ValueError(
            f"frame count {x_spectra.shape[0]} does not match LUT length "
            f"{params.num_frames}"
        )
    y_re, y_im = predict_pair(params, x_spectra.real, x_spectra.imag, consts)
    return y_re + 1j * y_im


# -- initialisation --------------------------------------------------------


def init_params(seed: int, config) -> ModelParams:
    """Draw fresh model parameters.

    ``config`` needs attributes: channels, num_frames, variant,
    fb_config, apf_count, frame_len, sample_rate. Distributions:
    LUT ~ N(0, 1/(2*pi)); mixing gains ~ U(0.5, 1.5); r_raw ~ N(0, 1);
    f_raw ~ N(-pi, 1) (biasing corner frequencies low). MLP weights are
    uniform +-sqrt(1/fan_in) per layer with zero biases, keeping the
    initial control signal in tanh's linear region. Comb starts at the
    neutral b0 = b1 = 1, a1 = 0.
    """
    rng = np.random.default_rng(seed)
    channels = []
    for _ in range(config.channels):
        lut = rng.normal(0.0, np.sqrt(1.0 / (2.0 * np.pi)), config.num_frames)
        w1 = rng.uniform(-1.0, 1.0, MLP_HIDDEN)
        w2 = rng.uniform(-0.25, 0.25, MLP_HIDDEN)
        svfs = []
        for _ in range(2):
            mix = rng.uniform(0.5, 1.5, 3)
            r_raw = rng.normal(0.0, 1.0)
            f_raw = rng.normal(-np.pi, 1.0)
            svfs.append(
                SVFParams(
                    f_raw=float(f_raw),
                    r_raw=float(r_raw),
                    mix_low=float(mix[0]),
                    mix_band=float(mix[1]),
                    mix_high=float(mix[2]),
                )
            )
        channels.append(
            ChannelParams(
                comb=CombParams(),
                svf1=svfs[0],
                svf2=svfs[1],
                lfo=LfoParams(
                    lut=lut,
                    mlp_w1=w1,
                    mlp_b1=np.zeros(MLP_HIDDEN),
                    mlp_w2=w2,
                    mlp_b2=0.0,
                ),
                variant=config.variant,
                fb_config=config.fb_config,
                apf_count=config.apf_count,
            )
        )
    return ModelParams(
        channels=channels,
        frame_len=config.frame_len,
        sample_rate=config.sample_rate,
    )


# -- parameter flattening (optimiser / finite differences) -----------------


def param_leaves(params: ModelParams):
    """Canonical (path, owner, attribute) traversal of all learnable leaves."""
    leaves = []
    for i, ch in enumerate(params.channels):
        pre = f"ch{i}"
        for attr in ("b0", "b1", "a1"):
            leaves.append((f"{pre}.comb.{attr}", ch.comb, attr))
        for name in ("svf1", "svf2"):
            svf = getattr(ch, name)
            if svf is None:
                continue
            for attr in ("f_raw", "r_raw", "mix_low", "mix_band", "mix_high"):
                leaves.append((f"{pre}.{name}.{attr}", svf, attr))
        for attr in ("lut", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"):
            leaves.append((f"{pre}.lfo.{attr}", ch.lfo, attr))
    return leaves


def leaf_paths(params: ModelParams) -> list[str]:
    return [path for path, _, _ in param_leaves(params)]


def flatten_params(params: ModelParams) -> np.ndarray:
    parts = []
    for _, owner, attr in param_leaves(params):
        parts.append(np.atleast_1d(np.asarray(getattr(owner, attr), dtype=np.float64)))
    return np.concatenate(parts)


def assign_flat(params: ModelParams, vec: np.ndarray) -> ModelParams:
    """Write a flat vector back into ``params`` (mutates and returns it)."""
    pos = 0
    for _, owner, attr in param_leaves(params):
        cur = getattr(owner, attr)
        if isinstance(cur, np.ndarray):
            n = cur.size
            setattr(owner, attr, vec[pos : pos + n].copy())
        else:
            n = 1
            setattr(owner, attr, float(vec[pos]))
        pos += n
    if pos != vec.size:
        raise ValueError("flat vector length does not match parameter count")
    return params


def clone_params(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)


def lift_params(tape, params: ModelParams) -> ModelParams:
    """Deep copy of the model whose parameter leaves are tape Vars."""
    lifted = clone_params(params)
    for path, owner, attr in param_leaves(lifted):
        setattr(owner, attr, tape.leaf(getattr(owner, attr), name=path))
    return lifted


def grads_as_dict(lifted: ModelParams) -> dict[str, np.ndarray]:
    out = {}
    for path, owner, attr in param_leaves(lifted):
        out[path] = np.asarray(getattr(owner, attr).grad, dtype=np.float64)
    return out


def flatten_grad_dict(params: ModelParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    parts = []
    for path, owner, attr in param_leaves(params):
        g = grads[path]
        parts.append(np.atleast_1d(g).reshape(-1))
    return np.concatenate(parts)


# -- serialization ----------------------------------------------------------


def _svf_to_dict(svf):
    if svf is None:
        return None
    return {
        "f_raw": svf.f_raw,
        "r_raw": svf.r_raw,
        "mix_low": svf.mix_low,
        "mix_band": svf.mix_band,
        "mix_high": svf.mix_high,
    }


def _svf_from_dict(d, where):
    if d is None:
        return None
    try:
        return SVFParams(
            f_raw=float(d["f_raw"]),
            r_raw=float(d["r_raw"]),
            mix_low=float(d["mix_low"]),
            mix_band=float(d["mix_band"]),
            mix_high=float(d["mix_high"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"params file: bad field in {where}: {exc}") from exc


def params_to_dict(params: ModelParams) -> dict:
    ch0 = params.channels[0]
    return {
        "format_version": PARAMS_FORMAT_VERSION,
        "N": params.frame_len,
        "M": params.num_frames,
        "F_s": params.sample_rate,
        "C": len(params.channels),
        "K": ch0.apf_count,
        "variant": ch0.variant.value,
        "fb_config": ch0.fb_config.value,
        "channels": [
            {
                "variant": ch.variant.value,
                "fb_config": ch.fb_config.value,
                "K": ch.apf_count,
                "comb": {"b0": ch.comb.b0, "b1": ch.comb.b1, "a1": ch.comb.a1},
                "svf1": _svf_to_dict(ch.svf1),
                "svf2": _svf_to_dict(ch.svf2),
                "lfo": {
                    "lut": list(map(float, np.asarray(ch.lfo.lut))),
                    "mlp_w1": list(map(float, np.asarray(ch.lfo.mlp_w1))),
                    "mlp_b1": list(map(float, np.asarray(ch.lfo.mlp_b1))),
                    "mlp_w2": list(map(float, np.asarray(ch.lfo.mlp_w2))),
                    "mlp_b2": float(ch.lfo.mlp_b2),
                },
            }
            for ch in params.channels
        ],
    }


def params_from_dict(d: dict) -> ModelParams:
    try:
        version = d["format_version"]
    except (KeyError, TypeError) as exc:
        raise DataError("params file: missing field 'format_version'") from exc
    if version != PARAMS_FORMAT_VERSION:
        raise DataError(f"params file: unsupported format_version {version!r}")
    channels = []
    try:
        raw_channels = d["channels"]
        frame_len = int(d["N"])
        sample_rate = float(d["F_s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"params file: bad field: {exc}") from exc
    if not raw_channels:
        raise DataError("params file: empty 'channels' list")
    for i, rc in enumerate(raw_channels):
        where = f"channels[{i}]"
        try:
            lfo = rc["lfo"]
            channels.append(
                ChannelParams(
                    comb=CombParams(
                        b0=float(rc["comb"]["b0"]),
                        b1=float(rc["comb"]["b1"]),
                        a1=float(rc["comb"]["a1"]),
                    ),
                    svf1=_svf_from_dict(rc["svf1"], where + ".svf1"),
                    svf2=_svf_from_dict(rc["svf2"], where + ".svf2"),
                    lfo=LfoParams(
                        lut=np.asarray(lfo["lut"], dtype=np.float64),
                        mlp_w1=np.asarray(lfo["mlp_w1"], dtype=np.float64),
                        mlp_b1=np.asarray(lfo["mlp_b1"], dtype=np.float64),
                        mlp_w2=np.asarray(lfo["mlp_w2"], dtype=np.float64),
                        mlp_b2=float(lfo["mlp_b2"]),
                    ),
                    variant=Variant(rc["variant"]),
                    fb_config=FeedbackConfig(rc["fb_config"]),
                    apf_count=int(rc["K"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"params file: bad field in {where}: {exc}") from exc
    return ModelParams(
        channels=channels, frame_len=frame_len, sample_rate=sample_rate
    )


def save_params(params: ModelParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=1)
        fh.write("\n")


def load_params(path) -> ModelParams:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"params file: not valid JSON: {exc}") from exc
    return params_from_dict(d)
