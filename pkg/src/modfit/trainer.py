"""Training loop, metrics, and the multi-seed experiment harness.

Two built-in size profiles:

* ``desk``  -- L = 2^16 samples, 2000 iterations, 5 seeds; quick runs
  that fit an acceptance-test budget.
* ``paper`` -- L = 2^18 samples, 15000 iterations, 30 seeds; the
  full-scale protocol.

Validation renders the trained model through the time-domain engine and
reports the error-to-signal ratio (ESR) and a multi-resolution spectral
log-magnitude distance (MRSL). Because a recorded target's LFO phase is
generally unknown, the alignment search re-renders with every cyclic
LFO start frame over the periodic extension and keeps the best one.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffmodel, grad, signals, spectral, tdengine
from .diffmodel import FeedbackConfig, ModelParams, Variant
from .errors import DegenerateSignalError, NumericAbortError, NumericError

ESR_DB_FLOOR = -120.0

# The desk profile trades iterations for learning rate (7.5x fewer steps,
# 3x the rate) so short runs still reach the loss basin floor.
PROFILES = {
    "desk": {"signal_len": 2**16, "iterations": 2000, "num_seeds": 5,
             "learning_rate": 3e-3},
    "paper": {"signal_len": 2**18, "iterations": 15000, "num_seeds": 30,
              "learning_rate": 1e-3},
}


@dataclass
class TrainConfig:
    variant: Variant = Variant.DELAY_LINE
    fb_config: FeedbackConfig = FeedbackConfig.I
    channels: int = 1  # C
    apf_count: int = 1  # K
    frame_len: int = 1024  # N
    kernel_len: int | None = None  # N', defaults to N/2
    sample_rate: float = 44100.0
    signal_len: int = 2**18  # L
    input_kind: str = "tri"
    preemph_kind: str = "none"  # none | tri
    iterations: int = 15000
    learning_rate: float = 1e-3
    num_seeds: int = 30
    seed_base: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.fb_config = FeedbackConfig(self.fb_config)
        if self.kernel_len is None:
            self.kernel_len = self.frame_len // 2
        self.validate()

    def validate(self):
        n = self.frame_len
        if n < 2 or n & (n - 1):
            raise ValueError(f"frame length must be a power of two, got {n}")
        if self.signal_len % n:
            raise ValueError("signal length must be divisible by the frame length")
        if not 1 <= self.kernel_len <= n // 2:
            raise ValueError("kernel length must lie in [1, N/2]")
        if self.input_kind not in signals.KERNEL_KINDS:
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if self.preemph_kind not in ("none", "tri"):
            raise ValueError(f"unknown pre-emphasis kind {self.preemph_kind!r}")
        if self.iterations < 0 or self.num_seeds < 1 or self.channels < 1:
            raise ValueError("iterations/seeds/channels out of range")

    @property
    def num_frames(self) -> int:
        return self.signal_len // self.frame_len

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_base, self.seed_base + self.num_seeds))

    def with_profile(self, profile: str) -> "TrainConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        return replace(self, **PROFILES[profile])


# -- metrics -----------------------------------------------------------------


def esr(y: np.ndarray, yhat: np.ndarray) -> float:
    """Error-to-signal ratio sum((y - yhat)^2) / sum(y^2)."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError("signals must have equal length")
    denom = float(np.sum(y**2))
    if denom == 0.0:
        raise DegenerateSignalError("target signal is silent")
    return float(np.sum((y - yhat) ** 2)) / denom


def esr_db(value: float) -> float:
    """ESR in dB, floored at -120 dB for (near-)identical signals."""
    if value <= 10.0 ** (ESR_DB_FLOOR / 10.0):
        return ESR_DB_FLOOR
    return float(10.0 * np.log10(value))


def trivial_baseline(val_input: np.ndarray, val_target: np.ndarray) -> float:
    """ESR of passing the input through unprocessed ("no model at all")."""
    return esr(val_target, val_input)


def spectral_loss(
    yhat_spectra: np.ndarray,
    y_spectra: np.ndarray,
    preemph: np.ndarray | None = None,
) -> float:
    """Relative weighted spectral error over frame spectra.

    The bin weighting includes the half-spectrum conjugate-symmetry
    multiplicity, so with ``preemph=None`` this equals the time-domain
    ESR whenever no time aliasing occurs.
    """
    yhat_spectra = np.asarray(yhat_spectra, dtype=np.complex128)
    y_spectra = np.asarray(y_spectra, dtype=np.complex128)
    if yhat_spectra.shape != y_spectra.shape or yhat_spectra.ndim != 2:
        raise ValueError("spectra must share shape (M, Nh)")
    n_fft = 2 * (y_spectra.shape[1] - 1)
    w = np.array(spectral.parseval_weights(n_fft))
    if preemph is not None:
        w = w * np.abs(np.asarray(preemph)) ** 2
    denom = float(np.sum(w * np.abs(y_spectra) ** 2))
    if denom <= 0.0:
        raise DegenerateSignalError("target spectra carry no energy")
    return float(np.sum(w * np.abs(y_spectra - yhat_spectra) ** 2)) / denom


def mrsl(
    y: np.ndarray,
    yhat: np.ndarray,
    resolutions: tuple[int, ...] = (512, 1024, 2048),
) -> float:
    """Multi-resolution spectral log-magnitude distance.

    Mean absolute difference of log(|STFT| + 1e-8) over non-overlapping
    rectangular frames, averaged across the given frame lengths. Zero
    iff the magnitude spectrograms coincide at every resolution
    (phase-blind). This follows the toolkit's own definition; treat
    absolute values as comparable only within this toolkit.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError("signals must have equal length")
    eps = 1e-8
    acc = 0.0
    for res in resolutions:
        sy = np.abs(spectral.rfft_frames(signals.frame_signal(y, res)))
        sh = np.abs(spectral.rfft_frames(signals.frame_signal(yhat, res)))
        acc += float(np.mean(np.abs(np.log(sy + eps) - np.log(sh + eps))))
    return acc / len(resolutions)


# -- optimiser ---------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_size(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    vec: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    if vec.shape != grads.shape:
        raise ValueError("parameter and gradient vectors must match")
    if not np.all(np.isfinite(grads)):
        raise NumericAbortError("non-finite gradient; aborting run")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads**2
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return vec - lr * m_hat / (np.sqrt(v_hat) + eps)


# -- training ----------------------------------------------------------------


def preemph_response(config: TrainConfig) -> np.ndarray | None:
    """Half-spectrum response of the loss pre-emphasis filter, if any."""
    if config.preemph_kind == "none":
        return None
    kernel = signals.gen_triangular(config.kernel_len)
    frame = np.zeros(config.frame_len)
    frame[: kernel.length] = kernel.samples
    return spectral.rfft(frame)


def make_training_batch(
    config: TrainConfig, framed_input: signals.FramedInput, target: np.ndarray
) -> grad.Batch:
    target = np.asarray(target, dtype=np.float64)
    if target.size != framed_input.signal.size:
        raise ValueError("target length must equal the training input length")
    x_spec = spectral.rfft_frames(framed_input.frames)
    y_spec = spectral.rfft_frames(signals.frame_signal(target, framed_input.n_fft))
    return grad.make_batch(
        x_spec, y_spec, framed_input.n_fft, preemph=preemph_response(config)
    )


@dataclass
class TrainResult:
    params: ModelParams
    history: np.ndarray  # per-iteration loss


def train(
    config: TrainConfig,
    framed_input: signals.FramedInput,
    target: np.ndarray,
    seed: int = 0,
    init: ModelParams | None = None,
) -> TrainResult:
    """Full-batch gradient optimisation of the spectral loss over all frames."""
    if framed_input.num_frames != config.num_frames:
        raise ValueError("training input frame count does not match config")
    batch = make_training_batch(config, framed_input, target)
    params = init if init is not None else diffmodel.init_params(seed, config)
    work = diffmodel.clone_params(params)
    vec = diffmodel.flatten_params(work)
    state = AdamState.for_size(vec.size)
    history = np.empty(config.iterations)
    for it in range(config.iterations):
        diffmodel.assign_flat(work, vec)
        loss, grads = grad.grad_of_loss(work, batch)
        gvec = diffmodel.flatten_grad_dict(work, grads)
        vec = adam_step(
            vec,
            gvec,
            state,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
        history[it] = loss
    final = diffmodel.assign_flat(diffmodel.clone_params(params), vec)
    return TrainResult(params=final, history=history)


# -- validation --------------------------------------------------------------


@dataclass
class ValidationReport:
    esr: float
    esr_db: float
    mrsl: float
    align_frame: int | None  # LFO start frame chosen by the search


def validate(
    params: ModelParams,
    val_input: np.ndarray,
    val_target: np.ndarray,
    align: bool = False,
    rate_scale: float = 1.0,
) -> ValidationReport:
    """Render through the time-domain engine and score against the target.

    With ``align=True`` the model LFO start index is swept over all M
    cyclic frame offsets of its periodic extension and the offset with
    the minimum ESR is reported.
    """
    val_input = np.asarray(val_input, dtype=np.float64)
    val_target = np.asarray(val_target, dtype=np.float64)
    if val_input.shape != val_target.shape:
        raise ValueError("validation input and target must have equal length")
    if float(np.sum(val_target**2)) == 0.0:
        raise DegenerateSignalError("validation target is silent")
    wavetables = tdengine.channel_wavetables(params)
    offsets = range(params.num_frames) if align else (0,)
    best = None
    for m0 in offsets:
        y = tdengine.process(
            params,
            val_input,
            rate_scale=rate_scale,
            align_frame=m0,
            wavetables=wavetables,
        )
        e = esr(val_target, y)
        if best is None or e < best[0]:
            best = (e, m0, y)
    e, m0, y = best
    return ValidationReport(
        esr=e,
        esr_db=esr_db(e),
        mrsl=mrsl(val_target, y),
        align_frame=m0 if align else None,
    )


# -- multi-seed harness --------------------------------------------------------


@dataclass
class TrainData:
    framed_input: signals.FramedInput
    target: np.ndarray
    val_input: np.ndarray
    val_target: np.ndarray


@dataclass
class SeedRun:
    seed: int
    params: ModelParams | None
    history: np.ndarray | None
    report: ValidationReport | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class RunStats:
    """Per-seed validation metrics with the harness summary statistics.

    The confidence-interval half-width is 0.95 * sigma / sqrt(n) with
    sigma the sample standard deviation of the per-seed ESR in dB.
    """

    seeds: list[int]
    esr_db: list[float]
    mrsl: list[float]
    align_frame: list[int | None]
    failed_seeds: list[int] = field(default_factory=list)

    @property
    def median_esr_db(self) -> float:
        return float(np.median(self.esr_db))

    @property
    def best_esr_db(self) -> float:
        return float(np.min(self.esr_db))

    @property
    def ci_halfwidth(self) -> float:
        n = len(self.esr_db)
        if n < 2:
            return 0.0
        return float(0.95 * np.std(self.esr_db, ddof=1) / np.sqrt(n))


def run_seed(config: TrainConfig, data: TrainData, seed: int, align: bool = True) -> SeedRun:
    try:
        result = train(config, data.framed_input, data.target, seed=seed)
        report = validate(result.params, data.val_input, data.val_target, align=align)
    except NumericError as exc:
        return SeedRun(seed=seed, params=None, history=None, report=None,
                       error=f"{type(exc).__name__}: {exc}")
    return SeedRun(seed=seed, params=result.params, history=result.history,
                   report=report)


def _run_seed_star(args):
    return run_seed(*args)


def multi_seed(
    config: TrainConfig, data: TrainData, jobs: int = 1, align: bool = True
) -> tuple[RunStats, list[SeedRun]]:
    """Independent train+validate per seed; failures are excluded from stats."""
    if config.num_seeds < 1:
        raise ValueError("need at least one seed")
    seeds = config.seeds
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_seed_star,
                                 [(config, data, s, align) for s in seeds]))
    else:
        runs = [run_seed(config, data, s, align) for s in seeds]
    runs.sort(key=lambda r: r.seed)
    good = [r for r in runs if not r.failed]
    stats = RunStats(
        seeds=[r.seed for r in good],
        esr_db=[r.report.esr_db for r in good],
        mrsl=[r.report.mrsl for r in good],
        align_frame=[r.report.align_frame for r in good],
        failed_seeds=[r.seed for r in runs if r.failed],
    )
    return stats, runs
