"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

The two recovery experiments (A07/A08) train the full desk-scale
configuration through the command-line interface and take a few minutes
each; everything else runs in seconds.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from modfit import analysis, audio_io, cli, diffmodel, grad, signals, spectral
from modfit import tdengine, trainer
from modfit.diffmodel import FeedbackConfig, Variant

from helpers import best_shift_correlation, pluck_signal

DESK_L = 2**16
DESK_N = 1024

FLANGER_TOY = dict(rate_hz=1.5, delay_min=25.0, depth=250.0, n_fft=DESK_N)
PHASER_TOY = dict(rate_hz=1.5, f_lo=300.0, f_hi=4000.0, apf_count=6, n_fft=DESK_N)


def report(num: int, description: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"ACCEPTANCE {num:02d} {status} - {description}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


# -- A01: reverse-mode gradients vs central finite differences -----------


def test_a01_gradient_correctness():
    n_fft, num_frames = 64, 4
    total = []
    for variant in Variant:
        for fb in FeedbackConfig:
            for seed, channels in ((0, 1), (1, 2)):
                cfg = trainer.TrainConfig(
                    frame_len=n_fft, signal_len=n_fft * num_frames,
                    iterations=0, num_seeds=1, kernel_len=n_fft // 4,
                    variant=variant, fb_config=fb, apf_count=4,
                    channels=channels,
                )
                params = diffmodel.init_params(seed, cfg)
                for ch in params.channels:
                    ch.comb.a1 = 0.35
                framed = signals.build_training_input(
                    signals.gen_triangular(n_fft // 4), n_fft, num_frames)
                rng = np.random.default_rng(seed + 50)
                target = np.tile(rng.normal(size=n_fft) * 0.5, num_frames)
                batch = grad.make_batch(
                    spectral.rfft_frames(framed.frames),
                    spectral.rfft_frames(signals.frame_signal(target, n_fft)),
                    n_fft,
                )
                rep = grad.check_gradients(params, batch, tolerance=1e-3)
                total.extend(rep.entries)
    checked = [e for e in total if e.checked]
    worst = max(e.rel_err for e in checked)
    tight = sum(e.rel_err < 1e-5 for e in checked) / len(checked)
    ok = len(total) >= 200 and worst < 1e-3 and tight >= 0.90
    report(1, "reverse-mode gradients match finite differences", ok,
           f"{len(total)} draws, worst rel err {worst:.2e}, "
           f"{tight * 100:.1f}% below 1e-5")


# -- A02: analytic delay-loss gradient ------------------------------------


def test_a02_analytic_gradient_agreement():
    n_fft, target = 256, 100.0
    kernel = signals.gen_triangular(128)
    frame = np.zeros(n_fft)
    frame[: kernel.length] = kernel.samples
    x_spec = spectral.rfft(frame)
    grid = np.linspace(0.0, float(n_fft), 1000)
    _, slopes = analysis.delay_loss(grid, target, x_spec)

    # fourth-order central differences of the loss as the oracle
    h = 1e-3
    lp2, _ = analysis.delay_loss(grid + 2 * h, target, x_spec)
    lp1, _ = analysis.delay_loss(grid + h, target, x_spec)
    lm1, _ = analysis.delay_loss(grid - h, target, x_spec)
    lm2, _ = analysis.delay_loss(grid - 2 * h, target, x_spec)
    fd = (-lp2 + 8 * lp1 - 8 * lm1 + lm2) / (12 * h)
    rel = np.max(np.abs(slopes - fd)) / np.max(np.abs(slopes))

    # the implemented gradient carries the 2*pi/N chain factor of the
    # cosine argument; confirm it is exactly that factor times the
    # k-weighted sine sum
    k = np.arange(x_spec.size)
    w = np.abs(x_spec) ** 2
    arg = 2 * np.pi * np.outer(grid - target, k) / n_fft
    bare_sine_sum = np.sum(w * k * np.sin(arg), axis=1)
    factor_ok = np.allclose(slopes, (2 * np.pi / n_fft) * bare_sine_sum,
                            rtol=1e-12, atol=1e-12)
    ok = rel < 1e-8 and factor_ok
    report(2, "delay-loss gradient matches the exact derivative", ok,
           f"rel err {rel:.2e}; chain factor 2*pi/N documented")


# -- A03: basin width scales with the kernel length ------------------------


def monotone_extent(n_kernel: int, n_fft: int = 256, target: float = 100.0):
    if n_kernel == 1:
        x = np.ones(n_fft // 2 + 1, dtype=np.complex128)
    else:
        kernel = signals.gen_triangular(n_kernel)
        frame = np.zeros(n_fft)
        frame[: kernel.length] = kernel.samples
        x = spectral.rfft(frame)
    width = 0.0
    for off in np.arange(0.25, n_fft / 2, 0.25):
        _, sp = analysis.delay_loss(target + off, target, x)
        _, sm = analysis.delay_loss(target - off, target, x)
        if sp <= 0 or sm >= 0:
            break
        width = off
    return width


def test_a03_basin_width_reproduction():
    # The descent basin of the weighted loss is the support of the
    # kernel's autocorrelation: the gradient points at the target for
    # offsets up to one kernel length each side. Half of that monotone
    # extent is the basin half-width compared against n_kernel/2.
    details = []
    ok = True
    flat = monotone_extent(1)
    ok &= flat <= 1.5
    details.append(f"flat: {flat:.2f} smp")
    for n_kernel in (32, 64, 128):
        half = monotone_extent(n_kernel) / 2
        lo, hi = 0.75 * n_kernel / 2, 1.25 * n_kernel / 2
        ok &= lo <= half <= hi
        details.append(f"N'={n_kernel}: {half:.1f}")
    report(3, "loss basin widens linearly with kernel length", ok,
           "; ".join(details))


# -- A04: descent failure/success dichotomy --------------------------------


def test_a04_descent_dichotomy():
    flat = np.ones(129, dtype=np.complex128)
    fail = analysis.descend_delay(80.0, 100.0, flat, steps=5000, lr=1e-3)
    kernel = signals.gen_triangular(64)
    frame = np.zeros(256)
    frame[:64] = kernel.samples
    tri = spectral.rfft(frame)
    good = analysis.descend_delay(80.0, 100.0, tri, steps=5000, lr=1e-3)
    err_flat = abs(fail.final - 100.0)
    err_tri = abs(good.final - 100.0)
    ok = err_flat > 1.0 and err_tri < 0.1
    report(4, "descent fails on flat spectra and succeeds on triangles", ok,
           f"flat |err| {err_flat:.2f}, tri |err| {err_tri:.4f}")


# -- A05: frequency-domain loss equals time-domain ESR ----------------------


def test_a05_parseval_loss_equivalence():
    n_fft = 1024
    rng = np.random.default_rng(42)
    kernel = signals.Kernel(samples=rng.normal(size=n_fft // 2), kind="tri")
    framed = signals.build_training_input(kernel, n_fft, 16)
    x = framed.signal
    env = np.exp(-np.arange(n_fft // 2) / 32.0)
    fir_target = rng.normal(size=n_fft // 2) * env
    fir_model = fir_target + 0.05 * rng.normal(size=n_fft // 2) * env
    y = np.convolve(x, fir_target)[: x.size]
    yhat = np.convolve(x, fir_model)[: x.size]
    fd = trainer.spectral_loss(
        spectral.rfft_frames(signals.frame_signal(yhat, n_fft)),
        spectral.rfft_frames(signals.frame_signal(y, n_fft)),
    )
    td = trainer.esr(y, yhat)
    rel = abs(fd - td) / td
    report(5, "spectral loss equals time-domain ESR without aliasing",
           rel < 1e-6, f"rel diff {rel:.2e}")


# -- A06: frequency-sampling vs time-domain engine --------------------------


def test_a06_fs_td_consistency():
    n_fft, num_frames = 512, 16
    svf1 = diffmodel.SVFParams(f_raw=-1.0, r_raw=0.5, mix_low=1.2,
                               mix_band=0.8, mix_high=1.1)
    framed = signals.build_training_input(
        signals.gen_triangular(n_fft // 2), n_fft, num_frames)
    worst = 0.0
    cases = []
    for variant in Variant:
        counts = (1,) if variant is Variant.DELAY_LINE else (1, 4, 6)
        for count in counts:
            for fb in FeedbackConfig:
                if variant is Variant.DELAY_LINE:
                    c = float(np.arccos(1 - 4 * (n_fft // 8) / n_fft) / np.pi)
                else:
                    c = 0.1
                lfo = diffmodel.LfoParams(
                    lut=np.zeros(num_frames), mlp_w1=np.zeros(16),
                    mlp_b1=np.zeros(16), mlp_w2=np.zeros(16), mlp_b2=c)
                ch = diffmodel.ChannelParams(
                    comb=diffmodel.CombParams(1.0, 0.9, 0.4),
                    svf1=svf1, svf2=None, lfo=lfo, variant=variant,
                    fb_config=fb, apf_count=count)
                params = diffmodel.ModelParams(channels=[ch], frame_len=n_fft)
                y_fs = spectral.irfft_frames(diffmodel.fs_forward(
                    params, spectral.rfft_frames(framed.frames)))
                y_td = tdengine.process_channel(
                    ch, np.full(framed.signal.size, c), framed.signal, n_fft
                ).reshape(num_frames, n_fft)
                err = y_td[8:] - y_fs[8:]
                rel = float(np.sqrt(np.mean(err**2) / np.mean(y_fs[8:] ** 2)))
                worst = max(worst, rel)
                cases.append(rel)
    report(6, "time-domain engine matches the training model", worst < 1e-5,
           f"{len(cases)} cases, worst RMS err {worst:.2e}")


# -- A07/A08/A11: desk-scale recovery experiments (via the CLI) --------------


def run_cli(*args) -> int:
    return cli.main([str(a) for a in args])


def desk_experiment(tmp_path: Path, kind: str, tag: str) -> dict:
    """Full pipeline: gen input, toy target, pluck validation pair, train."""
    gen_dir = tmp_path / f"{tag}_gen"
    input_kind = "tri" if kind == "flanger" else "ap-chirp"
    assert run_cli("gen", "--kind", input_kind, "--N", DESK_N, "--L", DESK_L,
                   "--out-dir", gen_dir) == 0

    toy = FLANGER_TOY if kind == "flanger" else PHASER_TOY
    toy_flags = []
    for key, val in toy.items():
        flag = {"rate_hz": "--rate-hz", "delay_min": "--delay-min",
                "depth": "--depth", "f_lo": "--f-lo", "f_hi": "--f-hi",
                "apf_count": "--apf-count", "n_fft": "--N"}[key]
        toy_flags += [flag, val]

    target_dir = tmp_path / f"{tag}_target"
    assert run_cli("make-target", "--kind", kind,
                   "--input", gen_dir / "input.wav", *toy_flags,
                   "--out-dir", target_dir) == 0

    register = "bass" if kind == "flanger" else "guitar"
    val_dir = tmp_path / f"{tag}_val"
    val_dir.mkdir()
    val_input = val_dir / "val_input.wav"
    audio_io.write_wav(val_input, 44100, pluck_signal(DESK_L, register))
    assert run_cli("make-target", "--kind", kind, "--input", val_input,
                   *toy_flags, "--name", "val_target.wav",
                   "--out-dir", val_dir) == 0

    run_dir = tmp_path / f"{tag}_run"
    train_flags = ["--profile", "desk", "--N", DESK_N]
    if kind == "phaser":
        train_flags += ["--variant", "apf_cascade", "--apf-count", 6,
                        "--input-kind", "ap_chirp", "--preemph", "tri"]
    else:
        train_flags += ["--variant", "delay_line", "--input-kind", "tri",
                        "--preemph", "none"]
    assert run_cli("train", "--input", gen_dir / "input.wav",
                   "--target", target_dir / "target.wav",
                   "--val-input", val_input,
                   "--val-target", val_dir / "val_target.wav",
                   *train_flags, "--out-dir", run_dir) == 0
    with open(run_dir / "summary.json") as fh:
        summary = json.load(fh)
    return {"run_dir": run_dir, "summary": summary, "toy": toy,
            "val_input": val_input, "val_target": val_dir / "val_target.wav"}


@pytest.fixture(scope="module")
def flanger_experiment(tmp_path_factory):
    return desk_experiment(tmp_path_factory.mktemp("flanger"), "flanger", "fl")


@pytest.fixture(scope="module")
def phaser_experiment(tmp_path_factory):
    return desk_experiment(tmp_path_factory.mktemp("phaser"), "phaser", "ph")


def best_seed_trajectory_corr(experiment, kind: str) -> tuple[float, float]:
    run_dir = experiment["run_dir"]
    header, cols = audio_io.read_series_csv(run_dir / "stats.csv")
    seeds, esr_db = cols[0].astype(int), cols[1]
    best_seed = int(seeds[np.argmin(esr_db)])
    params = diffmodel.load_params(run_dir / f"seed_{best_seed}" / "params.json")
    control = diffmodel.control_signal(params.channels[0].lfo)
    toy = tdengine.ToyConfig(sample_rate=44100.0, **experiment["toy"])
    centres = ((np.arange(DESK_L // DESK_N) + 0.5) * DESK_N).astype(np.intp)
    if kind == "flanger":
        learned = diffmodel.delay_from_control(control, DESK_N)
        target = tdengine.toy_delay_trajectory(DESK_L, toy)[centres]
    else:
        learned = diffmodel.pole_from_control(control)
        target = tdengine.toy_pole_trajectory(DESK_L, toy)[centres]
    return float(np.min(esr_db)), best_shift_correlation(learned, target)


def test_a07_toy_flanger_recovery(flanger_experiment):
    summary = flanger_experiment["summary"]
    best_db, corr = best_seed_trajectory_corr(flanger_experiment, "flanger")
    trivial = summary["trivial_esr_db"]
    ok = best_db <= trivial - 10.0 and corr >= 0.95
    report(7, "desk-scale flanger recovery (tri input)", ok,
           f"best {best_db:+.2f} dB vs trivial {trivial:+.2f} dB, "
           f"delay-trajectory corr {corr:.3f}")


def test_a08_toy_phaser_recovery(phaser_experiment):
    summary = phaser_experiment["summary"]
    best_db, corr = best_seed_trajectory_corr(phaser_experiment, "phaser")
    trivial = summary["trivial_esr_db"]
    ok = best_db <= trivial - 10.0 and corr >= 0.95
    report(8, "desk-scale phaser recovery (ap-chirp input, tri emphasis)", ok,
           f"best {best_db:+.2f} dB vs trivial {trivial:+.2f} dB, "
           f"pole-trajectory corr {corr:.3f}")


# -- A09: constrained-parameter stability bounds -----------------------------


def test_a09_stability_bounds():
    class _Cfg:
        channels = 5000
        num_frames = 2
        variant = Variant.DELAY_LINE
        fb_config = FeedbackConfig.I
        apf_count = 4
        frame_len = DESK_N
        sample_rate = 44100.0

    params = diffmodel.init_params(123, _Cfg())
    violations = 0
    controls = []
    for ch in params.channels:
        controls.extend(np.asarray(diffmodel.control_signal(ch.lfo)))
        for svf in (ch.svf1, ch.svf2):
            g, res = spectral.svf_constrained(svf)
            freq = np.arctan(g) / np.pi
            if not (0.0 < freq < 0.5 and res > 0.0):
                violations += 1
    controls = np.asarray(controls)
    delays = diffmodel.delay_from_control(controls, DESK_N)
    poles = diffmodel.pole_from_control(controls)
    violations += int(np.sum(~((delays >= 0.0) & (delays <= DESK_N / 2))))
    violations += int(np.sum(~(np.abs(poles) < 1.0)))
    n_draws = len(controls)
    ok = violations == 0 and n_draws >= 10_000
    report(9, "constrained parameters respect stability bounds", ok,
           f"{n_draws} control draws + {2 * len(params.channels)} filters, "
           f"{violations} violations")


# -- A10: external WAV ingestion end to end -----------------------------------


def test_a10_external_wav_ingestion(tmp_path):
    # externally recorded audio arrives as WAV files; prove the whole
    # pipeline (train -> params -> validate -> infer) runs on a PCM16 /
    # float32 pair it has never seen. Hardware-pedal error figures are
    # out of reach here by construction; accuracy on synthetic stand-ins
    # is covered by A06-A08.
    from scipy.io import wavfile

    n_fft, length = 512, 512 * 16
    framed = signals.build_training_input(
        signals.gen_triangular(n_fft // 2), n_fft, 16)
    x = framed.signal
    toy = tdengine.ToyConfig(rate_hz=8.0, n_fft=n_fft, delay_min=10.0,
                             depth=80.0)
    y = tdengine.make_toy_target("flanger", x, toy)
    in_path = tmp_path / "external_input.wav"
    tg_path = tmp_path / "external_target.wav"
    wavfile.write(in_path, 44100, (np.clip(x, -1, 1) * 32767).astype(np.int16))
    audio_io.write_wav(tg_path, 44100, y)

    run_dir = tmp_path / "run"
    ok = run_cli("train", "--input", in_path, "--target", tg_path,
                 "--N", n_fft, "--iterations", 60, "--seeds", 2,
                 "--out-dir", run_dir) == 0
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    ok &= all(Path(a).exists() for a in manifest["artifacts"])
    ok &= run_cli("validate", "--params", run_dir / "seed_0/params.json",
                  "--input", in_path, "--target", tg_path, "--align",
                  "--out-dir", tmp_path / "v") == 0
    ok &= run_cli("infer", "--params", run_dir / "seed_0/params.json",
                  "--input", in_path, "--out-dir", tmp_path / "i") == 0
    ok &= (tmp_path / "i" / "output.wav").exists()
    report(10, "external WAV pairs run the identical pipeline end to end", ok,
           "PCM16 input ingested; manifest artifacts complete")


# -- A11: determinism of repeated runs ----------------------------------------


def test_a11_determinism(flanger_experiment, tmp_path_factory):
    repeat = desk_experiment(tmp_path_factory.mktemp("repeat"), "flanger", "fl")
    first = flanger_experiment["run_dir"]
    second = repeat["run_dir"]
    same_stats = ((first / "stats.csv").read_bytes()
                  == (second / "stats.csv").read_bytes())
    same_params = ((first / "seed_0" / "params.json").read_bytes()
                   == (second / "seed_0" / "params.json").read_bytes())
    report(11, "identical seeds give byte-identical stats and params",
           same_stats and same_params, "stats.csv and seed_0/params.json compared")
