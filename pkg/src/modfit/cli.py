"""Command-line interface.

Commands: gen | make-target | train | validate | infer | analyze.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.
The default output directory is the MODFIT_OUTDIR environment variable,
falling back to the current directory. Every successful command writes
a manifest.json listing the artifacts it produced.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, analysis, audio_io, diffmodel, plots, signals, spectral
from . import tdengine, trainer
from .errors import DataError, NumericError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _out_dir(args) -> Path:
    base = args.out_dir or os.environ.get("MODFIT_OUTDIR") or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, command: str, config: dict, artifacts: list[Path],
                    seeds: list[int] | None = None) -> Path:
    for art in artifacts:
        if not Path(art).exists():
            raise RuntimeError(f"manifest lists missing artifact {art}")
    manifest = {
        "tool": "modfit",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds or [],
        "artifacts": [str(Path(a)) for a in artifacts],
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


def _require_rate(rate: int, path) -> None:
    if rate != 44100:
        raise DataError(f"{path}: expected 44100 Hz sample rate, got {rate}")


def _load_pair(input_path, target_path):
    rate_x, x = audio_io.read_wav(input_path)
    rate_y, y = audio_io.read_wav(target_path)
    _require_rate(rate_x, input_path)
    _require_rate(rate_y, target_path)
    if x.size != y.size:
        raise DataError(
            f"length mismatch: {input_path} has {x.size} samples, "
            f"{target_path} has {y.size}"
        )
    return x, y


# -- gen -----------------------------------------------------------------


def cmd_gen(args) -> int:
    out = _out_dir(args)
    n_fft = args.N
    n_kernel = args.Nprime if args.Nprime is not None else n_fft // 2
    kind = args.kind.replace("-", "_")
    kernel = signals.make_kernel(kind, n_kernel, n_fft)
    if args.L % n_fft:
        raise DataError(f"signal length {args.L} not divisible by frame length {n_fft}")
    framed = signals.build_training_input(kernel, n_fft, args.L // n_fft)

    kernel_wav = audio_io.write_wav(out / "kernel.wav", args.sample_rate, kernel.samples)
    kernel_csv = audio_io.write_series_csv(
        out / "kernel.csv", ["n", "amplitude"],
        [np.arange(kernel.length), kernel.samples],
    )
    input_wav = audio_io.write_wav(out / "input.wav", args.sample_rate, framed.signal)
    arts = [kernel_wav, kernel_csv, input_wav]
    if args.csv:
        arts.append(audio_io.write_series_csv(
            out / "input.csv", ["n", "amplitude"],
            [np.arange(framed.signal.size), framed.signal],
        ))
    _write_manifest(out, "gen", {
        "kind": kind, "N": n_fft, "Nprime": n_kernel, "L": args.L,
        "sample_rate": args.sample_rate,
    }, arts)
    print(f"wrote {input_wav} ({framed.num_frames} frames of {n_fft})")
    return EXIT_OK


# -- make-target -----------------------------------------------------------


def cmd_make_target(args) -> int:
    out = _out_dir(args)
    rate, x = audio_io.read_wav(args.input)
    _require_rate(rate, args.input)
    cfg = tdengine.ToyConfig(
        rate_hz=args.rate_hz,
        n_fft=args.N,
        delay_min=args.delay_min,
        depth=args.depth,
        f_lo=args.f_lo,
        f_hi=args.f_hi,
        feedback=args.feedback,
        apf_count=args.apf_count,
        sample_rate=float(rate),
    )
    y = tdengine.make_toy_target(args.kind, x, cfg)
    target_wav = audio_io.write_wav(out / args.name, rate, y)

    # frame-centre trajectory of the reference LFO, for comparison plots
    centres = ((np.arange(x.size // args.N) + 0.5) * args.N).astype(np.intp)
    if args.kind == "flanger":
        traj = tdengine.toy_delay_trajectory(x.size, cfg)[centres]
        label = "delay_samples"
    else:
        traj = tdengine.toy_pole_trajectory(x.size, cfg)[centres]
        label = "pole"
    traj_csv = audio_io.write_series_csv(
        out / "target_lfo.csv", ["frame", label],
        [np.arange(centres.size), traj],
    )
    traj_png = plots.save_control_plot(
        out / "target_lfo.png", {label: traj}, ylabel=label)
    sidecar = plots.write_sidecar(traj_csv, traj_png)
    _write_manifest(out, "make-target", {
        "kind": args.kind, "rate_hz": cfg.rate_hz, "N": cfg.n_fft,
        "delay_min": cfg.delay_min, "depth": cfg.delay_span,
        "f_lo": cfg.f_lo, "f_hi": cfg.f_hi, "feedback": cfg.feedback,
        "apf_count": cfg.apf_count,
    }, [target_wav, traj_csv, traj_png, sidecar])
    print(f"wrote {target_wav}")
    return EXIT_OK


# -- train -----------------------------------------------------------------


def _config_from_args(args) -> trainer.TrainConfig:
    cfg = trainer.TrainConfig(frame_len=1024).with_profile(args.profile)
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"config file: {exc}") from exc
        profile = file_cfg.pop("profile", None)
        if profile:
            cfg = cfg.with_profile(profile)
        overrides.update(file_cfg)
    for name in ("variant", "fb_config", "channels", "apf_count", "frame_len",
                 "input_kind", "preemph_kind", "iterations", "learning_rate",
                 "num_seeds", "seed_base", "signal_len", "kernel_len"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    merged = {**_config_dict(cfg), **overrides}
    if "kernel_len" not in overrides:
        merged["kernel_len"] = None  # re-derive N/2 for the final frame length
    try:
        return trainer.TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config field: {exc}") from exc


def _config_dict(cfg: trainer.TrainConfig) -> dict:
    d = asdict(cfg)
    d["variant"] = cfg.variant.value
    d["fb_config"] = cfg.fb_config.value
    return d


def cmd_train(args) -> int:
    out = _out_dir(args)
    config = _config_from_args(args)
    x, y = _load_pair(args.input, args.target)
    usable = (x.size // config.frame_len) * config.frame_len
    if usable == 0:
        raise DataError("input shorter than one frame")
    if usable != config.signal_len:
        config = trainer.TrainConfig(**{**_config_dict(config), "signal_len": usable})
    x, y = x[:usable], y[:usable]
    frames = signals.frame_signal(x, config.frame_len)
    framed = signals.FramedInput(frames=frames, kernel_len=config.kernel_len)

    if args.val_input:
        if not args.val_target:
            raise DataError("--val-input requires --val-target")
        vx, vy = _load_pair(args.val_input, args.val_target)
    else:
        vx, vy = x, y

    stats, runs = trainer.multi_seed(
        config, trainer.TrainData(framed, y, vx, vy),
        jobs=args.jobs, align=not args.no_align,
    )

    arts = []
    histories = {}
    for run in runs:
        seed_dir = out / f"seed_{run.seed}"
        seed_dir.mkdir(exist_ok=True)
        if run.failed:
            (seed_dir / "error.txt").write_text(run.error + "\n")
            arts.append(seed_dir / "error.txt")
            continue
        params_path = seed_dir / "params.json"
        diffmodel.save_params(run.params, params_path)
        hist_path = audio_io.write_series_csv(
            seed_dir / "loss_history.csv", ["iteration", "loss"],
            [np.arange(run.history.size), run.history],
        )
        metrics = {
            "seed": run.seed,
            "esr": run.report.esr,
            "esr_db": run.report.esr_db,
            "mrsl": run.report.mrsl,
            "align_frame": run.report.align_frame,
        }
        metrics_path = seed_dir / "metrics.json"
        with open(metrics_path, "w") as fh:
            json.dump(metrics, fh, indent=1)
            fh.write("\n")
        histories[run.seed] = run.history
        arts += [params_path, hist_path, metrics_path]

    stats_path = out / "stats.csv"
    with open(stats_path, "w") as fh:
        fh.write("seed,esr_db,mrsl,align_frame\n")
        for seed, db, mr, af in zip(stats.seeds, stats.esr_db, stats.mrsl,
                                    stats.align_frame):
            fh.write(f"{seed},{float(db)!r},{float(mr)!r},{af if af is not None else ''}\n")
    summary_path = out / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump({
            "median_esr_db": stats.median_esr_db if stats.esr_db else None,
            "best_esr_db": stats.best_esr_db if stats.esr_db else None,
            "ci_halfwidth_db": stats.ci_halfwidth,
            "trivial_esr_db": trainer.esr_db(trainer.trivial_baseline(vx, vy)),
            "failed_seeds": stats.failed_seeds,
        }, fh, indent=1)
        fh.write("\n")
    arts += [stats_path, summary_path]
    if histories:
        arts.append(plots.save_history_plot(out / "loss_history.png", histories))
    _write_manifest(out, "train", _config_dict(config), arts,
                    seeds=config.seeds)
    print(f"trained {len(stats.seeds)}/{config.num_seeds} seeds; "
          f"median ESR {stats.median_esr_db:+.2f} dB, best {stats.best_esr_db:+.2f} dB"
          if stats.esr_db else "all seeds failed")
    return EXIT_OK


# -- validate ---------------------------------------------------------------


def cmd_validate(args) -> int:
    out = _out_dir(args)
    params = diffmodel.load_params(args.params)
    x, y = _load_pair(args.input, args.target)
    report = trainer.validate(params, x, y, align=args.align,
                              rate_scale=args.rate_scale)
    trivial = trainer.esr_db(trainer.trivial_baseline(x, y))
    print(f"ESR {report.esr_db:+.2f} dB (trivial {trivial:+.2f} dB), "
          f"MRSL {report.mrsl:.4f}"
          + (f", alignment frame {report.align_frame}" if args.align else ""))
    metrics_path = out / "validation.json"
    with open(metrics_path, "w") as fh:
        json.dump({
            "esr": report.esr, "esr_db": report.esr_db, "mrsl": report.mrsl,
            "align_frame": report.align_frame, "trivial_esr_db": trivial,
        }, fh, indent=1)
        fh.write("\n")
    _write_manifest(out, "validate", {"align": args.align,
                                      "rate_scale": args.rate_scale},
                    [metrics_path])
    return EXIT_OK


# -- infer -------------------------------------------------------------------


def cmd_infer(args) -> int:
    out = _out_dir(args)
    params = diffmodel.load_params(args.params)
    rate, x = audio_io.read_wav(args.input)
    _require_rate(rate, args.input)
    y = tdengine.process(params, x, rate_scale=args.rate_scale,
                         lfo_mode=args.lfo_mode)
    out_wav = audio_io.write_wav(out / args.name, rate, y)
    arts = [out_wav]
    # log the rendered per-channel control signals at the frame rate
    if args.lfo_mode == "wavetable":
        wavetables = tdengine.channel_wavetables(params)
        cols, header = [], ["frame"]
        n_frames = x.size // params.frame_len
        centres = ((np.arange(n_frames) + 0.5) * params.frame_len).astype(np.intp)
        for i, wt in enumerate(wavetables):
            control = tdengine.render_lfo(wt, args.rate_scale, x.size)
            header.append(f"control_ch{i}")
            cols.append(control[centres])
        if cols:
            control_csv = audio_io.write_series_csv(
                out / "control.csv", header, [np.arange(n_frames)] + cols)
            control_png = plots.save_control_plot(
                out / "control.png",
                {h: c for h, c in zip(header[1:], cols)},
                ylabel="control value")
            arts += [control_csv, control_png]
    _write_manifest(out, "infer", {"rate_scale": args.rate_scale,
                                   "lfo_mode": args.lfo_mode}, arts)
    print(f"wrote {out_wav}")
    return EXIT_OK


# -- analyze -------------------------------------------------------------------


def _analysis_spectrum(args) -> np.ndarray:
    n_kernel = args.Nprime if args.Nprime is not None else 1
    if args.kernel == "flat":
        return np.ones(args.N // 2 + 1, dtype=np.complex128)
    kernel = signals.make_kernel(args.kernel.replace("-", "_"), n_kernel, args.N)
    frame = np.zeros(args.N)
    frame[: kernel.length] = kernel.samples
    return spectral.rfft(frame)


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    arts = []
    if args.what == "delay-surface":
        x_spec = _analysis_spectrum(args)
        if args.per_bin:
            k, dhat, gamma = analysis.gamma_surface(args.D, args.N)
            csv_path = analysis.export_gamma(k, dhat, gamma, out / "gamma_surface.csv")
            png = plots.save_gamma_plot(csv_path, out / "gamma_surface.png")
            arts += [csv_path, png, plots.write_sidecar(csv_path, png)]
        surface = analysis.delay_loss_surface(args.D, x_spec)
        csv_path = analysis.export_surface(surface, out / "delay_surface.csv")
        png = plots.save_surface_plot(csv_path, out / "delay_surface.png", "Dhat")
        arts += [csv_path, png, plots.write_sidecar(csv_path, png)]
    elif args.what == "apf-surface":
        x_spec = _analysis_spectrum(args)
        phat = 1.0 - np.geomspace(1e-3, 1.9, args.points)
        surface = analysis.apf_loss_surface(args.pole, args.K, x_spec, phat)
        csv_path = analysis.export_surface(surface, out / "apf_surface.csv")
        png = plots.save_surface_plot(csv_path, out / "apf_surface.png",
                                      "1 - pole")
        arts += [csv_path, png, plots.write_sidecar(csv_path, png)]
    elif args.what == "descend":
        x_spec = _analysis_spectrum(args)
        result = analysis.descend_delay(args.D0, args.D, x_spec,
                                        steps=args.steps, lr=args.lr)
        csv_path = analysis.export_trajectory(result.trajectory,
                                              out / "descent.csv")
        png = plots.save_trajectory_plot(csv_path, out / "descent.png",
                                         target=args.D)
        arts += [csv_path, png, plots.write_sidecar(csv_path, png)]
        print(f"descent finished at Dhat = {result.final:.4f} "
              f"(target {args.D}, |error| = {abs(result.final - args.D):.4f})")
    _write_manifest(out, f"analyze {args.what}", {
        k: v for k, v in vars(args).items()
        if k not in ("func", "command", "out_dir") and v is not None
    }, arts)
    print(f"wrote {len(arts)} artifacts to {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modfit",
        description="Gradient-based system identification for modulation effects",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help="output directory "
                        "(default: $MODFIT_OUTDIR or '.')")

    p = sub.add_parser("gen", parents=[common],
                       help="generate a kernel and repeated-frame training input")
    p.add_argument("--kind", required=True,
                   choices=["tri", "lin-chirp", "ap-chirp"])
    p.add_argument("--N", type=int, required=True, help="frame length")
    p.add_argument("--Nprime", type=int, help="kernel length (default N/2)")
    p.add_argument("--L", type=int, default=2**18, help="total signal length")
    p.add_argument("--sample-rate", type=int, default=44100)
    p.add_argument("--csv", action="store_true",
                   help="also write the framed input as CSV")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("make-target", parents=[common],
                       help="render a digital toy flanger/phaser target")
    p.add_argument("--kind", required=True, choices=["flanger", "phaser"])
    p.add_argument("--input", required=True)
    p.add_argument("--name", default="target.wav")
    p.add_argument("--rate-hz", type=float, default=0.5, dest="rate_hz")
    p.add_argument("--N", type=int, default=1024)
    p.add_argument("--delay-min", type=float, default=0.0, dest="delay_min",
                   help="flanger sweep floor in samples")
    p.add_argument("--depth", type=float, default=None,
                   help="flanger sweep span in samples (default N/2)")
    p.add_argument("--f-lo", type=float, default=100.0, dest="f_lo")
    p.add_argument("--f-hi", type=float, default=4000.0, dest="f_hi")
    p.add_argument("--feedback", type=float, default=0.5)
    p.add_argument("--apf-count", type=int, default=6, dest="apf_count")
    p.set_defaults(func=cmd_make_target)

    p = sub.add_parser("train", parents=[common],
                       help="train against an input/target WAV pair")
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--val-input", dest="val_input")
    p.add_argument("--val-target", dest="val_target")
    p.add_argument("--config", help="JSON config file (fields of TrainConfig "
                   "plus optional 'profile')")
    p.add_argument("--profile", choices=list(trainer.PROFILES), default="desk")
    p.add_argument("--variant", choices=[v.value for v in diffmodel.Variant])
    p.add_argument("--fb-config", dest="fb_config",
                   choices=[f.value for f in diffmodel.FeedbackConfig])
    p.add_argument("--channels", type=int)
    p.add_argument("--apf-count", type=int, dest="apf_count")
    p.add_argument("--N", type=int, dest="frame_len")
    p.add_argument("--kernel-len", type=int, dest="kernel_len")
    p.add_argument("--input-kind", dest="input_kind",
                   choices=list(signals.KERNEL_KINDS))
    p.add_argument("--preemph", dest="preemph_kind", choices=["none", "tri"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--seeds", type=int, dest="num_seeds")
    p.add_argument("--seed-base", type=int, dest="seed_base")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-align", action="store_true",
                   help="skip the LFO phase-alignment search in validation")
    p.set_defaults(func=cmd_train, signal_len=None)

    p = sub.add_parser("validate", parents=[common],
                       help="score a trained model against a WAV pair")
    p.add_argument("--params", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--align", action="store_true")
    p.add_argument("--rate-scale", type=float, default=1.0, dest="rate_scale")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("infer", parents=[common],
                       help="render audio through a trained model")
    p.add_argument("--params", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--name", default="output.wav")
    p.add_argument("--rate-scale", type=float, default=1.0, dest="rate_scale")
    p.add_argument("--lfo-mode", choices=["wavetable", "frame-interp"],
                   default="wavetable", dest="lfo_mode")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("analyze", parents=[common],
                       help="export loss-surface and descent studies")
    p.add_argument("what", choices=["delay-surface", "apf-surface", "descend"])
    p.add_argument("--D", type=float, default=100.0, help="target delay")
    p.add_argument("--D0", type=float, default=80.0, help="descent start")
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--kernel", choices=["flat", "tri", "lin-chirp", "ap-chirp"],
                   default="flat")
    p.add_argument("--Nprime", type=int)
    p.add_argument("--K", type=int, default=4, help="all-pass section count")
    p.add_argument("--pole", type=float, default=0.6, help="target pole")
    p.add_argument("--points", type=int, default=400)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--per-bin", action="store_true", dest="per_bin",
                   help="also export the per-bin (k, Dhat) surface")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
