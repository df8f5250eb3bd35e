"""Command-line entry point: gen-data, train, detect, sweep, grad-check.

Every command resolves its configuration as flags > config file
(line-oriented key=value) > built-in defaults, and writes a `manifest`
JSON file next to its outputs with the fully resolved config, master
seed and tool version. Rerunning a command from its manifest reproduces
all non-timing outputs bit-exactly.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import CANONICAL_RATE, WavError, encode_wav, parse_wav, resample_linear
from .evaluation import (
    NO_KERNEL,
    monte_carlo_sweep,
    export_summary_csv,
    export_surface_csv,
    render_summary_text,
    summarize,
)
from .mfcc import MfccConfig, extract_mfcc
from .models import (
    BaselineSpec,
    CheckpointError,
    NcaeSpec,
    build_baseline,
    build_ncae,
    gradient_check_model,
    load_model,
    save_model,
)
from .pipeline import (
    TrainConfig,
    TrainingDivergedError,
    calibrate_threshold,
    detect_stream,
    export_detections_csv,
    score_windows,
    train,
)
from .mfcc import window_matrix
from .synthgen import RoadCondition, SynthConfig, gen_road_noise, make_dataset

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

GRADCHECK_TOLERANCE = 1e-6

_UNSET = object()


class UsageError(Exception):
    """Bad flag or config value; maps to exit code 2."""


def _load_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"--config: line {lineno} is not key=value: {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(args: argparse.Namespace, defaults: dict[str, object]) -> dict[str, object]:
    """flags > config file > defaults, with config values coerced to the default's type."""
    file_values = _load_config_file(getattr(args, "config", None))
    resolved: dict[str, object] = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, _UNSET)
        if flag_value is not _UNSET and flag_value is not None:
            resolved[key] = flag_value
        elif key in file_values:
            raw = file_values[key]
            if isinstance(default, bool):
                resolved[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                resolved[key] = int(raw)
            elif isinstance(default, float):
                resolved[key] = float(raw)
            else:
                resolved[key] = raw
        else:
            resolved[key] = default
    return resolved


def _write_manifest(out_dir: Path, command: str, config: dict, master_seed: int | None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "master_seed": master_seed,
        "tool_version": __version__,
    }
    (out_dir / "manifest").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _ensure_out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_clip(path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise RuntimeError(f"cannot read audio file {path}: {exc}") from exc
    return resample_linear(parse_wav(data), CANONICAL_RATE)


def _mfcc_config_from(resolved: dict) -> MfccConfig:
    return MfccConfig(n_coeffs=resolved["n_coeffs"], n_mels=resolved["n_mels"])


# ---------------------------------------------------------------------------
# gen-data

GEN_DEFAULTS = {
    "seed": 0,
    "minutes": 2.0,
    "hiss_gain": 0.35,
    "tilt": 3.0,
    "engine_f0": 90.0,
    "harmonics": 12,
}


def cmd_gen_data(args: argparse.Namespace) -> int:
    resolved = _resolve(args, GEN_DEFAULTS)
    if resolved["minutes"] <= 0:
        raise UsageError("--minutes must be positive")
    out = _ensure_out_dir(args.out)
    config = SynthConfig(
        duration_seconds=resolved["minutes"] * 60.0,
        seed=resolved["seed"],
        wet_hiss_gain=resolved["hiss_gain"],
        wet_tilt_db_per_octave=resolved["tilt"],
        engine_f0=resolved["engine_f0"],
        harmonics=resolved["harmonics"],
    )
    for condition in (RoadCondition.DRY, RoadCondition.WET):
        clip = gen_road_noise(condition, config)
        (out / f"{condition.value}.wav").write_bytes(encode_wav(clip))
        print(f"wrote {out / f'{condition.value}.wav'} ({clip.duration:.1f} s)")
    _write_manifest(out, "gen-data", resolved, resolved["seed"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

TRAIN_DEFAULTS = {
    "model": "ncae",
    "kernel": 3,
    "hidden": 64,
    "lr": 1e-3,
    "epochs": 30,
    "batch": 32,
    "seed": 0,
    "t_win": 32,
    "stride": 16,
    "n_coeffs": 13,
    "n_mels": 40,
}


def cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve(args, TRAIN_DEFAULTS)
    if resolved["model"] not in ("ncae", "baseline"):
        raise UsageError("--model must be ncae or baseline")
    if resolved["model"] == "ncae" and (resolved["kernel"] < 1 or resolved["kernel"] % 2 == 0):
        raise UsageError("--kernel must be odd and >= 1")
    if resolved["epochs"] < 1:
        raise UsageError("--epochs must be >= 1")

    clip = _load_clip(args.audio)
    mfcc_config = _mfcc_config_from(resolved)
    seq = extract_mfcc(clip, mfcc_config)
    windows = window_matrix(seq.frames, resolved["t_win"], resolved["stride"])

    if resolved["model"] == "ncae":
        model = build_ncae(
            NcaeSpec(
                kernel_size=resolved["kernel"],
                hidden_width=resolved["hidden"],
                input_channels=resolved["n_coeffs"],
            ),
            seed=resolved["seed"],
        )
    else:
        model = build_baseline(
            BaselineSpec(
                hidden_width=resolved["hidden"], input_channels=resolved["n_coeffs"]
            ),
            seed=resolved["seed"],
        )

    config = TrainConfig(
        learning_rate=resolved["lr"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch"],
        seed=resolved["seed"],
        t_win=resolved["t_win"],
        stride=resolved["stride"],
    )
    _, history = train(model, windows, config)
    calibration = calibrate_threshold(score_windows(model, windows))

    out = _ensure_out_dir(args.out)
    save_model(model, out / "model.ckpt")
    (out / "calibration.json").write_text(
        json.dumps(
            {
                "mu": calibration.mu,
                "sigma": calibration.sigma,
                "theta": calibration.theta,
                "t_win": resolved["t_win"],
                "mfcc": dataclasses.asdict(mfcc_config),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    with open(out / "loss_history.csv", "w") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(history):
            fh.write(f"{epoch},{loss:.17g}\n")
    _write_manifest(out, "train", resolved, resolved["seed"])
    print(f"trained {resolved['model']} on {len(windows)} windows; theta={calibration.theta:.6g}")
    print(f"wrote {out / 'model.ckpt'}, calibration.json, loss_history.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# detect

DETECT_DEFAULTS = {
    "stride": 1,
}


def cmd_detect(args: argparse.Namespace) -> int:
    resolved = _resolve(args, DETECT_DEFAULTS)
    if resolved["stride"] < 1:
        raise UsageError("--stride must be >= 1")
    model = load_model(args.checkpoint)
    try:
        calib_data = json.loads(Path(args.calibration).read_text())
        mfcc_config = MfccConfig(**calib_data["mfcc"])
        t_win = int(calib_data["t_win"])
        from .pipeline import ThresholdCalibration

        calibration = ThresholdCalibration(
            mu=calib_data["mu"], sigma=calib_data["sigma"], theta=calib_data["theta"]
        )
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise RuntimeError(f"cannot load calibration {args.calibration}: {exc}") from exc
    if model.spec.input_channels != mfcc_config.n_coeffs:
        raise RuntimeError(
            f"incompatible checkpoint: model expects {model.spec.input_channels} channels, "
            f"calibration produces {mfcc_config.n_coeffs} MFCC coefficients"
        )

    clip = _load_clip(args.audio)
    out = _ensure_out_dir(args.out)
    if clip.samples.size < mfcc_config.frame_len:
        records = []  # shorter than one frame: empty stream
    else:
        seq = extract_mfcc(clip, mfcc_config)
        records = list(
            detect_stream(model, calibration, iter(seq.frames), t_win, stride=resolved["stride"])
        )
    export_detections_csv(records, calibration.theta, out / "detections.csv")
    _write_manifest(out, "detect", resolved, None)
    anomalous = sum(1 for r in records if r.decision == "anomalous")
    print(f"{len(records)} windows scored, {anomalous} anomalous (theta={calibration.theta:.6g})")
    print(f"wrote {out / 'detections.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_DEFAULTS = {
    "trials": 10,
    "kernels": "3,5,7",
    "lrs": "1e-2,1e-3,1e-4",
    "master_seed": 0,
    "epochs": 30,
    "batch": 32,
    "hidden": 64,
    "t_win": 32,
    "stride": 16,
    "train_fraction": 0.75,
    "n_coeffs": 13,
    "n_mels": 40,
}


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from exc


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from exc


def cmd_sweep(args: argparse.Namespace) -> int:
    resolved = _resolve(args, SWEEP_DEFAULTS)
    if resolved["trials"] < 1:
        raise UsageError("--trials must be >= 1")
    kernels = _parse_int_list(resolved["kernels"], "--kernels")
    lrs = _parse_float_list(resolved["lrs"], "--lrs")
    if not kernels or not lrs:
        raise UsageError("--kernels and --lrs must be nonempty")
    if any(k < 1 or k % 2 == 0 for k in kernels):
        raise UsageError("--kernels must all be odd and >= 1")
    if any(lr <= 0 for lr in lrs):
        raise UsageError("--lrs must all be positive")

    mfcc_config = _mfcc_config_from(resolved)
    dry = _load_clip(args.dry)
    wet = _load_clip(args.wet)
    from .audio_io import AudioClip
    from .mfcc import window_matrix as _wm

    cut = round(dry.samples.size * resolved["train_fraction"])
    train_clip = AudioClip(samples=dry.samples[:cut], sample_rate=dry.sample_rate)
    test_clip = AudioClip(samples=dry.samples[cut:], sample_rate=dry.sample_rate)
    from .evaluation import DatasetBundle

    dataset = DatasetBundle(
        train_normal=_wm(extract_mfcc(train_clip, mfcc_config).frames, resolved["t_win"], resolved["stride"]),
        test_normal=_wm(extract_mfcc(test_clip, mfcc_config).frames, resolved["t_win"], resolved["stride"]),
        test_abnormal=_wm(extract_mfcc(wet, mfcc_config).frames, resolved["t_win"], resolved["stride"]),
    )

    base_config = TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch"],
        t_win=resolved["t_win"],
        stride=resolved["stride"],
    )
    out = _ensure_out_dir(args.out)
    summaries = []
    for family in ("ncae", "baseline"):
        surface = monte_carlo_sweep(
            family,
            kernels,
            lrs,
            resolved["trials"],
            dataset,
            master_seed=resolved["master_seed"],
            train_config=base_config,
            hidden_width=resolved["hidden"],
        )
        export_surface_csv(surface, out / f"{family}_surface.csv")
        summary = summarize(surface)
        summaries.append(summary)
        print(f"wrote {out / f'{family}_surface.csv'} ({len(surface.points)} points)")

    text = "\n\n".join(render_summary_text(s) for s in summaries)
    (out / "summary.txt").write_text(text + "\n")
    for summary in summaries:
        export_summary_csv(summary, out / f"{summary.model_tag}_summary.csv")
    _write_manifest(out, "sweep", resolved, resolved["master_seed"])
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# grad-check

GRADCHECK_DEFAULTS = {
    "t_win": 8,
    "channels": 4,
    "hidden": 8,
    "seed": 0,
}


def cmd_grad_check(args: argparse.Namespace) -> int:
    resolved = _resolve(args, GRADCHECK_DEFAULTS)
    rng = np.random.default_rng(resolved["seed"])
    window = rng.standard_normal((resolved["t_win"], resolved["channels"]))

    worst = 0.0
    for label, model in (
        (
            "ncae (k=3)",
            build_ncae(
                NcaeSpec(
                    kernel_size=3,
                    hidden_width=resolved["hidden"],
                    input_channels=resolved["channels"],
                ),
                seed=resolved["seed"],
            ),
        ),
        (
            "baseline",
            build_baseline(
                BaselineSpec(
                    hidden_width=resolved["hidden"], input_channels=resolved["channels"]
                ),
                seed=resolved["seed"],
            ),
        ),
    ):
        if args.inject_fault:
            # corrupt the analytic gradients by 10% to prove the detector trips
            model.params.zero_grads()
            out_batch = model.forward_batch(window[None])
            from . import neuralnet as nn

            _, d_out = nn.l2_loss(window[None], out_batch)
            model.backward_batch(d_out)
            for name in model.params.names():
                model.params.grad(name)[...] *= 1.10
            report = nn.grad_check(
                lambda m=model: __import__("roadnoise.models", fromlist=["model_loss"]).model_loss(
                    m, window
                ),
                model.params,
            )
        else:
            report = gradient_check_model(model, window)
        print(f"{label}: max rel err {report.max_rel_error:.3e}")
        for name, err in report.per_tensor.items():
            print(f"  {name}: {err:.3e}")
        worst = max(worst, report.max_rel_error)

    if worst >= GRADCHECK_TOLERANCE:
        print(f"FAIL: max rel err {worst:.3e} >= {GRADCHECK_TOLERANCE:g}")
        return EXIT_RUNTIME
    print(f"OK: max rel err {worst:.3e} < {GRADCHECK_TOLERANCE:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadnoise",
        description="Wet-road detection from driving noise: data generation, "
        "training, streaming detection, hyperparameter sweeps.",
    )
    parser.add_argument("--version", action="version", version=f"roadnoise {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic dry/wet WAV clips")
    p.add_argument("--seed", type=int)
    p.add_argument("--minutes", type=float)
    p.add_argument("--hiss-gain", dest="hiss_gain", type=float)
    p.add_argument("--tilt", type=float)
    p.add_argument("--engine-f0", dest="engine_f0", type=float)
    p.add_argument("--harmonics", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on normal (dry) audio")
    p.add_argument("--model", choices=["ncae", "baseline"])
    p.add_argument("--kernel", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--t-win", dest="t_win", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--n-coeffs", dest="n_coeffs", type=int)
    p.add_argument("--n-mels", dest="n_mels", type=int)
    p.add_argument("--config")
    p.add_argument("--audio", required=True, help="training WAV file (normal condition)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="stream audio through a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="Monte Carlo hyperparameter sweep of both families")
    p.add_argument("--trials", type=int)
    p.add_argument("--kernels")
    p.add_argument("--lrs")
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--t-win", dest="t_win", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--n-coeffs", dest="n_coeffs", type=int)
    p.add_argument("--n-mels", dest="n_mels", type=int)
    p.add_argument("--config")
    p.add_argument("--dry", required=True, help="dry (normal) WAV file")
    p.add_argument("--wet", required=True, help="wet (abnormal) WAV file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grad-check", help="verify analytic gradients of both families")
    p.add_argument("--t-win", dest="t_win", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--inject-fault", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WavError, CheckpointError, TrainingDivergedError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
