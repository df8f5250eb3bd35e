"""AUROC, inference timing and seeded Monte Carlo hyperparameter sweeps.

AUROC is computed in its Mann-Whitney form: the fraction of
(normal, abnormal) score pairs where the abnormal window scores higher,
ties counted 0.5. Pair counts are integers, so the result matches a
brute-force pair enumeration exactly.

A sweep runs fresh seeded train/calibrate/score trials over a grid of
hyperparameters and records one SweepPoint per trial; diverged trials
are kept with auroc = nan rather than silently dropped. All trial seeds
derive from one master seed, so a sweep is reproducible bit-exactly
(wall-clock timings aside).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .models import BaselineSpec, Model, NcaeSpec, build_baseline, build_ncae
from .pipeline import (
    TrainConfig,
    TrainingDivergedError,
    calibrate_threshold,
    score_windows,
    train,
)

# kernel_size value used for sweep points of models without a kernel axis
NO_KERNEL = 0


def auroc(normal_scores, abnormal_scores) -> float:
    """P(abnormal > normal) + 0.5 * P(tie) over all score pairs."""
    normal = np.asarray(normal_scores, dtype=np.float64)
    abnormal = np.asarray(abnormal_scores, dtype=np.float64)
    if normal.size == 0 or abnormal.size == 0:
        raise ValueError("both score lists must be nonempty")
    ordered = np.sort(normal)
    below = np.searchsorted(ordered, abnormal, side="left")
    below_or_tie = np.searchsorted(ordered, abnormal, side="right")
    greater = int(below.sum())
    ties = int((below_or_tie - below).sum())
    return (greater + 0.5 * ties) / (normal.size * abnormal.size)


def time_inference(model: Model, windows, repetitions: int = 1) -> tuple[float, float]:
    """Mean and std of wall-clock seconds per single-window forward pass.

    One untimed warm-up pass runs first.
    """
    if len(windows) < 1:
        raise ValueError("need at least one window")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    model.forward(windows[0])  # warm-up, excluded
    samples = []
    for _ in range(repetitions):
        for window in windows:
            start = time.perf_counter()
            model.forward(window)
            samples.append(time.perf_counter() - start)
    arr = np.asarray(samples)
    return float(arr.mean()), float(arr.std())


@dataclass(frozen=True)
class SweepPoint:
    kernel_size: int  # NO_KERNEL when the family has no kernel axis
    learning_rate: float
    trial: int
    seed: int
    auroc: float  # nan marks a diverged trial
    train_seconds: float
    infer_seconds_per_window: float

    def __post_init__(self):
        if not math.isnan(self.auroc) and not 0.0 <= self.auroc <= 1.0:
            raise ValueError("auroc must lie in [0, 1]")
        if self.train_seconds < 0 or self.infer_seconds_per_window < 0:
            raise ValueError("times must be nonnegative")

    @property
    def valid(self) -> bool:
        return not math.isnan(self.auroc)


@dataclass(frozen=True)
class SweepSurface:
    model_tag: str
    points: list[SweepPoint]

    def cells(self) -> list[tuple[int, float]]:
        seen = []
        for p in self.points:
            key = (p.kernel_size, p.learning_rate)
            if key not in seen:
                seen.append(key)
        return seen

    def cell_points(self, kernel_size: int, learning_rate: float) -> list[SweepPoint]:
        return [
            p
            for p in self.points
            if p.kernel_size == kernel_size and p.learning_rate == learning_rate
        ]


@dataclass(frozen=True)
class DatasetBundle:
    """Train/test MFCC windows: train on normal, test on normal and abnormal."""

    train_normal: list[np.ndarray]
    test_normal: list[np.ndarray]
    test_abnormal: list[np.ndarray]

    def __post_init__(self):
        if not (self.train_normal and self.test_normal and self.test_abnormal):
            raise ValueError("all three window sets must be nonempty")


def trial_seed(master_seed: int, family: str, kernel_size: int, lr_index: int, trial: int) -> int:
    """Deterministic per-trial seed derived from the master seed."""
    family_code = {"ncae": 0, "baseline": 1}[family]
    ss = np.random.SeedSequence([master_seed, family_code, kernel_size, lr_index, trial])
    return int(ss.generate_state(1)[0])


def run_trial(
    family: str,
    kernel_size: int,
    learning_rate: float,
    seed: int,
    dataset: DatasetBundle,
    train_config: TrainConfig | None = None,
    hidden_width: int = 64,
) -> tuple[float, float, float]:
    """One fresh train/calibrate/score run; returns (auroc, train_s, infer_s).

    auroc is nan when training diverges.
    """
    input_channels = dataset.train_normal[0].shape[1]
    if family == "ncae":
        model = build_ncae(
            NcaeSpec(
                kernel_size=kernel_size,
                hidden_width=hidden_width,
                input_channels=input_channels,
            ),
            seed=seed,
        )
    else:
        model = build_baseline(
            BaselineSpec(hidden_width=hidden_width, input_channels=input_channels), seed=seed
        )
    base = train_config or TrainConfig()
    config = TrainConfig(
        learning_rate=learning_rate,
        epochs=base.epochs,
        batch_size=base.batch_size,
        seed=seed,
        t_win=base.t_win,
        stride=base.stride,
    )
    start = time.perf_counter()
    try:
        train(model, dataset.train_normal, config)
    except TrainingDivergedError:
        return math.nan, time.perf_counter() - start, 0.0
    train_seconds = time.perf_counter() - start

    calibrate_threshold(score_windows(model, dataset.train_normal))  # part of the protocol
    infer_start = time.perf_counter()
    normal_scores = score_windows(model, dataset.test_normal)
    abnormal_scores = score_windows(model, dataset.test_abnormal)
    n_scored = len(normal_scores) + len(abnormal_scores)
    infer_seconds = (time.perf_counter() - infer_start) / n_scored
    return auroc(normal_scores, abnormal_scores), train_seconds, infer_seconds


def monte_carlo_sweep(
    family: str,
    kernel_sizes,
    learning_rates,
    trials: int,
    dataset: DatasetBundle,
    master_seed: int = 0,
    train_config: TrainConfig | None = None,
    hidden_width: int = 64,
) -> SweepSurface:
    """Grid x trials sweep of fresh seeded runs.

    For the baseline family the kernel axis collapses to the single
    coordinate NO_KERNEL regardless of kernel_sizes.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if family not in ("ncae", "baseline"):
        raise ValueError(f"unknown model family {family!r}")
    kernels = list(kernel_sizes) if family == "ncae" else [NO_KERNEL]
    lrs = list(learning_rates)
    if not kernels or not lrs:
        raise ValueError("grid must be nonempty")

    points = []
    for kernel in kernels:
        for lr_index, lr in enumerate(lrs):
            for trial in range(trials):
                seed = trial_seed(master_seed, family, kernel, lr_index, trial)
                auroc_value, train_s, infer_s = run_trial(
                    family,
                    kernel if family == "ncae" else NO_KERNEL,
                    lr,
                    seed,
                    dataset,
                    train_config=train_config,
                    hidden_width=hidden_width,
                )
                points.append(
                    SweepPoint(
                        kernel_size=kernel,
                        learning_rate=lr,
                        trial=trial,
                        seed=seed,
                        auroc=auroc_value,
                        train_seconds=train_s,
                        infer_seconds_per_window=infer_s,
                    )
                )
    return SweepSurface(model_tag=family, points=points)


@dataclass(frozen=True)
class CellSummary:
    kernel_size: int
    learning_rate: float
    n_valid: int
    n_invalid: int
    mean_auroc: float
    std_auroc: float
    mean_train_seconds: float
    mean_infer_seconds: float

    @property
    def all_invalid(self) -> bool:
        return self.n_valid == 0


@dataclass(frozen=True)
class SweepSummary:
    model_tag: str
    cells: list[CellSummary]
    best: CellSummary | None = field(default=None)


def summarize(surface: SweepSurface) -> SweepSummary:
    """Per-cell mean and population std of AUROC and timings, plus the best cell.

    Best cell = highest mean AUROC, ties broken by lower mean inference
    time. Cells whose trials all diverged are flagged (all_invalid) and
    excluded from the best-cell choice.
    """
    if not surface.points:
        raise ValueError("cannot summarize an empty surface")
    cells = []
    for kernel, lr in surface.cells():
        pts = surface.cell_points(kernel, lr)
        valid = [p for p in pts if p.valid]
        if valid:
            aurocs = np.array([p.auroc for p in valid])
            trains = np.array([p.train_seconds for p in valid])
            infers = np.array([p.infer_seconds_per_window for p in valid])
            cells.append(
                CellSummary(
                    kernel_size=kernel,
                    learning_rate=lr,
                    n_valid=len(valid),
                    n_invalid=len(pts) - len(valid),
                    mean_auroc=float(aurocs.mean()),
                    std_auroc=float(aurocs.std()),
                    mean_train_seconds=float(trains.mean()),
                    mean_infer_seconds=float(infers.mean()),
                )
            )
        else:
            cells.append(
                CellSummary(
                    kernel_size=kernel,
                    learning_rate=lr,
                    n_valid=0,
                    n_invalid=len(pts),
                    mean_auroc=math.nan,
                    std_auroc=math.nan,
                    mean_train_seconds=math.nan,
                    mean_infer_seconds=math.nan,
                )
            )
    candidates = [c for c in cells if not c.all_invalid]
    best = (
        min(candidates, key=lambda c: (-c.mean_auroc, c.mean_infer_seconds))
        if candidates
        else None
    )
    return SweepSummary(model_tag=surface.model_tag, cells=cells, best=best)


def export_surface_csv(surface: SweepSurface, path) -> None:
    """One row per SweepPoint, ordered by (kernel, learning rate, trial)."""
    rows = sorted(surface.points, key=lambda p: (p.kernel_size, p.learning_rate, p.trial))
    with open(path, "w") as fh:
        fh.write(
            "kernel_size,learning_rate,trial,seed,auroc,train_seconds,infer_seconds_per_window\n"
        )
        for p in rows:
            fh.write(
                f"{p.kernel_size},{p.learning_rate:.17g},{p.trial},{p.seed},"
                f"{p.auroc:.17g},{p.train_seconds:.17g},{p.infer_seconds_per_window:.17g}\n"
            )


def parse_surface_csv(path, model_tag: str) -> SweepSurface:
    """Inverse of export_surface_csv."""
    points = []
    with open(path) as fh:
        header = fh.readline().strip()
        expected = "kernel_size,learning_rate,trial,seed,auroc,train_seconds,infer_seconds_per_window"
        if header != expected:
            raise ValueError(f"unexpected surface CSV header: {header!r}")
        for line in fh:
            k, lr, trial, seed, a, ts, inf = line.strip().split(",")
            points.append(
                SweepPoint(
                    kernel_size=int(k),
                    learning_rate=float(lr),
                    trial=int(trial),
                    seed=int(seed),
                    auroc=float(a),
                    train_seconds=float(ts),
                    infer_seconds_per_window=float(inf),
                )
            )
    return SweepSurface(model_tag=model_tag, points=points)


def render_summary_text(summary: SweepSummary) -> str:
    """Aligned plain-text table of a sweep summary."""
    lines = [f"model: {summary.model_tag}"]
    header = (
        f"{'kernel':>6} {'learning_rate':>13} {'auroc mean±std':>22} "
        f"{'train_s':>9} {'infer_s/win':>12} {'trials':>7}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for c in summary.cells:
        kernel = "-" if c.kernel_size == NO_KERNEL else str(c.kernel_size)
        if c.all_invalid:
            body = f"{'ALL-DIVERGED':>22} {'-':>9} {'-':>12}"
        else:
            body = (
                f"{c.mean_auroc:.5f} ± {c.std_auroc:.5f}".rjust(22)
                + f" {c.mean_train_seconds:9.3f} {c.mean_infer_seconds:12.6f}"
            )
        lines.append(
            f"{kernel:>6} {c.learning_rate:>13.6g} {body} {c.n_valid:>3}/{c.n_valid + c.n_invalid}"
        )
    if summary.best is not None:
        b = summary.best
        kernel = "-" if b.kernel_size == NO_KERNEL else str(b.kernel_size)
        lines.append(
            f"best cell: kernel={kernel} lr={b.learning_rate:g} "
            f"auroc={b.mean_auroc:.5f} ± {b.std_auroc:.5f}"
        )
    else:
        lines.append("best cell: none (all cells diverged)")
    return "\n".join(lines)


def export_summary_csv(summary: SweepSummary, path) -> None:
    with open(path, "w") as fh:
        fh.write(
            "kernel_size,learning_rate,n_valid,n_invalid,mean_auroc,std_auroc,"
            "mean_train_seconds,mean_infer_seconds_per_window\n"
        )
        for c in summary.cells:
            fh.write(
                f"{c.kernel_size},{c.learning_rate:.17g},{c.n_valid},{c.n_invalid},"
                f"{c.mean_auroc:.17g},{c.std_auroc:.17g},"
                f"{c.mean_train_seconds:.17g},{c.mean_infer_seconds:.17g}\n"
            )
