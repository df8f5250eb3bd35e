"""Training, threshold calibration, anomaly scoring and streaming detection.

The anomaly score of a window is the Euclidean distance between the
window and its reconstruction. The decision boundary is calibrated from
the training-score distribution as theta = mu + 1.5 * sigma (Tukey's
fences over reconstruction losses, population standard deviation); a
window is flagged anomalous iff its score exceeds theta strictly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import neuralnet as nn
from .models import Model

TUKEY_FACTOR = 1.5


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss or gradient; the model holds the last good state."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    t_win: int = 32
    stride: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class ThresholdCalibration:
    """Mean, population standard deviation and decision boundary of training scores."""

    mu: float
    sigma: float
    theta: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class DetectionRecord:
    window_index: int
    score: float
    decision: str  # "normal" | "anomalous"
    latency_seconds: float

    def __post_init__(self):
        if self.score < 0 or self.latency_seconds < 0:
            raise ValueError("score and latency must be nonnegative")
        if self.decision not in ("normal", "anomalous"):
            raise ValueError(f"bad decision {self.decision!r}")


def train(
    model: Model, windows: list[np.ndarray], config: TrainConfig
) -> tuple[Model, list[float]]:
    """Minimize the mean per-window reconstruction loss with Adam.

    Window order is reshuffled every epoch by a generator seeded from
    config.seed, so identical (model, windows, config) runs are
    bit-identical. Returns the model and the per-epoch mean loss.
    On divergence the parameters are rolled back to the last finite step
    and TrainingDivergedError is raised.
    """
    if not windows:
        raise ValueError("windows must be nonempty")
    shape = windows[0].shape
    if any(w.shape != shape for w in windows):
        raise ValueError("all training windows must share one shape")

    stacked = np.stack(windows)
    rng = np.random.default_rng(config.seed)
    state = nn.AdamState.for_params(model.params, learning_rate=config.learning_rate)
    history: list[float] = []
    last_good = model.params.copy_values()

    for epoch in range(config.epochs):
        order = rng.permutation(len(windows))
        epoch_losses: list[float] = []
        for start in range(0, len(windows), config.batch_size):
            batch = stacked[order[start : start + config.batch_size]]
            b = batch.shape[0]
            model.params.zero_grads()
            output = model.forward_batch(batch)
            diff = output - batch
            norms = np.sqrt(np.sum(diff * diff, axis=(1, 2)))
            batch_loss = float(norms.mean())
            if not np.isfinite(batch_loss):
                model.params.load_values(last_good)
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch}: mean per-epoch losses so far {history}"
                )
            # mean-of-norms loss: d/dXhat_b = (Xhat_b - X_b) / (B * ||..||_b)
            safe = np.where(norms > 0.0, norms, 1.0)
            upstream = diff / (b * safe)[:, None, None]
            upstream[norms == 0.0] = 0.0
            model.backward_batch(upstream)
            last_good = model.params.copy_values()
            try:
                nn.adam_step(model.params, state)
            except nn.NonFiniteError as exc:
                model.params.load_values(last_good)
                raise TrainingDivergedError(str(exc)) from exc
            epoch_losses.append(batch_loss)
        history.append(float(np.mean(epoch_losses)))
    return model, history


def anomaly_score(model: Model, window: np.ndarray) -> float:
    """Euclidean distance between a window and its reconstruction."""
    loss, _ = nn.l2_loss(window, model.forward(window))
    return loss


def score_windows(model: Model, windows: Iterable[np.ndarray]) -> list[float]:
    return [anomaly_score(model, w) for w in windows]


def calibrate_threshold(training_scores) -> ThresholdCalibration:
    """Tukey's-fences boundary over training scores: theta = mu + 1.5 * sigma."""
    scores = np.asarray(training_scores, dtype=np.float64)
    if scores.size < 2:
        raise ValueError("need at least 2 training scores to calibrate")
    mu = float(np.mean(scores))
    sigma = float(np.std(scores))  # population, no Bessel correction
    return ThresholdCalibration(mu=mu, sigma=sigma, theta=mu + TUKEY_FACTOR * sigma)


def detect_stream(
    model: Model,
    calibration: ThresholdCalibration,
    frames: Iterable[np.ndarray],
    t_win: int,
    stride: int = 1,
) -> Iterator[DetectionRecord]:
    """Score a live frame stream with a rolling window of t_win frames.

    After the first t_win frames (warm-up) a record is emitted every
    `stride` frames. A stream shorter than t_win yields nothing.
    Latency is wall-clock from frame availability to decision emission.
    """
    if t_win < 1:
        raise ValueError("t_win must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    buffer: list[np.ndarray] = []
    seen = 0
    emitted = 0
    for frame in frames:
        arrived = time.perf_counter()
        seen += 1
        buffer.append(np.asarray(frame, dtype=np.float64))
        if len(buffer) > t_win:
            buffer.pop(0)
        if seen < t_win or (seen - t_win) % stride != 0:
            continue
        window = np.stack(buffer)
        score = anomaly_score(model, window)
        decision = "anomalous" if score > calibration.theta else "normal"
        latency = time.perf_counter() - arrived
        yield DetectionRecord(
            window_index=emitted, score=score, decision=decision, latency_seconds=latency
        )
        emitted += 1


def export_detections_csv(records: Iterable[DetectionRecord], theta: float, path) -> None:
    """Detection log: window_index, score, theta, decision, latency_seconds."""
    with open(path, "w") as fh:
        fh.write("window_index,score,theta,decision,latency_seconds\n")
        for rec in records:
            fh.write(
                f"{rec.window_index},{rec.score:.17g},{theta:.17g},"
                f"{rec.decision},{rec.latency_seconds:.17g}\n"
            )
