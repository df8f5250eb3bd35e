"""Minimal trainable-network core on float64 numpy arrays.

Layers operate on (T, C) matrices: time along axis 0, channels along
axis 1. Batched helpers accept (B, T, C) stacks and are exact batch
versions of the per-window ops. All gradients are analytic and are
verified against central finite differences (see grad_check).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient stopped being finite."""


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named parameter tensors with matching gradient tensors.

    Insertion order is the canonical order used for serialization and
    gradient checking.
    """

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        value = np.array(value, dtype=np.float64)
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        current = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != current.shape:
            raise ShapeError(f"parameter {name!r} has shape {current.shape}, got {value.shape}")
        self._params[name] = value
        if self._grads[name].shape != value.shape:
            self._grads[name] = np.zeros_like(value)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def n_params(self) -> int:
        return sum(v.size for v in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            self[name] = value.copy()


# ---------------------------------------------------------------------------
# 1-D convolution, same zero padding, stride 1


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None):
    if weights.ndim != 3:
        raise ShapeError(f"weights must be (k, Cin, Cout), got shape {weights.shape}")
    k, c_in, c_out = weights.shape
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"input has {x.shape[-1]} channels, weights expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    return k, c_in, c_out


def conv1d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution of a (T, Cin) input.

    out[t, o] = bias[o] + sum_{d,i} weights[d, i, o] * x[t + d - (k-1)/2, i]
    with zeros outside [0, T). Output time length equals input time length.
    """
    k, _, c_out = _check_conv_shapes(x, weights, bias)
    t = x.shape[0]
    half = (k - 1) // 2
    padded = np.zeros((t + k - 1, x.shape[1]))
    padded[half : half + t] = x
    out = np.broadcast_to(bias, (t, c_out)).copy()
    for d in range(k):
        out += padded[d : d + t] @ weights[d]
    return out


def conv1d_backward(
    x: np.ndarray, weights: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward: (d_input, d_weights, d_bias)."""
    k, _, c_out = _check_conv_shapes(x, weights, None)
    t = x.shape[0]
    if upstream.shape != (t, c_out):
        raise ShapeError(f"upstream must have shape {(t, c_out)}, got {upstream.shape}")
    half = (k - 1) // 2
    x_padded = np.zeros((t + k - 1, x.shape[1]))
    x_padded[half : half + t] = x
    up_padded = np.zeros((t + k - 1, c_out))
    up_padded[half : half + t] = upstream

    d_input = np.zeros_like(x)
    d_weights = np.zeros_like(weights)
    for d in range(k):
        d_input += up_padded[k - 1 - d : k - 1 - d + t] @ weights[d].T
        d_weights[d] = x_padded[d : d + t].T @ upstream
    d_bias = upstream.sum(axis=0)
    return d_input, d_weights, d_bias


def conv1d_forward_batch(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """conv1d_forward over a (B, T, Cin) stack of independent windows."""
    k, _, c_out = _check_conv_shapes(x, weights, bias)
    b, t, c_in = x.shape
    half = (k - 1) // 2
    padded = np.zeros((b, t + k - 1, c_in))
    padded[:, half : half + t] = x
    out = np.broadcast_to(bias, (b, t, c_out)).copy()
    for d in range(k):
        out += padded[:, d : d + t] @ weights[d]
    return out


def conv1d_backward_batch(
    x: np.ndarray, weights: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched gradients; weight/bias grads are summed over the batch."""
    k, c_in, c_out = _check_conv_shapes(x, weights, None)
    b, t, _ = x.shape
    if upstream.shape != (b, t, c_out):
        raise ShapeError(f"upstream must have shape {(b, t, c_out)}, got {upstream.shape}")
    half = (k - 1) // 2
    x_padded = np.zeros((b, t + k - 1, c_in))
    x_padded[:, half : half + t] = x
    up_padded = np.zeros((b, t + k - 1, c_out))
    up_padded[:, half : half + t] = upstream

    d_input = np.zeros_like(x)
    d_weights = np.zeros_like(weights)
    for d in range(k):
        d_input += up_padded[:, k - 1 - d : k - 1 - d + t] @ weights[d].T
        d_weights[d] = np.tensordot(x_padded[:, d : d + t], upstream, axes=([0, 1], [0, 1]))
    d_bias = upstream.sum(axis=(0, 1))
    return d_input, d_weights, d_bias


# ---------------------------------------------------------------------------
# activations and loss


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Subgradient 0 at x = 0: passes upstream only where x > 0."""
    if x.shape != upstream.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {upstream.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def l2_loss(target: np.ndarray, output: np.ndarray) -> tuple[float, np.ndarray]:
    """Euclidean distance ||X - Xhat||_2 over all entries, and d/dXhat.

    At zero loss the gradient is defined as the zero tensor, removing
    the square-root singularity.
    """
    if target.shape != output.shape:
        raise ShapeError(f"shapes differ: {target.shape} vs {output.shape}")
    diff = output - target
    loss = float(np.sqrt(np.sum(diff * diff)))
    if loss == 0.0:
        return 0.0, np.zeros_like(output)
    return loss, diff / loss


# ---------------------------------------------------------------------------
# recurrent cell


def recurrent_cell_forward(
    x_t: np.ndarray, h_prev: np.ndarray, wx: np.ndarray, wh: np.ndarray, bias: np.ndarray
) -> np.ndarray:
    """Basic tanh cell: h_t = tanh(x_t @ Wx + h_prev @ Wh + b)."""
    if x_t.shape[-1] != wx.shape[0]:
        raise ShapeError(f"x_t has {x_t.shape[-1]} features, Wx expects {wx.shape[0]}")
    if h_prev.shape[-1] != wh.shape[0]:
        raise ShapeError(f"h_prev has {h_prev.shape[-1]} units, Wh expects {wh.shape[0]}")
    if wx.shape[1] != wh.shape[1] or bias.shape != (wh.shape[1],):
        raise ShapeError("Wx, Wh and bias disagree on the hidden width")
    return np.tanh(x_t @ wx + h_prev @ wh + bias)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam moments and hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, learning_rate: float = 1e-3) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One in-place Adam update from the gradients currently in params."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, value in params.items():
        g = params.grad(name)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r} at step {state.step}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        value -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict[str, float]


def grad_check(
    loss_fn: Callable[[], float], params: ParamStore, h: float = 1e-6
) -> GradCheckReport:
    """Central finite differences on every parameter coordinate.

    The gradients currently stored in params are taken as the analytic
    gradients of loss_fn at the current parameter values. The relative
    error per coordinate is |a - n| / max(|a|, |n|, 1e-12); the report
    carries the worst coordinate per tensor and overall.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    per_tensor: dict[str, float] = {}
    worst = 0.0
    for name, value in params.items():
        analytic = params.grad(name)
        flat = value.reshape(-1)
        grad_flat = analytic.reshape(-1)
        tensor_worst = 0.0
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            loss_plus = loss_fn()
            flat[idx] = original - h
            loss_minus = loss_fn()
            flat[idx] = original
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NonFiniteError(f"non-finite loss while probing {name!r}[{idx}]")
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            a = grad_flat[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            tensor_worst = max(tensor_worst, rel)
        per_tensor[name] = tensor_worst
        worst = max(worst, tensor_worst)
    return GradCheckReport(max_rel_error=worst, per_tensor=per_tensor)
