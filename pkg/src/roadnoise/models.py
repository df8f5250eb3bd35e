"""Model assembly: the non-compression auto-encoder and a recurrent baseline.

Both models map a (T, C) feature window to a reconstruction of the same
shape and are trained with the Euclidean reconstruction loss. The NCAE
is three same-padded 1-D convolutions (ReLU between, linear output) so
no layer ever shortens time or drops below the input channel width. The
baseline is three stacked tanh recurrent layers with an affine readout,
reconstructing the input sequence step by step.

Checkpoints use a small binary format (magic "NCAE", versioned JSON
header, float64 payload, trailing CRC32); see docs/checkpoint_format.md.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import neuralnet as nn

CHECKPOINT_MAGIC = b"NCAE"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint bytes cannot be decoded into a model."""


@dataclass(frozen=True)
class NcaeSpec:
    kernel_size: int = 3
    hidden_width: int = 64
    input_channels: int = 13
    depth: int = 3

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 1")
        if self.hidden_width < self.input_channels:
            raise ValueError(
                "hidden_width must be >= input_channels (the network never "
                "compresses below the input width)"
            )
        if self.depth != 3:
            raise ValueError("depth is fixed at 3")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")


@dataclass(frozen=True)
class BaselineSpec:
    hidden_width: int = 64
    input_channels: int = 13
    depth: int = 3

    def __post_init__(self):
        if self.depth != 3:
            raise ValueError("depth is fixed at 3")
        if self.hidden_width < 1 or self.input_channels < 1:
            raise ValueError("widths must be >= 1")


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    a = np.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape)


class Ncae:
    """Non-compressing reconstruction network of three 1-D convolutions."""

    tag = "ncae"

    def __init__(self, spec: NcaeSpec, params: nn.ParamStore):
        self.spec = spec
        self.params = params
        self._cache = None

    def _check_channels(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.spec.input_channels:
            raise nn.ShapeError(
                f"input has {x.shape[-1]} channels, model expects {self.spec.input_channels}"
            )

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Reconstruct a (B, T, Cin) stack; caches intermediates for backward."""
        self._check_channels(x)
        p = self.params
        z1 = nn.conv1d_forward_batch(x, p["conv1.weight"], p["conv1.bias"])
        a1 = nn.relu(z1)
        z2 = nn.conv1d_forward_batch(a1, p["conv2.weight"], p["conv2.bias"])
        a2 = nn.relu(z2)
        y = nn.conv1d_forward_batch(a2, p["conv3.weight"], p["conv3.bias"])
        self._cache = (x, z1, a1, z2, a2)
        return y

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_batch(x[None])[0]

    def backward_batch(self, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the input gradient."""
        if self._cache is None:
            raise RuntimeError("forward must run before backward")
        x, z1, a1, z2, a2 = self._cache
        p = self.params
        da2, dw3, db3 = nn.conv1d_backward_batch(a2, p["conv3.weight"], upstream)
        dz2 = nn.relu_backward(z2, da2)
        da1, dw2, db2 = nn.conv1d_backward_batch(a1, p["conv2.weight"], dz2)
        dz1 = nn.relu_backward(z1, da1)
        dx, dw1, db1 = nn.conv1d_backward_batch(x, p["conv1.weight"], dz1)
        for name, grad in (
            ("conv1.weight", dw1),
            ("conv1.bias", db1),
            ("conv2.weight", dw2),
            ("conv2.bias", db2),
            ("conv3.weight", dw3),
            ("conv3.bias", db3),
        ):
            p.grad(name)[...] += grad
        return dx

    def layer_outputs(self, x: np.ndarray) -> list[np.ndarray]:
        """Per-layer (T, C) outputs of a single window, in layer order."""
        self._check_channels(x)
        p = self.params
        a1 = nn.relu(nn.conv1d_forward(x, p["conv1.weight"], p["conv1.bias"]))
        a2 = nn.relu(nn.conv1d_forward(a1, p["conv2.weight"], p["conv2.bias"]))
        y = nn.conv1d_forward(a2, p["conv3.weight"], p["conv3.bias"])
        return [a1, a2, y]


class RecurrentBaseline:
    """Three stacked tanh recurrent layers with an affine readout."""

    tag = "baseline"

    def __init__(self, spec: BaselineSpec, params: nn.ParamStore):
        self.spec = spec
        self.params = params
        self._cache = None

    def _check_channels(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.spec.input_channels:
            raise nn.ShapeError(
                f"input has {x.shape[-1]} channels, model expects {self.spec.input_channels}"
            )

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Reconstruct a (B, T, Cin) stack; caches per-step states for BPTT."""
        self._check_channels(x)
        p = self.params
        b, t, _ = x.shape
        h_width = self.spec.hidden_width
        layer_inputs = []
        current = x
        hidden_seqs = []
        for layer in (1, 2, 3):
            wx = p[f"rnn{layer}.wx"]
            wh = p[f"rnn{layer}.wh"]
            bias = p[f"rnn{layer}.bias"]
            layer_inputs.append(current)
            h = np.zeros((b, h_width))
            seq = np.empty((b, t, h_width))
            for step in range(t):
                h = np.tanh(current[:, step] @ wx + h @ wh + bias)
                seq[:, step] = h
            hidden_seqs.append(seq)
            current = seq
        y = current @ p["readout.weight"] + p["readout.bias"]
        self._cache = (layer_inputs, hidden_seqs)
        return y

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_batch(x[None])[0]

    def backward_batch(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("forward must run before backward")
        layer_inputs, hidden_seqs = self._cache
        p = self.params
        b, t, _ = upstream.shape

        h3 = hidden_seqs[2]
        p.grad("readout.weight")[...] += np.tensordot(h3, upstream, axes=([0, 1], [0, 1]))
        p.grad("readout.bias")[...] += upstream.sum(axis=(0, 1))
        d_hidden = upstream @ p["readout.weight"].T

        for layer in (3, 2, 1):
            wx = p[f"rnn{layer}.wx"]
            wh = p[f"rnn{layer}.wh"]
            inputs = layer_inputs[layer - 1]
            outputs = hidden_seqs[layer - 1]
            d_wx = np.zeros_like(wx)
            d_wh = np.zeros_like(wh)
            d_bias = np.zeros_like(p[f"rnn{layer}.bias"])
            d_inputs = np.zeros_like(inputs)
            carry = np.zeros((b, wh.shape[0]))
            for step in range(t - 1, -1, -1):
                h_t = outputs[:, step]
                d_pre = (d_hidden[:, step] + carry) * (1.0 - h_t * h_t)
                d_wx += inputs[:, step].T @ d_pre
                if step > 0:
                    d_wh += outputs[:, step - 1].T @ d_pre
                d_bias += d_pre.sum(axis=0)
                d_inputs[:, step] = d_pre @ wx.T
                carry = d_pre @ wh.T
            p.grad(f"rnn{layer}.wx")[...] += d_wx
            p.grad(f"rnn{layer}.wh")[...] += d_wh
            p.grad(f"rnn{layer}.bias")[...] += d_bias
            d_hidden = d_inputs
        return d_hidden


Model = Ncae | RecurrentBaseline


def build_ncae(spec: NcaeSpec, seed: int) -> Ncae:
    """Seeded NCAE: conv(k, Cin->H) + ReLU, conv(k, H->H) + ReLU, conv(k, H->Cin)."""
    rng = np.random.default_rng(seed)
    k = spec.kernel_size
    c_in = spec.input_channels
    h = spec.hidden_width
    params = nn.ParamStore()
    params.add("conv1.weight", _uniform_init(rng, k * c_in, (k, c_in, h)))
    params.add("conv1.bias", np.zeros(h))
    params.add("conv2.weight", _uniform_init(rng, k * h, (k, h, h)))
    params.add("conv2.bias", np.zeros(h))
    params.add("conv3.weight", _uniform_init(rng, k * h, (k, h, c_in)))
    params.add("conv3.bias", np.zeros(c_in))
    return Ncae(spec, params)


def build_baseline(spec: BaselineSpec, seed: int) -> RecurrentBaseline:
    """Seeded recurrent baseline: three tanh layers plus affine readout."""
    rng = np.random.default_rng(seed)
    c_in = spec.input_channels
    h = spec.hidden_width
    params = nn.ParamStore()
    in_width = c_in
    for layer in (1, 2, 3):
        params.add(f"rnn{layer}.wx", _uniform_init(rng, in_width, (in_width, h)))
        params.add(f"rnn{layer}.wh", _uniform_init(rng, h, (h, h)))
        params.add(f"rnn{layer}.bias", np.zeros(h))
        in_width = h
    params.add("readout.weight", _uniform_init(rng, h, (h, c_in)))
    params.add("readout.bias", np.zeros(c_in))
    return RecurrentBaseline(spec, params)


def build_model(tag: str, spec: NcaeSpec | BaselineSpec, seed: int) -> Model:
    if tag == "ncae":
        return build_ncae(spec, seed)
    if tag == "baseline":
        return build_baseline(spec, seed)
    raise ValueError(f"unknown model tag {tag!r}")


# ---------------------------------------------------------------------------
# serialization


def _spec_to_dict(model: Model) -> dict:
    if model.tag == "ncae":
        s: NcaeSpec = model.spec
        return {
            "kernel_size": s.kernel_size,
            "hidden_width": s.hidden_width,
            "input_channels": s.input_channels,
            "depth": s.depth,
        }
    s = model.spec
    return {
        "hidden_width": s.hidden_width,
        "input_channels": s.input_channels,
        "depth": s.depth,
    }


def encode_model(model: Model) -> bytes:
    header = {
        "arch": model.tag,
        "spec": _spec_to_dict(model),
        "params": [
            {"name": name, "shape": list(value.shape)} for name, value in model.params.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(header_bytes))
    out += header_bytes
    for _, value in model.params.items():
        out += np.ascontiguousarray(value, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def decode_model(blob: bytes) -> Model:
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint: shorter than the fixed prelude")
    if blob[0:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[0:4]!r}: not a checkpoint of this format")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError("checksum failure: checkpoint bytes are corrupted")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header_end = 12 + header_len
    if header_end > len(blob) - 4:
        raise CheckpointError("truncated checkpoint: header extends past the payload")
    try:
        header = json.loads(blob[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc

    arch = header.get("arch")
    if arch == "ncae":
        spec = NcaeSpec(**header["spec"])
    elif arch == "baseline":
        spec = BaselineSpec(**header["spec"])
    else:
        raise CheckpointError(f"unknown architecture tag {arch!r}")

    params = nn.ParamStore()
    offset = header_end
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob) - 4:
            raise CheckpointError("truncated checkpoint: parameter payload cut short")
        value = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        params.add(entry["name"], value)
        offset += nbytes
    if offset != len(blob) - 4:
        raise CheckpointError("checkpoint payload longer than the header declares")

    if arch == "ncae":
        model = Ncae(spec, params)
    else:
        model = RecurrentBaseline(spec, params)
    _validate_param_shapes(model)
    return model


def _validate_param_shapes(model: Model) -> None:
    reference = (
        build_ncae(model.spec, seed=0) if model.tag == "ncae" else build_baseline(model.spec, seed=0)
    )
    expected = {name: value.shape for name, value in reference.params.items()}
    actual = {name: value.shape for name, value in model.params.items()}
    if expected != actual:
        raise CheckpointError(
            f"parameter shapes {actual} do not match the {model.tag} spec {expected}"
        )


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def model_loss(model: Model, window: np.ndarray) -> float:
    """Reconstruction loss of a single window under the current parameters."""
    loss, _ = nn.l2_loss(window, model.forward(window))
    return loss


def gradient_check_model(model: Model, window: np.ndarray, h: float = 1e-6) -> nn.GradCheckReport:
    """Analytic vs central-finite-difference gradients of the window loss."""
    model.params.zero_grads()
    output = model.forward_batch(window[None])
    _, d_output = nn.l2_loss(window[None], output)
    model.backward_batch(d_output)
    return nn.grad_check(lambda: model_loss(model, window), model.params, h=h)
