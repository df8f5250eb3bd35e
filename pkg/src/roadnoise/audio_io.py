"""WAV parsing, resampling and framing of raw audio.

Only the subset of WAV needed here is supported: RIFF little-endian,
PCM format code 1, 16-bit samples, 1 or 2 channels. Everything else is
rejected with a diagnostic. All samples live as 64-bit floats in
[-1, 1] from the moment they are parsed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CANONICAL_RATE = 16_000


class WavError(ValueError):
    """Base class for WAV container problems."""


class MalformedWavError(WavError):
    """Container structure is not a readable RIFF/WAVE file."""


class UnsupportedWavError(WavError):
    """Readable container, but an encoding this library does not handle."""


class TruncatedWavError(WavError):
    """Data chunk declares more payload than the file contains."""


@dataclass(frozen=True)
class AudioClip:
    """Mono audio: float64 samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise ValueError("samples must be a 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must all be finite")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameStream:
    """Equal-length frames cut from a clip at a fixed hop."""

    frames: np.ndarray  # (n_frames, frame_len)
    frame_len: int
    hop: int

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.frame_len:
            raise ValueError("every frame must have exactly frame_len samples")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError("hop must satisfy 0 < hop <= frame_len")

    def __len__(self) -> int:
        return self.frames.shape[0]


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise MalformedWavError(f"file ends inside {what}")
    return buf[offset : offset + n]


def parse_wav(data: bytes) -> AudioClip:
    """Parse a 16-bit PCM RIFF/WAVE byte string into an AudioClip.

    Stereo is downmixed by averaging the two channels. Integer samples
    are scaled by 1/32768, so the result lies in [-1, 32767/32768].
    """
    if len(data) < 12:
        raise MalformedWavError("too short to hold a RIFF header")
    if data[0:4] != b"RIFF":
        raise MalformedWavError(f"bad RIFF magic {data[0:4]!r}")
    if data[8:12] != b"WAVE":
        raise MalformedWavError(f"bad WAVE tag {data[8:12]!r}")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            body = _read_exact(data, body_start, min(chunk_size, 16), "fmt chunk")
            if chunk_size < 16:
                raise MalformedWavError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            if body_start + chunk_size > len(data):
                raise TruncatedWavError(
                    f"data chunk declares {chunk_size} bytes, "
                    f"only {len(data) - body_start} present"
                )
            payload = data[body_start : body_start + chunk_size]
        # chunks are word-aligned: odd sizes carry one pad byte
        pos = body_start + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise MalformedWavError("no fmt chunk found")
    if payload is None:
        raise MalformedWavError("no data chunk found")

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"only PCM (format 1) supported, got format {audio_format}")
    if bits != 16:
        raise UnsupportedWavError(f"only 16-bit samples supported, got {bits}-bit")
    if channels not in (1, 2):
        raise UnsupportedWavError(f"only 1 or 2 channels supported, got {channels}")
    if sample_rate == 0:
        raise MalformedWavError("fmt chunk declares a zero sample rate")

    frame_bytes = 2 * channels
    usable = len(payload) - len(payload) % frame_bytes
    raw = np.frombuffer(payload[:usable], dtype="<i2").astype(np.float64)
    if channels == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=raw / 32768.0, sample_rate=sample_rate)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as minimal mono 16-bit PCM WAV bytes.

    Samples are scaled by 32768 and rounded to the nearest integer, so
    clips produced by parse_wav round-trip bit-exactly.
    """
    ints = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    return header + payload


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by linear interpolation onto the uniform target grid.

    Output length is floor(len * target/source); positions past the last
    input sample hold the edge value. Matching rates return the clip
    unchanged.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if clip.samples.size == 0:
        raise ValueError("cannot resample an empty clip")
    if target_rate == clip.sample_rate:
        return clip
    n_out = (clip.samples.size * target_rate) // clip.sample_rate
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    resampled = np.interp(positions, np.arange(clip.samples.size), clip.samples)
    return AudioClip(samples=resampled, sample_rate=target_rate)


def frame_signal(clip: AudioClip, frame_len: int, hop: int) -> FrameStream:
    """Cut the clip into frames at offsets 0, hop, 2*hop, ...

    A trailing partial frame is dropped. The frame count is
    1 + floor((N - frame_len) / hop).
    """
    n = clip.samples.size
    if frame_len <= 0:
        raise ValueError("frame_len must be positive")
    if not 0 < hop <= frame_len:
        raise ValueError("hop must satisfy 0 < hop <= frame_len")
    if frame_len > n:
        raise ValueError(f"frame_len {frame_len} exceeds clip length {n}")
    n_frames = 1 + (n - frame_len) // hop
    offsets = np.arange(n_frames) * hop
    frames = clip.samples[offsets[:, None] + np.arange(frame_len)]
    return FrameStream(frames=frames, frame_len=frame_len, hop=hop)
