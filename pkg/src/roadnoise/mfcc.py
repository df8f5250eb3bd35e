"""MFCC frontend: Hann window, power spectrum, mel filterbank, DCT.

Per frame: power spectrum -> triangular mel filterbank -> log(x + 1e-10)
-> orthonormal DCT-II -> first n_coeffs coefficients. Defaults are the
conventional 25 ms / 10 ms setup at 16 kHz with 40 mel bands and 13
coefficients; everything is overridable through MfccConfig.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .audio_io import AudioClip, frame_signal

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    frame_len: int = 400  # 25 ms at 16 kHz
    hop: int = 160  # 10 ms
    n_fft: int = 512
    n_mels: int = 40
    n_coeffs: int = 13
    fmin: float = 20.0
    fmax: float = 8000.0

    def __post_init__(self):
        if self.n_coeffs > self.n_mels:
            raise ValueError("n_coeffs must not exceed n_mels")
        if self.n_fft < self.frame_len:
            raise ValueError("n_fft must be at least frame_len")
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ValueError("n_fft must be a power of two")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError("hop must satisfy 0 < hop <= frame_len")
        if self.fmin < 0 or self.fmin >= self.fmax:
            raise ValueError("need 0 <= fmin < fmax")


@dataclass(frozen=True)
class MfccSequence:
    """Time-ordered matrix of MFCC frames, shape (T, n_coeffs)."""

    frames: np.ndarray
    config: MfccConfig

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a (T, n_coeffs) matrix with T >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("MFCC frames must be finite")

    def __len__(self) -> int:
        return self.frames.shape[0]


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, w[i] = 0.5 * (1 - cos(2*pi*i / (n-1)))."""
    if n < 2:
        raise ValueError("hann_window needs n >= 2")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def power_spectrum(frame: np.ndarray, n_fft: int, window: str = "hann") -> np.ndarray:
    """|FFT|^2 of a windowed, zero-padded frame; n_fft/2 + 1 bins.

    window is "hann" (default) or "rect" for no weighting.
    """
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ValueError("frame must be 1-D")
    if frame.size > n_fft:
        raise ValueError(f"frame length {frame.size} exceeds n_fft {n_fft}")
    if window == "hann":
        weighted = frame * hann_window(frame.size)
    elif window == "rect":
        weighted = frame
    else:
        raise ValueError(f"unknown window {window!r}")
    spectrum = np.fft.rfft(weighted, n=n_fft)
    return (spectrum.real**2 + spectrum.imag**2).astype(np.float64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MfccConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters, centers uniform on the mel scale.

    Returns an (n_mels, n_fft/2 + 1) matrix of nonnegative weights.
    """
    if config.fmax > sample_rate / 2:
        raise ValueError("fmax must not exceed the Nyquist frequency")
    edges_mel = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(config.n_fft // 2 + 1) * (sample_rate / config.n_fft)

    lower = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    up_slope = (bin_freqs[None, :] - lower) / (center - lower)
    down_slope = (upper - bin_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(up_slope, down_slope))


def extract_mfcc(clip: AudioClip, config: MfccConfig = MfccConfig()) -> MfccSequence:
    """Convert a clip into an MFCC sequence of shape (T, n_coeffs)."""
    if clip.samples.size < config.frame_len:
        raise ValueError(
            f"clip of {clip.samples.size} samples is too short for one "
            f"{config.frame_len}-sample frame"
        )
    stream = frame_signal(clip, config.frame_len, config.hop)
    window = hann_window(config.frame_len)
    spectra = np.abs(np.fft.rfft(stream.frames * window, n=config.n_fft, axis=1)) ** 2
    filterbank = mel_filterbank(config, clip.sample_rate)
    log_mel = np.log(spectra @ filterbank.T + LOG_FLOOR)
    coeffs = dct(log_mel, type=2, norm="ortho", axis=1)[:, : config.n_coeffs]
    return MfccSequence(frames=coeffs, config=config)


def window_sequences(seq: MfccSequence, t_win: int, stride: int) -> list[np.ndarray]:
    """Sliding windows of t_win frames along time; trailing partial dropped."""
    return window_matrix(seq.frames, t_win, stride)


def window_matrix(frames: np.ndarray, t_win: int, stride: int) -> list[np.ndarray]:
    """window_sequences on a bare (T, C) matrix."""
    t = frames.shape[0]
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if t_win < 1:
        raise ValueError("t_win must be at least 1")
    if t_win > t:
        raise ValueError(f"t_win {t_win} exceeds sequence length {t}")
    return [frames[start : start + t_win].copy() for start in range(0, t - t_win + 1, stride)]


def export_mfcc_csv(seq: MfccSequence, path) -> None:
    """Write one row per frame, n_coeffs columns, headerless, 17 significant digits."""
    with open(path, "w") as fh:
        for row in seq.frames:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
