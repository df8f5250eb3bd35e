"""Seeded synthetic dry/wet road-noise audio.

Dry is pink-ish base noise (roughly -3 dB/octave, shaped by a cascade of
one-pole sections) plus a slowly amplitude-modulated engine harmonic
stack. Wet is the same recipe with added high-frequency-emphasized
broadband hiss and short random spray bursts, which is what makes wet
windows spectrally separable from dry ones. Everything is a pure
function of (condition, config), so bundles regenerate bit-exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip
from .evaluation import DatasetBundle
from .mfcc import MfccConfig, extract_mfcc, window_matrix

PEAK_TARGET = 0.9
ENGINE_GAIN = 0.6
BURST_RATE_HZ = 6.0  # sprays per second in wet clips


class RoadCondition(str, Enum):
    DRY = "dry"
    WET = "wet"


@dataclass(frozen=True)
class SynthConfig:
    duration_seconds: float = 120.0
    seed: int = 0
    sample_rate: int = 16_000
    wet_hiss_gain: float = 0.35  # linear, relative to unit-RMS base noise
    wet_tilt_db_per_octave: float = 3.0
    engine_f0: float = 90.0
    harmonics: int = 12

    def __post_init__(self):
        if self.duration_seconds <= 0:
            raise ValueError("duration_seconds must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 0 < self.engine_f0 < self.sample_rate / 2:
            raise ValueError("engine_f0 must lie in (0, sample_rate/2)")
        if self.wet_hiss_gain < 0:
            raise ValueError("wet_hiss_gain must be nonnegative")
        if self.harmonics < 1:
            raise ValueError("harmonics must be >= 1")


def _pinking_filter(white: np.ndarray, sample_rate: int) -> np.ndarray:
    """Approximate -3 dB/octave shaping with cascaded one-pole sections.

    Each pole-zero pair contributes -10 dB/decade between its pole and
    zero; staggering the pairs one decade apart keeps the composite
    close to pink across the audible band.
    """
    out = white
    for pole_hz in (10.0, 100.0, 1000.0):
        zero_hz = pole_hz * np.sqrt(10.0)
        p = np.exp(-2.0 * np.pi * pole_hz / sample_rate)
        z = np.exp(-2.0 * np.pi * zero_hz / sample_rate)
        out = lfilter([1.0, -z], [1.0, -p], out)
    return out


def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def _tilted_noise(rng: np.random.Generator, n: int, sample_rate: int, tilt_db: float) -> np.ndarray:
    """Unit-RMS broadband noise with a spectral tilt in dB per octave."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    gain = np.zeros_like(freqs)
    ref = 1000.0
    positive = freqs > 0
    # tilt_db per octave -> amplitude exponent tilt_db / (20 * log10(2))
    gain[positive] = (freqs[positive] / ref) ** (tilt_db / (20.0 * np.log10(2.0)))
    shaped = np.fft.irfft(spectrum * gain, n=n)
    return _unit_rms(shaped)


def _spray_bursts(rng: np.random.Generator, n: int, sample_rate: int, gain: float) -> np.ndarray:
    """Short Hann-enveloped white bursts at random times."""
    out = np.zeros(n)
    count = rng.poisson(BURST_RATE_HZ * n / sample_rate)
    for _ in range(count):
        length = int(rng.uniform(0.005, 0.030) * sample_rate)
        start = int(rng.uniform(0, max(1, n - length)))
        if length < 2 or start + length > n:
            continue
        envelope = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(length) / (length - 1)))
        amplitude = gain * rng.uniform(0.5, 1.5)
        out[start : start + length] += amplitude * envelope * rng.standard_normal(length)
    return out


def gen_road_noise(condition: RoadCondition | str, config: SynthConfig) -> AudioClip:
    """Generate one dry or wet clip, peak-normalized to 0.9.

    With the same config, a wet clip consumes the dry recipe's random
    draws first, so its base noise equals the dry clip's before the wet
    signature is layered on.
    """
    condition = RoadCondition(condition)
    rng = np.random.default_rng(config.seed)
    n = round(config.duration_seconds * config.sample_rate)
    t = np.arange(n) / config.sample_rate

    base = _unit_rms(_pinking_filter(rng.standard_normal(n), config.sample_rate))

    orders = np.arange(1, config.harmonics + 1)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=config.harmonics)
    engine = np.zeros(n)
    for order, phase in zip(orders, phases):
        engine += np.sin(2.0 * np.pi * order * config.engine_f0 * t + phase) / order
    engine = _unit_rms(engine)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    modulation = 1.0 + 0.3 * np.sin(2.0 * np.pi * 0.4 * t + am_phase)

    signal = base + ENGINE_GAIN * engine * modulation

    if condition is RoadCondition.WET:
        hiss = _tilted_noise(rng, n, config.sample_rate, config.wet_tilt_db_per_octave)
        signal = signal + config.wet_hiss_gain * hiss
        signal = signal + _spray_bursts(
            rng, n, config.sample_rate, gain=0.8 * config.wet_hiss_gain
        )

    peak = np.max(np.abs(signal))
    if peak > 0:
        signal = signal * (PEAK_TARGET / peak)
    return AudioClip(samples=signal, sample_rate=config.sample_rate)


def condition_seed(master_seed: int, condition: RoadCondition | str) -> int:
    """Per-condition generator seed derived from a master seed."""
    code = 0 if RoadCondition(condition) is RoadCondition.DRY else 1
    return int(np.random.SeedSequence([master_seed, code]).generate_state(1)[0])


def make_dataset(
    config: SynthConfig,
    train_fraction: float = 0.75,
    mfcc_config: MfccConfig = MfccConfig(),
    t_win: int = 32,
    stride: int = 16,
) -> DatasetBundle:
    """Dry/wet clips -> MFCC window bundle for training and evaluation.

    The dry clip is split time-contiguously: the first train_fraction of
    samples becomes the training set, the rest the normal test set (no
    window straddles the cut, so nothing leaks). The wet clip is wholly
    test. Dry and wet use distinct seeds derived from config.seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    dry = gen_road_noise(
        RoadCondition.DRY,
        dataclasses.replace(config, seed=condition_seed(config.seed, RoadCondition.DRY)),
    )
    wet = gen_road_noise(
        RoadCondition.WET,
        dataclasses.replace(config, seed=condition_seed(config.seed, RoadCondition.WET)),
    )
    cut = round(dry.samples.size * train_fraction)
    train_clip = AudioClip(samples=dry.samples[:cut], sample_rate=dry.sample_rate)
    test_clip = AudioClip(samples=dry.samples[cut:], sample_rate=dry.sample_rate)

    def windows(clip: AudioClip) -> list[np.ndarray]:
        seq = extract_mfcc(clip, mfcc_config)
        return window_matrix(seq.frames, t_win, stride)

    try:
        return DatasetBundle(
            train_normal=windows(train_clip),
            test_normal=windows(test_clip),
            test_abnormal=windows(wet),
        )
    except ValueError as exc:
        raise ValueError(f"clips too short for one {t_win}-frame window: {exc}") from exc
