"""Wet-road-surface detection from vehicle driving noise.

A numpy library implementing the full chain from raw WAV audio to
streaming anomaly decisions: MFCC feature extraction, a from-scratch
trainable non-compression convolutional auto-encoder (NCAE) plus a
recurrent reconstruction baseline, Euclidean reconstruction scoring,
Tukey's-fences threshold calibration, AUROC evaluation, and seeded
Monte Carlo hyperparameter sweeps over synthetic road noise.
"""

__version__ = "0.1.0"
