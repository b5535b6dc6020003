"""Log-mel features and corpus-level mean/variance normalisation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

EPS_LOG = 1e-10
STD_FLOOR = 1e-5

__all__ = [
    "FeatureError",
    "MelFilterbank",
    "hz_to_mel",
    "mel_to_hz",
    "logmel",
    "MvnStats",
    "MvnAccumulator",
    "mvn_accumulate",
    "mvn_apply",
    "mvn_invert",
]


class FeatureError(ValueError):
    pass


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass
class MelFilterbank:
    """Peak-normalised triangular filters on the HTK mel scale, shape (n_mels, F)."""

    weights: np.ndarray
    fmin_hz: float
    fmax_hz: float
    centers_hz: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_bins(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def create(cls, n_mels: int = 80, n_fft: int = 512, sample_rate_hz: int = 16000,
               fmin_hz: float = 0.0, fmax_hz: float | None = None) -> "MelFilterbank":
        fmax_hz = sample_rate_hz / 2 if fmax_hz is None else fmax_hz
        if not 0 <= fmin_hz < fmax_hz <= sample_rate_hz / 2:
            raise FeatureError("need 0 <= fmin < fmax <= Nyquist")
        edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
        freqs = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
        lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (freqs - lower) / (center - lower)
        falling = (upper - freqs) / (upper - center)
        weights = np.maximum(0.0, np.minimum(rising, falling))
        return cls(weights, fmin_hz, fmax_hz, edges[1:-1])


def logmel(spec: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """``log(fb @ |S| + EPS_LOG)`` per frame for a (T, F) complex STFT; returns (T, n_mels)."""
    spec = np.asarray(spec)
    if spec.ndim == 3 and spec.shape[2] == 1:
        spec = spec[..., 0]
    if spec.ndim != 2 or spec.shape[1] != fb.n_bins:
        raise FeatureError(f"spectrogram shape {spec.shape} does not fit a {fb.n_bins}-bin filterbank")
    return np.log(np.abs(spec) @ fb.weights.T + EPS_LOG)


@dataclass
class MvnStats:
    mean: np.ndarray
    std: np.ndarray
    frame_count: int
    floored: np.ndarray = field(default=None)  # bool per dimension, std floor substituted

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.floored is None:
            self.floored = self.std <= STD_FLOOR
        self.std = np.maximum(self.std, STD_FLOOR)

    @property
    def n_mels(self) -> int:
        return len(self.mean)

    def to_json(self) -> str:
        return json.dumps({
            "n_mels": self.n_mels,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "frame_count": int(self.frame_count),
        }, indent=2)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "MvnStats":
        d = json.loads(Path(path).read_text())
        if len(d["mean"]) != d["n_mels"] or len(d["std"]) != d["n_mels"]:
            raise FeatureError(f"{path}: inconsistent n_mels")
        return cls(np.array(d["mean"]), np.array(d["std"]), int(d["frame_count"]))


class MvnAccumulator:
    """Streaming per-dimension mean/variance (Chan et al. pairwise merge)."""

    def __init__(self, dim: int | None = None):
        self.count = 0
        self.mean = None if dim is None else np.zeros(dim)
        self.m2 = None if dim is None else np.zeros(dim)

    def _merge(self, n, mean, m2):
        if self.count == 0:
            self.count, self.mean, self.m2 = n, mean.copy(), m2.copy()
            return
        if mean.shape != self.mean.shape:
            raise FeatureError("feature dimension changed between batches")
        total = self.count + n
        delta = mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + m2 + delta**2 * (self.count * n / total)
        self.count = total

    def update(self, feats) -> "MvnAccumulator":
        feats = np.asarray(feats, dtype=float)
        if feats.ndim != 2:
            raise FeatureError("features must be (T, n_mels)")
        if len(feats) == 0:
            return self
        mean = feats.mean(axis=0)
        self._merge(len(feats), mean, ((feats - mean) ** 2).sum(axis=0))
        return self

    def merge(self, other: "MvnAccumulator") -> "MvnAccumulator":
        if other.count:
            self._merge(other.count, other.mean, other.m2)
        return self

    def finalize(self) -> MvnStats:
        if self.count == 0:
            raise FeatureError("no frames accumulated")
        std = np.sqrt(self.m2 / self.count)
        return MvnStats(self.mean.copy(), std, self.count, floored=std <= STD_FLOOR)


def mvn_accumulate(features: Iterable[np.ndarray]) -> MvnStats:
    acc = MvnAccumulator()
    for feats in features:
        acc.update(feats)
    return acc.finalize()


def mvn_apply(feats, stats: MvnStats) -> np.ndarray:
    if stats.frame_count < 2:
        raise FeatureError("normalisation statistics need at least two frames")
    feats = np.asarray(feats, dtype=float)
    if feats.shape[-1] != stats.n_mels:
        raise FeatureError(f"feature dim {feats.shape[-1]} != stats dim {stats.n_mels}")
    return (feats - stats.mean) / stats.std


def mvn_invert(normed, stats: MvnStats) -> np.ndarray:
    return np.asarray(normed) * stats.std + stats.mean
