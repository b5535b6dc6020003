"""Time-frequency masks for each source on each channel.

Mask tensors have shape ``(J + 1, T, F, C)``; source index 0 is the noise
component and indices 1..J are speakers. Masks live in [0, 1] but are not
required to sum to one over sources.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .stft import MultichannelSpectrogram

EPS_MASK = 1e-10

__all__ = [
    "MaskError",
    "MaskSet",
    "MaskEstimator",
    "oracle_masks",
    "apply_masknet",
    "ConstantEstimator",
    "OracleLookupEstimator",
    "TinyMaskEstimator",
    "median_renormalize",
]


class MaskError(ValueError):
    pass


@dataclass
class MaskSet:
    data: np.ndarray  # (J+1, T, F, C)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] < 2:
            raise MaskError(f"mask tensor must be (J+1, T, F, C) with J >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise MaskError("mask values must lie in [0, 1]")
        self.data = data

    @property
    def n_speakers(self) -> int:
        return self.data.shape[0] - 1

    @property
    def shape(self):
        return self.data.shape

    def noise(self) -> np.ndarray:
        return self.data[0]

    def speakers(self) -> np.ndarray:
        return self.data[1:]

    def permute_speakers(self, perm: Sequence[int]) -> "MaskSet":
        """New MaskSet whose speaker k is this set's speaker ``perm[k]`` (0-based)."""
        order = [0] + [p + 1 for p in perm]
        return MaskSet(self.data[order])


class MaskEstimator(Protocol):
    """Anything mapping one channel's complex STFT (T, F) to masks (J+1, T, F)."""

    def estimate(self, spec: np.ndarray) -> np.ndarray: ...


def _check_shapes(refs, mix):
    for j, ref in enumerate(refs):
        if ref.shape != mix.shape:
            raise MaskError(f"reference {j} has shape {ref.shape}, mixture has {mix.shape}")


def oracle_masks(
    refs: Sequence[MultichannelSpectrogram],
    mix: MultichannelSpectrogram,
    kind: str = "irm",
) -> MaskSet:
    """Ideal masks computed from the per-source images.

    ``irm``: magnitude ratio |S_i| / (sum_j |S_j| + EPS_MASK), where the sum
    includes the residual ``mix - sum(refs)`` as the noise source.
    ``ibm``: one-hot on the dominant source; all zero where every source is
    exactly silent.
    """
    if not refs:
        raise MaskError("need at least one reference source")
    _check_shapes(refs, mix)
    speech = np.stack([r.data for r in refs])
    residual = mix.data - speech.sum(axis=0)
    mags = np.abs(np.concatenate([residual[None], speech]))  # (J+1, T, F, C)

    kind = kind.lower()
    if kind == "irm":
        masks = mags / (mags.sum(axis=0, keepdims=True) + EPS_MASK)
        # float residual can give tiny overshoot; clamp is documented for the noise mask
        masks = np.clip(masks, 0.0, 1.0)
    elif kind == "ibm":
        winner = np.argmax(mags, axis=0)
        masks = (np.arange(mags.shape[0])[:, None, None, None] == winner).astype(float)
        masks *= mags.max(axis=0, keepdims=True) > 0
    else:
        raise MaskError(f"unknown oracle mask kind {kind!r}")
    return MaskSet(masks)


def apply_masknet(estimator: MaskEstimator, mix: MultichannelSpectrogram) -> MaskSet:
    """Run ``estimator`` on each channel independently and stack the results."""
    T, F, C = mix.shape
    per_channel = []
    expected = None
    for c in range(C):
        out = np.asarray(estimator.estimate(mix.channel(c).copy()), dtype=np.float64)
        if out.ndim != 3 or out.shape[1:] != (T, F):
            raise MaskError(f"estimator returned shape {out.shape} for channel {c}; want (J+1, {T}, {F})")
        if expected is None:
            expected = out.shape[0]
        elif out.shape[0] != expected:
            raise MaskError("estimator changed source count between channels")
        if not np.all(np.isfinite(out)) or out.min() < 0.0 or out.max() > 1.0:
            raise MaskError(f"estimator output for channel {c} leaves [0, 1]")
        per_channel.append(out)
    return MaskSet(np.stack(per_channel, axis=-1))


class ConstantEstimator:
    def __init__(self, value: float, n_speakers: int = 2):
        self.value = value
        self.n_speakers = n_speakers

    def estimate(self, spec):
        return np.full((self.n_speakers + 1,) + spec.shape, self.value)


class OracleLookupEstimator:
    """Returns precomputed oracle masks by matching the input against the mix channels."""

    def __init__(self, masks: MaskSet, mix: MultichannelSpectrogram):
        self._masks = masks
        self._mix = mix

    def estimate(self, spec):
        for c in range(self._mix.n_channels):
            if np.array_equal(spec, self._mix.channel(c)):
                return self._masks.data[..., c]
        raise MaskError("input does not match any channel of the stored mixture")


class TinyMaskEstimator:
    """Demonstration estimator: elementwise affine map of log-magnitude + sigmoid.

    For every frame the same affine transform is applied,
    ``m[i, t, f] = sigmoid(a[i, f] * log|X[t, f]| + b[i, f])``; weights are
    fitted by plain gradient descent on the mean-squared error to oracle
    masks. It exists to exercise the estimator interface and is nowhere near a
    recurrent mask network in capacity.
    """

    def __init__(self, n_speakers: int, n_bins: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.a = 0.01 * rng.standard_normal((n_speakers + 1, n_bins))
        self.b = np.zeros((n_speakers + 1, n_bins))

    @staticmethod
    def _features(spec):
        return np.log(np.abs(spec) + 1e-8)

    def _forward(self, feats):
        z = self.a[:, None, :] * feats[None] + self.b[:, None, :]
        return 1.0 / (1.0 + np.exp(-z))

    def estimate(self, spec):
        return self._forward(self._features(spec))

    def fit(self, specs, targets, lr: float = 0.5, epochs: int = 200) -> list[float]:
        """``specs``: list of (T, F) channel STFTs; ``targets``: matching (J+1, T, F) masks."""
        history = []
        for _ in range(epochs):
            ga = np.zeros_like(self.a)
            gb = np.zeros_like(self.b)
            total, count = 0.0, 0
            for spec, target in zip(specs, targets):
                feats = self._features(spec)
                m = self._forward(feats)
                diff = m - target
                total += np.sum(diff**2)
                count += diff.size
                dz = 2 * diff * m * (1 - m)
                ga += np.sum(dz * feats[None], axis=1)
                gb += np.sum(dz, axis=1)
            n_frames = sum(s.shape[0] for s in specs)
            self.a -= lr * ga / n_frames
            self.b -= lr * gb / n_frames
            history.append(total / count)
        return history

    def save(self, path):
        np.savez(path, a=self.a, b=self.b)

    @classmethod
    def load(cls, path) -> "TinyMaskEstimator":
        data = np.load(path)
        est = cls.__new__(cls)
        est.a, est.b = data["a"], data["b"]
        return est


def median_renormalize(mask: np.ndarray, axis_time: int = 0) -> np.ndarray:
    """Divide a (T, F) mask by its per-frequency median. Display only."""
    med = np.median(mask, axis=axis_time, keepdims=True)
    return mask / np.where(med > 0, med, 1.0)
