"""Short-time Fourier analysis/synthesis for multichannel signals.

Framing is left-aligned: frame ``t`` covers samples ``[t*hop, t*hop + win)``.
Each frame is multiplied by a periodic Hann window and zero-padded at the
tail up to ``fft_size`` before the real FFT. Synthesis is weighted
overlap-add normalised by the summed squared window.

Spectrogram axis order is ``(time, frequency, channel)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StftConfig",
    "MultichannelWaveform",
    "MultichannelSpectrogram",
    "StftError",
    "hann_window",
    "num_frames",
    "stft",
    "istft",
]


EDGE_NORM_FLOOR = 0.1


class StftError(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = 16000
    window_len_samples: int = 400
    hop_samples: int = 160
    fft_size: int = 512
    window_kind: str = "hann"

    def __post_init__(self):
        for name in ("sample_rate_hz", "window_len_samples", "hop_samples", "fft_size"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise StftError(f"{name} must be a positive integer, got {value!r}")
        if self.fft_size & (self.fft_size - 1):
            raise StftError(f"fft_size must be a power of two, got {self.fft_size}")
        if not self.hop_samples <= self.window_len_samples <= self.fft_size:
            raise StftError(
                "need hop_samples <= window_len_samples <= fft_size, got "
                f"{self.hop_samples}, {self.window_len_samples}, {self.fft_size}"
            )
        if self.window_kind.lower() != "hann":
            raise StftError(f"unsupported window {self.window_kind!r}; only 'hann'")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate_hz / self.fft_size

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "window_len_samples": self.window_len_samples,
            "hop_samples": self.hop_samples,
            "fft_size": self.fft_size,
            "window_kind": self.window_kind,
        }


@dataclass
class MultichannelWaveform:
    """Real samples with shape ``(channels, samples)``."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis]
        if samples.ndim != 2:
            raise StftError(f"waveform must be (channels, samples), got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise StftError("waveform contains non-finite samples")
        self.samples = samples

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class MultichannelSpectrogram:
    data: np.ndarray  # complex (T, F, C)
    config: StftConfig = field(default_factory=StftConfig)
    original_len_samples: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[..., np.newaxis]
        if data.ndim != 3:
            raise StftError(f"spectrogram must be (T, F, C), got shape {data.shape}")
        T, F, C = data.shape
        if T < 1 or C < 1:
            raise StftError(f"empty spectrogram of shape {data.shape}")
        if F != self.config.n_bins:
            raise StftError(f"expected {self.config.n_bins} bins for this config, got {F}")
        if not np.all(np.isfinite(data)):
            raise StftError("spectrogram contains non-finite values")
        self.data = data.astype(np.complex128, copy=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    def channel(self, c: int) -> np.ndarray:
        return self.data[:, :, c]


def hann_window(length: int) -> np.ndarray:
    """Periodic (DFT-even) Hann window."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def num_frames(n_samples: int, cfg: StftConfig) -> int:
    if n_samples < cfg.window_len_samples:
        return 0
    return 1 + (n_samples - cfg.window_len_samples) // cfg.hop_samples


def stft(wave: MultichannelWaveform, cfg: StftConfig | None = None) -> MultichannelSpectrogram:
    cfg = cfg or StftConfig()
    if not isinstance(wave, MultichannelWaveform):
        wave = MultichannelWaveform(np.asarray(wave), cfg.sample_rate_hz)
    x = wave.samples
    if not np.all(np.isfinite(x)):
        raise StftError("waveform contains non-finite samples")
    n = x.shape[1]
    T = num_frames(n, cfg)
    if T == 0:
        raise StftError(
            f"waveform of {n} samples is shorter than one window ({cfg.window_len_samples})"
        )
    win = hann_window(cfg.window_len_samples)
    starts = np.arange(T) * cfg.hop_samples
    idx = starts[:, None] + np.arange(cfg.window_len_samples)[None, :]
    frames = x[:, idx] * win  # (C, T, win)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)  # zero-pads at the tail
    return MultichannelSpectrogram(
        np.transpose(spec, (1, 2, 0)), config=cfg, original_len_samples=n
    )


def istft(spec: MultichannelSpectrogram, length: int | None = None) -> MultichannelWaveform:
    """Weighted overlap-add inverse of :func:`stft`.

    The squared-window normaliser is floored at EDGE_NORM_FLOOR times its
    peak. Only the first and last few dozen samples ever fall under the floor;
    there the output is attenuated instead of dividing by a near-zero value,
    which would blow up any error in a modified spectrogram. Samples past the
    last frame come out as zero. Interior reconstruction is exact, and a
    vanishing normaliser inside the interior raises :class:`StftError`.
    """
    cfg = spec.config
    length = spec.original_len_samples if length is None else length
    T, _, C = spec.shape
    W, H = cfg.window_len_samples, cfg.hop_samples
    covered = (T - 1) * H + W
    length = length or covered

    frames = np.fft.irfft(np.transpose(spec.data, (2, 0, 1)), n=cfg.fft_size, axis=-1)
    win = hann_window(W)
    frames = frames[..., :W] * win

    out = np.zeros((C, max(covered, length)))
    norm = np.zeros(max(covered, length))
    for t in range(T):
        s = t * H
        out[:, s : s + W] += frames[:, t]
        norm[s : s + W] += win**2

    interior = norm[W : max(covered - W, W)]
    if np.any(interior <= 1e-10):
        raise StftError("overlap-add normalisation vanishes inside the signal interior")
    out /= np.maximum(norm, EDGE_NORM_FLOOR * norm.max())
    return MultichannelWaveform(out[:, :length], cfg.sample_rate_hz)
