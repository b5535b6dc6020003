"""WAV reading/writing for multichannel waveforms.

Reads 16-bit PCM and 32-bit float files; always writes 32-bit float.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .stft import MultichannelWaveform

__all__ = ["WavError", "read_wav", "write_wav"]


class WavError(IOError):
    pass


def read_wav(path, expected_rate: int | None = None) -> MultichannelWaveform:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise WavError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported sample format {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz does not match configured {expected_rate} Hz")
    samples = samples.T if samples.ndim == 2 else samples[np.newaxis]
    if not np.all(np.isfinite(samples)):
        raise WavError(f"{path}: non-finite samples")
    return MultichannelWaveform(samples, int(rate))


def write_wav(path, wave: MultichannelWaveform, pcm16: bool = False) -> None:
    path = Path(path)
    data = wave.samples.T
    if pcm16:
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    try:
        wavfile.write(path, int(wave.sample_rate_hz), data)
    except OSError as exc:
        raise WavError(f"{path}: {exc}") from exc
