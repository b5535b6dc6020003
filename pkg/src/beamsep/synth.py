"""Speech-like dry test signals.

Not speech: a glottal-style harmonic source with drifting pitch, shaped by
a few random resonances and gated by a syllable-rate envelope, with
occasional noise bursts standing in for fricatives. Good enough to give
mixtures realistic spectral sparsity and overlap.
"""

import numpy as np
from scipy.signal import lfilter

_LEXICON = (
    "the of and to in is it that was for on are with as his they be at one have this from "
    "or had by word but what some we can out other were all there when up use your how said "
    "each she which do their time if will way about many then them write would like so these"
).split()


def _resonator(freq_hz, bw_hz, fs):
    r = np.exp(-np.pi * bw_hz / fs)
    theta = 2 * np.pi * freq_hz / fs
    return [1.0 - r], [1.0, -2 * r * np.cos(theta), r * r]


def synth_utterance(rng, fs: int = 16000, duration_s: float | None = None) -> np.ndarray:
    if duration_s is None:
        duration_s = rng.uniform(1.5, 3.0)
    n = int(duration_s * fs)
    t = np.arange(n) / fs

    f0 = rng.uniform(90, 240) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 6.3)))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    n_harm = int(min(40, (fs / 2 - 200) // f0.max()))
    voiced = sum(np.sin(k * phase) / k for k in range(1, n_harm + 1))

    out = np.zeros(n)
    for formant in (rng.uniform(300, 900), rng.uniform(900, 2300), rng.uniform(2300, 3500)):
        b, a = _resonator(formant, rng.uniform(60, 200), fs)
        out += lfilter(b, a, voiced)

    syllable_rate = rng.uniform(3.0, 6.0)
    env = np.clip(np.sin(2 * np.pi * syllable_rate * t + rng.uniform(0, 6.3)), 0, None) ** 0.7
    out *= env

    for _ in range(rng.integers(2, 6)):
        start = rng.integers(0, max(1, n - fs // 10))
        length = rng.integers(fs // 40, fs // 10)
        burst = rng.standard_normal(min(length, n - start))
        b, a = _resonator(rng.uniform(3500, 6500), 1500, fs)
        out[start : start + len(burst)] += 0.3 * lfilter(b, a, burst) * np.hanning(len(burst))

    return out / np.max(np.abs(out)) * 0.5


def synth_transcript(rng, n_words: tuple[int, int] = (3, 8)) -> str:
    k = rng.integers(n_words[0], n_words[1] + 1)
    return " ".join(rng.choice(_LEXICON, size=k))
