import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beamsep.stft import (
    MultichannelSpectrogram,
    MultichannelWaveform,
    StftConfig,
    StftError,
    hann_window,
    istft,
    num_frames,
    stft,
)
from oracles import direct_dft

CFG = StftConfig()


def wave(x, fs=16000):
    return MultichannelWaveform(np.atleast_2d(x), fs)


def test_default_profile():
    assert (CFG.sample_rate_hz, CFG.window_len_samples, CFG.hop_samples, CFG.fft_size) == (16000, 400, 160, 512)
    assert CFG.n_bins == 257


@pytest.mark.parametrize("kwargs", [
    dict(fft_size=500),
    dict(hop_samples=500),
    dict(window_len_samples=600),
    dict(window_kind="hamming"),
    dict(sample_rate_hz=0),
])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(StftError):
        StftConfig(**kwargs)


def test_frame_count_one_second():
    spec = stft(wave(np.zeros(16000)))
    assert spec.shape == (98, 257, 1)
    assert num_frames(16000, CFG) == 1 + (16000 - 400) // 160


def test_zero_input_gives_zero_spectrogram():
    assert np.all(stft(wave(np.zeros((2, 1234)))).data == 0)


def test_periodic_hann():
    w = hann_window(400)
    assert w[0] == 0.0
    assert w[200] == pytest.approx(1.0)
    # DFT-even: symmetric about n = N/2
    np.testing.assert_allclose(w[1:], w[1:][::-1], atol=1e-15)


def test_sine_peak_and_parseval():
    t = np.arange(16000) / 16000
    spec = stft(wave(np.sin(2 * np.pi * 1000 * t)))
    mag = np.abs(spec.data[:, :, 0])
    assert np.all(np.argmax(mag, axis=1) == round(1000 * 512 / 16000))

    frame = np.sin(2 * np.pi * 1000 * t[:400]) * hann_window(400)
    X = direct_dft(frame, 512)
    np.testing.assert_allclose(spec.data[0, :, 0], X, atol=1e-9)
    # one-sided Parseval for a length-512 real DFT
    spectral = (np.abs(X[0]) ** 2 + 2 * np.sum(np.abs(X[1:-1]) ** 2) + np.abs(X[-1]) ** 2) / 512
    assert spectral == pytest.approx(np.sum(frame**2), rel=1e-6)


def test_padding_sits_at_frame_tail(rng):
    x = rng.standard_normal(400)
    spec = stft(wave(x))
    frame = np.fft.irfft(spec.data[0, :, 0], n=512)
    np.testing.assert_allclose(frame[:400], x * hann_window(400), atol=1e-12)
    np.testing.assert_allclose(frame[400:], 0, atol=1e-12)


def test_errors():
    with pytest.raises(StftError):
        stft(wave(np.zeros(399)))
    bad = np.zeros(1000)
    bad[10] = np.nan
    with pytest.raises(StftError):
        stft(np.atleast_2d(bad))


def test_round_trip_white_noise(rng):
    x = rng.standard_normal(16000)
    y = istft(stft(wave(x))).samples[0]
    sl = slice(400, 16000 - 400)
    assert np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl]) < 1e-6
    assert len(y) == 16000


def test_istft_zero_and_locality():
    spec = MultichannelSpectrogram(np.zeros((20, 257, 1), complex), CFG, 3440)
    assert np.all(istft(spec).samples == 0)
    data = np.zeros((20, 257, 1), complex)
    data[7] = np.exp(1j * np.linspace(0, 3, 257))[:, None]
    y = istft(MultichannelSpectrogram(data, CFG, 3440)).samples[0]
    support = np.flatnonzero(y)
    assert support.min() >= 7 * 160 and support.max() < 7 * 160 + 400


def test_istft_edge_is_bounded(rng):
    # a modified spectrogram must not explode at the signal edges
    x = rng.standard_normal(8000)
    spec = stft(wave(x))
    spec.data[:] += 0.1 * (rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape))
    y = istft(spec).samples[0]
    assert np.max(np.abs(y)) < 10 * np.max(np.abs(x))


def test_channel_independence(rng):
    x = rng.standard_normal((3, 5000))
    joint = stft(wave(x)).data
    for c in range(3):
        np.testing.assert_array_equal(joint[:, :, c], stft(wave(x[c])).data[:, :, 0])


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, st.integers(1200, 4000), elements=st.floats(-1, 1)),
    st.floats(-3, 3), st.floats(-3, 3),
)
def test_linearity(x, a, b):
    y = np.cos(np.arange(len(x)) * 0.01)
    lhs = stft(wave(a * x + b * y)).data
    rhs = a * stft(wave(x)).data + b * stft(wave(y)).data
    scale = max(np.abs(rhs).max(), 1e-12)
    assert np.abs(lhs - rhs).max() / scale < 1e-9


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1200, 6000), elements=st.floats(-1, 1)))
def test_round_trip_property(x):
    y = istft(stft(wave(x))).samples[0]
    sl = slice(400, len(x) - 400)
    ref = np.linalg.norm(x[sl])
    if ref > 0:
        assert np.linalg.norm(y[sl] - x[sl]) / ref < 1e-6
