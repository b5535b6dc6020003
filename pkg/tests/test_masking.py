import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamsep.masking import (
    ConstantEstimator,
    MaskError,
    MaskSet,
    OracleLookupEstimator,
    TinyMaskEstimator,
    apply_masknet,
    median_renormalize,
    oracle_masks,
)
from beamsep.stft import MultichannelSpectrogram, MultichannelWaveform, StftConfig, stft

CFG = StftConfig()
F = CFG.n_bins


def spec(data):
    return MultichannelSpectrogram(np.asarray(data, dtype=complex), CFG, 160 * (data.shape[0] - 1) + 400)


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_maskset_range_is_enforced():
    with pytest.raises(MaskError):
        MaskSet(np.full((3, 2, 4, 1), 1.5))
    with pytest.raises(MaskError):
        MaskSet(np.full((3, 2, 4, 1), -0.1))
    with pytest.raises(MaskError):
        MaskSet(np.full((1, 2, 4, 1), 0.5))


def test_disjoint_bands():
    t = np.arange(16000) / 16000
    low = np.sin(2 * np.pi * 500 * t)
    high = np.sin(2 * np.pi * 5000 * t)
    refs = [stft(MultichannelWaveform(x[None], 16000)) for x in (low, high)]
    mix = stft(MultichannelWaveform((low + high)[None], 16000))
    irm = oracle_masks(refs, mix, "irm").data
    ibm = oracle_masks(refs, mix, "ibm").data
    b_low, b_high = 16, 160
    assert np.all(irm[1, :, b_low, 0] > 1 - 1e-6) and np.all(irm[2, :, b_high, 0] > 1 - 1e-6)
    assert np.all(ibm[1, :, b_low, 0] == 1) and np.all(ibm[2, :, b_high, 0] == 1)
    # wherever one source dominates by 60 dB, the two mask kinds agree
    mags = np.abs(np.stack([r.data for r in refs]))
    clear = np.abs(np.log10(mags[0] + 1e-30) - np.log10(mags[1] + 1e-30)) > 3
    assert np.abs(irm[1:] - ibm[1:])[:, clear].max() < 1e-2


def test_identical_refs_give_half(rng):
    s = crandn(rng, (5, F, 2))
    m = oracle_masks([spec(s), spec(s)], spec(2 * s), "irm").data
    np.testing.assert_allclose(m[1:], 0.5, atol=1e-9)
    np.testing.assert_allclose(m[0], 0.0, atol=1e-9)


def test_irm_range_and_sum_over_random_tensors():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        J = rng.integers(1, 4)
        refs = [crandn(rng, (2, F, 1)) * rng.uniform(0, 3) for _ in range(J)]
        mix = sum(refs) + 0.1 * crandn(rng, (2, F, 1))
        m = oracle_masks([spec(r) for r in refs], spec(mix), "irm").data
        assert m.min() >= 0 and m.max() <= 1
        assert m.sum(axis=0).max() <= 1 + 1e-6


def test_silent_bins_give_zero_masks():
    zeros = np.zeros((3, F, 1))
    m = oracle_masks([spec(zeros), spec(zeros)], spec(zeros), "irm").data
    assert np.all(m == 0)
    assert np.all(oracle_masks([spec(zeros), spec(zeros)], spec(zeros), "ibm").data == 0)


def test_ibm_is_one_hot(rng):
    refs = [crandn(rng, (4, F, 2)) for _ in range(2)]
    mix = refs[0] + refs[1] + 0.01 * crandn(rng, (4, F, 2))
    m = oracle_masks([spec(r) for r in refs], spec(mix), "ibm").data
    assert set(np.unique(m)) <= {0.0, 1.0}
    np.testing.assert_array_equal(m.sum(axis=0), 1.0)


def test_oracle_errors(rng):
    a = spec(crandn(rng, (3, F, 2)))
    b = spec(crandn(rng, (3, F, 1)))
    with pytest.raises(MaskError):
        oracle_masks([a, b], a)
    with pytest.raises(MaskError):
        oracle_masks([a, a], a, kind="wiener")


def test_constant_estimator(rng):
    m = apply_masknet(ConstantEstimator(0.5, n_speakers=2), spec(crandn(rng, (4, F, 3))))
    assert m.shape == (3, 4, F, 3)
    assert np.all(m.data == 0.5)


def test_lookup_estimator_matches_oracle(rng):
    refs = [spec(crandn(rng, (4, F, 2))) for _ in range(2)]
    mix = spec(refs[0].data + refs[1].data)
    oracle = oracle_masks(refs, mix)
    got = apply_masknet(OracleLookupEstimator(oracle, mix), mix)
    np.testing.assert_array_equal(got.data, oracle.data)


def test_channel_permutation_is_equivariant(rng):
    est = TinyMaskEstimator(2, F, seed=1)
    x = crandn(rng, (6, F, 3))
    perm = [2, 0, 1]
    a = apply_masknet(est, spec(x)).data
    b = apply_masknet(est, spec(x[..., perm])).data
    np.testing.assert_array_equal(a[..., perm], b)


class _Bad:
    def __init__(self, out):
        self.out = out

    def estimate(self, s):
        return self.out(s)


@pytest.mark.parametrize("fn", [
    lambda s: np.full((3,) + s.shape, 1.2),
    lambda s: np.full((3,) + s.shape, -0.2),
    lambda s: np.full((3, s.shape[0], s.shape[1] - 1), 0.5),
    lambda s: np.full((3,) + s.shape, np.nan),
])
def test_estimator_contract_violations(rng, fn):
    with pytest.raises(MaskError):
        apply_masknet(_Bad(fn), spec(crandn(rng, (2, F, 2))))


def test_permute_speakers(rng):
    data = rng.uniform(size=(4, 2, F, 1))
    m = MaskSet(data).permute_speakers([2, 0, 1])
    np.testing.assert_array_equal(m.data[0], data[0])
    np.testing.assert_array_equal(m.data[1], data[3])
    np.testing.assert_array_equal(m.data[3], data[2])


def test_tiny_estimator_learns(rng, tmp_path):
    refs = [spec(crandn(rng, (20, F, 1)) * np.linspace(2, 0.01, F)[:, None]),
            spec(crandn(rng, (20, F, 1)) * np.linspace(0.01, 2, F)[:, None])]
    mix = spec(refs[0].data + refs[1].data)
    target = oracle_masks(refs, mix).data[..., 0]
    est = TinyMaskEstimator(2, F, seed=0)
    history = est.fit([mix.channel(0)], [target], epochs=100)
    assert history[-1] < 0.5 * history[0]
    est.save(tmp_path / "w.npz")
    back = TinyMaskEstimator.load(tmp_path / "w.npz")
    np.testing.assert_array_equal(back.estimate(mix.channel(0)), est.estimate(mix.channel(0)))


def test_median_renormalize():
    m = np.array([[0.2, 0.0], [0.4, 0.0], [0.6, 0.0]])
    out = median_renormalize(m)
    np.testing.assert_allclose(out[:, 0], [0.5, 1.0, 1.5])
    np.testing.assert_array_equal(out[:, 1], 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["irm", "ibm"]))
def test_masks_always_in_range(seed, kind):
    r = np.random.default_rng(seed)
    refs = [spec(crandn(r, (2, F, 2)) * r.uniform(0, 5)) for _ in range(2)]
    mix = spec(refs[0].data + refs[1].data + r.uniform(0, 1) * crandn(r, (2, F, 2)))
    m = oracle_masks(refs, mix, kind).data
    assert m.min() >= 0 and m.max() <= 1
