import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamsep.metrics import (
    SI_SDR_CAP_DB,
    MetricError,
    best_permutation_si_sdr,
    cer,
    edit_distance,
    si_sdr,
    si_sdr_report,
    wer,
)
from oracles import levenshtein_recursive


def orthogonal_pair(rng, n=1000):
    ref = rng.standard_normal(n)
    ref -= ref.mean()
    noise = rng.standard_normal(n)
    noise -= noise.mean()
    noise -= (noise @ ref) / (ref @ ref) * ref
    noise *= np.linalg.norm(ref) / np.linalg.norm(noise)
    return ref, noise


def test_perfect_estimate_is_capped(rng):
    ref = rng.standard_normal(500)
    assert si_sdr(ref, ref) == SI_SDR_CAP_DB
    report = si_sdr_report([ref], [ref])
    assert report.capped == [True]


def test_scale_invariance(rng):
    ref = rng.standard_normal(800)
    est = ref + 0.1 * rng.standard_normal(800)
    assert si_sdr(3 * est, ref) == si_sdr(est, ref)
    assert si_sdr(3 * ref, ref) == si_sdr(ref, ref)


def test_orthogonal_noise_is_zero_db(rng):
    ref, noise = orthogonal_pair(rng)
    assert abs(si_sdr(ref + noise, ref)) < 1e-9


def test_offsets_are_ignored(rng):
    ref = rng.standard_normal(300)
    est = ref + 0.3 * rng.standard_normal(300)
    assert si_sdr(est + 5.0, ref - 2.0) == pytest.approx(si_sdr(est, ref), abs=1e-9)


def test_sign_flip_symmetry(rng):
    ref, est = rng.standard_normal((2, 400))
    assert si_sdr(-est, -ref) == pytest.approx(si_sdr(est, ref), abs=1e-12)


def test_si_sdr_errors():
    with pytest.raises(MetricError):
        si_sdr(np.ones(3), np.ones(4))
    with pytest.raises(MetricError):
        si_sdr(np.ones(3), np.full(3, 2.0))  # zero after mean removal
    with pytest.raises(MetricError):
        si_sdr([], [])


def test_best_permutation(rng):
    a, b = rng.standard_normal((2, 600))
    perm, report = best_permutation_si_sdr([b + 0.01 * a, a], [a, b])
    assert perm == (1, 0)
    assert min(report.si_sdr_db) > 30
    with pytest.raises(MetricError):
        best_permutation_si_sdr([a], [a, b])


def test_edit_distance_examples():
    assert edit_distance(list("abc"), list("abc")).rate == 0
    r = wer("a b d", "a b c")
    assert (r.substitutions, r.insertions, r.deletions) == (1, 0, 0)
    assert r.rate == pytest.approx(1 / 3)
    r = wer("a b c d", "a b c")
    assert (r.substitutions, r.insertions, r.deletions, r.rate) == (0, 1, 0, 1 / 3)
    r = wer("a", "a b c")
    assert (r.deletions, r.rate) == (2, 2 / 3)
    assert wer("x y z w", "a").rate == 4.0


def test_tie_break_prefers_substitution():
    # "ab" vs "ba": two substitutions or one insertion + one deletion both cost 2
    r = edit_distance(list("ab"), list("ba"))
    assert (r.substitutions, r.insertions, r.deletions) == (2, 0, 0)


def test_empty_reference():
    assert edit_distance([], []).rate == 0.0
    assert edit_distance(["a"], []).rate == float("inf")
    assert edit_distance([], ["a"]).rate == 1.0


def test_cer_skips_whitespace():
    r = cer("he llo", "hello")
    assert r.errors == 0 and r.reference_length == 5


def test_matches_recursive_oracle():
    rng = np.random.default_rng(12)
    for _ in range(500):
        a = list(rng.integers(0, 4, size=rng.integers(0, 9)))
        b = list(rng.integers(0, 4, size=rng.integers(0, 9)))
        r = edit_distance(a, b)
        assert r.errors == levenshtein_recursive(a, b)
        assert r.reference_length == len(b)


tokens = st.lists(st.integers(0, 3), max_size=8)


@settings(max_examples=100, deadline=None)
@given(tokens, tokens, tokens)
def test_edit_distance_is_a_metric(a, b, c):
    d = lambda x, y: edit_distance(x, y).errors  # noqa: E731
    assert (d(a, b) == 0) == (a == b)
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, -0.01))
def test_scale_invariance_property(seed, pos, neg):
    rng = np.random.default_rng(seed)
    ref, est = rng.standard_normal((2, 200))
    base = si_sdr(est, ref)
    assert si_sdr(pos * est, ref) == pytest.approx(base, abs=1e-9)
    assert si_sdr(neg * est, ref) == pytest.approx(base, abs=1e-9)
