import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamsep.scheduler import (
    CLEAN,
    CURRICULUM,
    NOISY,
    SHUFFLED,
    Batch,
    BatchPlan,
    EpochIterator,
    ScheduleError,
    UtteranceMeta,
    build_curriculum,
    build_shuffled,
    plan_for_epoch,
    validate_plan,
)
from oracles import random_utterances


def clean(uid, n):
    return UtteranceMeta(uid, CLEAN, n)


def noisy(uid, snr, n=100):
    return UtteranceMeta(uid, NOISY, n, snr)


def test_meta_validation():
    with pytest.raises(ScheduleError):
        UtteranceMeta("a", CLEAN, 0)
    with pytest.raises(ScheduleError):
        UtteranceMeta("a", CLEAN, 10, 3.0)
    with pytest.raises(ScheduleError):
        UtteranceMeta("a", NOISY, 10)
    with pytest.raises(ScheduleError):
        UtteranceMeta("a", "other", 10)


def test_clean_sorted_by_length():
    plan = build_curriculum([clean("a", 5), clean("b", 3), clean("c", 9)], [], batch_size=1)
    assert [b.ids for b in plan.batches] == [["b"], ["a"], ["c"]]


def test_noisy_sorted_by_absolute_snr():
    items = [noisy("m", -4.0), noisy("z", 0.0), noisy("p", 3.0)]
    plan = build_curriculum([], items, batch_size=1)
    assert [b.ids[0] for b in plan.batches] == ["z", "p", "m"]
    signed = build_curriculum([], items, batch_size=1, signed_snr=True)
    assert [b.ids[0] for b in signed.batches] == ["m", "z", "p"]


def test_alternation_then_remainder():
    c = [clean(f"c{k}", k + 1) for k in range(5)]
    n = [noisy(f"n{k}", k) for k in range(2)]
    plan = build_curriculum(c, n, batch_size=1)
    assert [b.kind for b in plan.batches] == [CLEAN, NOISY, CLEAN, NOISY, CLEAN, CLEAN, CLEAN]
    assert validate_plan(plan, c + n) == []


def test_last_partial_batch_kept():
    plan = build_curriculum([clean(f"c{k}", 10) for k in range(5)], [], batch_size=2)
    assert [len(b.ids) for b in plan.batches] == [2, 2, 1]


def test_input_errors():
    with pytest.raises(ScheduleError):
        build_curriculum([], [], 2)
    with pytest.raises(ScheduleError):
        build_shuffled([clean("a", 1)], [], 0, seed=0)
    with pytest.raises(ScheduleError):
        build_curriculum([noisy("a", 1.0)], [], 1)


def test_shuffled_determinism_and_proportions(rng):
    c, n = random_utterances(rng, 37, 23)
    a = build_shuffled(c, n, 4, seed=5)
    b = build_shuffled(c, n, 4, seed=5)
    assert a.to_json() == b.to_json()
    kinds = [x.kind for x in a.batches]
    assert kinds.count(CLEAN) == 10 and kinds.count(NOISY) == 6
    assert validate_plan(a, c + n) == []
    assert build_shuffled(c, n, 4, seed=6).to_json() != a.to_json()


def test_phase_switch(rng):
    c, n = random_utterances(rng, 8, 8)
    assert plan_for_epoch(0, c, n, 2, seed=1, curriculum_epochs=2).phase == CURRICULUM
    assert plan_for_epoch(1, c, n, 2, seed=1, curriculum_epochs=2).phase == CURRICULUM
    e2 = plan_for_epoch(2, c, n, 2, seed=1, curriculum_epochs=2)
    e3 = plan_for_epoch(3, c, n, 2, seed=1, curriculum_epochs=2)
    assert e2.phase == SHUFFLED and e2.to_json() != e3.to_json()
    assert e2.to_json() == plan_for_epoch(2, c, n, 2, seed=1, curriculum_epochs=2).to_json()


def test_iterator_traversal_and_resume(rng):
    c, n = random_utterances(rng, 5, 5)
    plan = build_curriculum(c, n, 2)
    assert list(EpochIterator(plan)) == plan.batches
    it = EpochIterator(plan)
    next(it), next(it)
    resumed = list(EpochIterator(plan, cursor=it.cursor))
    assert resumed == plan.batches[2:] == list(it)
    assert list(EpochIterator(BatchPlan(SHUFFLED, []))) == []
    with pytest.raises(ScheduleError):
        EpochIterator(plan, cursor=len(plan) + 1)
    with pytest.raises(ScheduleError):
        EpochIterator(plan, cursor=-1)


def test_plan_json_round_trip(rng):
    c, n = random_utterances(rng, 4, 3)
    plan = build_shuffled(c, n, 2, seed=0)
    back = BatchPlan.from_dict(json.loads(plan.to_json()))
    assert back == plan


def test_validate_catches_tampering(rng):
    c, n = random_utterances(rng, 6, 6)
    utts = c + n
    plan = build_curriculum(c, n, 2)
    mixed = BatchPlan(CURRICULUM, [Batch(CLEAN, plan.batches[0].ids + plan.batches[1].ids)] + plan.batches[2:])
    assert any("inside" in p for p in validate_plan(mixed, utts))
    dup = BatchPlan(CURRICULUM, plan.batches + [plan.batches[0]])
    assert any("appears 2 times" in p for p in validate_plan(dup, utts))
    missing = BatchPlan(CURRICULUM, plan.batches[1:])
    assert any("never scheduled" in p for p in validate_plan(missing, utts))
    swapped = BatchPlan(CURRICULUM, [plan.batches[2], plan.batches[1], plan.batches[0]] + plan.batches[3:])
    assert any("not sorted" in p for p in validate_plan(swapped, utts))
    adjacent = BatchPlan(CURRICULUM, [plan.batches[0], plan.batches[2], plan.batches[1]] + plan.batches[3:])
    assert any("share kind" in p for p in validate_plan(adjacent, utts))
    unknown = BatchPlan(SHUFFLED, plan.batches + [Batch(CLEAN, ["ghost"])])
    assert any("unknown" in p for p in validate_plan(unknown, utts))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30), st.integers(1, 7), st.integers(0, 2**32 - 1), st.booleans())
def test_plan_invariants(n_clean, n_noisy, batch_size, seed, signed):
    if n_clean + n_noisy == 0:
        return
    rng = np.random.default_rng(seed)
    c, n = random_utterances(rng, n_clean, n_noisy)
    for plan in (build_curriculum(c, n, batch_size, signed_snr=signed), build_shuffled(c, n, batch_size, seed)):
        assert validate_plan(plan, c + n, signed_snr=signed) == []
        assert all(1 <= len(b.ids) <= batch_size for b in plan.batches)
