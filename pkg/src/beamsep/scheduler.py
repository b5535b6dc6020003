"""Batch planning for mixed single-speaker / multi-speaker training.

Two phases:

* curriculum: clean utterances sorted short-to-long, mixtures sorted by how
  balanced their speakers are (ascending |snr_db| by default), batched
  contiguously and interleaved clean/noisy one-to-one until one side runs
  out;
* shuffled: both sets shuffled, batched, and batches drawn at random with
  probability proportional to what is left of each kind.

Batches never mix kinds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

CLEAN = "clean_single"
NOISY = "noisy_multi"
CURRICULUM = "curriculum"
SHUFFLED = "shuffled"

__all__ = [
    "ScheduleError",
    "UtteranceMeta",
    "Batch",
    "BatchPlan",
    "build_curriculum",
    "build_shuffled",
    "plan_for_epoch",
    "EpochIterator",
    "validate_plan",
]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceMeta:
    id: str
    kind: str
    length_frames: int
    snr_db: float | None = None
    path: str = ""

    def __post_init__(self):
        if self.kind not in (CLEAN, NOISY):
            raise ScheduleError(f"{self.id}: unknown kind {self.kind!r}")
        if self.length_frames <= 0:
            raise ScheduleError(f"{self.id}: length_frames must be positive")
        if (self.snr_db is None) != (self.kind == CLEAN):
            raise ScheduleError(f"{self.id}: snr_db is required for mixtures and forbidden for clean data")


@dataclass
class Batch:
    kind: str
    ids: list[str]


@dataclass
class BatchPlan:
    phase: str
    batches: list[Batch] = field(default_factory=list)

    def __len__(self):
        return len(self.batches)

    def to_dict(self) -> dict:
        return {"phase": self.phase, "batches": [{"kind": b.kind, "ids": list(b.ids)} for b in self.batches]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BatchPlan":
        return cls(d["phase"], [Batch(b["kind"], list(b["ids"])) for b in d["batches"]])


def _chunk(items: Sequence[UtteranceMeta], kind: str, batch_size: int) -> list[Batch]:
    return [Batch(kind, [u.id for u in items[k : k + batch_size]]) for k in range(0, len(items), batch_size)]


def _check_inputs(clean, noisy, batch_size):
    if batch_size < 1:
        raise ScheduleError("batch_size must be >= 1")
    if not clean and not noisy:
        raise ScheduleError("nothing to schedule: both utterance lists are empty")
    for u in clean:
        if u.kind != CLEAN:
            raise ScheduleError(f"{u.id} is not a clean utterance")
    for u in noisy:
        if u.kind != NOISY:
            raise ScheduleError(f"{u.id} is not a multi-speaker mixture")


def noisy_sort_key(u: UtteranceMeta, signed: bool = False) -> float:
    return u.snr_db if signed else abs(u.snr_db)


def build_curriculum(clean: Sequence[UtteranceMeta], noisy: Sequence[UtteranceMeta],
                     batch_size: int, seed: int = 0, signed_snr: bool = False) -> BatchPlan:
    """Sorted, alternating plan. ``seed`` is unused; the order is fully determined by the data."""
    _check_inputs(clean, noisy, batch_size)
    clean_sorted = sorted(clean, key=lambda u: (u.length_frames, u.id))
    noisy_sorted = sorted(noisy, key=lambda u: (noisy_sort_key(u, signed_snr), u.id))
    cb = _chunk(clean_sorted, CLEAN, batch_size)
    nb = _chunk(noisy_sorted, NOISY, batch_size)
    batches = []
    for k in range(max(len(cb), len(nb))):
        if k < len(cb):
            batches.append(cb[k])
        if k < len(nb):
            batches.append(nb[k])
    return BatchPlan(CURRICULUM, batches)


def build_shuffled(clean: Sequence[UtteranceMeta], noisy: Sequence[UtteranceMeta],
                   batch_size: int, seed: int) -> BatchPlan:
    _check_inputs(clean, noisy, batch_size)
    rng = np.random.default_rng(seed)
    clean = [clean[k] for k in rng.permutation(len(clean))]
    noisy = [noisy[k] for k in rng.permutation(len(noisy))]
    cb = _chunk(clean, CLEAN, batch_size)
    nb = _chunk(noisy, NOISY, batch_size)
    batches = []
    ci = ni = 0
    while ci < len(cb) or ni < len(nb):
        left_c, left_n = len(cb) - ci, len(nb) - ni
        if rng.random() * (left_c + left_n) < left_c:
            batches.append(cb[ci])
            ci += 1
        else:
            batches.append(nb[ni])
            ni += 1
    return BatchPlan(SHUFFLED, batches)


def plan_for_epoch(epoch: int, clean, noisy, batch_size: int, seed: int,
                   curriculum_epochs: int = 1, signed_snr: bool = False) -> BatchPlan:
    """Curriculum plan for the first ``curriculum_epochs`` epochs, shuffled afterwards."""
    if epoch < curriculum_epochs:
        return build_curriculum(clean, noisy, batch_size, seed, signed_snr)
    epoch_seed = int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])
    return build_shuffled(clean, noisy, batch_size, epoch_seed)


class EpochIterator:
    """Iterates a plan once; ``cursor`` is the index of the next batch and can be saved."""

    def __init__(self, plan: BatchPlan, cursor: int = 0):
        if not 0 <= cursor <= len(plan):
            raise ScheduleError(f"cursor {cursor} outside plan of {len(plan)} batches")
        self.plan = plan
        self.cursor = cursor

    def __iter__(self) -> Iterator[Batch]:
        return self

    def __next__(self) -> Batch:
        if self.cursor >= len(self.plan):
            raise StopIteration
        batch = self.plan.batches[self.cursor]
        self.cursor += 1
        return batch


def validate_plan(plan: BatchPlan, utterances: Sequence[UtteranceMeta],
                  signed_snr: bool = False) -> list[str]:
    """Human-readable invariant violations; empty when the plan is sound."""
    problems = []
    meta = {u.id: u for u in utterances}
    seen: dict[str, int] = {}
    for b, batch in enumerate(plan.batches):
        if not batch.ids:
            problems.append(f"batch {b} is empty")
        for uid in batch.ids:
            if uid not in meta:
                problems.append(f"batch {b}: unknown utterance {uid}")
                continue
            if meta[uid].kind != batch.kind:
                problems.append(f"batch {b}: {uid} is {meta[uid].kind} inside a {batch.kind} batch")
            seen[uid] = seen.get(uid, 0) + 1
    for uid, n in seen.items():
        if n > 1:
            problems.append(f"{uid} appears {n} times")
    missing = sorted(set(meta) - set(seen))
    if missing:
        problems.append(f"{len(missing)} utterances never scheduled, e.g. {missing[0]}")

    if plan.phase == CURRICULUM:
        def keys(kind, key):
            return [[key(meta[u]) for u in b.ids if u in meta] for b in plan.batches if b.kind == kind]

        for kind, key in ((CLEAN, lambda u: u.length_frames),
                          (NOISY, lambda u: noisy_sort_key(u, signed_snr))):
            flat = [k for ks in keys(kind, key) for k in ks]
            if any(a > b for a, b in zip(flat, flat[1:])):
                problems.append(f"{kind} batches are not sorted ascending")
        kinds = [b.kind for b in plan.batches]
        n_clean, n_noisy = kinds.count(CLEAN), kinds.count(NOISY)
        alternating = 2 * min(n_clean, n_noisy)
        for k in range(1, alternating):
            if kinds[k] == kinds[k - 1]:
                problems.append(f"batches {k - 1} and {k} share kind before either kind is exhausted")
                break
    return problems
