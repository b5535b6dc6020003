"""Separation and recognition scoring."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SI_SDR_CAP_DB = 100.0

__all__ = [
    "MetricError",
    "si_sdr",
    "SiSdrReport",
    "si_sdr_report",
    "best_permutation_si_sdr",
    "ErrorRateReport",
    "edit_distance",
    "cer",
    "wer",
]


class MetricError(ValueError):
    pass


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, both signals made zero-mean first.

    Perfect reconstructions (and anything above the cap) report SI_SDR_CAP_DB.
    """
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.shape != ref.shape or est.size == 0:
        raise MetricError(f"length mismatch or empty input: {est.size} vs {ref.size}")
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = ref @ ref
    if ref_energy == 0:
        raise MetricError("reference signal is zero")
    target = (est @ ref) / ref_energy * ref
    err = est - target
    err_energy = err @ err
    if err_energy == 0:
        return SI_SDR_CAP_DB
    return float(min(10 * np.log10((target @ target) / err_energy), SI_SDR_CAP_DB))


@dataclass
class SiSdrReport:
    si_sdr_db: list[float]
    capped: list[bool]

    @property
    def mean(self) -> float:
        return float(np.mean(self.si_sdr_db))


def si_sdr_report(estimates: Sequence, references: Sequence) -> SiSdrReport:
    scores = [si_sdr(e, r) for e, r in zip(estimates, references, strict=True)]
    return SiSdrReport(scores, [s >= SI_SDR_CAP_DB for s in scores])


def best_permutation_si_sdr(estimates: Sequence, references: Sequence) -> tuple[tuple[int, ...], SiSdrReport]:
    """Pair estimate ``perm[k]`` with reference ``k`` so that the mean SI-SDR is largest."""
    J = len(references)
    if len(estimates) != J:
        raise MetricError(f"{len(estimates)} estimates for {J} references")
    table = np.array([[si_sdr(e, r) for r in references] for e in estimates])
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(J)):
        score = sum(table[perm[k], k] for k in range(J))
        if score > best_score:
            best, best_score = perm, score
    scores = [float(table[best[k], k]) for k in range(J)]
    return tuple(best), SiSdrReport(scores, [s >= SI_SDR_CAP_DB for s in scores])


@dataclass
class ErrorRateReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        if self.reference_length == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.reference_length


def edit_distance(hyp: Sequence, ref: Sequence) -> ErrorRateReport:
    """Levenshtein alignment with unit costs.

    When several alignments are optimal, the backtrace prefers a
    substitution (or match), then an insertion, then a deletion.
    """
    hyp, ref = list(hyp), list(ref)
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)

    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorRateReport(int(s), ins, dels, n)


def cer(hyp: str, ref: str) -> ErrorRateReport:
    """Character error rate; whitespace is not scored."""
    return edit_distance([ch for ch in hyp if not ch.isspace()], [ch for ch in ref if not ch.isspace()])


def wer(hyp: str, ref: str) -> ErrorRateReport:
    return edit_distance(hyp.split(), ref.split())
