"""Per-stream recognition losses and permutation resolution.

CTC uses blank index 0. All recursions run in log space.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp

log = logging.getLogger(__name__)

BLANK = 0
MAX_PIT_SPEAKERS = 8

__all__ = [
    "LossError",
    "LossProviderError",
    "LossConfig",
    "ctc_feasible",
    "ctc_loss",
    "pit_resolve",
    "combined_loss",
    "AttentionLossProvider",
    "UniformAttentionLoss",
    "loss_matrix",
    "loss_report",
]


class LossError(ValueError):
    pass


class LossProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise LossError(f"interpolation factor must be in [0, 1], got {self.lam}")


def _check_labels(labels, V):
    labels = np.asarray(labels, dtype=int).ravel()
    if np.any(labels == BLANK):
        raise LossError("labels must not contain the blank token 0")
    if np.any(labels < 0) or np.any(labels >= V):
        raise LossError(f"labels must lie in [1, {V - 1}]")
    return labels


def ctc_feasible(n_frames: int, labels: Sequence[int]) -> bool:
    """True when ``n_frames`` can emit ``labels`` (each repeat needs a blank between)."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return n_frames >= len(labels) + repeats


def _shift(a: np.ndarray, k: int, fill=-np.inf) -> np.ndarray:
    """``out[s] = a[s - k]``, padded with ``fill``."""
    out = np.full_like(a, fill)
    if abs(k) < len(a):
        if k >= 0:
            out[k:] = a[: len(a) - k]
        else:
            out[:k] = a[-k:]
    return out


def ctc_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``labels`` under CTC and its gradient w.r.t. ``logits``.

    ``logits`` is (T, V) of pre-softmax scores. Infeasible instances give
    ``(inf, zeros)`` and log a warning instead of raising, so that PIT can
    rule them out.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise LossError(f"logits must be (T >= 1, V), got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise LossError("logits must be finite")
    T, V = logits.shape
    labels = _check_labels(labels, V)
    logp = log_softmax(logits, axis=1)

    if not ctc_feasible(T, labels):
        log.warning("CTC instance infeasible: %d frames for %d labels", T, len(labels))
        return float("inf"), np.zeros_like(logits)

    ext = np.full(2 * len(labels) + 1, BLANK)
    ext[1::2] = labels
    S = len(ext)
    # transitions s-2 -> s allowed for non-blank s differing from ext[s-2]
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = logp[:, ext]  # (T, S)

    neg = -np.inf
    alpha = np.full((T, S), neg)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        jump = np.where(skip, _shift(prev, 2), neg)
        alpha[t] = np.logaddexp(np.logaddexp(prev, _shift(prev, 1)), jump) + emit[t]

    # beta[t, s]: log-prob of emitting frames t+1..T-1 given state s at frame t
    beta = np.full((T, S), neg)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_next = _shift(skip, -2, fill=False)  # may s jump to s+2
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        jump = np.where(skip_next, _shift(nxt, -2), neg)
        beta[t] = np.logaddexp(np.logaddexp(nxt, _shift(nxt, -1)), jump)

    tail = [alpha[T - 1, S - 1]] + ([alpha[T - 1, S - 2]] if S > 1 else [])
    log_lik = logsumexp(tail)

    occupancy = alpha + beta - log_lik  # log posterior of (t, s)
    grad = np.exp(logp)
    for s in range(S):
        grad[:, ext[s]] -= np.exp(occupancy[:, s])
    return float(-log_lik), grad


def pit_resolve(losses) -> tuple[tuple[int, ...], float]:
    """Exhaustive minimum-cost assignment of streams (rows) to references (columns).

    Returns ``(perm, total)`` with ``perm[i]`` the reference index for stream
    ``i``. Ties resolve to the lexicographically smallest permutation.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 2 or losses.shape[0] != losses.shape[1]:
        raise LossError(f"loss matrix must be square, got shape {losses.shape}")
    J = losses.shape[0]
    if J > MAX_PIT_SPEAKERS:
        raise LossError(f"exhaustive search limited to J <= {MAX_PIT_SPEAKERS}")
    rows = np.arange(J)
    best, best_total = None, np.inf
    for perm in itertools.permutations(range(J)):
        total = losses[rows, perm].sum()
        if best is None or total < best_total:
            best, best_total = perm, total
    return tuple(int(p) for p in best), float(best_total)


def combined_loss(ctc, att, perm, cfg: LossConfig = LossConfig()) -> float:
    """``lam * sum_i ctc[i, perm[i]] + (1 - lam) * sum_i att[i, perm[i]]``.

    The same permutation (chosen on CTC alone) indexes both terms.
    """
    ctc = np.asarray(ctc, dtype=np.float64)
    att = np.asarray(att, dtype=np.float64)
    if ctc.shape != att.shape or ctc.ndim != 2 or ctc.shape[0] != ctc.shape[1]:
        raise LossError("ctc and attention loss matrices must both be square and equal-sized")
    if sorted(perm) != list(range(len(ctc))):
        raise LossError(f"{perm!r} is not a permutation of 0..{len(ctc) - 1}")
    rows = np.arange(len(ctc))
    l_ctc = ctc[rows, list(perm)].sum()
    l_att = att[rows, list(perm)].sum()
    if cfg.lam == 1.0:
        return float(l_ctc)
    if cfg.lam == 0.0:
        return float(l_att)
    return float(cfg.lam * l_ctc + (1.0 - cfg.lam) * l_att)


class AttentionLossProvider(Protocol):
    def __call__(self, features: np.ndarray, labels: Sequence[int]) -> float: ...


class UniformAttentionLoss:
    """Cross-entropy of a predictor that is uniform over ``vocab_size`` tokens."""

    def __init__(self, vocab_size: int):
        if vocab_size < 2:
            raise LossError("vocabulary needs at least two tokens")
        self.vocab_size = vocab_size

    def __call__(self, features, labels) -> float:
        return len(labels) * float(np.log(self.vocab_size))


def loss_matrix(streams: Sequence, references: Sequence[Sequence[int]],
                fn: Callable[[object, Sequence[int]], float]) -> np.ndarray:
    """Entry (i, k) = ``fn(streams[i], references[k])``.

    Exceptions from ``fn`` are re-raised as :class:`LossProviderError` naming
    the stream and reference index.
    """
    J = len(streams)
    if len(references) != J:
        raise LossError(f"{J} streams but {len(references)} references")
    out = np.empty((J, J))
    for i, stream in enumerate(streams):
        for k, ref in enumerate(references):
            try:
                out[i, k] = fn(stream, ref)
            except Exception as exc:
                raise LossProviderError(f"loss provider failed on stream {i}, reference {k}: {exc}") from exc
    return out


def loss_report(ctc, perm, cfg: LossConfig, total: float) -> str:
    return json.dumps({
        "per_stream_ctc": np.asarray(ctc).tolist(),
        "chosen_perm": list(perm),
        "lambda": cfg.lam,
        "total": total,
    }, indent=2)
