"""Connectionist temporal classification: log-space forward-backward loss and greedy decoding."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .text import CharSet, decode_text

log = logging.getLogger(__name__)

NEG_INF = -np.inf


def min_alignable_length(labels: Sequence[int]) -> int:
    """Fewest frames that can emit ``labels``: one per label plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extend(labels: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _skip_allowed(ext: np.ndarray, blank: int) -> np.ndarray:
    """skip[s] is True when state s may be entered from s - 2."""
    skip = np.zeros(ext.shape[0], dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def ctc_forward_backward(log_probs: np.ndarray, labels: Sequence[int], blank: int = 0):
    """Return ``(loss, grad)`` for one utterance.

    ``log_probs`` is (T, C).  ``loss = -ln p(labels | x)`` summed over every
    blank-augmented alignment; ``grad`` is d loss / d log_probs with each entry
    treated as a free variable.  An infeasible target yields ``(inf, zeros)``.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ValueError(f"log_probs must be (T >= 1, C), got {lp.shape}")
    T, C = lp.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label ids must lie in [0, {C}), got {labels.tolist()}")
    if np.any(labels == blank):
        raise ValueError("labels must not contain the blank index")
    if T < min_alignable_length(labels):
        return float("inf"), np.zeros_like(lp)

    ext = _extend(labels, blank)
    S = ext.shape[0]
    skip = _skip_allowed(ext, blank)
    emit = lp[:, ext]  # (T, S)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if not np.isfinite(log_p):
        return float("inf"), np.zeros_like(lp)

    gamma = alpha + beta - emit  # log of total path mass through (t, s)
    occ = np.full((T, C), NEG_INF)
    for s in range(S):
        occ[:, ext[s]] = np.logaddexp(occ[:, ext[s]], gamma[:, s])
    grad = -np.exp(occ - log_p)
    return float(-log_p), grad


def ctc_loss(log_probs: np.ndarray, labels: Sequence[int], blank: int = 0) -> float:
    return ctc_forward_backward(log_probs, labels, blank)[0]


def ctc_loss_batch(
    log_probs: Tensor,
    labels: Sequence[Sequence[int]],
    input_lengths: Sequence[int],
    blank: int = 0,
) -> tuple[Tensor | None, list[int]]:
    """Mean CTC loss over a (B, T, C) batch of log-probabilities.

    Utterances whose target cannot be aligned in their frame budget are left
    out of the mean; their indices are returned alongside the loss (which is
    ``None`` if nothing is feasible).  Non-finite inputs yield a non-finite loss.
    """
    B, T, C = log_probs.shape
    grads = np.zeros((B, T, C), dtype=np.float64)
    total = 0.0
    kept: list[int] = []
    skipped: list[int] = []
    for b in range(B):
        n = int(input_lengths[b])
        if n < min_alignable_length(labels[b]):
            skipped.append(b)
            continue
        # a non-finite loss here means broken inputs; it propagates so the caller can abort
        loss, g = ctc_forward_backward(log_probs.data[b, :n], labels[b], blank)
        total += loss
        grads[b, :n] = g
        kept.append(b)
    if skipped:
        log.warning("skipping %d infeasible CTC target(s) in batch: %s", len(skipped), skipped)
    if not kept:
        return None, skipped
    scale = 1.0 / len(kept)
    grads = (grads * scale).astype(log_probs.dtype)
    value = np.asarray(total * scale, dtype=log_probs.dtype)
    return ag._make(value, (log_probs,), lambda g: (g * grads,)), skipped


def greedy_ids(log_probs: np.ndarray, blank: int = 0) -> list[int]:
    """Per-frame argmax (ties go to the lowest index), collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(log_probs), axis=-1)
    out = []
    prev = None
    for k in best.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def greedy_decode(log_probs: np.ndarray, cs: CharSet) -> str:
    return decode_text(greedy_ids(log_probs, cs.blank_index), cs)
