"""Linear-chain CRF: path scores, forward algorithm, forward-backward
gradients and Viterbi decoding, all in log space.

Emissions are ``(T, L)`` arrays (or ``(B, T, L)`` for the batched entry
points, with per-sequence lengths).  A path ``y`` scores

    start[y0] + sum_t e[t, y_t] + sum_t trans[y_t, y_t+1] + end[y_last]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CrfParams:
    transitions: np.ndarray  # (L, L), transitions[i, j] scores label j following label i
    start_scores: np.ndarray  # (L,)
    end_scores: np.ndarray  # (L,)

    def __post_init__(self):
        L = self.num_labels
        if self.transitions.shape != (L, L) or self.end_scores.shape != (L,):
            raise ValueError(
                f"inconsistent CRF shapes: transitions {self.transitions.shape}, "
                f"start {self.start_scores.shape}, end {self.end_scores.shape}"
            )

    @property
    def num_labels(self) -> int:
        return self.start_scores.shape[0]

    @classmethod
    def zeros(cls, num_labels: int = 2) -> "CrfParams":
        return cls(np.zeros((num_labels, num_labels)), np.zeros(num_labels), np.zeros(num_labels))


@dataclass(frozen=True)
class CrfGrads:
    emissions: np.ndarray
    transitions: np.ndarray
    start_scores: np.ndarray
    end_scores: np.ndarray


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _check(e: np.ndarray, p: CrfParams) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] != p.num_labels:
        raise ValueError(f"emissions of shape {e.shape} do not match {p.num_labels} labels")
    return e


def _check_batch(e: np.ndarray, lengths, p: CrfParams) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 3 or e.shape[2] != p.num_labels:
        raise ValueError(f"batched emissions of shape {e.shape} do not match {p.num_labels} labels")
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (e.shape[0],) or np.any(lengths < 1) or np.any(lengths > e.shape[1]):
        raise ValueError(f"invalid sequence lengths {lengths.tolist()} for emissions {e.shape}")
    return e, lengths


def sequence_score(e, p: CrfParams, y) -> float:
    e = _check(e, p)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (e.shape[0],) or np.any(y < 0) or np.any(y >= p.num_labels):
        raise ValueError(f"label sequence {y.tolist()} does not fit emissions {e.shape}")
    score = p.start_scores[y[0]] + e[np.arange(len(y)), y].sum()
    score += p.transitions[y[:-1], y[1:]].sum() + p.end_scores[y[-1]]
    return float(score)


def _forward(e: np.ndarray, lengths: np.ndarray, p: CrfParams) -> np.ndarray:
    B, T, L = e.shape
    alpha = np.empty((B, T, L))
    alpha[:, 0] = p.start_scores + e[:, 0]
    for t in range(1, T):
        step = _logsumexp(alpha[:, t - 1, :, None] + p.transitions[None], axis=1) + e[:, t]
        alpha[:, t] = np.where((t < lengths)[:, None], step, alpha[:, t - 1])
    return alpha


def _backward(e: np.ndarray, lengths: np.ndarray, p: CrfParams) -> np.ndarray:
    B, T, L = e.shape
    beta = np.empty((B, T, L))
    beta[:, T - 1] = p.end_scores
    for t in range(T - 2, -1, -1):
        step = _logsumexp(p.transitions[None] + (e[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        beta[:, t] = np.where((t >= lengths - 1)[:, None], p.end_scores, step)
    return beta


def batch_log_partition(e, lengths, p: CrfParams) -> np.ndarray:
    e, lengths = _check_batch(e, lengths, p)
    alpha = _forward(e, lengths, p)
    last = alpha[np.arange(e.shape[0]), lengths - 1]
    return _logsumexp(last + p.end_scores, axis=1)


def log_partition(e, p: CrfParams) -> float:
    e = _check(e, p)
    return float(batch_log_partition(e[None], [e.shape[0]], p)[0])


def batch_marginals(e, lengths, p: CrfParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(log_z, unary, pairwise)`` with ``unary[b, t, l] = P(y_t = l)``
    and ``pairwise[b, t, i, j] = P(y_t = i, y_t+1 = j)``; entries past a
    sequence's length are zero."""
    e, lengths = _check_batch(e, lengths, p)
    B, T, L = e.shape
    alpha = _forward(e, lengths, p)
    beta = _backward(e, lengths, p)
    log_z = _logsumexp(alpha[np.arange(B), lengths - 1] + p.end_scores, axis=1)
    valid = np.arange(T)[None, :] < lengths[:, None]
    unary = np.exp(alpha + beta - log_z[:, None, None]) * valid[:, :, None]
    pairwise = np.zeros((B, max(T - 1, 0), L, L))
    if T > 1:
        log_pair = (
            alpha[:, :-1, :, None]
            + p.transitions[None, None]
            + (e[:, 1:] + beta[:, 1:])[:, :, None, :]
            - log_z[:, None, None, None]
        )
        pair_valid = valid[:, 1:]
        pairwise = np.exp(log_pair) * pair_valid[:, :, None, None]
    return log_z, unary, pairwise


def batch_nll_and_grad(e, lengths, p: CrfParams, y) -> tuple[np.ndarray, CrfGrads]:
    """Per-sequence negative log-likelihoods and their gradients.

    The emission gradient is per sequence; parameter gradients are summed
    over the batch (the gradient of ``nll.sum()``).
    """
    e, lengths = _check_batch(e, lengths, p)
    y = np.asarray(y, dtype=np.int64)
    B, T, L = e.shape
    if y.shape != (B, T):
        raise ValueError(f"labels of shape {y.shape} do not match emissions {e.shape}")
    valid = np.arange(T)[None, :] < lengths[:, None]
    y = np.where(valid, y, 0)
    if np.any(y < 0) or np.any(y >= L):
        raise ValueError("label index out of range")

    log_z, unary, pairwise = batch_marginals(e, lengths, p)
    rows = np.arange(B)
    last = y[rows, lengths - 1]
    gold_emit = (np.take_along_axis(e, y[:, :, None], axis=2)[:, :, 0] * valid).sum(axis=1)
    pair_valid = valid[:, 1:]
    gold_trans = (p.transitions[y[:, :-1], y[:, 1:]] * pair_valid).sum(axis=1)
    gold = p.start_scores[y[:, 0]] + gold_emit + gold_trans + p.end_scores[last]
    nll = log_z - gold

    onehot = np.eye(L)[y] * valid[:, :, None]
    d_emit = unary - onehot
    d_trans = pairwise.sum(axis=(0, 1))
    np.add.at(d_trans, (y[:, :-1][pair_valid], y[:, 1:][pair_valid]), -1.0)
    d_start = unary[:, 0].sum(axis=0) - np.bincount(y[:, 0], minlength=L)
    d_end = unary[rows, lengths - 1].sum(axis=0) - np.bincount(last, minlength=L)
    return nll, CrfGrads(d_emit, d_trans, d_start, d_end)


def nll_and_grad(e, p: CrfParams, y) -> tuple[float, CrfGrads]:
    e = _check(e, p)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (e.shape[0],):
        raise ValueError(f"label sequence of length {y.shape} does not match emissions {e.shape}")
    nll, g = batch_nll_and_grad(e[None], [e.shape[0]], p, y[None])
    return float(nll[0]), CrfGrads(g.emissions[0], g.transitions, g.start_scores, g.end_scores)


def viterbi(e, p: CrfParams) -> list[int]:
    """Highest-scoring label path.  Ties go to the lower label index, both
    for the final label and at every backpointer."""
    e = _check(e, p)
    T, L = e.shape
    delta = p.start_scores + e[0]
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + p.transitions
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + e[t]
    best = int(np.argmax(delta + p.end_scores))
    path = [best]
    for t in range(T - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    return path[::-1]
