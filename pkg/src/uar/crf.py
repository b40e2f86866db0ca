"""Linear-chain CRF over per-clip emission scores.

Classes are intentional (0), transitional (1), unintentional (2). The
transition table has a virtual START row at index 0, so row 1 + c scores a
move out of class c; there is no STOP transition. Scoring and the partition
function run on the autodiff tape so the NLL is differentiable with respect
to both emissions and (when trainable) the table. Decoding is plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError

INTENTIONAL, TRANSITIONAL, UNINTENTIONAL = 0, 1, 2
NUM_CLASSES = 3
CLASS_NAMES = ("intentional", "transitional", "unintentional")


@dataclass
class TransitionMatrix:
    table: ad.Tensor  # (num_classes + 1, num_classes), row 0 is START
    mode: str

    @property
    def num_classes(self):
        return self.table.shape[1]

    @property
    def trainable(self):
        return self.mode == "trainable"


def _table_data(trans):
    if isinstance(trans, TransitionMatrix):
        return trans.table
    return trans


def build_transition_matrix(mode, num_classes=NUM_CLASSES, training_labels=None,
                            rng=None, allow_skip=False, forbidden_score=-1.0):
    """Construct the (C+1, C) transition table for the given mode.

    binary: +1 for staying put or advancing one class along
    intentional -> transitional -> unintentional, forbidden_score elsewhere.
    START may enter any class. allow_skip additionally permits jumps over
    intermediate classes (for C=3 that is the direct intentional ->
    unintentional move).

    prior: empirical transition frequencies counted from training label
    sequences, row-normalised; never-seen transitions score forbidden_score.
    The START row holds the empirical distribution of initial labels.

    trainable: N(0, 0.1) init, registered as a parameter.
    """
    c = num_classes
    if mode == "binary":
        m = np.full((c + 1, c), float(forbidden_score))
        m[0, :] = 1.0
        for i in range(c):
            m[1 + i, i] = 1.0
            if i + 1 < c:
                m[1 + i, i + 1] = 1.0
            if allow_skip:
                m[1 + i, i + 2:] = 1.0
        return TransitionMatrix(ad.Tensor(m), mode)
    if mode == "prior":
        if not training_labels:
            raise ParameterError("prior mode needs training label sequences")
        counts = np.zeros((c + 1, c))
        for labels in training_labels:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.size == 0:
                continue
            if labels.min() < 0 or labels.max() >= c:
                raise ParameterError("label outside [0, num_classes)")
            counts[0, labels[0]] += 1
            for a, b in zip(labels[:-1], labels[1:]):
                counts[1 + a, b] += 1
        m = np.full((c + 1, c), float(forbidden_score))
        for row in range(c + 1):
            total = counts[row].sum()
            if total > 0:
                seen = counts[row] > 0
                m[row, seen] = counts[row, seen] / total
        return TransitionMatrix(ad.Tensor(m), mode)
    if mode == "trainable":
        if rng is None:
            raise ParameterError("trainable mode needs an rng")
        m = rng.normal(0.0, 0.1, size=(c + 1, c))
        return TransitionMatrix(ad.Tensor(m, requires_grad=True), mode)
    raise ParameterError(f"unknown transition mode {mode!r}")


def _check_emissions(emissions, c):
    if emissions.data.ndim != 2 or emissions.shape[1] != c:
        raise ShapeError(f"emissions must be (N, {c}), got {emissions.shape}")
    if emissions.shape[0] < 1:
        raise ShapeError("need at least one emission row")


def sequence_score(labels, emissions, trans):
    """Score of one labelling: transition terms (START -> L0 -> ... -> LN-1)
    plus the emission picked at each step."""
    table = _table_data(trans)
    c = table.shape[1]
    _check_emissions(emissions, c)
    labels = np.asarray(labels, dtype=np.int64)
    n = emissions.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError("label outside [0, num_classes)")

    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    tcount = np.zeros((c + 1, c))
    tcount[0, labels[0]] += 1.0
    for a, b in zip(labels[:-1], labels[1:]):
        tcount[1 + a, b] += 1.0
    return ad.add(ad.sum_(ad.mul(emissions, ad.Tensor(onehot))),
                  ad.sum_(ad.mul(table, ad.Tensor(tcount))))


def log_partition(emissions, trans):
    """log-sum-exp over all label sequences, by the forward recursion."""
    table = _table_data(trans)
    c = table.shape[1]
    _check_emissions(emissions, c)
    n = emissions.shape[0]
    alpha = ad.add(ad.slice_(emissions, np.s_[0:1, :]), ad.slice_(table, np.s_[0:1, :]))
    body = ad.slice_(table, np.s_[1:, :])
    for t in range(1, n):
        scores = ad.add(ad.transpose(alpha), body)  # (C, C): prev x next
        alpha = ad.add(ad.logsumexp(scores, axis=0, keepdims=True),
                       ad.slice_(emissions, np.s_[t:t + 1, :]))
    return ad.logsumexp(alpha)


def nll_loss(labels, emissions, trans):
    """Negative log-likelihood of the labelling; non-negative by construction."""
    return ad.add(log_partition(emissions, trans),
                  ad.scale(sequence_score(labels, emissions, trans), -1.0))


def viterbi(emissions, trans):
    """Most likely label sequence by max-product dynamic programming.

    Among equally scoring paths the lexicographically smallest one wins
    (lower class index at the first position where they differ).  The
    recursion therefore runs from the last clip backward, and the forward
    reconstruction takes the lowest optimal class at every step; a
    backward-pointer sweep would instead settle ties from the tail.
    """
    table = _table_data(trans)
    e = emissions.data if isinstance(emissions, ad.Tensor) else np.asarray(emissions, dtype=np.float64)
    m = table.data if isinstance(table, ad.Tensor) else np.asarray(table, dtype=np.float64)
    c = m.shape[1]
    if e.ndim != 2 or e.shape[1] != c or e.shape[0] < 1:
        raise ShapeError(f"emissions must be (N, {c}), got {e.shape}")
    n = e.shape[0]

    # beta[s]: best score of a path suffix that starts in state s at step t
    beta = e[n - 1].copy()
    nextptr = np.zeros((n, c), dtype=np.int64)
    for t in range(n - 2, -1, -1):
        cand = m[1:] + beta[None, :]  # cand[here, next]
        nextptr[t] = cand.argmax(axis=1)
        beta = e[t] + cand.max(axis=1)

    path = np.zeros(n, dtype=np.int64)
    path[0] = int((m[0] + beta).argmax())
    for t in range(1, n):
        path[t] = nextptr[t - 1, path[t - 1]]
    return path


# -- JSON round trip -------------------------------------------------------


def transition_to_json(trans):
    return {
        "mode": trans.mode,
        "num_classes": trans.num_classes,
        "values": trans.table.data.tolist(),
    }


def transition_from_json(obj):
    values = np.asarray(obj["values"], dtype=np.float64)
    c = int(obj["num_classes"])
    if values.shape != (c + 1, c):
        raise ShapeError(f"transition table must be ({c + 1}, {c}), got {values.shape}")
    mode = obj["mode"]
    return TransitionMatrix(ad.Tensor(values, requires_grad=(mode == "trainable")), mode)
