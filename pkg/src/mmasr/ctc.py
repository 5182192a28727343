"""CTC loss via the log-space forward recursion, greedy decoding, and a
brute-force alignment-enumeration oracle for testing.

Blank is token id 0 everywhere.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import tensor as tn
from .errors import FeasibilityError, NumericError, OracleSizeError
from .tensor import Tensor

BLANK = 0

NEG_INF = -np.inf


def count_repeats(labels):
    return sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def check_feasible(t_len, labels):
    r = count_repeats(labels)
    if t_len < len(labels) + r:
        raise FeasibilityError(
            f"CTC infeasible: T_len={t_len} < U={len(labels)} + repeats={r}"
        )


def _check_log_probs(log_probs):
    sums = np.exp(log_probs.data).sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-9):
        raise NumericError("CTC logits rows do not exp-sum to 1")


def ctc_loss(log_probs, labels):
    """Negative log-likelihood of ``labels`` under per-frame log-probs.

    ``log_probs`` is a Tensor [T x (V+1)] of log-softmax rows with blank at
    index 0; gradients flow back through the recursion.
    """
    labels = list(labels)
    t_len = log_probs.shape[0]
    check_feasible(t_len, labels)
    _check_log_probs(log_probs)

    ext = [BLANK]
    for tok in labels:
        ext.extend((tok, BLANK))
    L = len(ext)
    ext_arr = np.asarray(ext, dtype=np.int64)

    # Mask for the skip transition alpha[i-2] -> alpha[i]: disallowed into a
    # blank or when the skipped-over label repeats.
    skip_ok = np.full(L, NEG_INF)
    for i in range(2, L):
        if ext[i] != BLANK and ext[i] != ext[i - 2]:
            skip_ok[i] = 0.0
    skip_mask = Tensor(skip_ok)

    def emit(t):
        return tn.take_entries(log_probs, np.full(L, t, dtype=np.int64), ext_arr)

    init = np.full(L, NEG_INF)
    init[0] = 0.0
    if L > 1:
        init[1] = 0.0
    alpha = tn.add(emit(0), Tensor(init))

    def shift(v, k):
        pad = Tensor(np.full(k, NEG_INF))
        return tn.concat_rows([pad, tn.slice_rows(v, 0, L - k)]) if L > k else pad

    for t in range(1, t_len):
        stay = alpha
        step = shift(alpha, 1)
        acc = tn.logaddexp(stay, step)
        if L > 2:
            skip = tn.add(shift(alpha, 2), skip_mask)
            acc = tn.logaddexp(acc, skip)
        alpha = tn.add(acc, emit(t))

    tail = tn.slice_rows(alpha, L - 1, L)
    if L > 1:
        total = tn.logaddexp(tail, tn.slice_rows(alpha, L - 2, L - 1))
    else:
        total = tail
    return tn.scale(tn.sum_all(total), -1.0)


def collapse(path):
    """Remove adjacent repeats, then blanks."""
    out = []
    prev = None
    for tok in path:
        if tok != prev:
            if tok != BLANK:
                out.append(tok)
            prev = tok
    return out


def ctc_brute_force(log_probs, labels, max_t=8, max_v=4):
    """Enumerate every frame labelling and log-sum those collapsing to ``labels``.

    Only valid for tiny problems; raises OracleSizeError beyond the bounds.
    Returns +inf when no path collapses to the labels.
    """
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    t_len, n_sym = lp.shape
    if t_len > max_t or n_sym - 1 > max_v:
        raise OracleSizeError(
            f"brute force limited to T<={max_t}, V<={max_v}; got T={t_len}, V={n_sym - 1}"
        )
    labels = list(labels)
    terms = []
    for path in itertools.product(range(n_sym), repeat=t_len):
        if collapse(path) == labels:
            terms.append(sum(lp[t, s] for t, s in enumerate(path)))
    if not terms:
        return math.inf
    m = max(terms)
    return -(m + math.log(sum(math.exp(x - m) for x in terms)))


def ctc_greedy(log_probs):
    """Per-frame argmax, collapse repeats, drop blanks. Ties go to the lower id."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return collapse(lp.argmax(axis=1).tolist())
