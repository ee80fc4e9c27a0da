"""CTC loss, gradient and decoding on a single utterance.

Conventions used throughout the package:

* a posteriorgram is a float64 array of shape (T, C) holding per-frame
  log-probabilities, with column 0 reserved for the blank symbol and
  columns 1..C-1 for vocabulary tokens;
* label sequences are lists of integer token ids in 1..C-1;
* alignment paths are length-T sequences over 0..C-1 (0 = blank).

All lattice arithmetic is done in log space.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BLANK = 0

NEG_INF = -np.inf


class InfeasibleTargetError(ValueError):
    """No alignment path of the given length collapses to the target."""


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(x))) with max subtraction; rows may contain -inf."""
    m = np.max(x, axis=-1)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe_m + np.log(np.sum(np.exp(x - safe_m[..., None]), axis=-1))
    return np.where(np.isfinite(m), out, NEG_INF)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of an (T, C) logit matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    return logits - logsumexp_rows(logits)[..., None]


def _check_posteriorgram(log_probs: np.ndarray) -> np.ndarray:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] < 1 or log_probs.shape[1] < 2:
        raise ValueError(f"posteriorgram must be (T, C) with T>=1, C>=2, got {log_probs.shape}")
    if not np.isfinite(log_probs).all():
        raise ValueError("posteriorgram contains non-finite entries")
    row_mass = logsumexp_rows(log_probs)
    if np.max(np.abs(row_mass)) > 1e-9:
        raise ValueError("posteriorgram rows are not normalized (exp-sums differ from 1)")
    return log_probs


def _check_target(target: Sequence[int], n_classes: int) -> list[int]:
    labels = [int(u) for u in target]
    for u in labels:
        if not 1 <= u < n_classes:
            raise ValueError(f"target token {u} outside vocabulary range 1..{n_classes - 1}")
    return labels


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames that admit an alignment: U plus one per adjacent repeat."""
    labels = list(target)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def collapse(path: Sequence[int]) -> list[int]:
    """Merge runs of identical tokens, then drop blanks."""
    out: list[int] = []
    prev = None
    for a in path:
        if a != prev and a != BLANK:
            out.append(int(a))
        prev = a
    return out


def canonical_path(target: Sequence[int], frames: int) -> list[int]:
    """A length-`frames` path collapsing to `target`: blank-separate repeats, pad with blanks."""
    path: list[int] = []
    prev = None
    for u in target:
        if u == prev:
            path.append(BLANK)
        path.append(int(u))
        prev = u
    if len(path) > frames:
        raise InfeasibleTargetError(f"target needs {len(path)} frames, only {frames} available")
    path.extend([BLANK] * (frames - len(path)))
    return path


@dataclass
class CtcLossResult:
    loss: float
    logit_grads: np.ndarray  # (T, C) gradient w.r.t. pre-softmax logits


def _lattice(labels: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Blank-interleaved state labels (2U+1,) and the skip-transition mask."""
    U = len(labels)
    lab = np.zeros(2 * U + 1, dtype=np.int64)
    lab[1::2] = labels
    # a skip s-2 -> s is allowed only into a token state whose token differs
    # from the one two states back
    can_skip = np.zeros(2 * U + 1, dtype=bool)
    if U > 0:
        can_skip[1::2] = True
        can_skip[1] = False
        if U > 1:
            same = lab[3::2] == lab[1:-2:2]
            can_skip[3::2] = ~same
    return lab, can_skip


def ctc_loss(log_probs: np.ndarray, target: Sequence[int]) -> CtcLossResult:
    """Negative log-likelihood of `target` plus its exact logit gradient.

    Runs the forward-backward recursion over the blank-interleaved lattice in
    log space. The returned gradient is with respect to the pre-softmax logits
    that produced `log_probs`, i.e. softmax(logits) minus the per-class
    occupancy; each gradient row therefore sums to zero.

    Raises InfeasibleTargetError when T < U + (adjacent repeats).
    """
    log_probs = _check_posteriorgram(log_probs)
    T, C = log_probs.shape
    labels = _check_target(target, C)
    if min_frames(labels) > T:
        raise InfeasibleTargetError(
            f"target of length {len(labels)} with repeats needs {min_frames(labels)} frames, got {T}"
        )

    lab, can_skip = _lattice(labels)
    S = lab.shape[0]
    emit = log_probs[:, lab]  # (T, S)

    log_alpha = np.full((T, S), NEG_INF)
    log_alpha[0, 0] = emit[0, 0]
    if S > 1:
        log_alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = log_alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        trans = np.logaddexp(stay, step)
        if S > 2:
            skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
            trans = np.where(can_skip, np.logaddexp(trans, skip), trans)
        log_alpha[t] = trans + emit[t]

    if S > 1:
        log_like = np.logaddexp(log_alpha[T - 1, S - 1], log_alpha[T - 1, S - 2])
    else:
        log_like = log_alpha[T - 1, 0]

    log_beta = np.full((T, S), NEG_INF)
    log_beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        log_beta[T - 1, S - 2] = emit[T - 1, S - 2]
    # mirrored skip mask: a skip s -> s+2 out of state s is the reverse of the
    # forward skip into s+2
    can_skip_rev = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip_rev[:-2] = can_skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = log_beta[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        trans = np.logaddexp(stay, step)
        if S > 2:
            skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
            trans = np.where(can_skip_rev, np.logaddexp(trans, skip), trans)
        log_beta[t] = trans + emit[t]

    # state occupancies: alpha and beta both include the emission at t, so one
    # factor is divided back out
    log_gamma = log_alpha + log_beta - emit

    probs = np.exp(log_probs)
    grads = probs.copy()
    for c in set([BLANK] + labels):
        cols = np.nonzero(lab == c)[0]
        occ = logsumexp_rows(log_gamma[:, cols]) - log_like
        grads[:, c] -= np.exp(occ)

    loss = -float(log_like)
    if not math.isfinite(loss) or not np.isfinite(grads).all():
        raise InfeasibleTargetError("alignment lattice produced no probability mass")
    return CtcLossResult(loss=loss, logit_grads=grads)


def brute_force_ctc_loss(log_probs: np.ndarray, target: Sequence[int]) -> float:
    """Oracle loss by full path enumeration; refuses instances with C**T > 1e6.

    Sums the probability of every length-T path whose collapse equals the
    target. Raises InfeasibleTargetError when no path matches, mirroring
    ctc_loss's error case.
    """
    log_probs = _check_posteriorgram(log_probs)
    T, C = log_probs.shape
    labels = _check_target(target, C)
    if C**T > 10**6:
        raise ValueError(f"enumeration over {C}**{T} paths refused (limit 1e6)")

    total = 0.0
    probs = np.exp(log_probs)
    for path in itertools.product(range(C), repeat=T):
        if collapse(path) == labels:
            p = 1.0
            for t, a in enumerate(path):
                p *= probs[t, a]
            total += p
    if total == 0.0:
        raise InfeasibleTargetError("no path collapses to the target")
    return -math.log(total)


def best_path_decode(log_probs: np.ndarray) -> list[int]:
    """Per-frame argmax followed by collapse; ties go to the lowest index."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    return collapse(np.argmax(log_probs, axis=1))
