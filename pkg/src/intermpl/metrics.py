"""Word-level edit distance, WER and WER recovery rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    insertions: int
    deletions: int
    ref_count: int
    wer: float


def split_words(text: str, separator: str) -> list[str]:
    """Split a decoded base-level string into words, dropping empty pieces."""
    return [w for w in text.split(separator) if w]


def edit_ops(hyp: Sequence[str], ref: Sequence[str]) -> tuple[int, int, int]:
    """(S, I, D) of a minimal alignment; among optimal ones, fewest substitutions.

    Dynamic program over (distance, substitutions) compared lexicographically.
    Given the distance and substitution count, insertions and deletions are
    pinned by the length difference, so the decomposition is deterministic.
    """
    n, m = len(ref), len(hyp)
    # dp[j] = (distance, substitutions) aligning ref[:i] with hyp[:j]
    prev = [(j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0)] + [(0, 0)] * m
        for j in range(1, m + 1):
            d_del = (prev[j][0] + 1, prev[j][1])
            d_ins = (cur[j - 1][0] + 1, cur[j - 1][1])
            if ref[i - 1] == hyp[j - 1]:
                d_sub = prev[j - 1]
            else:
                d_sub = (prev[j - 1][0] + 1, prev[j - 1][1] + 1)
            cur[j] = min(d_del, d_ins, d_sub)
        prev = cur
    dist, subs = prev[m]
    ins = (dist - subs + (m - n)) // 2
    dels = (dist - subs - (m - n)) // 2
    return subs, ins, dels


def word_error_rate(hyp: Sequence[str], ref: Sequence[str]) -> WerResult:
    """WER of one hypothesis against a non-empty reference."""
    if not ref:
        raise ValueError("reference word list must be non-empty")
    s, i, d = edit_ops(hyp, ref)
    return WerResult(s, i, d, len(ref), (s + i + d) / len(ref))


def corpus_wer(results: Sequence[WerResult]) -> WerResult:
    """Pooled WER: summed edit operations over summed reference words."""
    s = sum(r.substitutions for r in results)
    i = sum(r.insertions for r in results)
    d = sum(r.deletions for r in results)
    n = sum(r.ref_count for r in results)
    if n == 0:
        raise ValueError("no reference words")
    return WerResult(s, i, d, n, (s + i + d) / n)


def wer_recovery_rate(seed_wer: float, model_wer: float, oracle_wer: float) -> float:
    """Percentage of the seed-to-oracle WER gap recovered by the model.

    May exceed 100 or be negative; requires seed_wer > oracle_wer.
    """
    if seed_wer <= oracle_wer:
        raise ValueError(
            f"seed WER ({seed_wer}) must exceed oracle WER ({oracle_wer})"
        )
    return 100.0 * (seed_wer - model_wer) / (seed_wer - oracle_wer)
