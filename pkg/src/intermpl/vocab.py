"""Nested subword vocabularies built by greedy pair merging.

A hierarchy is a single ordered token list over a base alphabet: ids are
1-based (0 is the CTC blank everywhere), the first len(alphabet) ids are the
alphabet characters in sorted order, and every later id was produced by one
pair merge. Level i exposes the first sizes[i] tokens, so smaller levels are
literal prefixes of larger ones and any string is encodable at every level.

File format (`save` / `load`): one header line with the level sizes, then one
token per line in id order. Merged-token lines carry the two parent tokens
separated by a tab so the merge rules reload exactly; the token itself is
their concatenation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence


@dataclass(frozen=True)
class VocabHierarchy:
    alphabet: str                         # sorted base characters
    sizes: tuple[int, ...]                # non-decreasing level sizes
    merges: tuple[tuple[str, str], ...]   # parent-token pairs, in merge order

    def __post_init__(self):
        if list(self.alphabet) != sorted(set(self.alphabet)):
            raise ValueError("alphabet must be sorted and duplicate-free")
        if any(len(c) != 1 or c in "\t\n\r" for c in self.alphabet):
            raise ValueError("alphabet characters must be single non-control characters")
        if any(a > b for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("level sizes must be non-decreasing")
        if not self.sizes or self.sizes[0] < len(self.alphabet):
            raise ValueError("smallest level size cannot be below the alphabet size")
        if self.sizes[-1] != len(self.alphabet) + len(self.merges):
            raise ValueError("merge list length inconsistent with the deepest level size")

    @property
    def n_levels(self) -> int:
        return len(self.sizes)

    def size(self, level: int) -> int:
        return self.sizes[level]

    def tokens(self, level: int | None = None) -> list[str]:
        """Token strings in id order for a level (deepest by default)."""
        out = list(self.alphabet) + [a + b for a, b in self.merges]
        return out if level is None else out[: self.sizes[level]]

    def encode(self, text: str, level: int) -> list[int]:
        """Greedy application of the level's merges, in merge order; 1-based ids."""
        toks = list(text)
        for ch in toks:
            if ch not in self.alphabet:
                raise ValueError(f"character {ch!r} not in the base alphabet")
        n_merges = self.sizes[level] - len(self.alphabet)
        for left, right in self.merges[:n_merges]:
            merged: list[str] = []
            i = 0
            while i < len(toks):
                if i + 1 < len(toks) and toks[i] == left and toks[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(toks[i])
                    i += 1
            toks = merged
        ids = {tok: i + 1 for i, tok in enumerate(self.tokens(level))}
        return [ids[t] for t in toks]

    def decode(self, labels: Sequence[int], level: int) -> str:
        toks = self.tokens(level)
        out = []
        for lid in labels:
            if not 1 <= lid <= len(toks):
                raise ValueError(f"label id {lid} invalid at level {level} (size {len(toks)})")
            out.append(toks[lid - 1])
        return "".join(out)

    def save(self, path: str | Path) -> None:
        lines = [" ".join(str(s) for s in self.sizes)]
        lines.extend(self.alphabet)
        lines.extend(f"{a}\t{b}" for a, b in self.merges)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> VocabHierarchy:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty vocabulary file")
    sizes = tuple(int(s) for s in lines[0].split())
    alphabet: list[str] = []
    merges: list[tuple[str, str]] = []
    for line in lines[1:]:
        if "\t" in line:
            left, right = line.split("\t")
            merges.append((left, right))
        else:
            alphabet.append(line)
    return VocabHierarchy("".join(alphabet), sizes, tuple(merges))


def build_hierarchy(corpus: Sequence[str], sizes: Sequence[int]) -> VocabHierarchy:
    """Greedy frequency-ordered pair merges over the corpus, nested across levels.

    Ties on pair frequency break lexicographically on the (left, right) token
    strings, so construction is deterministic. Raises if the corpus runs out
    of adjacent pairs before the deepest size is reached.
    """
    alphabet = "".join(sorted(set("".join(corpus))))
    sizes = tuple(int(s) for s in sizes)
    if not sizes or any(a > b for a, b in zip(sizes, sizes[1:])):
        raise ValueError("level sizes must be a non-empty non-decreasing sequence")
    if sizes[0] < len(alphabet):
        raise ValueError(
            f"smallest level size {sizes[0]} is below the base alphabet size {len(alphabet)}"
        )

    seqs = [list(s) for s in corpus]
    merges: list[tuple[str, str]] = []
    while len(alphabet) + len(merges) < sizes[-1]:
        counts: Counter[tuple[str, str]] = Counter()
        for seq in seqs:
            counts.update(zip(seq, seq[1:]))
        if not counts:
            raise ValueError(
                f"corpus exhausted after {len(merges)} merges; cannot reach size {sizes[-1]}"
            )
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        left, right = best[0]
        merges.append((left, right))
        token = left + right
        for si, seq in enumerate(seqs):
            merged: list[str] = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == left and seq[i + 1] == right:
                    merged.append(token)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            seqs[si] = merged
    return VocabHierarchy(alphabet, sizes, tuple(merges))
