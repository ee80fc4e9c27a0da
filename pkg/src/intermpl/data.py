"""Synthetic toy-speech corpus: prototype frames per symbol plus noise.

Utterances are word sequences over a small alphabet, joined by a separator
symbol that is itself part of the alphabet. Each symbol is rendered as a run
of noisy copies of its prototype vector, so frame counts always cover the
transcript (durations are at least one frame and inventory words never repeat
a character, which keeps every utterance CTC-feasible at every vocabulary
level). The "shifted" domain rotates the prototypes and scales the noise, and
applies to the unlabeled and test splits only.

On disk, each split is a directory with `manifest.tsv` (id, frame count,
transcript or "-") and `features.bin` (a small header, then each utterance's
frames as little-endian float64 in manifest order). Unlabeled splits hide
their transcripts behind a sealed `truth.tsv` that only evaluation and
oracle-training code reads.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm

SPLITS = ("labeled", "unlabeled", "dev", "test")

FEATURES_MAGIC = b"FTRS0001"


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Named, order-independent RNG substream derived from one global seed."""
    material = [seed & 0xFFFFFFFF] + [
        n & 0xFFFFFFFF if isinstance(n, int) else zlib.crc32(n.encode("utf-8"))
        for n in names
    ]
    return np.random.default_rng(material)


@dataclass(frozen=True)
class DomainShift:
    rotation_strength: float = 0.5
    noise_scale: float = 1.5
    duration_shift: int = 0


@dataclass(frozen=True)
class CorpusConfig:
    alphabet: str = "abcdefghijkl"
    separator: str = "_"
    feat_dim: int = 8
    n_words: int = 40
    word_len: tuple[int, int] = (2, 5)
    utt_words: tuple[int, int] = (3, 8)
    duration: tuple[int, int] = (1, 3)
    noise_std: float = 0.3
    domain_shift: str = "none"  # none | shifted
    shift: DomainShift = field(default_factory=DomainShift)
    seed: int = 0

    def __post_init__(self):
        if self.duration[0] < 1:
            raise ValueError("minimum symbol duration must be at least 1 frame")
        if len(self.separator) != 1 or self.separator in self.alphabet:
            raise ValueError("separator must be a single symbol outside the letter alphabet")
        if self.domain_shift not in ("none", "shifted"):
            raise ValueError(f"unknown domain_shift {self.domain_shift!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def symbols(self) -> str:
        """All renderable symbols: letters plus the word separator."""
        return "".join(sorted(self.alphabet + self.separator))


@dataclass
class Utterance:
    uid: str
    features: np.ndarray  # (T, F)
    transcript: str | None


@dataclass
class Dataset:
    role: str
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass
class CorpusBundle:
    splits: dict[str, Dataset]
    unlabeled_truth: dict[str, str]  # sealed: evaluation / oracle training only
    config: CorpusConfig


def _prototypes(cfg: CorpusConfig) -> dict[str, np.ndarray]:
    rng = substream(cfg.seed, "prototypes")
    return {c: rng.normal(0.0, 1.0, cfg.feat_dim) for c in cfg.symbols}


def _shifted_prototypes(cfg: CorpusConfig, protos: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    rng = substream(cfg.seed, "shift")
    skew = rng.normal(0.0, 1.0, (cfg.feat_dim, cfg.feat_dim))
    skew = (skew - skew.T) / np.sqrt(2.0 * cfg.feat_dim)
    rotation = expm(cfg.shift.rotation_strength * skew)  # orthogonal for any strength
    return {c: rotation @ v for c, v in protos.items()}


def _word_inventory(cfg: CorpusConfig) -> list[str]:
    rng = substream(cfg.seed, "words")
    letters = sorted(cfg.alphabet)
    words: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(words) < cfg.n_words:
        attempts += 1
        if attempts > 1000 * cfg.n_words:
            raise ValueError("word inventory is unreachable with this alphabet and length range")
        length = int(rng.integers(cfg.word_len[0], cfg.word_len[1] + 1))
        chars = [letters[rng.integers(len(letters))]]
        while len(chars) < length:
            c = letters[rng.integers(len(letters))]
            if c != chars[-1]:  # no adjacent repeats: keeps CTC feasible everywhere
                chars.append(c)
        w = "".join(chars)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _render(
    text: str,
    protos: dict[str, np.ndarray],
    noise_std: float,
    duration: tuple[int, int],
    rng: np.random.Generator,
) -> np.ndarray:
    frames: list[np.ndarray] = []
    for c in text:
        d = int(rng.integers(duration[0], duration[1] + 1))
        block = np.tile(protos[c], (d, 1))
        if noise_std > 0:
            block = block + rng.normal(0.0, noise_std, block.shape)
        frames.append(block)
    return np.concatenate(frames, axis=0)


def generate_corpus(cfg: CorpusConfig, counts: dict[str, int]) -> CorpusBundle:
    """Generate disjoint labeled/unlabeled/dev/test splits from one seed.

    In the shifted domain, only the unlabeled and test splits move; labeled
    and dev material is identical to the unshifted corpus bit for bit.
    """
    for split in SPLITS:
        if counts.get(split, 0) < 1:
            raise ValueError(f"split {split!r} needs a positive utterance count")
    words = _word_inventory(cfg)
    protos = _prototypes(cfg)
    shifted = cfg.domain_shift == "shifted"
    protos_shifted = _shifted_prototypes(cfg, protos) if shifted else protos

    splits: dict[str, Dataset] = {}
    truth: dict[str, str] = {}
    for split in SPLITS:
        n = counts[split]
        use_shift = shifted and split in ("unlabeled", "test")
        protos_split = protos_shifted if use_shift else protos
        noise = cfg.noise_std * (cfg.shift.noise_scale if use_shift else 1.0)
        duration = (
            (cfg.duration[0] + cfg.shift.duration_shift, cfg.duration[1] + cfg.shift.duration_shift)
            if use_shift
            else cfg.duration
        )
        utts: list[Utterance] = []
        for i in range(n):
            rng = substream(cfg.seed, "utt", split, i)
            n_words = int(rng.integers(cfg.utt_words[0], cfg.utt_words[1] + 1))
            text = cfg.separator.join(words[rng.integers(len(words))] for _ in range(n_words))
            feats = _render(text, protos_split, noise, duration, rng)
            uid = f"{split}-{i:05d}"
            if split == "unlabeled":
                truth[uid] = text
                utts.append(Utterance(uid, feats, None))
            else:
                utts.append(Utterance(uid, feats, text))
        splits[split] = Dataset(role=split, utterances=utts)
    return CorpusBundle(splits=splits, unlabeled_truth=truth, config=cfg)


@dataclass
class AugmentPolicy:
    """SpecAugment-style zero masks; never blanks an entire utterance."""

    max_time_width: int = 0
    n_time_masks: int = 0
    max_freq_width: int = 0
    n_freq_masks: int = 0
    rng: np.random.Generator | None = None

    def with_rng(self, rng: np.random.Generator) -> "AugmentPolicy":
        return replace(self, rng=rng)


def spec_augment(features: np.ndarray, policy: AugmentPolicy) -> np.ndarray:
    """Fresh copy of `features` with sampled time spans and feature bands zeroed.

    A time mask that would zero every remaining frame is shortened so at least
    one unmasked frame survives.
    """
    T, F = features.shape
    if T < 2:
        raise ValueError("augmentation needs at least 2 frames")
    out = features.copy()
    rng = policy.rng
    if rng is None:
        raise ValueError("augment policy has no rng stream attached")
    masked = np.zeros(T, dtype=bool)
    for _ in range(policy.n_time_masks):
        width = int(rng.integers(0, policy.max_time_width + 1))
        if width == 0:
            continue
        start = int(rng.integers(0, max(T - width, 0) + 1))
        span = np.zeros(T, dtype=bool)
        span[start : start + width] = True
        if (masked | span).all():  # keep one frame alive
            keep = np.flatnonzero(~masked)[0]
            span[keep] = False
        masked |= span
        out[span] = 0.0
    for _ in range(policy.n_freq_masks):
        width = int(rng.integers(0, policy.max_freq_width + 1))
        if width == 0:
            continue
        start = int(rng.integers(0, max(F - width, 0) + 1))
        out[:, start : start + width] = 0.0
    return out


def write_split(directory: str | Path, dataset: Dataset, truth: dict[str, str] | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    feat_dim = dataset.utterances[0].features.shape[1] if dataset.utterances else 0
    lines = []
    blobs = [FEATURES_MAGIC, struct.pack("<II", feat_dim, len(dataset.utterances))]
    for u in dataset.utterances:
        transcript = u.transcript if u.transcript is not None else "-"
        lines.append(f"{u.uid}\t{u.features.shape[0]}\t{transcript}")
        blobs.append(np.ascontiguousarray(u.features, dtype="<f8").tobytes())
    (directory / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / "features.bin").write_bytes(b"".join(blobs))
    if truth is not None:
        rows = [f"{uid}\t{text}" for uid, text in sorted(truth.items())]
        (directory / "truth.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_split(directory: str | Path, role: str) -> Dataset:
    directory = Path(directory)
    manifest = (directory / "manifest.tsv").read_text(encoding="utf-8").splitlines()
    buf = (directory / "features.bin").read_bytes()
    if buf[: len(FEATURES_MAGIC)] != FEATURES_MAGIC:
        raise ValueError(f"{directory}/features.bin: bad magic")
    feat_dim, count = struct.unpack_from("<II", buf, len(FEATURES_MAGIC))
    if count != len(manifest):
        raise ValueError(f"{directory}: manifest has {len(manifest)} rows, features {count}")
    pos = len(FEATURES_MAGIC) + 8
    utts: list[Utterance] = []
    for line in manifest:
        uid, frames_s, transcript = line.split("\t")
        frames = int(frames_s)
        n = frames * feat_dim
        feats = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(frames, feat_dim)
        pos += 8 * n
        utts.append(Utterance(uid, feats.astype(np.float64), None if transcript == "-" else transcript))
    return Dataset(role=role, utterances=utts)


def load_sealed_truth(directory: str | Path) -> dict[str, str]:
    """Transcripts of an unlabeled split. Evaluation and oracle training only."""
    rows = (Path(directory) / "truth.tsv").read_text(encoding="utf-8").splitlines()
    out: dict[str, str] = {}
    for row in rows:
        uid, text = row.split("\t")
        out[uid] = text
    return out


def write_corpus(directory: str | Path, bundle: CorpusBundle) -> None:
    directory = Path(directory)
    for split, dataset in bundle.splits.items():
        truth = bundle.unlabeled_truth if split == "unlabeled" else None
        write_split(directory / split, dataset, truth=truth)


def read_corpus(directory: str | Path, cfg: CorpusConfig) -> CorpusBundle:
    directory = Path(directory)
    splits = {split: read_split(directory / split, split) for split in SPLITS}
    truth = load_sealed_truth(directory / "unlabeled")
    return CorpusBundle(splits=splits, unlabeled_truth=truth, config=cfg)
