"""Seed training and momentum pseudo-labeling loops.

The semi-supervised loop keeps two parameter sets: the online model (trained
by Adam) and the offline model, which is only ever moved by the exponential
moving average after each online update and which generates pseudo-labels on
the fly from unaugmented inputs. Three variants are supported:

* ``mpl``            — pseudo-labels and loss on the final head only;
* ``intermpl``       — per-head pseudo-labels supervise the matching heads;
* ``intermpl-last``  — the final hypothesis supervises every head (re-encoded
                       per head vocabulary when the heads use different ones).

Pseudo-samples whose target cannot be aligned (too few frames after
re-encoding) are skipped and counted; empty pseudo-labels are kept (an
all-blank target is always feasible) but counted separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .autodiff import NumericError
from .ctc import InfeasibleTargetError, best_path_decode, min_frames
from .data import AugmentPolicy, Dataset, Utterance, spec_augment, substream
from .evaluate import evaluate_dataset
from .metrics import WerResult
from .model import (
    ModelConfig,
    ModelOutputs,
    init_params,
    intermediate_loss,
    last_head_loss,
    model_forward,
)
from .optim import (
    LrSchedule,
    OptimizerState,
    ParamSet,
    adam_step,
    average_params,
    clip_grad_norm,
    ema_update,
    schedule_lr,
)
from .vocab import VocabHierarchy

log = logging.getLogger(__name__)

MPL_VARIANTS = ("mpl", "intermpl", "intermpl-last")


@dataclass(frozen=True)
class SeedTrainConfig:
    epochs: int = 30
    batch_size: int = 8
    warmup_steps: int = 150
    lr_factor: float = 0.7
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 5.0
    avg_checkpoints: int = 5
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)


@dataclass(frozen=True)
class MplTrainConfig:
    variant: str = "intermpl"
    epochs: int = 4
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.999
    mixing_ratio: float | None = None  # None: labeled fraction of all training data
    clip_norm: float = 5.0
    avg_checkpoints: int = 3
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if self.variant not in MPL_VARIANTS:
            raise ValueError(f"unknown semi-supervised variant {self.variant!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("momentum alpha must lie strictly inside (0, 1)")


class TargetEncoder:
    """Per-head label encodings of a transcript, cached by (text, level)."""

    def __init__(self, vocab: VocabHierarchy, cfg: ModelConfig):
        self.vocab = vocab
        self.cfg = cfg
        self._cache: dict[tuple[str, int], list[int]] = {}

    def encode(self, text: str, level: int) -> list[int]:
        key = (text, level)
        if key not in self._cache:
            self._cache[key] = self.vocab.encode(text, level)
        return self._cache[key]

    def per_head(self, text: str) -> list[list[int]]:
        return [self.encode(text, level) for level in self.cfg.head_levels]


def _batches(items: Sequence, size: int) -> list[list]:
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


def _augmented(features: np.ndarray, policy: AugmentPolicy) -> np.ndarray:
    if policy.n_time_masks == 0 and policy.n_freq_masks == 0:
        return features
    return spec_augment(features, policy)


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    train_loss: float
    dev_wer: float
    lr: float
    labeled_loss: float | None = None
    unlabeled_loss: float | None = None
    pseudo_wer: float | None = None
    offered: int = 0
    trained: int = 0
    skipped: int = 0
    empty: int = 0
    seconds: float = 0.0


@dataclass
class SeedResult:
    params: ParamSet
    dev_wer: float
    records: list[EpochRecord]


def train_seed(
    model_cfg: ModelConfig,
    vocab: VocabHierarchy,
    labeled: Dataset,
    dev: Dataset,
    tcfg: SeedTrainConfig,
    seed: int,
    separator: str,
    threads: int = 1,
    on_epoch: Callable[[EpochRecord, ParamSet], None] | None = None,
) -> SeedResult:
    """Supervised training with the intermediate loss, augmentation, Adam and
    warmup; returns parameters averaged over the best dev-WER checkpoints."""
    if not labeled.utterances:
        raise ValueError("labeled split is empty")
    init_rng = substream(seed, "init")
    params = init_params(model_cfg, init_rng)
    if tcfg.epochs == 0:
        wer = evaluate_dataset(params, model_cfg, vocab, dev, separator, threads=threads).corpus.wer
        return SeedResult(params=params, dev_wer=wer, records=[])

    targets = TargetEncoder(vocab, model_cfg)
    opt = OptimizerState(beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps)
    sched = LrSchedule(
        kind="noam-warmup",
        warmup_steps=tcfg.warmup_steps,
        factor=tcfg.lr_factor,
        model_dim=model_cfg.hidden,
    )
    shuffle_rng = substream(seed, "shuffle")
    policy = tcfg.augment.with_rng(substream(seed, "augment"))

    records: list[EpochRecord] = []
    checkpoints: list[tuple[float, int, ParamSet]] = []
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(len(labeled.utterances))
        epoch_loss = 0.0
        steps = 0
        lr = 0.0
        for batch_idx in _batches(order, tcfg.batch_size):
            params.zero_grads()
            batch_loss = 0.0
            for i in batch_idx:
                utt = labeled.utterances[i]
                feats = _augmented(utt.features, policy)
                try:
                    outputs = model_forward(params, model_cfg, feats)
                    res = intermediate_loss(
                        outputs, targets.per_head(utt.transcript), weight=1.0 / len(batch_idx)
                    )
                except InfeasibleTargetError as e:
                    raise RuntimeError(
                        f"labeled utterance {utt.uid} is not alignable; corpus is corrupt"
                    ) from e
                except NumericError as e:
                    raise NumericError(f"training step {opt.step + 1}: {e}") from e
                batch_loss += res.total
            clip_grad_norm(params, tcfg.clip_norm)
            lr = schedule_lr(sched, opt.step + 1)
            adam_step(opt, params, lr)
            epoch_loss += batch_loss
            steps += 1
        dev_wer = evaluate_dataset(
            params, model_cfg, vocab, dev, separator, threads=threads
        ).corpus.wer
        rec = EpochRecord(
            epoch=epoch, steps=steps, train_loss=epoch_loss / max(steps, 1), dev_wer=dev_wer, lr=lr
        )
        records.append(rec)
        checkpoints.append((dev_wer, epoch, params.copy()))
        if on_epoch is not None:
            on_epoch(rec, params)

    checkpoints.sort(key=lambda c: (c[0], c[1]))
    chosen = [p for _, _, p in checkpoints[: max(1, tcfg.avg_checkpoints)]]
    final = average_params(chosen)
    final_wer = evaluate_dataset(final, model_cfg, vocab, dev, separator, threads=threads).corpus.wer
    return SeedResult(params=final, dev_wer=final_wer, records=records)


@dataclass
class PseudoLabelSet:
    """Decoded hypotheses from the offline model for one utterance."""

    variant: str
    last: list[int]
    per_head: list[list[int]] | None
    source_step: int


def generate_pseudo_labels(
    offline: ParamSet,
    model_cfg: ModelConfig,
    features: np.ndarray,
    variant: str,
    source_step: int = 0,
) -> PseudoLabelSet:
    """Greedy decodes from the offline model on unaugmented features."""
    outputs = model_forward(offline, model_cfg, features)
    if variant == "intermpl":
        per_head = [best_path_decode(lp) for lp in outputs.log_probs]
        return PseudoLabelSet(variant, per_head[-1], per_head, source_step)
    last = best_path_decode(outputs.log_probs[-1])
    return PseudoLabelSet(variant, last, None, source_step)


def pseudo_targets(
    pls: PseudoLabelSet,
    model_cfg: ModelConfig,
    vocab: VocabHierarchy,
    frames: int,
) -> list[list[int]] | None:
    """Per-head training targets for one pseudo-labeled sample.

    Returns None when any head's target needs more frames than the utterance
    has (possible only after re-encoding across vocabulary levels); such
    samples are skipped by the caller.
    """
    levels = model_cfg.head_levels
    if pls.variant == "intermpl":
        assert pls.per_head is not None
        targets = pls.per_head
    elif pls.variant == "intermpl-last":
        if len(set(levels)) == 1:
            targets = [list(pls.last) for _ in levels]
        else:
            base = vocab.decode(pls.last, levels[-1])
            targets = [vocab.encode(base, level) for level in levels]
    else:  # mpl: final head only
        targets = [list(pls.last)]
    if any(min_frames(t) > frames for t in targets):
        return None
    return targets


@dataclass
class StepInfo:
    step: int
    offered: int
    trained: int
    skipped: int
    empty: int
    unlabeled_loss: float | None
    labeled_loss: float | None
    # provenance flags for the two forward passes of this step
    pseudo_inputs_augmented: bool = False
    online_inputs_augmented: bool = True


class MplTrainer:
    """Online/offline pair with per-step pseudo-labeling and EMA tracking."""

    def __init__(
        self,
        seed_params: ParamSet,
        model_cfg: ModelConfig,
        vocab: VocabHierarchy,
        tcfg: MplTrainConfig,
        seed: int,
    ):
        if tcfg.variant == "intermpl" and model_cfg.n_heads < 2:
            raise ValueError("variant 'intermpl' needs a seed model with intermediate heads")
        self.online = seed_params.copy()
        self.offline = seed_params.copy()
        self.model_cfg = model_cfg
        self.vocab = vocab
        self.tcfg = tcfg
        self.opt = OptimizerState(beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps, base_lr=tcfg.lr)
        self.step = 0
        self.targets = TargetEncoder(vocab, model_cfg)
        self.policy = tcfg.augment.with_rng(substream(seed, "mpl-augment"))
        self.all_skipped_steps = 0

    def _unlabeled_losses(self, batch: list[Utterance]) -> tuple[float | None, int, int, int]:
        """Accumulates gradients for the pseudo-labeled part of a step."""
        cfg, tcfg = self.model_cfg, self.tcfg
        samples: list[tuple[Utterance, list[list[int]]]] = []
        skipped = 0
        empty = 0
        for utt in batch:
            pls = generate_pseudo_labels(self.offline, cfg, utt.features, tcfg.variant, self.step)
            targets = pseudo_targets(pls, cfg, self.vocab, utt.features.shape[0])
            if targets is None:
                skipped += 1
                continue
            if all(len(t) == 0 for t in targets):
                empty += 1
            samples.append((utt, targets))
        if not samples:
            return None, skipped, empty, 0
        total = 0.0
        for utt, targets in samples:
            feats = _augmented(utt.features, self.policy)
            outputs = model_forward(self.online, cfg, feats)
            w = 1.0 / len(samples)
            if tcfg.variant == "mpl":
                res = last_head_loss(outputs, targets[-1], weight=w)
            else:
                res = intermediate_loss(outputs, targets, weight=w)
            total += res.total
        return total, skipped, empty, len(samples)

    def _labeled_loss(self, batch: list[Utterance]) -> float:
        total = 0.0
        for utt in batch:
            feats = _augmented(utt.features, self.policy)
            outputs = model_forward(self.online, self.model_cfg, feats)
            res = intermediate_loss(
                outputs, self.targets.per_head(utt.transcript), weight=1.0 / len(batch)
            )
            total += res.total
        return total

    def online_step(
        self, unlabeled_batch: list[Utterance], labeled_batch: list[Utterance]
    ) -> StepInfo:
        """One training step: pseudo-label, descend on the online model, then EMA.

        Pseudo-labels always come from the offline model on raw inputs; the
        online losses always see augmented inputs. If every pseudo-sample is
        skipped the step proceeds on the labeled loss alone; if there is no
        labeled batch either, the update (and the EMA) is a no-op.
        """
        if not unlabeled_batch:
            raise ValueError("online_step needs a non-empty unlabeled batch")
        self.step += 1
        self.online.zero_grads()
        try:
            u_loss, skipped, empty, trained = self._unlabeled_losses(unlabeled_batch)
        except NumericError as e:
            raise NumericError(f"training step {self.step}: {e}") from e
        if u_loss is None:
            self.all_skipped_steps += 1
            log.warning(
                "step %d: every pseudo-sample skipped; proceeding on labeled loss only", self.step
            )
        try:
            l_loss = self._labeled_loss(labeled_batch) if labeled_batch else None
        except NumericError as e:
            raise NumericError(f"training step {self.step}: {e}") from e
        if u_loss is not None or l_loss is not None:
            clip_grad_norm(self.online, self.tcfg.clip_norm)
            adam_step(self.opt, self.online, self.tcfg.lr)
            ema_update(self.offline, self.online, self.tcfg.alpha)
        return StepInfo(
            step=self.step,
            offered=len(unlabeled_batch),
            trained=trained,
            skipped=skipped,
            empty=empty,
            unlabeled_loss=u_loss,
            labeled_loss=l_loss,
        )


@dataclass
class MplRunResult:
    params: ParamSet  # checkpoint-averaged online model
    records: list[EpochRecord]
    summary: dict


def run_semi_supervised(
    seed_params: ParamSet,
    model_cfg: ModelConfig,
    vocab: VocabHierarchy,
    labeled: Dataset,
    unlabeled: Dataset,
    dev: Dataset,
    tcfg: MplTrainConfig,
    seed: int,
    separator: str,
    truth: dict[str, str] | None = None,
    threads: int = 1,
    on_step: Callable[[MplTrainer, StepInfo], None] | None = None,
    on_epoch: Callable[[EpochRecord, MplTrainer], None] | None = None,
) -> MplRunResult:
    """Momentum pseudo-labeling over the unlabeled split, mixed with labeled
    batches, evaluating the online model on dev after every epoch."""
    trainer = MplTrainer(seed_params, model_cfg, vocab, tcfg, seed)
    seed_dev_wer = evaluate_dataset(
        seed_params, model_cfg, vocab, dev, separator, threads=threads
    ).corpus.wer

    n_lab, n_unlab = len(labeled.utterances), len(unlabeled.utterances)
    ratio = tcfg.mixing_ratio
    if ratio is None:
        ratio = n_lab / max(n_lab + n_unlab, 1)
    shuffle_rng = substream(seed, "mpl-shuffle")
    mix_rng = substream(seed, "mpl-mix")

    labeled_pool: list[int] = []

    def next_labeled_batch() -> list[Utterance]:
        nonlocal labeled_pool
        out = []
        for _ in range(min(tcfg.batch_size, n_lab)):
            if not labeled_pool:
                labeled_pool = list(mix_rng.permutation(n_lab))
            out.append(labeled.utterances[labeled_pool.pop()])
        return out

    records: list[EpochRecord] = []
    checkpoints: list[tuple[float, int, ParamSet]] = []
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(n_unlab)
        totals = {"offered": 0, "trained": 0, "skipped": 0, "empty": 0}
        u_losses: list[float] = []
        l_losses: list[float] = []
        steps = 0
        for batch_idx in _batches(order, tcfg.batch_size):
            batch = [unlabeled.utterances[i] for i in batch_idx]
            use_labeled = n_lab > 0 and ratio > 0 and mix_rng.random() < ratio
            info = trainer.online_step(batch, next_labeled_batch() if use_labeled else [])
            steps += 1
            totals["offered"] += info.offered
            totals["trained"] += info.trained
            totals["skipped"] += info.skipped
            totals["empty"] += info.empty
            if info.unlabeled_loss is not None:
                u_losses.append(info.unlabeled_loss)
            if info.labeled_loss is not None:
                l_losses.append(info.labeled_loss)
            if on_step is not None:
                on_step(trainer, info)
        dev_wer = evaluate_dataset(
            trainer.online, model_cfg, vocab, dev, separator, threads=threads
        ).corpus.wer
        pseudo_wer = None
        if truth:
            pseudo_wer = evaluate_dataset(
                trainer.offline, model_cfg, vocab, unlabeled, separator, truth=truth, threads=threads
            ).corpus.wer
        rec = EpochRecord(
            epoch=epoch,
            steps=steps,
            train_loss=float(np.mean(u_losses)) if u_losses else 0.0,
            dev_wer=dev_wer,
            lr=tcfg.lr,
            labeled_loss=float(np.mean(l_losses)) if l_losses else None,
            unlabeled_loss=float(np.mean(u_losses)) if u_losses else None,
            pseudo_wer=pseudo_wer,
            offered=totals["offered"],
            trained=totals["trained"],
            skipped=totals["skipped"],
            empty=totals["empty"],
        )
        records.append(rec)
        checkpoints.append((dev_wer, epoch, trainer.online.copy()))
        if on_epoch is not None:
            on_epoch(rec, trainer)

    if checkpoints:
        checkpoints.sort(key=lambda c: (c[0], c[1]))
        final = average_params([p for _, _, p in checkpoints[: max(1, tcfg.avg_checkpoints)]])
    else:
        final = trainer.online.copy()
    final_dev = evaluate_dataset(final, model_cfg, vocab, dev, separator, threads=threads).corpus.wer
    summary = {
        "variant": tcfg.variant,
        "epochs": tcfg.epochs,
        "alpha": tcfg.alpha,
        "seed_dev_wer": seed_dev_wer,
        "final_dev_wer": final_dev,
        "offered": sum(r.offered for r in records),
        "trained": sum(r.trained for r in records),
        "skipped": sum(r.skipped for r in records),
        "empty": sum(r.empty for r in records),
        "all_skipped_steps": trainer.all_skipped_steps,
    }
    return MplRunResult(params=final, records=records, summary=summary)
