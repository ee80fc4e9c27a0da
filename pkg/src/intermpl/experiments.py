"""High-level experiment drivers shared by the CLI and the acceptance suite.

Everything here is a pure function of (config, seed): corpora, vocabularies
and training runs all derive their randomness from named substreams of the
experiment seed, so reruns reproduce results exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .config import ConfigError, ExperimentConfig
from .data import CorpusBundle, Dataset, Utterance, generate_corpus
from .evaluate import evaluate_dataset
from .metrics import wer_recovery_rate
from .model import ModelConfig
from .mpl import EpochRecord, MplRunResult, SeedResult, run_semi_supervised, train_seed
from .optim import ParamSet
from .vocab import VocabHierarchy, build_hierarchy


def make_corpus(cfg: ExperimentConfig, seed: int | None = None, domain_shift: str | None = None) -> CorpusBundle:
    corpus_cfg = cfg.corpus_config()
    if seed is not None:
        corpus_cfg = replace(corpus_cfg, seed=seed)
    if domain_shift is not None:
        corpus_cfg = replace(corpus_cfg, domain_shift=domain_shift)
    return generate_corpus(corpus_cfg, cfg.split_counts())


def make_vocab(cfg: ExperimentConfig, labeled: Dataset) -> VocabHierarchy:
    """Subword hierarchy built from the labeled transcripts only."""
    texts = [u.transcript for u in labeled.utterances if u.transcript]
    if not texts:
        raise ValueError("cannot build a vocabulary from an unlabeled split")
    return build_hierarchy(texts, cfg.vocab_sizes())


@dataclass
class SeedRun:
    arch: str
    seed: int
    model_cfg: ModelConfig
    vocab: VocabHierarchy
    params: ParamSet
    dev_wer: float
    test_wer: float
    records: list[EpochRecord]


def train_seed_run(
    cfg: ExperimentConfig,
    bundle: CorpusBundle,
    vocab: VocabHierarchy,
    arch: str,
    seed: int,
    threads: int = 1,
) -> SeedRun:
    model_cfg = cfg.model_config(arch)
    separator = bundle.config.separator
    result: SeedResult = train_seed(
        model_cfg,
        vocab,
        bundle.splits["labeled"],
        bundle.splits["dev"],
        cfg.seed_train_config(),
        seed,
        separator,
        threads=threads,
    )
    test_wer = evaluate_dataset(
        result.params, model_cfg, vocab, bundle.splits["test"], separator, threads=threads
    ).corpus.wer
    return SeedRun(arch, seed, model_cfg, vocab, result.params, result.dev_wer, test_wer, result.records)


def train_oracle_run(
    cfg: ExperimentConfig,
    bundle: CorpusBundle,
    vocab: VocabHierarchy,
    arch: str,
    seed: int,
    threads: int = 1,
) -> SeedRun:
    """Fully supervised reference: labeled plus unlabeled with sealed truth.

    This deliberately unseals the unlabeled transcripts; it exists only to pin
    the top of the recovery-rate scale and is never an input to MPL training.
    """
    model_cfg = cfg.model_config(arch)
    separator = bundle.config.separator
    unlabeled = bundle.splits["unlabeled"]
    revealed = [
        Utterance(u.uid, u.features, bundle.unlabeled_truth[u.uid]) for u in unlabeled.utterances
    ]
    merged = Dataset(
        role="labeled",
        utterances=list(bundle.splits["labeled"].utterances) + revealed,
    )
    tcfg = replace(cfg.seed_train_config(), epochs=cfg.get("seed_training", "oracle_epochs"))
    result = train_seed(
        model_cfg,
        vocab,
        merged,
        bundle.splits["dev"],
        tcfg,
        seed,
        separator,
        threads=threads,
    )
    test_wer = evaluate_dataset(
        result.params, model_cfg, vocab, bundle.splits["test"], separator, threads=threads
    ).corpus.wer
    return SeedRun(arch, seed, model_cfg, vocab, result.params, result.dev_wer, test_wer, result.records)


@dataclass
class MplRun:
    variant: str
    seed_run: SeedRun
    result: MplRunResult
    test_wer: float
    elapsed_seconds: float


def run_mpl(
    cfg: ExperimentConfig,
    bundle: CorpusBundle,
    seed_run: SeedRun,
    variant: str,
    seed: int,
    threads: int = 1,
) -> MplRun:
    tcfg = cfg.mpl_train_config(variant)
    separator = bundle.config.separator
    t0 = time.monotonic()
    result = run_semi_supervised(
        seed_run.params,
        seed_run.model_cfg,
        seed_run.vocab,
        bundle.splits["labeled"],
        bundle.splits["unlabeled"],
        bundle.splits["dev"],
        tcfg,
        seed,
        separator,
        truth=bundle.unlabeled_truth,
        threads=threads,
    )
    test_wer = evaluate_dataset(
        result.params, seed_run.model_cfg, seed_run.vocab, bundle.splits["test"], separator, threads=threads
    ).corpus.wer
    result.summary["final_test_wer"] = test_wer
    result.summary["seed_test_wer"] = seed_run.test_wer
    oracle_wer = cfg.get("mpl_training", "oracle_wer")
    if oracle_wer is not None and seed_run.dev_wer > oracle_wer:
        result.summary["dev_wrr"] = wer_recovery_rate(
            seed_run.dev_wer, result.summary["final_dev_wer"], oracle_wer
        )
    return MplRun(variant, seed_run, result, test_wer, time.monotonic() - t0)


# ablation matrix: seed architecture x intermediate loss on/off. "on" maps to
# intermpl where intermediate heads exist and to intermpl-last on a plain CTC
# seed; "off" is last-head-only pseudo-supervision (plain mpl) on every seed.
ABLATION_ARCHS = ("ctc", "sc-ctc", "hc-ctc")


def ablation_variant(arch: str, inter_loss: bool) -> str:
    if not inter_loss:
        return "mpl"
    return "intermpl-last" if arch == "ctc" else "intermpl"


def ablation_matrix(
    cfg: ExperimentConfig,
    bundle: CorpusBundle,
    vocab: VocabHierarchy,
    seed: int,
    threads: int = 1,
) -> list[dict]:
    """The 2x3 ablation grid; one CSV-ready row per cell with WER and WRR."""
    rows: list[dict] = []
    for arch in ABLATION_ARCHS:
        seed_run = train_seed_run(cfg, bundle, vocab, arch, seed, threads=threads)
        oracle = train_oracle_run(cfg, bundle, vocab, arch, seed, threads=threads)
        for inter_loss in (True, False):
            variant = ablation_variant(arch, inter_loss)
            run = run_mpl(cfg, bundle, seed_run, variant, seed, threads=threads)
            wrr = None
            if seed_run.test_wer > oracle.test_wer:
                wrr = wer_recovery_rate(seed_run.test_wer, run.test_wer, oracle.test_wer)
            rows.append(
                {
                    "arch": arch,
                    "variant": variant,
                    "inter_loss": "with" if inter_loss else "without",
                    "seed_test_wer": round(seed_run.test_wer, 6),
                    "oracle_test_wer": round(oracle.test_wer, 6),
                    "test_wer": round(run.test_wer, 6),
                    "test_wrr": None if wrr is None else round(wrr, 3),
                }
            )
    return rows
