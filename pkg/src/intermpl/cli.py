"""Command-line experiment driver.

Commands:
    gen-data     write labeled/unlabeled/dev/test splits from the corpus config
    train-seed   supervised seed training on the labeled split
    train-mpl    semi-supervised training (mpl | intermpl | intermpl-last)
    evaluate     WER of a checkpoint on one split
    ablate       the 2x3 {with,without} inter-loss x seed-architecture grid

Exit codes: 0 success, 2 configuration error, 3 refusing to overwrite a
non-empty output directory without --force, 4 missing input artifacts,
5 numeric divergence during training.

Every command writes the exact configuration it ran with into its output
directory before doing any work.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from .autodiff import NumericError
from .checkpoint import read_checkpoint, write_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import load_sealed_truth, read_corpus, read_split, write_corpus
from .evaluate import evaluate_dataset
from .experiments import ablation_matrix, make_vocab, run_mpl, train_seed_run, SeedRun
from .model import ModelConfig
from .report import write_records
from .vocab import VocabHierarchy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REFUSED = 3
EXIT_MISSING = 4
EXIT_NUMERIC = 5


class MissingInputError(FileNotFoundError):
    pass


class RefusingOverwriteError(RuntimeError):
    pass


def _prepare_out_dir(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise RefusingOverwriteError(f"{out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.set("experiment", "seed", args.seed)
    if getattr(args, "variant", None):
        cfg.set("mpl_training", "variant", args.variant)
    if args.threads is not None:
        cfg.set("experiment", "threads", args.threads)
    cfg.validate()
    return cfg


def _data_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.get("experiment", "data_dir"))
    if not cfg.get("experiment", "data_dir") or not (path / "labeled" / "manifest.tsv").exists():
        raise MissingInputError(f"dataset directory not found: {path or '(unset)'}")
    return path


def _vocab_metadata(vocab: VocabHierarchy) -> dict:
    return {
        "alphabet": vocab.alphabet,
        "sizes": list(vocab.sizes),
        "merges": [list(m) for m in vocab.merges],
    }


def _vocab_from_metadata(meta: dict) -> VocabHierarchy:
    return VocabHierarchy(
        alphabet=meta["alphabet"],
        sizes=tuple(meta["sizes"]),
        merges=tuple((a, b) for a, b in meta["merges"]),
    )


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.ini")
    from .experiments import make_corpus

    bundle = make_corpus(cfg)
    write_corpus(out, bundle)
    for split, ds in bundle.splits.items():
        print(f"{split}\t{len(ds)}")
    return EXIT_OK


def cmd_train_seed(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data_dir = _data_dir(cfg)
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.ini")
    bundle = read_corpus(data_dir, cfg.corpus_config())
    vocab = make_vocab(cfg, bundle.splits["labeled"])
    vocab.save(out / "vocab.txt")
    seed = cfg.get("experiment", "seed")
    threads = cfg.get("experiment", "threads")
    run = train_seed_run(cfg, bundle, vocab, cfg.get("model", "arch"), seed, threads=threads)
    write_checkpoint(
        out / "seed.ckpt",
        run.params,
        metadata={
            "kind": "seed",
            "arch": run.arch,
            "seed": seed,
            "model": run.model_cfg.to_dict(),
            "vocab": _vocab_metadata(vocab),
        },
    )
    summary = {
        "type": "summary",
        "arch": run.arch,
        "seed": seed,
        "dev_wer": run.dev_wer,
        "test_wer": run.test_wer,
    }
    write_records(
        out / "report.jsonl",
        [{"type": "epoch", **r.__dict__} for r in run.records] + [summary],
    )
    print(f"seed[{run.arch}] dev WER {run.dev_wer:.4f}  test WER {run.test_wer:.4f}")
    return EXIT_OK


def _load_seed_checkpoint(path: Path) -> SeedRun:
    if not path.exists():
        raise MissingInputError(f"seed checkpoint not found: {path}")
    params, meta = read_checkpoint(path)
    model_cfg = ModelConfig.from_dict(meta["model"])
    vocab = _vocab_from_metadata(meta["vocab"])
    return SeedRun(
        arch=meta.get("arch", model_cfg.variant),
        seed=meta.get("seed", 0),
        model_cfg=model_cfg,
        vocab=vocab,
        params=params,
        dev_wer=float("nan"),
        test_wer=float("nan"),
        records=[],
    )


def cmd_train_mpl(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data_dir = _data_dir(cfg)
    seed_run = _load_seed_checkpoint(Path(cfg.get("experiment", "seed_checkpoint")))
    variant = cfg.get("mpl_training", "variant")
    if variant == "intermpl" and seed_run.model_cfg.n_heads < 2:
        raise ConfigError("variant 'intermpl' needs a seed model with intermediate heads")
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.ini")
    bundle = read_corpus(data_dir, cfg.corpus_config())
    seed = cfg.get("experiment", "seed")
    threads = cfg.get("experiment", "threads")
    t0 = time.monotonic()

    # seed-quality metrics for the report
    separator = bundle.config.separator
    seed_run.test_wer = evaluate_dataset(
        seed_run.params, seed_run.model_cfg, seed_run.vocab, bundle.splits["test"], separator,
        threads=threads,
    ).corpus.wer
    run = run_mpl(cfg, bundle, seed_run, variant, seed, threads=threads)
    write_checkpoint(
        out / "online.ckpt",
        run.result.params,
        metadata={
            "kind": "mpl-online",
            "arch": seed_run.arch,
            "variant": variant,
            "seed": seed,
            "model": seed_run.model_cfg.to_dict(),
            "vocab": _vocab_metadata(seed_run.vocab),
        },
    )
    summary = {"type": "summary", **run.result.summary, "elapsed_seconds": time.monotonic() - t0}
    write_records(
        out / "report.jsonl",
        [{"type": "epoch", **r.__dict__} for r in run.result.records] + [summary],
    )
    print(
        f"{variant} final dev WER {run.result.summary['final_dev_wer']:.4f}"
        f"  test WER {run.test_wer:.4f}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data_dir = _data_dir(cfg)
    ckpt_path = Path(cfg.get("experiment", "checkpoint"))
    if not ckpt_path.exists():
        raise MissingInputError(f"checkpoint not found: {ckpt_path}")
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.ini")
    params, meta = read_checkpoint(ckpt_path)
    model_cfg = ModelConfig.from_dict(meta["model"])
    vocab = _vocab_from_metadata(meta["vocab"])
    split = cfg.get("experiment", "eval_split")
    split_dir = data_dir / split
    if not (split_dir / "manifest.tsv").exists():
        raise MissingInputError(f"split directory not found: {split_dir}")
    dataset = read_split(split_dir, split)
    truth = load_sealed_truth(split_dir) if split == "unlabeled" else None
    result = evaluate_dataset(
        params,
        model_cfg,
        vocab,
        dataset,
        cfg.get("corpus", "separator"),
        truth=truth,
        threads=cfg.get("experiment", "threads"),
    )
    records: list[dict] = [
        {
            "type": "utterance",
            "id": e.uid,
            "reference": e.reference,
            "hypothesis": e.hypothesis,
            "substitutions": e.wer.substitutions,
            "insertions": e.wer.insertions,
            "deletions": e.wer.deletions,
            "ref_words": e.wer.ref_count,
        }
        for e in result.per_utterance
    ]
    c = result.corpus
    records.append(
        {
            "type": "summary",
            "split": split,
            "utterances": len(result.per_utterance),
            "substitutions": c.substitutions,
            "insertions": c.insertions,
            "deletions": c.deletions,
            "ref_words": c.ref_count,
            "wer": c.wer,
        }
    )
    write_records(out / "eval.jsonl", records)
    print(f"{split} WER {c.wer:.4f} ({c.substitutions}S {c.insertions}I {c.deletions}D / {c.ref_count})")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data_dir = _data_dir(cfg)
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.ini")
    bundle = read_corpus(data_dir, cfg.corpus_config())
    vocab = make_vocab(cfg, bundle.splits["labeled"])
    rows = ablation_matrix(
        cfg, bundle, vocab, cfg.get("experiment", "seed"), threads=cfg.get("experiment", "threads")
    )
    fields = ["arch", "variant", "inter_loss", "seed_test_wer", "oracle_test_wer", "test_wer", "test_wrr"]
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(
            f"{row['arch']:8s} {row['inter_loss']:8s} {row['variant']:14s}"
            f" test WER {row['test_wer']:.4f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intermpl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_variant in (
        ("gen-data", cmd_gen_data, False),
        ("train-seed", cmd_train_seed, False),
        ("train-mpl", cmd_train_mpl, True),
        ("evaluate", cmd_evaluate, False),
        ("ablate", cmd_ablate, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        p.add_argument("--threads", type=int, default=None, help="evaluation worker threads")
        if needs_variant:
            p.add_argument(
                "--variant",
                choices=("mpl", "intermpl", "intermpl-last"),
                default=None,
                help="override [mpl_training] variant",
            )
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RefusingOverwriteError as e:
        print(f"refusing: {e}", file=sys.stderr)
        return EXIT_REFUSED
    except MissingInputError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
