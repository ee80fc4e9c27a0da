"""Greedy decoding and WER evaluation of a model over a dataset."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ctc import best_path_decode
from .data import Dataset
from .metrics import WerResult, corpus_wer, split_words, word_error_rate
from .model import ModelConfig, model_forward
from .optim import ParamSet
from .vocab import VocabHierarchy


def transcribe(
    params: ParamSet, cfg: ModelConfig, vocab: VocabHierarchy, features: np.ndarray
) -> str:
    """Best-path decode of the final head, mapped back to a base-level string."""
    outputs = model_forward(params, cfg, features)
    ids = best_path_decode(outputs.log_probs[-1])
    return vocab.decode(ids, cfg.head_levels[-1])


@dataclass
class UtteranceEval:
    uid: str
    reference: str
    hypothesis: str
    wer: WerResult


@dataclass
class EvalResult:
    per_utterance: list[UtteranceEval]
    corpus: WerResult


def evaluate_dataset(
    params: ParamSet,
    cfg: ModelConfig,
    vocab: VocabHierarchy,
    dataset: Dataset,
    separator: str,
    truth: dict[str, str] | None = None,
    threads: int = 1,
) -> EvalResult:
    """Corpus WER of greedy decodes against transcripts (or sealed truth)."""

    def one(utt) -> UtteranceEval:
        ref_text = utt.transcript if utt.transcript is not None else (truth or {}).get(utt.uid)
        if ref_text is None:
            raise ValueError(f"no reference transcript for {utt.uid}")
        hyp_text = transcribe(params, cfg, vocab, utt.features)
        wer = word_error_rate(split_words(hyp_text, separator), split_words(ref_text, separator))
        return UtteranceEval(utt.uid, ref_text, hyp_text, wer)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            evals = list(pool.map(one, dataset.utterances))
    else:
        evals = [one(u) for u in dataset.utterances]
    return EvalResult(per_utterance=evals, corpus=corpus_wer([e.wer for e in evals]))
