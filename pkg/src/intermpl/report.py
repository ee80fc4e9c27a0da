"""Line-delimited JSON record files for training runs and evaluations.

A run report holds one ``{"type": "epoch", ...}`` record per epoch followed by
a single ``{"type": "summary", ...}`` record. Epoch fields: epoch, steps,
train_loss, dev_wer, lr, and for semi-supervised runs labeled_loss,
unlabeled_loss, pseudo_wer (offline decodes vs sealed truth), offered /
trained / skipped / empty pseudo-sample counts, seconds (wall clock; excluded
from determinism comparisons). Summary fields mirror
``mpl.run_semi_supervised``'s summary dict plus whatever the driver adds
(final test WER, recovery rate, elapsed_seconds).

Evaluation reports hold one ``{"type": "utterance", ...}`` record per decoded
utterance (id, reference, hypothesis, substitutions, insertions, deletions,
ref_words) and one summary record with the pooled counts and corpus WER.
"""

from __future__ import annotations

import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Iterable

WALL_CLOCK_FIELDS = ("seconds", "elapsed_seconds")


def _plain(record: Any) -> dict:
    if is_dataclass(record):
        record = asdict(record)
    return dict(record)


def write_records(path: str | Path, records: Iterable[Any]) -> None:
    lines = [json.dumps(_plain(r), sort_keys=True, allow_nan=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_records(path: str | Path) -> list[dict]:
    return [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def strip_wall_clock(record: dict) -> dict:
    """Copy of a record without wall-clock fields, for determinism comparisons."""
    return {k: v for k, v in record.items() if k not in WALL_CLOCK_FIELDS}
