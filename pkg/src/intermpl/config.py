"""Experiment configuration: a flat, typed key-value file with sections.

The format is INI-style for diff-ability inside experiment directories; every
key is declared in ``SCHEMA`` with a type and a default, and unknown sections
or keys are rejected with the offending name. ``default_config()`` is the
desk-scale protocol used throughout the test suite.
"""

from __future__ import annotations

import configparser
import copy
from pathlib import Path
from typing import Any

from .data import AugmentPolicy, CorpusConfig, DomainShift
from .model import ModelConfig
from .mpl import MplTrainConfig, SeedTrainConfig


class ConfigError(ValueError):
    """Unparseable or invalid experiment configuration."""


# type tags: str | int | float | bool | ints | floats | float_or_none
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "corpus": {
        "alphabet": ("str", "abcdefghijkl"),
        "separator": ("str", "_"),
        "feat_dim": ("int", 8),
        "n_words": ("int", 40),
        "word_len": ("ints", (2, 5)),
        "utt_words": ("ints", (3, 8)),
        "duration": ("ints", (1, 3)),
        "noise_std": ("float", 0.3),
        "domain_shift": ("str", "none"),
        "shift_rotation": ("float", 0.5),
        "shift_noise_scale": ("float", 1.5),
        "shift_duration": ("int", 0),
    },
    "splits": {
        "labeled": ("int", 200),
        "unlabeled": ("int", 2000),
        "dev": ("int", 100),
        "test": ("int", 200),
    },
    "vocab": {
        "sizes": ("ints", (13, 20, 28)),
    },
    "model": {
        "layers": ("int", 4),
        "hidden": ("int", 32),
        "head_layers": ("ints", (2, 4)),
        "arch": ("str", "sc-ctc"),
        "level": ("int", 1),
        "hc_levels": ("ints", (0, 1)),
    },
    "seed_training": {
        "epochs": ("int", 30),
        "batch_size": ("int", 8),
        "warmup_steps": ("int", 150),
        "lr_factor": ("float", 0.7),
        "beta1": ("float", 0.9),
        "beta2": ("float", 0.98),
        "eps": ("float", 1e-9),
        "clip_norm": ("float", 5.0),
        "avg_checkpoints": ("int", 5),
        "oracle_epochs": ("int", 10),
        "time_masks": ("int", 2),
        "time_mask_width": ("int", 4),
        "freq_masks": ("int", 1),
        "freq_mask_width": ("int", 2),
    },
    "mpl_training": {
        "variant": ("str", "intermpl"),
        "epochs": ("int", 4),
        "batch_size": ("int", 8),
        "lr": ("float", 1e-3),
        "beta1": ("float", 0.9),
        "beta2": ("float", 0.999),
        "eps": ("float", 1e-8),
        "alpha": ("float", 0.999),
        "mixing_ratio": ("float_or_none", None),
        "clip_norm": ("float", 5.0),
        "avg_checkpoints": ("int", 3),
        "time_masks": ("int", 2),
        "time_mask_width": ("int", 4),
        "freq_masks": ("int", 1),
        "freq_mask_width": ("int", 2),
        "oracle_wer": ("float_or_none", None),
    },
    "experiment": {
        "seed": ("int", 0),
        "threads": ("int", 1),
        "data_dir": ("str", ""),
        "seed_checkpoint": ("str", ""),
        "checkpoint": ("str", ""),
        "eval_split": ("str", "test"),
    },
}


def _parse_value(section: str, key: str, kind: str, raw: str) -> Any:
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "ints":
            return tuple(int(v) for v in raw.split())
        if kind == "floats":
            return tuple(float(v) for v in raw.split())
        if kind == "float_or_none":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e
    raise ConfigError(f"[{section}] {key}: unknown schema type {kind!r}")


def _format_value(kind: str, value: Any) -> str:
    if kind in ("ints", "floats"):
        return " ".join(repr(v) if kind == "floats" else str(v) for v in value)
    if kind == "float_or_none":
        return "none" if value is None else repr(value)
    if kind == "float":
        return repr(value)
    return str(value)


class ExperimentConfig:
    """All knobs of one experiment, loadable from and writable to text."""

    def __init__(self, values: dict[str, dict[str, Any]] | None = None):
        self.values: dict[str, dict[str, Any]] = {
            sec: {k: copy.deepcopy(default) for k, (_, default) in keys.items()}
            for sec, keys in SCHEMA.items()
        }
        for sec, keys in (values or {}).items():
            for k, v in keys.items():
                self.set(sec, k, v)

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown configuration key [{section}] {key}")
        self.values[section][key] = value

    # -- serialization ----------------------------------------------------

    @staticmethod
    def from_text(text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(str(e)) from e
        cfg = ExperimentConfig()
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown configuration section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown configuration key [{section}] {key}")
                cfg.values[section][key] = _parse_value(section, key, SCHEMA[section][key][0], raw)
        cfg.validate()
        return cfg

    @staticmethod
    def load(path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return ExperimentConfig.from_text(text)

    def to_text(self) -> str:
        lines: list[str] = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (kind, _) in keys.items():
                lines.append(f"{key} = {_format_value(kind, self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    # -- validation and typed views ---------------------------------------

    def validate(self) -> None:
        v = self.values
        if v["model"]["arch"] not in ("ctc", "inter-ctc", "sc-ctc", "hc-ctc"):
            raise ConfigError(f"[model] arch: unknown architecture {v['model']['arch']!r}")
        if v["mpl_training"]["variant"] not in ("mpl", "intermpl", "intermpl-last"):
            raise ConfigError(
                f"[mpl_training] variant: unknown variant {v['mpl_training']['variant']!r}"
            )
        sizes = v["vocab"]["sizes"]
        if any(a > b for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("[vocab] sizes: must be non-decreasing")
        if not 0 <= v["model"]["level"] < len(sizes):
            raise ConfigError("[model] level: outside the vocabulary hierarchy")
        if any(not 0 <= lv < len(sizes) for lv in v["model"]["hc_levels"]):
            raise ConfigError("[model] hc_levels: level outside the vocabulary hierarchy")
        heads = v["model"]["head_layers"]
        if not heads or heads[-1] != v["model"]["layers"]:
            raise ConfigError("[model] head_layers: must end at the last layer")
        if len(v["model"]["hc_levels"]) != len(heads):
            raise ConfigError("[model] hc_levels: one level per head required")

    def corpus_config(self) -> CorpusConfig:
        c = self.values["corpus"]
        try:
            return CorpusConfig(
                alphabet=c["alphabet"],
                separator=c["separator"],
                feat_dim=c["feat_dim"],
                n_words=c["n_words"],
                word_len=tuple(c["word_len"]),
                utt_words=tuple(c["utt_words"]),
                duration=tuple(c["duration"]),
                noise_std=c["noise_std"],
                domain_shift=c["domain_shift"],
                shift=DomainShift(
                    rotation_strength=c["shift_rotation"],
                    noise_scale=c["shift_noise_scale"],
                    duration_shift=c["shift_duration"],
                ),
                seed=self.values["experiment"]["seed"],
            )
        except ValueError as e:
            raise ConfigError(f"[corpus] {e}") from e

    def split_counts(self) -> dict[str, int]:
        return dict(self.values["splits"])

    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(self.values["vocab"]["sizes"])

    def model_config(self, arch: str | None = None) -> ModelConfig:
        m = self.values["model"]
        arch = arch or m["arch"]
        sizes = self.vocab_sizes()
        if arch == "ctc":
            head_layers: tuple[int, ...] = (m["layers"],)
        else:
            head_layers = tuple(m["head_layers"])
        if arch == "hc-ctc":
            levels = tuple(m["hc_levels"])
        else:
            levels = tuple([m["level"]] * len(head_layers))
        try:
            return ModelConfig(
                n_layers=m["layers"],
                hidden=m["hidden"],
                feat_dim=self.values["corpus"]["feat_dim"],
                head_layers=head_layers,
                variant=arch,
                head_vocab_sizes=tuple(sizes[lv] for lv in levels),
                head_levels=levels,
            )
        except ValueError as e:
            raise ConfigError(f"[model] {e}") from e

    def _augment(self, section: str) -> AugmentPolicy:
        s = self.values[section]
        return AugmentPolicy(
            max_time_width=s["time_mask_width"],
            n_time_masks=s["time_masks"],
            max_freq_width=s["freq_mask_width"],
            n_freq_masks=s["freq_masks"],
        )

    def seed_train_config(self) -> SeedTrainConfig:
        s = self.values["seed_training"]
        return SeedTrainConfig(
            epochs=s["epochs"],
            batch_size=s["batch_size"],
            warmup_steps=s["warmup_steps"],
            lr_factor=s["lr_factor"],
            beta1=s["beta1"],
            beta2=s["beta2"],
            eps=s["eps"],
            clip_norm=s["clip_norm"],
            avg_checkpoints=s["avg_checkpoints"],
            augment=self._augment("seed_training"),
        )

    def mpl_train_config(self, variant: str | None = None) -> MplTrainConfig:
        s = self.values["mpl_training"]
        try:
            return MplTrainConfig(
                variant=variant or s["variant"],
                epochs=s["epochs"],
                batch_size=s["batch_size"],
                lr=s["lr"],
                beta1=s["beta1"],
                beta2=s["beta2"],
                eps=s["eps"],
                alpha=s["alpha"],
                mixing_ratio=s["mixing_ratio"],
                clip_norm=s["clip_norm"],
                avg_checkpoints=s["avg_checkpoints"],
                augment=self._augment("mpl_training"),
            )
        except ValueError as e:
            raise ConfigError(f"[mpl_training] {e}") from e


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
