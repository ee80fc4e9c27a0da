"""Shared test utilities: finite-difference checks and tiny model builders."""

from __future__ import annotations

import numpy as np

from intermpl.model import ModelConfig, init_params, intermediate_loss, model_forward
from intermpl.optim import ParamSet
from intermpl.vocab import VocabHierarchy, build_hierarchy


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor).

    The floor keeps finite-difference truncation noise on near-zero gradient
    components from registering as relative error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def fd_param_grads(params: ParamSet, loss_fn, h: float = 1e-4) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar loss over every parameter entry."""
    out: dict[str, np.ndarray] = {}
    for t in params:
        g = np.zeros_like(t.value)
        it = np.nditer(t.value, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t.value[idx]
            t.value[idx] = orig + h
            lp = loss_fn()
            t.value[idx] = orig - h
            lm = loss_fn()
            t.value[idx] = orig
            g[idx] = (lp - lm) / (2.0 * h)
        out[t.name] = g
    return out


def tiny_vocab(n_merges: int = 4) -> VocabHierarchy:
    """A small deterministic hierarchy over {a..e, _}."""
    corpus = ["ab_cd", "ab_ce", "ab_ab_cd", "ce_cd_ab"]
    base = len(set("".join(corpus)))
    return build_hierarchy(corpus, (base, base + n_merges // 2, base + n_merges))


def tiny_model(variant: str, seed: int = 0, feat_dim: int = 4, hidden: int = 8,
               n_layers: int = 2, vocab: VocabHierarchy | None = None):
    """A 2-layer model wired to `tiny_vocab`, with randomized parameters."""
    vocab = vocab or tiny_vocab()
    if variant == "ctc":
        head_layers: tuple[int, ...] = (n_layers,)
        levels: tuple[int, ...] = (1,)
    elif variant == "hc-ctc":
        head_layers = (1, n_layers) if n_layers >= 2 else (n_layers,)
        levels = (0, 2)[: len(head_layers)]
    else:
        head_layers = (1, n_layers) if n_layers >= 2 else (n_layers,)
        levels = tuple([1] * len(head_layers))
    cfg = ModelConfig(
        n_layers=n_layers,
        hidden=hidden,
        feat_dim=feat_dim,
        head_layers=head_layers,
        variant=variant,
        head_vocab_sizes=tuple(vocab.size(lv) for lv in levels),
        head_levels=levels,
    )
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    for t in params:  # randomize zero-initialized tensors too
        t.value[...] = rng.normal(0.0, 0.4, t.value.shape)
    return cfg, params, vocab


def model_loss_fn(params, cfg, feats, targets):
    def fn() -> float:
        outputs = model_forward(params, cfg, feats)
        return intermediate_loss(outputs, targets, backward=False).total

    return fn
