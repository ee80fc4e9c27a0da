"""K-layer residual encoder with CTC heads and optional self-conditioning.

Each encoder layer is a pair of residual sub-blocks: a position-wise
feed-forward map and a width-3 depth-wise temporal mixing step. Heads sit at
the layer indices in `head_layers` (the last layer always carries one). For
the conditioned variants, every non-final head's posterior distribution is
projected back to the hidden width and added to the running hidden sequence
before the next layer, and gradients flow through that path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, assert_finite
from .ctc import CtcLossResult, InfeasibleTargetError, ctc_loss, log_softmax_rows
from .optim import ParamSet, ParamTensor, glorot_uniform

VARIANTS = ("ctc", "inter-ctc", "sc-ctc", "hc-ctc")
CONDITIONED = ("sc-ctc", "hc-ctc")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int                      # K
    hidden: int                        # D
    feat_dim: int                      # F
    head_layers: tuple[int, ...]       # sorted, last entry == n_layers
    variant: str
    head_vocab_sizes: tuple[int, ...]  # tokens per head, excluding blank
    head_levels: tuple[int, ...]       # vocabulary level index per head

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if tuple(sorted(set(self.head_layers))) != self.head_layers:
            raise ValueError("head_layers must be sorted and unique")
        if not self.head_layers or self.head_layers[-1] != self.n_layers:
            raise ValueError("the last layer must carry a head")
        if self.head_layers[0] < 1:
            raise ValueError("head layers are 1-based")
        if len(self.head_vocab_sizes) != len(self.head_layers) or len(self.head_levels) != len(
            self.head_layers
        ):
            raise ValueError("one vocabulary size and level required per head")
        if self.variant == "ctc" and len(self.head_layers) != 1:
            raise ValueError("variant 'ctc' means a single head at the last layer")
        if self.variant == "hc-ctc":
            if any(a > b for a, b in zip(self.head_vocab_sizes, self.head_vocab_sizes[1:])):
                raise ValueError("hc-ctc head vocabularies must be non-decreasing with depth")
        elif len(set(self.head_levels)) > 1:
            raise ValueError(f"variant {self.variant!r} uses one vocabulary level for all heads")

    @property
    def n_heads(self) -> int:
        return len(self.head_layers)

    @property
    def conditioned_layers(self) -> tuple[int, ...]:
        if self.variant not in CONDITIONED:
            return ()
        return tuple(k for k in self.head_layers if k < self.n_layers)

    def head_index(self, layer: int) -> int:
        return self.head_layers.index(layer)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "hidden": self.hidden,
            "feat_dim": self.feat_dim,
            "head_layers": list(self.head_layers),
            "variant": self.variant,
            "head_vocab_sizes": list(self.head_vocab_sizes),
            "head_levels": list(self.head_levels),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            n_layers=int(d["n_layers"]),
            hidden=int(d["hidden"]),
            feat_dim=int(d["feat_dim"]),
            head_layers=tuple(d["head_layers"]),
            variant=d["variant"],
            head_vocab_sizes=tuple(d["head_vocab_sizes"]),
            head_levels=tuple(d["head_levels"]),
        )


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform matrices, zero biases, zero temporal-mixing taps."""
    D, F = cfg.hidden, cfg.feat_dim
    ps = ParamSet()

    def mat(name: str, rows: int, cols: int) -> None:
        ps.add(ParamTensor(name, glorot_uniform(rng, (rows, cols), rows, cols)))

    def zeros(name: str, *shape: int) -> None:
        ps.add(ParamTensor(name, np.zeros(shape)))

    mat("in_proj.w", F, D)
    zeros("in_proj.b", D)
    for k in range(1, cfg.n_layers + 1):
        mat(f"enc{k}.ff1.w", D, D)
        zeros(f"enc{k}.ff1.b", D)
        mat(f"enc{k}.ff2.w", D, D)
        zeros(f"enc{k}.ff2.b", D)
        zeros(f"enc{k}.mix.w", 3, D)
        zeros(f"enc{k}.mix.b", D)
    for k, size in zip(cfg.head_layers, cfg.head_vocab_sizes):
        mat(f"head{k}.w", D, size + 1)
        zeros(f"head{k}.b", size + 1)
    for k in cfg.conditioned_layers:
        size = cfg.head_vocab_sizes[cfg.head_index(k)]
        mat(f"cond{k}.w", size + 1, D)
        zeros(f"cond{k}.b", D)
    return ps


def _leaves(params: ParamSet) -> dict[str, Tensor]:
    return {t.name: ad.param_leaf(t) for t in params}


def encoder_layer(h: Tensor, leaves: dict[str, Tensor], k: int) -> Tensor:
    """One residual block: feed-forward sub-block, then temporal-mixing sub-block."""
    u = ad.silu(ad.linear(h, leaves[f"enc{k}.ff1.w"], leaves[f"enc{k}.ff1.b"]))
    z = ad.add(h, ad.linear(u, leaves[f"enc{k}.ff2.w"], leaves[f"enc{k}.ff2.b"]))
    out = ad.add(z, ad.dwconv3(z, leaves[f"enc{k}.mix.w"], leaves[f"enc{k}.mix.b"]))
    assert_finite(f"enc{k}", out.value)
    return out


@dataclass
class ModelOutputs:
    """Per-head posteriorgrams plus the graph handles needed for backward."""

    config: ModelConfig
    frames: int
    log_probs: list[np.ndarray]    # one (T, |V_k|+1) log-probability matrix per head
    logits: list[Tensor]           # matching graph nodes (gradient injection points)
    hidden: list[Tensor] = field(default_factory=list)  # H^(k) after each layer


def model_forward(params: ParamSet, cfg: ModelConfig, features: np.ndarray) -> ModelOutputs:
    """Run all layers and heads; returns posteriorgrams and the backward graph."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cfg.feat_dim:
        raise ValueError(
            f"expected features of shape (T, {cfg.feat_dim}), got {features.shape}"
        )
    leaves = _leaves(params)
    x = ad.constant(features)
    h = ad.linear(x, leaves["in_proj.w"], leaves["in_proj.b"])

    out = ModelOutputs(config=cfg, frames=features.shape[0], log_probs=[], logits=[])
    for k in range(1, cfg.n_layers + 1):
        h = encoder_layer(h, leaves, k)
        out.hidden.append(h)
        if k in cfg.head_layers:
            logits = ad.linear(h, leaves[f"head{k}.w"], leaves[f"head{k}.b"])
            assert_finite(f"head{k}", logits.value)
            out.logits.append(logits)
            out.log_probs.append(log_softmax_rows(logits.value))
            if k in cfg.conditioned_layers:
                posterior = ad.softmax(logits)
                cond = ad.linear(posterior, leaves[f"cond{k}.w"], leaves[f"cond{k}.b"])
                h = ad.add(h, cond)
    return out


@dataclass
class LossResult:
    total: float
    per_head: list[float]


def head_losses(
    outputs: ModelOutputs,
    targets: Sequence[Sequence[int] | None],
    head_weights: Sequence[float],
    backward: bool = True,
) -> LossResult:
    """Weighted CTC losses over selected heads; seeds the shared graph once.

    `targets[i] is None` leaves head i out entirely. The reported total is the
    weighted sum of the per-head losses; gradients accumulate into the
    parameter set the forward pass was built from.
    """
    seeds: list[tuple[Tensor, np.ndarray]] = []
    per_head: list[float] = []
    total = 0.0
    for i, (target, w) in enumerate(zip(targets, head_weights)):
        if target is None:
            per_head.append(float("nan"))
            continue
        try:
            res: CtcLossResult = ctc_loss(outputs.log_probs[i], target)
        except InfeasibleTargetError as e:
            raise InfeasibleTargetError(
                f"head {i} (layer {outputs.config.head_layers[i]}): {e}"
            ) from e
        per_head.append(res.loss)
        total += w * res.loss
        if backward:
            seeds.append((outputs.logits[i], w * res.logit_grads))
    if backward and seeds:
        ad.backward(seeds)
    return LossResult(total=total, per_head=per_head)


def intermediate_loss(
    outputs: ModelOutputs,
    targets: Sequence[Sequence[int]],
    weight: float = 1.0,
    backward: bool = True,
) -> LossResult:
    """Equal-weight mean of the per-head CTC losses (total weight 1).

    With a single head this is exactly the plain CTC loss. `weight` scales
    the whole objective (use 1/batch for batch averaging).
    """
    n = outputs.config.n_heads
    if len(targets) != n:
        raise ValueError(f"expected {n} targets, got {len(targets)}")
    return head_losses(outputs, targets, [weight / n] * n, backward=backward)


def last_head_loss(
    outputs: ModelOutputs,
    target: Sequence[int],
    weight: float = 1.0,
    backward: bool = True,
) -> LossResult:
    """CTC loss on the final head only; intermediate heads contribute nothing."""
    n = outputs.config.n_heads
    targets: list[Sequence[int] | None] = [None] * (n - 1) + [target]
    weights = [0.0] * (n - 1) + [weight]
    return head_losses(outputs, targets, weights, backward=backward)
