"""Parameters, Adam, learning-rate schedules and checkpoint averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class ParamTensor:
    """A named trainable array and its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def copy(self) -> "ParamTensor":
        return ParamTensor(self.name, self.value.copy())


class ParamSet:
    """An ordered collection of ParamTensors, addressable by name."""

    def __init__(self, tensors: Iterable[ParamTensor] = ()):
        self._tensors: dict[str, ParamTensor] = {}
        for t in tensors:
            self.add(t)

    def add(self, t: ParamTensor) -> ParamTensor:
        if t.name in self._tensors:
            raise ValueError(f"duplicate parameter name {t.name!r}")
        self._tensors[t.name] = t
        return t

    def __iter__(self) -> Iterator[ParamTensor]:
        return iter(self._tensors.values())

    def __len__(self) -> int:
        return len(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> ParamTensor:
        return self._tensors[name]

    def names(self) -> list[str]:
        return list(self._tensors)

    def copy(self) -> "ParamSet":
        return ParamSet(t.copy() for t in self)

    def zero_grads(self) -> None:
        for t in self:
            t.grad[...] = 0.0

    def flat_values(self) -> np.ndarray:
        return np.concatenate([t.value.ravel() for t in self]) if len(self) else np.zeros(0)

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([t.grad.ravel() for t in self]) if len(self) else np.zeros(0)

    def assert_same_shapes(self, other: "ParamSet") -> None:
        if self.names() != other.names() or any(
            self[n].shape != other[n].shape for n in self.names()
        ):
            raise ValueError("parameter sets have mismatching names or shapes")


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for t in params:
        total += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for t in params:
            t.grad *= scale
    return norm


@dataclass
class OptimizerState:
    """Adam accumulators; one slot pair per parameter, mirrored shapes."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 1e-3
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(opt: OptimizerState, params: ParamSet, lr: float | None = None) -> None:
    """One Adam update with bias correction. Gradients are left untouched."""
    if lr is None:
        lr = opt.base_lr
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for t in params:
        m = opt.m.setdefault(t.name, np.zeros_like(t.value))
        v = opt.v.setdefault(t.name, np.zeros_like(t.value))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * t.grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * t.grad * t.grad
        t.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Either a constant rate or inverse-sqrt decay with linear warmup."""

    kind: str = "noam-warmup"  # noam-warmup | constant
    warmup_steps: int = 100
    factor: float = 1.0
    model_dim: int = 256

    def __post_init__(self):
        if self.kind not in ("noam-warmup", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.warmup_steps < 1 or self.factor <= 0 or self.model_dim < 1:
            raise ValueError("schedule parameters must be positive")


def schedule_lr(sched: LrSchedule, step: int) -> float:
    """Learning rate at 1-based `step`; peaks exactly at step = warmup_steps."""
    if step < 1:
        raise ValueError(f"schedule step must be >= 1, got {step}")
    if sched.kind == "constant":
        return sched.factor
    return sched.factor * sched.model_dim**-0.5 * min(step**-0.5, step * sched.warmup_steps**-1.5)


def average_params(checkpoints: Sequence[ParamSet]) -> ParamSet:
    """Elementwise arithmetic mean of identically shaped parameter sets."""
    if not checkpoints:
        raise ValueError("cannot average an empty checkpoint list")
    first = checkpoints[0]
    for other in checkpoints[1:]:
        first.assert_same_shapes(other)
    out = ParamSet()
    for name in first.names():
        stacked = np.stack([ck[name].value for ck in checkpoints])
        out.add(ParamTensor(name, stacked.mean(axis=0)))
    return out


def ema_update(offline: ParamSet, online: ParamSet, momentum: float) -> None:
    """offline <- momentum * offline + (1 - momentum) * online, in place."""
    if not 0.0 < momentum < 1.0:
        raise ValueError(f"momentum must lie strictly inside (0, 1), got {momentum}")
    offline.assert_same_shapes(online)
    for name in offline.names():
        t = offline[name].value
        t *= momentum
        t += (1.0 - momentum) * online[name].value
