"""Reverse-mode differentiation over float64 numpy arrays.

A deliberately small op set: just what the residual encoder needs (affine
maps, SiLU, row softmax, width-3 depthwise temporal mixing, residual adds).
Forward calls build a graph of Tensor nodes; `backward` seeds any subset of
nodes with output gradients and accumulates into parameter leaves.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(RuntimeError):
    """A forward or backward pass produced NaN or Inf."""


def assert_finite(name: str, value: np.ndarray) -> None:
    if not np.isfinite(value).all():
        raise NumericError(f"non-finite values in {name}")


class Tensor:
    """One node of the computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward", "param")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        param=None,
    ):
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward
        self.param = param


def constant(value: np.ndarray) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def param_leaf(param) -> Tensor:
    """Leaf bound to a parameter object; backward adds into `param.grad`."""
    return Tensor(param.value, param=param)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (T, a) @ w (a, b) + bias (b,)."""
    out = x.value @ w.value + b.value

    def bwd(g: np.ndarray) -> None:
        _accum(x, g @ w.value.T)
        _accum(w, x.value.T @ g)
        _accum(b, g.sum(axis=0))

    return Tensor(out, (x, w, b), bwd)


def add(x: Tensor, y: Tensor) -> Tensor:
    out = x.value + y.value

    def bwd(g: np.ndarray) -> None:
        _accum(x, g)
        _accum(y, g)

    return Tensor(out, (x, y), bwd)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x); smooth everywhere, so finite-difference checks stay clean."""
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = x.value * s

    def bwd(g: np.ndarray) -> None:
        _accum(x, g * s * (1.0 + x.value * (1.0 - s)))

    return Tensor(out, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of (T, C)."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        _accum(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

    return Tensor(p, (x,), bwd)


def dwconv3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depth-wise temporal mixing, taps w (3, D) over x (T, D), zero-padded.

    out[t] = w[0]*x[t-1] + w[1]*x[t] + w[2]*x[t+1] + b
    """
    v = x.value
    w0, w1, w2 = w.value
    out = v * w1 + b.value
    out[1:] += v[:-1] * w0
    out[:-1] += v[1:] * w2

    def bwd(g: np.ndarray) -> None:
        gx = g * w1
        gx[:-1] += g[1:] * w0
        gx[1:] += g[:-1] * w2
        _accum(x, gx)
        gw = np.empty_like(w.value)
        gw[0] = (g[1:] * v[:-1]).sum(axis=0)
        gw[1] = (g * v).sum(axis=0)
        gw[2] = (g[:-1] * v[1:]).sum(axis=0)
        _accum(w, gw)
        _accum(b, g.sum(axis=0))

    return Tensor(out, (x, w, b), bwd)


def _toposort(sinks: Sequence[Tensor]) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(t, False) for t in sinks]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # ancestors before descendants


def backward(seeds: Iterable[tuple[Tensor, np.ndarray]]) -> None:
    """Propagate output gradients from `seeds` down to parameter leaves.

    Multiple nodes may be seeded at once (the intermediate-loss heads all
    inject gradients into one shared graph); contributions accumulate.
    """
    seeds = list(seeds)
    for node, g in seeds:
        _accum(node, np.asarray(g, dtype=np.float64))
    order = _toposort([node for node, _ in seeds])
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._backward is not None:
            node._backward(node.grad)
        if node.param is not None:
            node.param.grad += node.grad
