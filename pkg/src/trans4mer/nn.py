"""Small module system on top of :mod:`trans4mer.tensor`."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Parameters are attributes holding grad-requiring tensors; submodules nest."""

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def constrain_(self) -> None:
        """Re-impose parameter constraints after an optimizer step."""
        for m in self.modules():
            if m is not self and hasattr(m, "_constrain"):
                m._constrain()
        if hasattr(self, "_constrain"):
            self._constrain()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = math.sqrt(6.0 / (d_in + d_out))
        self.weight = param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def zero_(self) -> None:
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0

    def identity_(self) -> None:
        self.weight.data[...] = np.eye(*self.weight.shape)
        if self.bias is not None:
            self.bias.data[...] = 0


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """D -> ratio*D -> D with GELU."""

    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4):
        self.fc1 = Linear(dim, ratio * dim, rng)
        self.fc2 = Linear(ratio * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Softmax self-attention over the second-to-last axis of ``x``.

    Each call adds ``groups * T**2`` to ``counters['attention_pairs']`` where
    ``groups`` is the product of the leading axes; this is the number of
    query-key dot products per head.
    """

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads:
            raise ValueError(f"dim {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.record_weights = False
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        h = self.n_heads
        dh = d // h
        T.counters["attention_pairs"] += int(np.prod(lead, dtype=np.int64)) * n * n
        qkv = self.qkv(x).reshape(tuple(lead) + (n, 3, h, dh))
        perm = tuple(range(len(lead))) + tuple(len(lead) + i for i in (1, 2, 0, 3))
        qkv = qkv.transpose(perm)  # [..., 3, h, n, dh]
        q, k, v = qkv[..., 0, :, :, :], qkv[..., 1, :, :, :], qkv[..., 2, :, :, :]
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        weights = T.softmax(scores, axis=-1)
        if self.record_weights:
            self.last_weights = weights.data
        out = T.matmul(weights, v)  # [..., h, n, dh]
        back = tuple(range(len(lead))) + tuple(len(lead) + i for i in (1, 0, 2))
        out = out.transpose(back).reshape(tuple(lead) + (n, d))
        return self.proj(out)
