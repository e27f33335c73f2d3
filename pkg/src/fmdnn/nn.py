"""Parameter containers and layers built on :mod:`fmdnn.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


class Module:
    """Walks its attributes to find parameters and sub-modules, in definition order."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{name}.{key}")


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def xavier(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    """Glorot-normal (d_in, d_out) matrix."""
    return rng.normal(0.0, np.sqrt(2.0 / (d_in + d_out)), (d_in, d_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None):
        # Glorot by default; plain SGD cannot recover from the 0.02 scale used with Adam
        w = xavier(rng, d_in, d_out) if std is None else rng.normal(0.0, std, (d_in, d_out))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = parameter(rng.normal(0.0, std, (c_out, c_in, k, k)))
        self.bias = parameter(np.zeros(c_out))
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1):
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = parameter(rng.normal(0.0, std, (c_in, c_out, k, k)))
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride)


class MLP(Module):
    """Linear -> GELU -> Linear with a 4x hidden width by default."""

    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4):
        self.fc1 = Linear(dim, dim * ratio, rng)
        self.fc2 = Linear(dim * ratio, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, D = x.shape
    return x.reshape(B, N, heads, D // heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    B, h, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, h * dh)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention on (B, h, N, dh) operands; returns (output, weights)."""
    weights = T.softmax(T.matmul(q, k.transpose(0, 1, 3, 2)) * scale)
    return T.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head attention with separate query and key/value sources.

    Per-head projections are the column blocks of the D x D ``q``/``k``/``v``
    weights, so each head sees a D x (D/h) map.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise DimensionError(f"embedding dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = 1.0 / np.sqrt(dim // heads)
        self.q = Linear(dim, dim, rng, bias=False)
        self.k = Linear(dim, dim, rng, bias=False)
        self.v = Linear(dim, dim, rng, bias=False)
        self.out = Linear(dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def forward(self, query: Tensor, source: Tensor) -> Tensor:
        if query.shape[-1] != source.shape[-1]:
            raise DimensionError(
                f"attention dims differ: query {query.shape} vs source {source.shape}"
            )
        q = split_heads(self.q(query), self.heads)
        k = split_heads(self.k(source), self.heads)
        v = split_heads(self.v(source), self.heads)
        ctx, weights = attention(q, k, v, self.scale)
        self.last_weights = weights.data
        return self.out(merge_heads(ctx))


def patchify(x: Tensor, p: int) -> Tensor:
    """(B, C, H, W) -> (B, N, p*p*C) with patches in row-major grid order.

    Each patch is flattened as (row, col, channel).
    """
    B, C, H, W = x.shape
    if p < 1 or H % p or W % p:
        raise DimensionError(f"map {H}x{W} is not divisible into {p}x{p} patches")
    gh, gw = H // p, W // p
    y = x.reshape(B, C, gh, p, gw, p).transpose(0, 2, 4, 3, 5, 1)
    return y.reshape(B, gh * gw, p * p * C)


def unpatchify(tokens: np.ndarray, p: int, C: int, H: int, W: int) -> np.ndarray:
    """Inverse of :func:`patchify` on plain arrays."""
    B = tokens.shape[0]
    gh, gw = H // p, W // p
    return tokens.reshape(B, gh, gw, p, p, C).transpose(0, 5, 1, 3, 2, 4).reshape(B, C, H, W)
