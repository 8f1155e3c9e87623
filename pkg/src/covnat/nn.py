"""Transformer building blocks on top of the autodiff engine."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ContractError

INIT_SCALE = 0.08


class Module:
    """Parameter container; parameters are discovered by walking attributes
    in definition order."""

    training = False

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()

        def visit(obj):
            if isinstance(obj, Parameter):
                if id(obj) not in seen:
                    seen.add(id(obj))
                    out.append(obj)
            elif isinstance(obj, Module):
                for v in vars(obj).values():
                    visit(v)
            elif isinstance(obj, (list, tuple)):
                for v in obj:
                    visit(v)

        visit(self)
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ContractError(f"duplicate parameter name {p.name}")
            named[p.name] = p
        return named

    def train(self, mode: bool = True) -> "Module":
        def visit(obj):
            if isinstance(obj, Module):
                obj.training = mode
                for v in vars(obj).values():
                    visit(v)
            elif isinstance(obj, (list, tuple)):
                for v in obj:
                    visit(v)

        visit(self)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


class Linear(Module):
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(f"{name}.weight", uniform(rng, (d_in, d_out)))
        self.bias = Parameter(f"{name}.bias", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, name: str, d: int):
        self.gain = Parameter(f"{name}.gain", np.ones(d))
        self.bias = Parameter(f"{name}.bias", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    """max(0, x W1 + b1) W2 + b2"""

    def __init__(self, name: str, d_model: int, d_hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(f"{name}.fc1", d_model, d_hidden, rng)
        self.fc2 = Linear(f"{name}.fc2", d_hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


class MultiHeadAttention(Module):
    def __init__(self, name: str, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ContractError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(f"{name}.q", d_model, d_model, rng)
        self.k = Linear(f"{name}.k", d_model, d_model, rng)
        self.v = Linear(f"{name}.v", d_model, d_model, rng)
        self.o = Linear(f"{name}.o", d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return ad.swapaxes(ad.reshape(x, (B, T, self.n_heads, self.d_head)), 1, 2)

    def __call__(self, query: Tensor, memory: Tensor, key_mask: np.ndarray,
                 causal: bool = False) -> tuple[Tensor, Tensor]:
        """Returns the attended output (B, Tq, d) and weights (B, heads, Tq, Tk)."""
        B, Tq, d = query.shape
        Tk = memory.shape[1]
        q = self._split(self.q(query))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = ad.scale(ad.matmul(q, ad.transpose_last_two(k)), 1.0 / math.sqrt(self.d_head))
        mask = key_mask[:, None, None, :]
        if causal:
            mask = mask & np.tril(np.ones((Tq, Tk), dtype=bool))[None, None]
        weights = ad.softmax_lastdim(scores, mask)
        ctx = ad.reshape(ad.swapaxes(ad.matmul(weights, v), 1, 2), (B, Tq, d))
        return self.o(ctx), weights


class Sublayers(Module):
    """Shared dropout helper for post-norm residual blocks."""

    dropout = 0.0
    rng: np.random.Generator | None = None

    def _drop(self, x: Tensor) -> Tensor:
        if self.training and self.dropout > 0:
            return ad.dropout(x, self.dropout, self.rng)
        return x


class EncoderLayer(Sublayers):
    def __init__(self, name, d_model, d_hidden, n_heads, rng, dropout=0.0):
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", d_model, n_heads, rng)
        self.ln1 = LayerNorm(f"{name}.ln1", d_model)
        self.ffn = FeedForward(f"{name}.ffn", d_model, d_hidden, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", d_model)
        self.dropout, self.rng = dropout, rng

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        a, _ = self.self_attn(x, x, mask)
        x = self.ln1(x + self._drop(a))
        return self.ln2(x + self._drop(self.ffn(x)))


class DecoderLayer(Sublayers):
    """Self-attention, inter-attention over encoder states, FFN.

    ``causal`` is used by the autoregressive teacher only.
    """

    def __init__(self, name, d_model, d_hidden, n_heads, rng, dropout=0.0, causal=False):
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", d_model, n_heads, rng)
        self.ln1 = LayerNorm(f"{name}.ln1", d_model)
        self.inter_attn = MultiHeadAttention(f"{name}.inter_attn", d_model, n_heads, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", d_model)
        self.ffn = FeedForward(f"{name}.ffn", d_model, d_hidden, rng)
        self.ln3 = LayerNorm(f"{name}.ln3", d_model)
        self.dropout, self.rng = dropout, rng
        self.causal = causal

    def __call__(self, x: Tensor, tgt_mask: np.ndarray, enc: Tensor,
                 src_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns new states and head-averaged inter-attention (B, T, n)."""
        a, _ = self.self_attn(x, x, tgt_mask, causal=self.causal)
        x = self.ln1(x + self._drop(a))
        c, w = self.inter_attn(x, enc, src_mask)
        x = self.ln2(x + self._drop(c))
        x = self.ln3(x + self._drop(self.ffn(x)))
        return x, ad.mean_over_axis(w, axis=1)
