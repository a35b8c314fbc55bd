"""Scaled dot-product attention, multi-head attention and block stacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import Dropout, LayerNorm, Linear, Module, ModuleList


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    d_ff: int
    n_layers: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Softmax(q kᵀ / sqrt(d_k)) v for q:[n_q,d_k], k:[n_k,d_k], v:[n_k,d_v]."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query dim {q.shape} incompatible with key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key rows {k.shape} incompatible with value rows {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    weights = ad.softmax(ad.matmul(q, ad.transpose(k)) * scale, axis=-1)
    return ad.matmul(weights, v)


class MultiHeadAttention(Module):
    """Heads attend independently on projected slices, then concat into W_o."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        qp, kp, vp = self.w_q(q), self.w_k(k), self.w_v(v)
        return self.w_o(ad.multi_head_core(qp, kp, vp, self.n_heads))


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        super().__init__()
        self.inner = Linear(d_model, d_ff, rng)
        self.outer = Linear(d_ff, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(ad.relu(self.inner(x)))


class EncoderBlock(Module):
    """Self-attention and feed-forward, each with post-norm residual."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm_attn = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm_ff = LayerNorm(cfg.d_model)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm_attn(x + self.drop(self.attn(x, x, x)))
        return self.norm_ff(x + self.drop(self.ff(x)))


class DecoderBlock(Module):
    """Query self-attention, cross-attention to memory, then feed-forward."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm_self = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm_cross = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm_ff = LayerNorm(cfg.d_model)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, q: Tensor, memory: Tensor) -> Tensor:
        q = self.norm_self(q + self.drop(self.self_attn(q, q, q)))
        q = self.norm_cross(q + self.drop(self.cross_attn(q, memory, memory)))
        return self.norm_ff(q + self.drop(self.ff(q)))


class AttentionStack(Module):
    """n_layers blocks; encoders self-attend, decoders also read the memory.

    A zero-depth stack is the identity on the queries.
    """

    def __init__(self, cfg: AttentionConfig, role: str, rng: np.random.Generator):
        super().__init__()
        if role not in ("encoder", "decoder"):
            raise ValueError(f"unknown stack role {role!r}")
        self.role = role
        block = EncoderBlock if role == "encoder" else DecoderBlock
        self.blocks = ModuleList([block(cfg, rng) for _ in range(cfg.n_layers)])

    def forward(self, q: Tensor, memory: Tensor | None = None) -> Tensor:
        if self.role == "decoder" and memory is None and len(self.blocks) > 0:
            raise ValueError("decoder stack needs encoder memory")
        for block in self.blocks:
            q = block(q) if self.role == "encoder" else block(q, memory)
        return q


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos position table [length, d_model], values in [-1, 1]."""
    pos = np.arange(length)[:, None].astype(np.float64)
    dim = np.arange(0, d_model, 2).astype(np.float64)
    angles = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return table
