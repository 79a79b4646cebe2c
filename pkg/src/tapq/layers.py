"""Attention and feed-forward building blocks shared by both transformers.

Masking is additive: blocked score entries are filled with -inf before
the softmax, so blocked keys get exactly zero weight and exactly zero
gradient. The gradient-isolation guarantees of the dual-stream module
depend on this, so do not swap in a multiply-after-softmax scheme.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .exceptions import ValidationError


def _split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    b, s, d = x.shape
    return x.view(b, s, n_heads, d // n_heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, s, dh = x.shape
    return x.transpose(1, 2).reshape(b, s, h * dh)


class SelfAttention(nn.Module):
    """Multi-head self-attention with an optional boolean allow-mask.

    ``mask`` broadcasts against [B, heads, S, S]; True means the row may
    attend the column. Every row must keep at least one allowed key.
    """

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads != 0:
            raise ValidationError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = _split_heads(q, self.n_heads)
        k = _split_heads(k, self.n_heads)
        v = _split_heads(v, self.n_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        return self.out(_merge_heads(attn @ v))


class CrossAttention(nn.Module):
    """Queries from the d-wide stream, keys/values from a d_kv-wide memory."""

    def __init__(self, d: int, d_kv: int, n_heads: int):
        super().__init__()
        if d % n_heads != 0:
            raise ValidationError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d_kv, 2 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                memory_mask: torch.Tensor | None = None) -> torch.Tensor:
        q = _split_heads(self.q(x), self.n_heads)
        k, v = self.kv(memory).chunk(2, dim=-1)
        k = _split_heads(k, self.n_heads)
        v = _split_heads(v, self.n_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        if memory_mask is not None:
            scores = scores.masked_fill(~memory_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        return self.out(_merge_heads(attn @ v))


class FeedForward(nn.Module):
    def __init__(self, d: int, ff_mult: int):
        super().__init__()
        self.up = nn.Linear(d, d * ff_mult)
        self.down = nn.Linear(d * ff_mult, d)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(self.act(self.up(x)))


def init_embedding(emb: nn.Embedding, std: float = 0.02) -> nn.Embedding:
    nn.init.normal_(emb.weight, mean=0.0, std=std)
    return emb
