"""Layout-aware OCR encoder.

Embeds each token as the sum of a word embedding, four bucketized
coordinate embeddings (one per box edge) and a learned 1D position
embedding, then runs a pre-norm bidirectional transformer stack over the
sequence. Padded positions are excluded as attention keys, so outputs at
real positions do not depend on padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .exceptions import ConfigurationError, ValidationError
from .layers import FeedForward, SelfAttention, init_embedding


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_ocr: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 4
    n_buckets: int = 20
    max_len: int = 128

    def __post_init__(self):
        if self.d_ocr % self.n_heads != 0:
            raise ConfigurationError("d_ocr must be divisible by n_heads")
        if self.n_buckets < 2:
            raise ConfigurationError("need at least 2 layout buckets")


@dataclass
class OcrEmbeddings:
    """Encoded OCR sequence; pad_mask is True at real tokens."""

    values: torch.Tensor   # [B, l, d_ocr]
    pad_mask: torch.Tensor  # bool [B, l]


def bucketize(coords: torch.Tensor, n_buckets: int) -> torch.Tensor:
    """floor(c * n_buckets) clipped to the top bucket; c must be in [0,1]."""
    if coords.numel() and (coords.min() < 0 or coords.max() > 1):
        raise ValidationError("bounding-box coordinates must lie in [0,1]")
    return (coords * n_buckets).floor().long().clamp_(max=n_buckets - 1)


class EncoderBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_ocr)
        self.attn = SelfAttention(cfg.d_ocr, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_ocr)
        self.ff = FeedForward(cfg.d_ocr, cfg.ff_mult)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), key_mask[:, None, None, :])
        x = x + self.ff(self.ln2(x))
        return x


class OcrEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = init_embedding(nn.Embedding(cfg.vocab_size, cfg.d_ocr))
        self.pos_emb = init_embedding(nn.Embedding(cfg.max_len, cfg.d_ocr))
        # one table per box edge: x0, y0, x1, y1
        self.layout_emb = nn.ModuleList(
            init_embedding(nn.Embedding(cfg.n_buckets, cfg.d_ocr)) for _ in range(4)
        )
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_layers))

    def embed(self, token_ids: torch.Tensor, bboxes: torch.Tensor) -> torch.Tensor:
        """Sum of word, 2D-bucket and 1D-position embeddings, shape [B,l,d_ocr]."""
        if token_ids.dim() != 2 or bboxes.shape != (*token_ids.shape, 4):
            raise ValidationError(
                f"expected ids [B,l] and boxes [B,l,4], got {tuple(token_ids.shape)} "
                f"and {tuple(bboxes.shape)}"
            )
        if token_ids.numel() and int(token_ids.max()) >= self.cfg.vocab_size:
            raise ValidationError("token id outside vocabulary")
        l = token_ids.shape[1]
        if l > self.cfg.max_len:
            raise ValidationError(f"sequence length {l} exceeds max_len {self.cfg.max_len}")
        buckets = bucketize(bboxes, self.cfg.n_buckets)
        out = self.tok_emb(token_ids)
        for edge in range(4):
            out = out + self.layout_emb[edge](buckets[..., edge])
        positions = torch.arange(l, device=token_ids.device)
        return out + self.pos_emb(positions)[None, :, :]

    def encode(self, embeddings: torch.Tensor, pad_mask: torch.Tensor) -> OcrEmbeddings:
        if embeddings.shape[:2] != pad_mask.shape:
            raise ValidationError("pad_mask shape does not match embeddings")
        x = embeddings
        for block in self.blocks:
            x = block(x, pad_mask)
        return OcrEmbeddings(values=x, pad_mask=pad_mask)

    def forward(self, token_ids: torch.Tensor, bboxes: torch.Tensor,
                pad_mask: torch.Tensor) -> OcrEmbeddings:
        return self.encode(self.embed(token_ids, bboxes), pad_mask)
