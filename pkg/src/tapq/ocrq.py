"""Dual-stream query transformer that compresses OCR into K vectors.

The sequence fed to self-attention is [queries ; text]. Both streams run
through the *same* self-attention parameters; visibility between them is
governed by a regime mask. Cross-attention then updates the query
positions only, reading the encoded OCR. Each stream has its own
feed-forward sublayer. All sublayers are residual with pre-norm.

Regimes:

* ``MULTIMODAL_CAUSAL`` — queries see only queries; text sees all
  queries plus a causal view of itself. Used for denoising, where the
  text stream can reach the OCR only through the queries.
* ``UNIMODAL`` — each stream sees only itself (bidirectionally). Used
  for the contrastive objective.
* ``BIDIRECTIONAL`` — everything sees everything. Used for matching and
  as the default inference regime.

Note the within-block order (self-attention, then cross-attention at
query positions): text reads the queries' pre-cross-attention state, so
OCR content reaches the text stream only from the second block on.
Configure at least two layers when the text stream must be
OCR-grounded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import OcrEmbeddings
from .exceptions import ConfigurationError, ValidationError
from .layers import CrossAttention, FeedForward, SelfAttention, init_embedding


class MaskRegime(enum.Enum):
    MULTIMODAL_CAUSAL = "multimodal_causal"
    UNIMODAL = "unimodal"
    BIDIRECTIONAL = "bidirectional"

    @classmethod
    def from_string(cls, name: str) -> "MaskRegime":
        try:
            return cls(name)
        except ValueError:
            raise ConfigurationError(
                f"unknown regime {name!r}; expected one of "
                f"{[r.value for r in cls]}"
            ) from None


def build_attention_mask(regime: MaskRegime, k: int, t: int) -> torch.Tensor:
    """Boolean allow-matrix over the [queries ; text] sequence.

    Positions 0..k-1 are queries, k..k+t-1 are text; entry [i, j] is True
    when row i may attend column j. Padding is applied multiplicatively
    on top of this by the caller.
    """
    if k < 1:
        raise ValidationError("need at least one query position")
    if t < 0:
        raise ValidationError("text length cannot be negative")
    s = k + t
    mask = torch.zeros(s, s, dtype=torch.bool)
    if regime is MaskRegime.MULTIMODAL_CAUSAL:
        mask[:k, :k] = True
        mask[k:, :k] = True
        mask[k:, k:] = torch.ones(t, t, dtype=torch.bool).tril()
    elif regime is MaskRegime.UNIMODAL:
        mask[:k, :k] = True
        mask[k:, k:] = True
    elif regime is MaskRegime.BIDIRECTIONAL:
        mask[:, :] = True
    else:  # pragma: no cover - enum is closed
        raise ConfigurationError(f"unhandled regime {regime}")
    return mask


@dataclass(frozen=True)
class OcrqConfig:
    vocab_size: int
    d: int = 64
    k_queries: int = 8
    n_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 4
    d_ocr: int = 64
    text_max_len: int = 64
    proj_dim: int = 64

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ConfigurationError("d must be divisible by n_heads")
        if self.k_queries < 1:
            raise ConfigurationError("need at least one learnable query")


@dataclass
class DualStreamOutput:
    """Query-stream and text-stream states after the final block."""

    r_q: torch.Tensor  # [B, K, d]
    r_m: torch.Tensor  # [B, T, d]


class DualStreamBlock(nn.Module):
    """Shared self-attention, query-side cross-attention, per-stream FFs."""

    def __init__(self, cfg: OcrqConfig):
        super().__init__()
        self.k = cfg.k_queries
        self.ln_sa = nn.LayerNorm(cfg.d)
        self.self_attn = SelfAttention(cfg.d, cfg.n_heads)
        self.ln_ca = nn.LayerNorm(cfg.d)
        self.cross_attn = CrossAttention(cfg.d, cfg.d_ocr, cfg.n_heads)
        self.ln_ff_q = nn.LayerNorm(cfg.d)
        self.ff_q = FeedForward(cfg.d, cfg.ff_mult)
        self.ln_ff_t = nn.LayerNorm(cfg.d)
        self.ff_t = FeedForward(cfg.d, cfg.ff_mult)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor,
                ocr: OcrEmbeddings) -> torch.Tensor:
        x = x + self.self_attn(self.ln_sa(x), attn_mask)
        q, t = x[:, :self.k], x[:, self.k:]
        q = q + self.cross_attn(self.ln_ca(q), ocr.values, ocr.pad_mask)
        q = q + self.ff_q(self.ln_ff_q(q))
        if t.shape[1]:
            t = t + self.ff_t(self.ln_ff_t(t))
        return torch.cat([q, t], dim=1)


class OcrQ(nn.Module):
    """The compressor plus its task heads."""

    def __init__(self, cfg: OcrqConfig):
        super().__init__()
        self.cfg = cfg
        self.query_bank = nn.Parameter(torch.empty(cfg.k_queries, cfg.d).normal_(std=0.02))
        self.text_emb = init_embedding(nn.Embedding(cfg.vocab_size, cfg.d))
        self.text_pos = init_embedding(nn.Embedding(cfg.text_max_len, cfg.d))
        self.blocks = nn.ModuleList(DualStreamBlock(cfg) for _ in range(cfg.n_layers))
        self.lm_head = nn.Linear(cfg.d, cfg.vocab_size)
        self.q_proj_head = nn.Linear(cfg.d, cfg.proj_dim)
        self.t_proj_head = nn.Linear(cfg.d, cfg.proj_dim)
        self.match_head = nn.Linear(cfg.d, 1)

    def embed_text(self, text_ids: torch.Tensor) -> torch.Tensor:
        t = text_ids.shape[1]
        if t > self.cfg.text_max_len:
            raise ValidationError(f"text length {t} exceeds {self.cfg.text_max_len}")
        positions = torch.arange(t, device=text_ids.device)
        return self.text_emb(text_ids) + self.text_pos(positions)[None, :, :]

    def forward(self, text_ids: torch.Tensor, text_pad: torch.Tensor,
                ocr: OcrEmbeddings, regime: MaskRegime,
                text_embeddings: torch.Tensor | None = None) -> DualStreamOutput:
        """Run the dual stream; ``text_embeddings`` may replace the lookup
        (used by the gradient probes)."""
        b = ocr.values.shape[0]
        if text_ids.shape[0] != b or text_pad.shape != text_ids.shape:
            raise ValidationError(
                f"batch mismatch: ocr {b}, text {tuple(text_ids.shape)}, "
                f"pad {tuple(text_pad.shape)}"
            )
        k = self.cfg.k_queries
        t = text_ids.shape[1]
        queries = self.query_bank[None, :, :].expand(b, k, self.cfg.d)
        text = text_embeddings if text_embeddings is not None else self.embed_text(text_ids)
        x = torch.cat([queries, text], dim=1)

        regime_mask = build_attention_mask(regime, k, t).to(text_ids.device)
        key_real = torch.cat(
            [torch.ones(b, k, dtype=torch.bool, device=text_ids.device), text_pad], dim=1
        )
        attn_mask = regime_mask[None, None, :, :] & key_real[:, None, None, :]

        for block in self.blocks:
            x = block(x, attn_mask, ocr)
        return DualStreamOutput(r_q=x[:, :k], r_m=x[:, k:])

    # -- task heads -------------------------------------------------------

    def lm_logits(self, r_m: torch.Tensor) -> torch.Tensor:
        return self.lm_head(r_m)

    def proj_queries(self, r_q: torch.Tensor) -> torch.Tensor:
        """[B,K,d] -> [B,K,proj_dim], rows at unit L2 norm."""
        return F.normalize(self.q_proj_head(r_q), dim=-1)

    def proj_text(self, r_m_first: torch.Tensor) -> torch.Tensor:
        """[B,d] (the prefix-token row) -> [B,proj_dim] at unit norm."""
        return F.normalize(self.t_proj_head(r_m_first), dim=-1)

    def match_logits(self, r_q: torch.Tensor) -> torch.Tensor:
        """[B,K,d] -> [B,K,1] per-query match logits."""
        return self.match_head(r_q)
