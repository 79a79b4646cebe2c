"""Bundle of the OCR encoder and the query compressor.

Training, checkpointing and inference all operate on this container so
that one named-parameter archive covers every weight.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .encoder import EncoderConfig, OcrEmbeddings, OcrEncoder
from .ocrq import OcrQ, OcrqConfig


class TapqModel(nn.Module):
    def __init__(self, enc_cfg: EncoderConfig, q_cfg: OcrqConfig):
        super().__init__()
        if enc_cfg.d_ocr != q_cfg.d_ocr:
            raise ValueError("encoder width and cross-attention kv width must agree")
        self.encoder = OcrEncoder(enc_cfg)
        self.ocrq = OcrQ(q_cfg)

    def encode_ocr(self, token_ids: torch.Tensor, bboxes: torch.Tensor,
                   pad_mask: torch.Tensor) -> OcrEmbeddings:
        return self.encoder(token_ids, bboxes, pad_mask)

    @property
    def k_queries(self) -> int:
        return self.ocrq.cfg.k_queries

    @property
    def d(self) -> int:
        return self.ocrq.cfg.d
