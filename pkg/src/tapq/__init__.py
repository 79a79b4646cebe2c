"""Layout-aware OCR compression with three-objective pretraining.

The pipeline: a synthetic layout-rich corpus -> span masking -> a
layout-aware OCR encoder -> a dual-stream query transformer that
condenses the OCR into K vectors, pretrained with denoising,
contrastive and matching objectives -> input assembly and a FLOPs
ledger for downstream LM integration.
"""

from .checkpoint import Checkpoint, build_model, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import (BoundingBox, LayoutSpec, MaskedExample, OcrDocument,
                     generate_multipage_document, generate_synthetic_document,
                     load_corpus, mask_spans, min_covering_bbox, save_corpus)
from .encoder import EncoderConfig, OcrEmbeddings, OcrEncoder
from .exceptions import (CapacityError, ConfigurationError, ParseError,
                         TapqError, TrainingDivergedError, ValidationError)
from .integration import (AssembledInput, CompressedOcr, FlopsProfile, LmArch,
                          OcrModuleArch, assemble_dims, assemble_llm_input,
                          compress, compress_multipage, flops_report)
from .model import TapqModel
from .objectives import (LossBundle, LossConfig, PretrainBatch, collate,
                         contrastive_loss, contrastive_similarity,
                         denoising_loss, matching_loss, mine_hard_negatives,
                         total_loss)
from .ocrq import DualStreamOutput, MaskRegime, OcrQ, OcrqConfig, build_attention_mask
from .tokenizer import Vocabulary, build_vocab
from .trainer import evaluate, lr_at, train

__version__ = "0.1.0"
