"""Flat training configuration and its key=value file format.

Config files are plain text, one ``key = value`` per line, ``#`` for
comments. CLI overrides are applied after the file. The TAPQ_SEED
environment variable, when set, wins over both.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .encoder import EncoderConfig
from .exceptions import ConfigurationError
from .objectives import LossConfig
from .ocrq import MaskRegime, OcrqConfig


@dataclass
class TrainConfig:
    # model dims
    d: int = 64
    d_ocr: int = 64
    k_queries: int = 8
    enc_layers: int = 4
    q_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 4
    n_buckets: int = 20
    max_ocr_len: int = 128
    text_max_len: int = 64
    proj_dim: int = 64
    # vocabulary
    mmax: int = 32
    min_count: int = 1
    # optimization
    steps: int = 3000
    batch_size: int = 16
    base_lr: float = 1e-3
    warmup_steps: int = 200
    weight_decay: float = 0.05
    grad_clip: float = 1.0
    # data and objectives
    mask_density: float = 0.15
    mean_span_len: float = 3.0
    tau: float = 0.07
    p_match: float = 0.5
    w_lm: float = 1.0
    w_con: float = 1.0
    w_match: float = 1.0
    contrastive_include_diagonal: bool = False
    symmetric_contrastive: bool = False
    inference_regime: str = "bidirectional"
    seed: int = 0
    # paths and cadence
    corpus_path: str = ""
    heldout_path: str = ""
    out_dir: str = "runs/default"
    checkpoint_every: int = 500
    # tensors here are tiny; multi-thread sync costs more than it saves
    torch_threads: int = 1

    def validate(self) -> "TrainConfig":
        if not (0 <= self.warmup_steps <= self.steps):
            raise ConfigurationError("need steps >= warmup_steps >= 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (contrastive/matching)")
        if not (0.0 < self.mask_density < 1.0):
            raise ConfigurationError("mask_density must be in (0,1)")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if not (0.0 <= self.p_match <= 1.0):
            raise ConfigurationError("p_match must be in [0,1]")
        MaskRegime.from_string(self.inference_regime)
        return self

    # -- derived sub-configs ----------------------------------------------

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, d_ocr=self.d_ocr,
                             n_layers=self.enc_layers, n_heads=self.n_heads,
                             ff_mult=self.ff_mult, n_buckets=self.n_buckets,
                             max_len=self.max_ocr_len)

    def ocrq_config(self, vocab_size: int) -> OcrqConfig:
        return OcrqConfig(vocab_size=vocab_size, d=self.d, k_queries=self.k_queries,
                          n_layers=self.q_layers, n_heads=self.n_heads,
                          ff_mult=self.ff_mult, d_ocr=self.d_ocr,
                          text_max_len=self.text_max_len, proj_dim=self.proj_dim)

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, p_match=self.p_match, w_lm=self.w_lm,
                          w_con=self.w_con, w_match=self.w_match,
                          contrastive_include_diagonal=self.contrastive_include_diagonal,
                          symmetric_contrastive=self.symmetric_contrastive)

    # -- flat key=value round trip ------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values).validate()

    def apply_overrides(self, overrides: dict[str, str]) -> "TrainConfig":
        values = self.to_dict()
        types = {f.name: f.type for f in dataclasses.fields(self)}
        for key, raw in overrides.items():
            if key not in values:
                raise ConfigurationError(f"unknown config key: {key}")
            values[key] = _parse_value(raw, types[key], key)
        return TrainConfig.from_dict(values)

    def to_file(self, path: str | Path) -> None:
        lines = [f"{k} = {v}" for k, v in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        overrides: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            overrides[key.strip()] = raw.strip()
        return cls().apply_overrides(overrides)


def _parse_value(raw: str, annotation: str | type, key: str):
    name = annotation if isinstance(annotation, str) else annotation.__name__
    try:
        if name == "int":
            return int(raw)
        if name == "float":
            return float(raw)
        if name == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {key}={raw!r} as {name}") from exc
