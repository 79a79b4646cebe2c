"""TAPQ1 checkpoint archive.

Single-file layout, little-endian throughout::

    bytes 0..4   magic b"TAPQ1"
    bytes 5..8   uint32 header length H
    bytes 9..9+H UTF-8 JSON header
    remainder    concatenated float32 buffers

The header carries the full config snapshot, the vocabulary (so a
checkpoint is self-contained for inference), the step counter, both rng
states, and for every tensor an entry ``{name, shape, offset, nbytes}``
pointing into the buffer region. Optimizer moments are stored the same
way under ``opt_exp_avg.<name>`` / ``opt_exp_avg_sq.<name>``; per-param
step counts live in the header. Parameters round-trip bitwise because
the model is float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .exceptions import ParseError, ValidationError
from .model import TapqModel
from .tokenizer import Vocabulary

MAGIC = b"TAPQ1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    step: int
    params: dict[str, np.ndarray]
    opt_exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    opt_exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    opt_steps: dict[str, int] = field(default_factory=dict)
    torch_rng: bytes = b""
    numpy_rng: dict | None = None


def _tensors_to_arrays(state: dict[str, torch.Tensor]) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().to(torch.float32).numpy().copy()
            for name, t in state.items()}


def from_training(model: TapqModel, optimizer: torch.optim.Optimizer | None,
                  cfg: TrainConfig, vocab: Vocabulary, step: int,
                  data_rng: np.random.Generator | None = None) -> Checkpoint:
    params = _tensors_to_arrays(dict(model.state_dict()))
    exp_avg: dict[str, np.ndarray] = {}
    exp_avg_sq: dict[str, np.ndarray] = {}
    steps: dict[str, int] = {}
    if optimizer is not None:
        names = [name for name, _ in model.named_parameters()]
        tensors = [p for _, p in model.named_parameters()]
        for name, tensor in zip(names, tensors):
            state = optimizer.state.get(tensor)
            if not state:
                continue
            exp_avg[name] = state["exp_avg"].detach().cpu().numpy().copy()
            exp_avg_sq[name] = state["exp_avg_sq"].detach().cpu().numpy().copy()
            steps[name] = int(state["step"])
    return Checkpoint(
        config=cfg, vocab=vocab, step=step, params=params,
        opt_exp_avg=exp_avg, opt_exp_avg_sq=exp_avg_sq, opt_steps=steps,
        torch_rng=bytes(torch.get_rng_state().numpy().tobytes()),
        numpy_rng=data_rng.bit_generator.state if data_rng is not None else None,
    )


def build_model(ckpt: Checkpoint) -> TapqModel:
    """Instantiate the model described by the checkpoint and load its weights."""
    model = TapqModel(ckpt.config.encoder_config(ckpt.vocab.size),
                      ckpt.config.ocrq_config(ckpt.vocab.size))
    state = {name: torch.from_numpy(arr.copy()) for name, arr in ckpt.params.items()}
    model.load_state_dict(state)
    return model


def restore_optimizer(ckpt: Checkpoint, model: TapqModel,
                      optimizer: torch.optim.Optimizer) -> None:
    for name, tensor in model.named_parameters():
        if name not in ckpt.opt_exp_avg:
            continue
        optimizer.state[tensor] = {
            "step": torch.tensor(float(ckpt.opt_steps[name])),
            "exp_avg": torch.from_numpy(ckpt.opt_exp_avg[name].copy()),
            "exp_avg_sq": torch.from_numpy(ckpt.opt_exp_avg_sq[name].copy()),
        }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    sections = [("param", ckpt.params), ("opt_exp_avg", ckpt.opt_exp_avg),
                ("opt_exp_avg_sq", ckpt.opt_exp_avg_sq)]
    entries = []
    buffers = []
    offset = 0
    for section, table in sections:
        for name, arr in table.items():
            data = np.ascontiguousarray(arr, dtype=np.float32)
            raw = data.tobytes()
            entries.append({
                "section": section, "name": name, "shape": list(data.shape),
                "offset": offset, "nbytes": len(raw),
            })
            buffers.append(raw)
            offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "step": ckpt.step,
        "config": ckpt.config.to_dict(),
        "vocab": {"words": list(ckpt.vocab.words), "mmax": ckpt.vocab.mmax},
        "tensors": entries,
        "opt_steps": ckpt.opt_steps,
        "rng": {
            "torch": ckpt.torch_rng.hex(),
            "numpy": ckpt.numpy_rng,
        },
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a TAPQ1 checkpoint (bad magic)")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format version "
                              f"{header.get('format_version')}")
    body = raw[start + header_len:]
    tables: dict[str, dict[str, np.ndarray]] = {
        "param": {}, "opt_exp_avg": {}, "opt_exp_avg_sq": {},
    }
    for entry in header["tensors"]:
        chunk = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise ParseError(f"{path}: truncated buffer for {entry['name']}")
        arr = np.frombuffer(chunk, dtype=np.float32).reshape(entry["shape"]).copy()
        tables[entry["section"]][entry["name"]] = arr
    rng = header.get("rng", {})
    return Checkpoint(
        config=TrainConfig.from_dict(header["config"]),
        vocab=Vocabulary(words=tuple(header["vocab"]["words"]),
                         mmax=int(header["vocab"]["mmax"])),
        step=int(header["step"]),
        params=tables["param"],
        opt_exp_avg=tables["opt_exp_avg"],
        opt_exp_avg_sq=tables["opt_exp_avg_sq"],
        opt_steps={k: int(v) for k, v in header.get("opt_steps", {}).items()},
        torch_rng=bytes.fromhex(rng.get("torch", "")),
        numpy_rng=rng.get("numpy"),
    )
