"""Command-line surface: gen-corpus, pretrain, eval, compress, flops.

Exit codes: 0 success, 2 validation/configuration problems (argparse
uses 2 as well), 3 runtime failures. Every run that writes an artifact
also writes a resolved-config snapshot next to it; report-style commands
embed the snapshot in their JSON output instead. TAPQ_SEED overrides the
configured seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from . import trainer
from .config import TrainConfig
from .corpus import (LayoutSpec, generate_multipage_document,
                     generate_synthetic_document, load_corpus, save_corpus)
from .exceptions import ConfigurationError, TapqError, ValidationError
from .integration import (LM_PRESETS, LmArch, assemble_dims, compress,
                          compress_multipage, flops_report, format_flops_table)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _write_snapshot(target: Path, resolved: dict) -> None:
    lines = [f"{k} = {v}" for k, v in resolved.items()]
    Path(str(target) + ".cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_grid(raw: str) -> tuple[int, int]:
    try:
        rows, cols = raw.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ConfigurationError(f"--grid expects ROWSxCOLS, got {raw!r}") from None


def _parse_lm_arch(raw: str) -> LmArch:
    if raw in LM_PRESETS:
        return LM_PRESETS[raw]
    parts = raw.split(",")
    if len(parts) != 4:
        raise ConfigurationError(
            f"--lm-arch expects a preset ({', '.join(LM_PRESETS)}) or d,layers,heads,ff_mult")
    try:
        d, layers, heads, ff = (int(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"cannot parse --lm-arch {raw!r}") from None
    return LmArch(name=f"custom-{raw}", d_lm=d, layers=layers, heads=heads, ff_mult=ff)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    layout = LayoutSpec(rows=args.grid[0], cols=args.grid[1], n_keys=args.keys,
                        theme_size=args.theme_size, min_tokens=args.min_tokens,
                        max_tokens=args.max_tokens, home_bias=args.home_bias)
    docs = []
    for i in range(args.n):
        seed = args.seed * 1_000_003 + i
        if args.pages > 1:
            docs.extend(generate_multipage_document(seed, layout, args.pages,
                                                    doc_id=f"doc-{i:06d}"))
        else:
            docs.append(generate_synthetic_document(seed, layout,
                                                    doc_id=f"doc-{i:06d}"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(docs, out)
    _write_snapshot(out, {
        "command": "gen-corpus", "n": args.n, "seed": args.seed,
        "grid": f"{layout.rows}x{layout.cols}", "keys": layout.n_keys,
        "theme_size": layout.theme_size, "min_tokens": layout.min_tokens,
        "max_tokens": layout.max_tokens, "home_bias": layout.home_bias,
        "pages": args.pages, "out": str(out),
    })
    print(f"wrote {len(docs)} documents to {out}")
    return EXIT_OK


def _resolve_train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides: dict[str, str] = {}
    for pair in args.set or []:
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    if args.corpus:
        overrides["corpus_path"] = args.corpus
    if args.heldout:
        overrides["heldout_path"] = args.heldout
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.steps is not None:
        overrides["steps"] = str(args.steps)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = cfg.apply_overrides(overrides)
    env_seed = os.environ.get("TAPQ_SEED")
    if env_seed is not None:
        cfg = cfg.apply_overrides({"seed": env_seed})
    return cfg


def cmd_pretrain(args) -> int:
    cfg = _resolve_train_config(args)
    if not cfg.corpus_path:
        raise ConfigurationError("no corpus: pass --corpus or set corpus_path")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out_dir / "resolved_config.txt")
    ckpt = trainer.train(cfg)
    print(f"trained {ckpt.step} steps; checkpoint at {out_dir / 'checkpoint.tapq'}")
    if args.plot:
        _plot_losses(out_dir / "metrics.csv", Path(args.plot))
        print(f"loss curves written to {args.plot}")
    return EXIT_OK


def _plot_losses(metrics_csv: Path, target: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    data = np.genfromtxt(metrics_csv, delimiter=",", names=True)
    fig, ax = plt.subplots(figsize=(8, 5))
    for column in ("l_lm", "l_con", "l_match", "total"):
        ax.plot(data["step"], data[column], label=column)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(target)
    plt.close(fig)


def cmd_eval(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    docs = load_corpus(args.corpus)
    metrics = trainer.evaluate(ckpt, docs, n_batches=args.batches,
                               batch_size=args.batch_size, seed=args.seed)
    payload = dict(metrics)
    payload["resolved_config"] = {
        "command": "eval", "checkpoint": args.checkpoint, "corpus": args.corpus,
        "batches": args.batches, "batch_size": args.batch_size, "seed": args.seed,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        _write_snapshot(out, payload["resolved_config"])
        print(f"metrics written to {out}")
    else:
        print(text)
    return EXIT_OK


def cmd_compress(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    docs = load_corpus(args.doc)
    if not docs:
        raise ValidationError(f"{args.doc}: no documents")
    if args.pages:
        result = compress_multipage(ckpt, docs, args.instruction)
    else:
        if len(docs) > 1:
            raise ValidationError(
                f"{args.doc} holds {len(docs)} documents; pass --pages to "
                "compress them as pages of one document")
        result = compress(ckpt, docs[0], args.instruction)
    payload = {
        "shape": list(result.vectors.shape),
        "doc_ids": list(result.doc_ids),
        "instruction": result.instruction,
        "vectors": result.vectors.tolist(),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload), encoding="utf-8")
    _write_snapshot(out, {
        "command": "compress", "checkpoint": args.checkpoint, "doc": args.doc,
        "instruction": args.instruction, "pages": args.pages, "out": str(out),
    })
    print(f"compressed to shape {payload['shape']} -> {out}")
    return EXIT_OK


def cmd_flops(args) -> int:
    arch = _parse_lm_arch(args.lm_arch)
    resolved = {
        "command": "flops", "mode": args.mode, "ocr_len": args.ocr_len,
        "k": args.k, "instr_len": args.instr_len, "pages": args.pages,
        "lm_arch": args.lm_arch,
    }
    if args.sweep_ocr_len:
        try:
            start, stop, step = (int(x) for x in args.sweep_ocr_len.split(":"))
        except ValueError:
            raise ConfigurationError(
                f"--sweep-ocr-len expects start:stop:step, got {args.sweep_ocr_len!r}"
            ) from None
        lengths = list(range(start, stop + 1, step))
    else:
        lengths = [args.ocr_len]
    modes = MODES_FOR_REPORT if args.mode == "all" else [args.mode]
    profiles = [
        flops_report(arch, assemble_dims(mode, n, args.k, args.instr_len, args.pages))
        for n in lengths for mode in modes
    ]
    if args.csv:
        csv_path = Path(args.csv)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", encoding="utf-8") as fh:
            fh.write("mode,arch,ocr_len,seq_len,lm_flops,ocr_module_flops,total_flops\n")
            for n, profile in zip([n for n in lengths for _ in modes], profiles):
                fh.write(f"{profile.mode},{profile.arch},{n},{profile.seq_len},"
                         f"{profile.lm_flops},{profile.ocr_module_flops},"
                         f"{profile.total_flops}\n")
        _write_snapshot(csv_path, resolved)
        print(f"sweep written to {csv_path}")
    if args.table:
        print(format_flops_table(profiles))
    payload = {
        "profiles": [json.loads(p.to_json()) for p in profiles],
        "resolved_config": resolved,
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        _write_snapshot(out, resolved)
        print(f"report written to {out}")
    elif not args.table:
        print(json.dumps(payload, indent=2))
    return EXIT_OK


MODES_FOR_REPORT = ["baseline", "full", "light"]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tapq",
        description="Layout-aware OCR compression: corpus generation, "
                    "three-objective pretraining, evaluation, compression, "
                    "and the FLOPs ledger.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-corpus", help="generate a synthetic JSONL corpus")
    gen.add_argument("--n", type=int, required=True, help="number of documents")
    gen.add_argument("--seed", type=int, default=0, help="generation seed")
    gen.add_argument("--grid", type=_parse_grid, default=(4, 4),
                     help="page grid as ROWSxCOLS (default 4x4)")
    gen.add_argument("--keys", type=int, default=16, help="size of the key pool")
    gen.add_argument("--theme-size", type=int, default=2,
                     help="distinct keys per document")
    gen.add_argument("--min-tokens", type=int, default=24)
    gen.add_argument("--max-tokens", type=int, default=48)
    gen.add_argument("--home-bias", type=float, default=1.0,
                     help="probability a pair lands in its key's home cell")
    gen.add_argument("--pages", type=int, default=1,
                     help="pages per document (>1 emits one line per page)")
    gen.add_argument("--out", required=True, help="output JSONL path")
    gen.set_defaults(func=cmd_gen_corpus)

    pre = sub.add_parser("pretrain", help="run the three-objective pretraining")
    pre.add_argument("--config", help="key=value config file")
    pre.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    pre.add_argument("--corpus", help="training corpus JSONL")
    pre.add_argument("--heldout", help="held-out corpus JSONL")
    pre.add_argument("--out-dir", help="run directory")
    pre.add_argument("--steps", type=int, help="override steps")
    pre.add_argument("--seed", type=int, help="override seed")
    pre.add_argument("--plot", help="write loss-curve PNG here")
    pre.set_defaults(func=cmd_pretrain)

    ev = sub.add_parser("eval", help="held-out metrics for a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True, help="held-out JSONL")
    ev.add_argument("--batches", type=int, default=50)
    ev.add_argument("--batch-size", type=int, default=16)
    ev.add_argument("--seed", type=int, default=12345)
    ev.add_argument("--out", help="write metrics JSON here (default: stdout)")
    ev.set_defaults(func=cmd_eval)

    comp = sub.add_parser("compress", help="compress a document to K vectors")
    comp.add_argument("--checkpoint", required=True)
    comp.add_argument("--doc", required=True, help="JSONL with the document(s)")
    comp.add_argument("--instruction", default="", help="free-text prompt")
    comp.add_argument("--pages", action="store_true",
                      help="treat every line of --doc as one page")
    comp.add_argument("--out", required=True, help="output vectors JSON")
    comp.set_defaults(func=cmd_compress)

    fl = sub.add_parser("flops", help="analytic forward-pass cost report")
    fl.add_argument("--mode", choices=["baseline", "full", "light", "all"],
                    required=True)
    fl.add_argument("--ocr-len", type=int, default=1024,
                    help="raw OCR tokens per page")
    fl.add_argument("--k", type=int, default=32, help="queries per page")
    fl.add_argument("--instr-len", type=int, default=32)
    fl.add_argument("--pages", type=int, default=1)
    fl.add_argument("--lm-arch", default="lm-xl",
                    help=f"preset ({', '.join(LM_PRESETS)}) or d,layers,heads,ff_mult")
    fl.add_argument("--table", action="store_true", help="print aligned text table")
    fl.add_argument("--out", help="write JSON report here")
    fl.add_argument("--csv", help="write a FLOPs-vs-length CSV here")
    fl.add_argument("--sweep-ocr-len", metavar="START:STOP:STEP",
                    help="sweep the per-page OCR length")
    fl.set_defaults(func=cmd_flops)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigurationError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TapqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # non-package failure: still one-line diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
