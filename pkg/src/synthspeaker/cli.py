"""Command-line front end.

Subcommands: extract rows from WAV files, train a generator, sample rows
from a generator checkpoint, run the full experiment matrix, and re-render
reports from a finished run directory.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import gpt, lstm
from .audio import read_audio, resample, trim_silence
from .dataset import MfccDataset, save_dataset
from .errors import SynthSpeakerError
from .experiment import (
    generate_rows,
    load_config,
    load_generator,
    run_matrix,
    train_generator,
)
from .mfcc import build_filterbank, extract_clip
from .report import render_reports, write_reports


def _cmd_extract(args) -> int:
    fb = build_filterbank(sample_rate=args.rate)
    rows = []
    failures = 0
    for path in args.wavs:
        try:
            clip = resample(read_audio(path), args.rate)
            if args.trim:
                clip = trim_silence(clip)
            rows.append(extract_clip(clip, fb, window_s=args.window,
                                     step_s=args.step))
        except SynthSpeakerError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
    if rows:
        features = np.concatenate(rows)
        ds = MfccDataset(
            features,
            np.full(len(features), args.label, dtype=np.int64),
            np.full(len(features),
                    "real-positive" if args.label == 1 else "real-negative",
                    "<U16"),
        )
        save_dataset(args.out, ds)
        print(f"wrote {len(ds)} rows to {args.out}")
    if failures:
        print(f"{failures} of {len(args.wavs)} files failed", file=sys.stderr)
    return 1 if failures else 0


def _gen_overrides(args) -> dict:
    if args.model == "lstm":
        keys = {"units": args.units, "layers": args.layers,
                "epochs": args.epochs, "seq_len": args.seq_len, "lr": args.lr}
    else:
        keys = {"d_model": args.d_model, "n_heads": args.heads,
                "n_layers": args.layers, "context": args.context,
                "epochs": args.epochs, "lr": args.lr,
                "batch_size": args.batch_size}
    return {k: v for k, v in keys.items() if v is not None}


def _cmd_train_gen(args) -> int:
    corpus = Path(args.corpus).read_text(encoding="ascii")
    model, history = train_generator(args.model, corpus, _gen_overrides(args),
                                     args.seed)
    ckpt.save_checkpoint(args.out, model.to_tensors())
    if args.curve:
        lines = ["epoch,loss"] + [f"{i + 1},{v:.12g}" for i, v in enumerate(history)]
        Path(args.curve).write_text("\n".join(lines) + "\n")
    best = int(np.argmin(history))
    print(f"trained {args.model} for {len(history)} epochs; "
          f"best loss {history[best]:.6f} at epoch {best + 1}")
    return 0


def _cmd_generate(args) -> int:
    _, sampler = load_generator(ckpt.load_checkpoint(args.ckpt))
    ds, stats = generate_rows(sampler, args.rows, args.temperature, args.seed,
                              block_chars=args.block_chars, batch=args.batch)
    save_dataset(args.out, ds)
    payload = {
        "blocks_drawn": stats.blocks_drawn,
        "rows_kept": stats.rows_kept,
        "lines_rejected": stats.lines_rejected,
        "rejection_rate": stats.rejection_rate,
    }
    Path(str(args.out) + ".stats.json").write_text(
        json.dumps(payload, sort_keys=True) + "\n"
    )
    print(f"blocks={stats.blocks_drawn} rows={stats.rows_kept} "
          f"rejected_lines={stats.lines_rejected} "
          f"rejection_rate={stats.rejection_rate:.4f}")
    return 0


def _cmd_run_matrix(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.jobs:
        cfg.jobs = args.jobs
    cells, failed = run_matrix(cfg, full_negatives=args.full_negatives)
    print(f"{cells - failed} of {cells} cells succeeded; reports in {cfg.out_dir}")
    return 1 if failed else 0


def _cmd_report(args) -> int:
    if args.out:
        md_text, csv_text = render_reports(Path(args.runs))
        text = md_text if args.format == "md" else csv_text
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        md_path, csv_path = write_reports(Path(args.runs))
        print(f"wrote {md_path} and {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthspeaker",
        description="Speaker recognition from scarce audio via synthetic "
                    "coefficient rows and transfer learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="WAV files to labeled coefficient rows")
    p.add_argument("wavs", nargs="+", help="input PCM16 WAV files")
    p.add_argument("--out", required=True, help="output rows file")
    p.add_argument("--label", type=int, choices=(0, 1), default=1)
    p.add_argument("--rate", type=int, default=16000,
                   help="resample target in Hz (default 16000)")
    p.add_argument("--trim", action="store_true",
                   help="trim leading/trailing silence before framing")
    p.add_argument("--window", type=float, default=0.025)
    p.add_argument("--step", type=float, default=0.010)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train-gen", help="train a character-level generator")
    p.add_argument("--model", required=True, choices=("lstm", "gpt"))
    p.add_argument("--corpus", required=True, help="row text file to model")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="optional per-epoch loss CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--units", type=int, help="lstm hidden units")
    p.add_argument("--layers", type=int, help="stacked layers")
    p.add_argument("--seq-len", dest="seq_len", type=int,
                   help="lstm window length")
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=_cmd_train_gen)

    p = sub.add_parser("generate", help="sample rows from a generator checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block-chars", dest="block_chars", type=int, default=1000)
    p.add_argument("--batch", type=int, default=32)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("run-matrix", help="run the full experiment grid")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--full-negatives", action="store_true",
                   help="use the large negative-corpus target")
    p.add_argument("--jobs", type=int, help="parallel replications")
    p.add_argument("--out", help="override the output directory")
    p.set_defaults(func=_cmd_run_matrix)

    p = sub.add_parser("report", help="re-render reports from a run directory")
    p.add_argument("--runs", required=True)
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.add_argument("--out", help="write one format here instead of both "
                                 "into the run directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SynthSpeakerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
