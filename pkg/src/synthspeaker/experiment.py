"""Experiment matrix: data prep, generator training, synthesis, transfer runs.

A run directory is laid out as

    <out>/<subject>/seed-<s>/baseline/0/            no-transfer control
    <out>/<subject>/seed-<s>/<generator>/           checkpoint + loss curve
    <out>/<subject>/seed-<s>/<generator>/<size>/    synthetic rows + cell results
    <out>/<subject>/seed-<s>/baselines/<variant>/   classical models

Every expensive artifact carries a sidecar .key file with a content hash of
its inputs; reruns skip work whose key still matches. All randomness is
derived from the per-replication seed plus stage labels, so a rerun of the
same config is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import os
import traceback
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gpt, lstm
from . import checkpoint as ckpt
from .audio import read_audio, resample, trim_silence
from .classifier import (
    classifier_to_tensors,
    evaluate,
    finetune,
    pretrain_on_synthetic,
)
from .baselines import VARIANTS, fit_baseline, predict_baseline
from .classifier import MetricsReport
from .dataset import (
    MfccDataset,
    assemble_negative_corpus,
    compute_class_weights,
    load_dataset,
    sample_block_lines,
    parse_and_filter,
    save_dataset,
    serialize_dataset,
    stratified_split,
)
from .errors import ConfigError, GenerationQualityError, SynthSpeakerError
from .mfcc import build_filterbank, extract_clip
from .seeding import derive_seed

SCHEMA_VERSION = 1

ENV_OUT_DIR = "SYNTHSPEAKER_OUT_DIR"
ENV_POSITIVE = "SYNTHSPEAKER_POSITIVE_CSV"
ENV_NEGATIVE = "SYNTHSPEAKER_NEGATIVE_CSV"
ENV_JOBS = "SYNTHSPEAKER_JOBS"


@dataclass
class ExperimentConfig:
    subject: str
    negative_csv: str
    out_dir: str
    positive_csv: str | None = None
    positive_audio: list[str] = field(default_factory=list)
    generators: list[str] = field(default_factory=lambda: ["lstm", "gpt"])
    sizes: list[int] = field(default_factory=lambda: [0, 2500, 5000, 7500, 10000])
    seeds: list[int] = field(default_factory=lambda: [0])
    negative_target: int = 10000
    full_negative_target: int = 100000
    val_fraction: float = 0.3
    patience: int = 25
    max_epochs: int | None = None
    classifier_lr: float = 1e-3
    classifier_batch: int = 128
    temperature: float = 1.0
    block_chars: int = 1000
    sample_batch: int = 32
    rf_trees: int = 100
    run_baselines: bool = True
    jobs: int = 1
    sample_rate: int = 16000
    lstm: dict = field(default_factory=dict)
    gpt: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.subject:
            raise ConfigError("subject must be a non-empty name")
        if self.positive_csv is None and not self.positive_audio:
            raise ConfigError("need positive_csv or positive_audio")
        if not self.negative_csv:
            raise ConfigError("negative_csv is required")
        for g in self.generators:
            if g not in ("lstm", "gpt"):
                raise ConfigError(f"unknown generator {g!r}")
        if any(s < 0 for s in self.sizes):
            raise ConfigError("sizes must be non-negative")
        if 0 not in self.sizes:
            raise ConfigError("sizes must include 0 (the no-transfer control)")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


def load_config(path) -> ExperimentConfig:
    """Parse a JSON experiment config; env vars override paths and jobs."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version {raw.get('schema_version')!r} does not "
            f"match supported version {SCHEMA_VERSION}"
        )
    raw.pop("schema_version")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**raw)
    if os.environ.get(ENV_OUT_DIR):
        cfg.out_dir = os.environ[ENV_OUT_DIR]
    if os.environ.get(ENV_POSITIVE):
        cfg.positive_csv = os.environ[ENV_POSITIVE]
    if os.environ.get(ENV_NEGATIVE):
        cfg.negative_csv = os.environ[ENV_NEGATIVE]
    if os.environ.get(ENV_JOBS):
        cfg.jobs = int(os.environ[ENV_JOBS])
    cfg.validate()
    return cfg


def content_key(*parts) -> str:
    """Order-sensitive digest of strings/bytes/JSON-able values."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(b"B")
            h.update(part)
        else:
            h.update(b"J")
            h.update(json.dumps(part, sort_keys=True, default=str).encode("utf-8"))
        h.update(b"\x1e")
    return h.hexdigest()


def artifact_fresh(path: Path, key: str) -> bool:
    key_file = path.with_suffix(path.suffix + ".key")
    return path.exists() and key_file.exists() and key_file.read_text() == key


def seal_artifact(path: Path, key: str) -> None:
    path.with_suffix(path.suffix + ".key").write_text(key)


# --------------------------------------------------------------------------
# synthesis


@dataclass
class GenerationStats:
    blocks_drawn: int = 0
    rows_kept: int = 0
    lines_rejected: int = 0

    @property
    def rejection_rate(self) -> float:
        seen = self.rows_kept + self.lines_rejected
        return self.lines_rejected / seen if seen else 0.0


def generate_rows(sampler, n_rows: int, temperature: float, seed: int,
                  block_chars: int = 1000, batch: int = 32
                  ) -> tuple[MfccDataset, GenerationStats]:
    """Sample fixed-size character blocks until n_rows rows survive parsing.

    Each block is trimmed to whole lines, parsed, and filtered; synthetic
    rows must carry label 1, so the rare line with a 0 label counts as a
    rejection. Fifty consecutive blocks with a rejection rate above 99%
    abort the run.
    """
    stats = GenerationStats()
    window: deque[tuple[int, int]] = deque(maxlen=50)
    parts: list[MfccDataset] = []
    while stats.rows_kept < n_rows:
        seeds = [derive_seed(seed, "block", stats.blocks_drawn + i)
                 for i in range(batch)]
        for text in sampler(seeds, block_chars, temperature):
            stats.blocks_drawn += 1
            ds, rejected = parse_and_filter(sample_block_lines(text))
            keep = np.flatnonzero(ds.labels == 1)
            rejected += len(ds) - len(keep)
            ds = ds.subset(keep)
            parts.append(ds)
            stats.rows_kept += len(ds)
            stats.lines_rejected += rejected
            window.append((len(ds), len(ds) + rejected))
            if len(window) == 50:
                kept = sum(k for k, _ in window)
                seen = sum(c for _, c in window)
                if seen == 0 or kept / seen < 0.01:
                    raise GenerationQualityError(
                        f"rejected {seen - kept} of {seen} lines over the "
                        f"last 50 blocks; the model is not producing rows"
                    )
    if not parts:
        return MfccDataset.empty(), stats
    merged = MfccDataset.concat(*parts)
    merged = merged.subset(np.arange(n_rows))
    stats.rows_kept = n_rows
    return merged, stats


def load_generator(tensors) -> tuple[object, object]:
    """(model, sampler) from checkpoint tensors, keyed by the kind tag."""
    kind = ckpt.meta_value(dict(tensors), "kind")
    if kind == 1.0:
        model = lstm.LstmStack.from_tensors(tensors)
        return model, lambda seeds, n, t: lstm.sample_blocks(model, seeds, n, t)
    if kind == 2.0:
        model = gpt.TransformerLM.from_tensors(tensors)
        return model, lambda seeds, n, t: gpt.sample_blocks(model, seeds, n, t)
    raise ConfigError(f"checkpoint kind {kind} is not a generator")


def train_generator(name: str, corpus: str, overrides: dict, seed: int):
    """Train the named generator; returns (model, history)."""
    if name == "lstm":
        cfg = lstm.LstmConfig(**{**overrides, "seed": seed})
        return lstm.train_char_lstm(corpus, cfg)
    if name == "gpt":
        cfg = gpt.GptConfig(**{**overrides, "seed": seed})
        return gpt.train_transformer(corpus, cfg)
    raise ConfigError(f"unknown generator {name!r}")


# --------------------------------------------------------------------------
# matrix runner


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _metrics_payload(metrics: MetricsReport) -> dict:
    return {
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "confusion": [metrics.tp, metrics.fn, metrics.fp, metrics.tn],
        "per_class": {
            str(c): {"precision": m.precision, "recall": m.recall,
                     "f1": m.f1, "support": m.support}
            for c, m in metrics.per_class.items()
        },
    }


def _write_curve(path: Path, record) -> None:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for i in range(len(record.train_loss)):
        lines.append(
            f"{i + 1},{record.train_loss[i]:.12g},{record.train_acc[i]:.12g},"
            f"{record.val_loss[i]:.12g},{record.val_acc[i]:.12g}"
        )
    path.write_text("\n".join(lines) + "\n")


def _record_payload(record) -> dict:
    return {
        "best_epoch": record.best_epoch,
        "best_val_loss": record.best_val_loss,
        "epochs_run": len(record.val_loss),
        "stop_reason": record.stop_reason,
        "data_hash": record.data_hash,
        "hyper_hash": record.hyper_hash,
    }


def _digest_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def prepare_positive(cfg: ExperimentConfig, subject_dir: Path) -> Path:
    """Resolve the positive rows: use the CSV, or extract rows from audio."""
    if cfg.positive_csv:
        return Path(cfg.positive_csv)
    out = subject_dir / "positive.csv"
    key = content_key("extract", [_digest_file(p) for p in cfg.positive_audio],
                      cfg.sample_rate)
    if artifact_fresh(out, key):
        return out
    fb = build_filterbank(sample_rate=cfg.sample_rate)
    rows = []
    for path in cfg.positive_audio:
        clip = resample(read_audio(path), cfg.sample_rate)
        rows.append(extract_clip(clip, fb))
    features = np.concatenate(rows)
    ds = MfccDataset(features, np.ones(len(features), dtype=np.int64),
                     np.full(len(features), "real-positive", "<U16"))
    save_dataset(out, ds)
    seal_artifact(out, key)
    return out


def _cell_status(path: Path, ok: bool, **extras) -> dict:
    payload = {"ok": ok, **extras}
    path.mkdir(parents=True, exist_ok=True)
    _write_json(path / "status.json", payload)
    return payload


def run_seed(cfg: ExperimentConfig, seed: int, negative_target: int) -> list[dict]:
    """Run every cell of one replication; returns per-cell status payloads."""
    subject_dir = Path(cfg.out_dir) / cfg.subject
    seed_dir = subject_dir / f"seed-{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    statuses: list[dict] = []

    def describe(kind, **ident):
        return {"kind": kind, "subject": cfg.subject, "seed": seed, **ident}

    pos_path = prepare_positive(cfg, subject_dir)
    positives, pos_rejected = load_dataset(pos_path, "real-positive")
    if np.any(positives.labels != 1):
        raise ConfigError(f"{pos_path} contains rows not labeled 1")
    negatives_pool, _ = load_dataset(cfg.negative_csv, "real-negative")
    negatives = assemble_negative_corpus(
        negatives_pool, negative_target, derive_seed(seed, "negatives")
    )
    real = MfccDataset.concat(positives, negatives)

    common = dict(val_fraction=cfg.val_fraction, patience=cfg.patience,
                  lr=cfg.classifier_lr, batch_size=cfg.classifier_batch,
                  max_epochs=cfg.max_epochs)

    # no-transfer control, shared by every generator column at size 0
    base_dir = seed_dir / "baseline" / "0"
    base_dir.mkdir(parents=True, exist_ok=True)
    ident = describe("baseline", generator=None, size=0)
    try:
        layers, record, metrics = finetune(None, real, seed, **common)
        ckpt.save_checkpoint(base_dir / "classifier.ckpt",
                             classifier_to_tensors(layers))
        _write_curve(base_dir / "record.csv", record)
        statuses.append(_cell_status(
            base_dir, True, **ident, metrics=_metrics_payload(metrics),
            record=_record_payload(record), synth_stats=None,
        ))
        baseline_ok = True
    except Exception as exc:  # cell failures never abort the matrix
        statuses.append(_cell_status(base_dir, False, **ident,
                                     error=f"{type(exc).__name__}: {exc}",
                                     trace=traceback.format_exc()))
        baseline_ok = False

    corpus = serialize_dataset(positives)
    gen_overrides = {"lstm": cfg.lstm, "gpt": cfg.gpt}
    transfer_sizes = sorted(s for s in set(cfg.sizes) if s > 0)

    for gen_name in cfg.generators:
        gen_dir = seed_dir / gen_name
        gen_dir.mkdir(parents=True, exist_ok=True)
        gen_path = gen_dir / "generator.ckpt"
        gen_seed = derive_seed(seed, "generator", gen_name)
        gen_key = content_key("generator", gen_name, corpus,
                              gen_overrides[gen_name], gen_seed)
        try:
            if transfer_sizes and not artifact_fresh(gen_path, gen_key):
                model, history = train_generator(
                    gen_name, corpus, gen_overrides[gen_name], gen_seed
                )
                ckpt.save_checkpoint(gen_path, model.to_tensors())
                curve = "\n".join(
                    f"{i + 1},{loss:.12g}" for i, loss in enumerate(history)
                )
                (gen_dir / "curve.csv").write_text("epoch,loss\n" + curve + "\n")
                seal_artifact(gen_path, gen_key)
        except Exception as exc:
            for size in transfer_sizes:
                statuses.append(_cell_status(
                    gen_dir / str(size), False,
                    **describe("transfer", generator=gen_name, size=size),
                    error=f"{type(exc).__name__}: {exc}",
                    trace=traceback.format_exc(),
                ))
            continue

        for size in transfer_sizes:
            cell_dir = gen_dir / str(size)
            cell_dir.mkdir(parents=True, exist_ok=True)
            ident = describe("transfer", generator=gen_name, size=size)
            try:
                synth_path = cell_dir / "synthetic.csv"
                synth_key = content_key("synthetic", gen_key, size,
                                        cfg.temperature, cfg.block_chars,
                                        cfg.sample_batch, seed)
                sample_seed = derive_seed(seed, "sample", gen_name, size)
                if artifact_fresh(synth_path, synth_key):
                    synthetic, _ = load_dataset(synth_path, "synthetic")
                    gen_stats = json.loads(
                        (cell_dir / "synthetic.stats.json").read_text()
                    )
                else:
                    _, sampler = load_generator(ckpt.load_checkpoint(gen_path))
                    synthetic, stats = generate_rows(
                        sampler, size, cfg.temperature, sample_seed,
                        block_chars=cfg.block_chars, batch=cfg.sample_batch,
                    )
                    save_dataset(synth_path, synthetic)
                    gen_stats = {
                        "blocks_drawn": stats.blocks_drawn,
                        "rows_kept": stats.rows_kept,
                        "lines_rejected": stats.lines_rejected,
                        "rejection_rate": stats.rejection_rate,
                    }
                    _write_json(cell_dir / "synthetic.stats.json", gen_stats)
                    seal_artifact(synth_path, synth_key)

                pre_bytes, pre_record = pretrain_on_synthetic(
                    synthetic, negatives, derive_seed(seed, "pretrain", gen_name, size),
                    val_fraction=cfg.val_fraction, patience=cfg.patience,
                    lr=cfg.classifier_lr, batch_size=cfg.classifier_batch,
                    max_epochs=cfg.max_epochs,
                )
                (cell_dir / "pretrained.ckpt").write_bytes(pre_bytes)
                _write_curve(cell_dir / "pretrain_record.csv", pre_record)

                layers, record, metrics = finetune(pre_bytes, real, seed, **common)
                ckpt.save_checkpoint(cell_dir / "classifier.ckpt",
                                     classifier_to_tensors(layers))
                _write_curve(cell_dir / "record.csv", record)
                statuses.append(_cell_status(
                    cell_dir, True, **ident, metrics=_metrics_payload(metrics),
                    record=_record_payload(record),
                    pretrain_record=_record_payload(pre_record),
                    synth_stats=gen_stats,
                ))
            except Exception as exc:
                statuses.append(_cell_status(
                    cell_dir, False, **ident,
                    error=f"{type(exc).__name__}: {exc}",
                    trace=traceback.format_exc(),
                ))

    if cfg.run_baselines:
        train, val = stratified_split(real, cfg.val_fraction,
                                      derive_seed(seed, "split"))
        weights = compute_class_weights(train.labels)
        for variant in VARIANTS:
            cell_dir = seed_dir / "baselines" / variant
            ident = describe("classical", generator=None, size=None,
                             variant=variant)
            try:
                model = fit_baseline(variant, train, weights,
                                     derive_seed(seed, "baseline", variant),
                                     n_trees=cfg.rf_trees)
                pred, _scores = predict_baseline(model, val.features)
                y = val.labels
                metrics = MetricsReport.from_confusion(
                    tp=int(np.sum((pred == 1) & (y == 1))),
                    fn=int(np.sum((pred == 0) & (y == 1))),
                    fp=int(np.sum((pred == 1) & (y == 0))),
                    tn=int(np.sum((pred == 0) & (y == 0))),
                )
                statuses.append(_cell_status(
                    cell_dir, True, **ident, metrics=_metrics_payload(metrics),
                ))
            except Exception as exc:
                statuses.append(_cell_status(
                    cell_dir, False, **ident,
                    error=f"{type(exc).__name__}: {exc}",
                    trace=traceback.format_exc(),
                ))

    return statuses


def run_matrix(cfg: ExperimentConfig, full_negatives: bool = False) -> tuple[int, int]:
    """Run all replications and write reports; returns (cells, failures)."""
    from .report import write_reports

    cfg.validate()
    target = cfg.full_negative_target if full_negatives else cfg.negative_target
    seeds = sorted(set(cfg.seeds))
    all_statuses: list[dict] = []
    if cfg.jobs > 1 and len(seeds) > 1:
        import concurrent.futures as futures

        with futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            jobs = [pool.submit(run_seed, cfg, s, target) for s in seeds]
            for job in jobs:
                all_statuses.extend(job.result())
    else:
        for s in seeds:
            all_statuses.extend(run_seed(cfg, s, target))

    write_reports(Path(cfg.out_dir))
    failed = sum(1 for s in all_statuses if not s["ok"])
    return len(all_statuses), failed
