"""Row serialization and dataset assembly for coefficient vectors.

A row is 26 coefficients rendered with five decimal places, a comma-separated
binary label, and a newline. That text form is both the on-disk dataset
format and the training corpus for the character-level generators, so
parsing is strict: anything that does not look like a well-formed row is
dropped and counted rather than repaired.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    SerializationError,
    SizeError,
    SplitError,
    WeightingError,
)

N_FEATURES = 26
BLOCK_ROWS = 1000  # rows per contiguous slice when assembling large corpora

_DECIMAL = re.compile(r"^-?(?:\d+\.?\d*|\.\d+)$")


@dataclass
class MfccRow:
    """One labeled coefficient vector."""

    coefficients: np.ndarray
    label: int


class MfccDataset:
    """Column-major store of labeled rows with per-row provenance tags."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, provenance):
        features = np.asarray(features, dtype=np.float64).reshape(-1, N_FEATURES)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        provenance = np.asarray(provenance, dtype="<U16").reshape(-1)
        if not (len(features) == len(labels) == len(provenance)):
            raise SizeError(
                f"features/labels/provenance lengths differ: "
                f"{len(features)}/{len(labels)}/{len(provenance)}"
            )
        self.features = features
        self.labels = labels
        self.provenance = provenance

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.labels == 0))

    def subset(self, indices) -> "MfccDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MfccDataset(self.features[idx], self.labels[idx], self.provenance[idx])

    @staticmethod
    def empty() -> "MfccDataset":
        return MfccDataset(
            np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64), np.zeros(0, "<U16")
        )

    @staticmethod
    def concat(*parts: "MfccDataset") -> "MfccDataset":
        return MfccDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.provenance for p in parts]),
        )


def serialize_row(coefficients, label: int) -> str:
    """Render one row: 26 five-decimal values, the label digit, a newline."""
    coeffs = np.asarray(coefficients, dtype=np.float64).reshape(-1)
    if len(coeffs) != N_FEATURES:
        raise SerializationError(
            f"need exactly {N_FEATURES} coefficients, got {len(coeffs)}"
        )
    if not np.all(np.isfinite(coeffs)):
        bad = int(np.flatnonzero(~np.isfinite(coeffs))[0])
        raise SerializationError(f"coefficient {bad} is not finite: {coeffs[bad]}")
    if label not in (0, 1):
        raise SerializationError(f"label must be 0 or 1, got {label!r}")
    return ",".join(f"{v:.5f}" for v in coeffs) + f",{label}\n"


def serialize_dataset(ds: MfccDataset) -> str:
    """Render every row of a dataset in order."""
    return "".join(
        serialize_row(ds.features[i], int(ds.labels[i])) for i in range(len(ds))
    )


def save_dataset(path, ds: MfccDataset) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize_dataset(ds))


def parse_and_filter(
    text: str, provenance: str = "synthetic"
) -> tuple[MfccDataset, int]:
    """Parse row text, keeping only well-formed lines.

    A line survives when it has exactly 27 comma-separated fields, fields
    1-26 are finite plain decimals, and field 27 is exactly '0' or '1'.
    Returns the kept rows and the count of rejected lines. A trailing empty
    string after the final newline is an artifact of splitting, not a line.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    features: list[np.ndarray] = []
    labels: list[int] = []
    rejected = 0
    for line in lines:
        fields = line.split(",")
        if len(fields) != N_FEATURES + 1 or fields[-1] not in ("0", "1"):
            rejected += 1
            continue
        if not all(_DECIMAL.match(f) for f in fields[:-1]):
            rejected += 1
            continue
        values = np.array([float(f) for f in fields[:-1]])
        if not np.all(np.isfinite(values)):
            rejected += 1
            continue
        features.append(values)
        labels.append(int(fields[-1]))
    if features:
        ds = MfccDataset(
            np.stack(features),
            np.array(labels, dtype=np.int64),
            np.full(len(labels), provenance, dtype="<U16"),
        )
    else:
        ds = MfccDataset.empty()
    return ds, rejected


def load_dataset(path, provenance: str) -> tuple[MfccDataset, int]:
    with open(path, "r", encoding="ascii") as fh:
        return parse_and_filter(fh.read(), provenance=provenance)


def sample_block_lines(raw: str) -> str:
    """Trim a fixed-size sampled block to whole lines.

    Everything after the last newline is an unfinished row and is dropped;
    a block with no newline at all yields nothing.
    """
    cut = raw.rfind("\n")
    return "" if cut < 0 else raw[: cut + 1]


def assemble_negative_corpus(
    source: MfccDataset, target: int, seed: int
) -> MfccDataset:
    """Draw target rows from a pool of negatives: half in contiguous blocks.

    target // (2 * BLOCK_ROWS) non-overlapping 1000-row slices are placed
    uniformly at random, and the remainder is a uniform draw without
    replacement from the uncovered rows. Keeping runs of consecutive frames
    preserves short-time correlation in half the corpus while the rest
    samples the pool broadly.
    """
    n = len(source)
    if np.any(source.labels != 0):
        raise SizeError("negative pool contains rows not labeled 0")
    if n < target:
        raise SizeError(f"need {target} negative rows, pool has only {n}")
    if target < 0:
        raise SizeError(f"target must be non-negative, got {target}")

    rng = np.random.default_rng(seed)
    n_blocks = target // (2 * BLOCK_ROWS)
    slack = n - n_blocks * BLOCK_ROWS
    # Sorted offsets into the slack turn into non-overlapping block starts.
    offsets = np.sort(rng.integers(0, slack + 1, size=n_blocks))
    starts = offsets + np.arange(n_blocks) * BLOCK_ROWS

    covered = np.zeros(n, dtype=bool)
    picked = []
    for s in starts:
        picked.append(np.arange(s, s + BLOCK_ROWS))
        covered[s : s + BLOCK_ROWS] = True
    remainder = target - n_blocks * BLOCK_ROWS
    if remainder > 0:
        uncovered = np.flatnonzero(~covered)
        picked.append(rng.choice(uncovered, size=remainder, replace=False))
    if not picked:
        return source.subset(np.zeros(0, dtype=np.int64))
    return source.subset(np.concatenate(picked))


@dataclass
class ClassWeights:
    """Inverse-prevalence weights: w_c = N / (2 * N_c)."""

    w_pos: float
    w_neg: float


def compute_class_weights(labels) -> ClassWeights:
    labels = np.asarray(labels).reshape(-1)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise WeightingError(
            f"both classes must be present, got {n_pos} positive / {n_neg} negative"
        )
    total = n_pos + n_neg
    return ClassWeights(w_pos=total / (2.0 * n_pos), w_neg=total / (2.0 * n_neg))


def stratified_split(
    ds: MfccDataset, val_fraction: float, seed: int
) -> tuple[MfccDataset, MfccDataset]:
    """Split per class so both sides keep the class mixture.

    Validation takes round(val_fraction * n_c) rows of each class, drawn by a
    seeded shuffle; row order within each side follows the source dataset.
    """
    if not (0.0 < val_fraction < 1.0):
        raise SplitError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    for cls in (0, 1):
        members = np.flatnonzero(ds.labels == cls)
        if len(members) == 0:
            raise SplitError(f"class {cls} is absent, cannot stratify")
        n_val = round(val_fraction * len(members))
        if n_val == 0 or n_val == len(members):
            raise SplitError(
                f"val_fraction {val_fraction} leaves class {cls} empty on one "
                f"side ({n_val} of {len(members)} rows)"
            )
        order = rng.permutation(len(members))
        val_idx.append(np.sort(members[order[:n_val]]))
        train_idx.append(np.sort(members[order[n_val:]]))
    train = ds.subset(np.sort(np.concatenate(train_idx)))
    val = ds.subset(np.sort(np.concatenate(val_idx)))
    return train, val
