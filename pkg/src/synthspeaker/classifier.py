"""Binary speaker classifier: fixed 26-30-7-29-1 net with transfer support.

A pretraining run on synthetic rows produces a checkpoint; fine-tuning loads
those weights (or fresh random ones for the no-transfer control) and trains
on real rows. Both arms share the split, the shuffle stream, and every
hyperparameter, so the only difference between them is where the starting
weights came from - the run records carry hashes that prove it.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .dataset import ClassWeights, MfccDataset, compute_class_weights, stratified_split
from .errors import EvaluationError, ParameterError, SizeError, TransferError
from .nn import (
    DenseLayer,
    adam_init,
    adam_step,
    backward,
    flatten_grads,
    init_dense,
    layer_params,
    mean_weighted_bce,
    predict_proba,
)
from .seeding import derive_seed

HIDDEN_UNITS = (30, 7, 29)
N_INPUTS = 26
THRESHOLD = 0.5


def build_mlp(seed: int, n_inputs: int = N_INPUTS,
              hidden: tuple = HIDDEN_UNITS) -> list[DenseLayer]:
    """Fresh relu stack with a single sigmoid output unit."""
    rng = np.random.default_rng(seed)
    layers = []
    n_in = n_inputs
    for width in hidden:
        layers.append(init_dense(n_in, width, "relu", rng))
        n_in = width
    layers.append(init_dense(n_in, 1, "sigmoid", rng))
    return layers


class EarlyStopping:
    """Stop when the watched loss has not strictly improved for `patience`
    epochs, remembering a snapshot of the best weights."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ParameterError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_snapshot = None
        self.wait = 0

    def update(self, epoch: int, loss: float, snapshot) -> bool:
        """Record one epoch; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_snapshot = snapshot
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainRecord:
    """Per-epoch curves plus everything needed to audit a training run."""

    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = np.inf
    stop_reason: str = ""
    data_hash: str = ""
    hyper_hash: str = ""


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    """Threshold-0.5 confusion counts and the scores derived from them."""

    accuracy: float  # percent
    precision: float  # support-weighted across both classes
    recall: float
    f1: float
    per_class: dict[int, ClassMetrics]
    tp: int
    fn: int
    fp: int
    tn: int

    @staticmethod
    def from_confusion(tp: int, fn: int, fp: int, tn: int) -> "MetricsReport":
        total = tp + fn + fp + tn
        if total == 0:
            raise EvaluationError("empty confusion matrix")

        def safe(num, den):
            return num / den if den > 0 else 0.0

        per_class = {}
        for cls, (tp_c, fp_c, fn_c, support) in {
            1: (tp, fp, fn, tp + fn),
            0: (tn, fn, fp, tn + fp),
        }.items():
            prec = safe(tp_c, tp_c + fp_c)
            rec = safe(tp_c, tp_c + fn_c)
            f1 = safe(2 * prec * rec, prec + rec)
            per_class[cls] = ClassMetrics(precision=prec, recall=rec, f1=f1,
                                          support=support)
        w1 = per_class[1].support / total
        w0 = per_class[0].support / total
        return MetricsReport(
            accuracy=100.0 * (tp + tn) / total,
            precision=w1 * per_class[1].precision + w0 * per_class[0].precision,
            recall=w1 * per_class[1].recall + w0 * per_class[0].recall,
            f1=w1 * per_class[1].f1 + w0 * per_class[0].f1,
            per_class=per_class,
            tp=tp, fn=fn, fp=fp, tn=tn,
        )


def evaluate(layers: list[DenseLayer], ds: MfccDataset) -> MetricsReport:
    """Score a dataset at the 0.5 threshold; needs both classes present."""
    if ds.n_positive == 0 or ds.n_negative == 0:
        raise EvaluationError(
            f"evaluation set must contain both classes, got "
            f"{ds.n_positive} positive / {ds.n_negative} negative"
        )
    p = predict_proba(layers, ds.features)
    pred = (p >= THRESHOLD).astype(np.int64)
    y = ds.labels
    tp = int(np.sum((pred == 1) & (y == 1)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    return MetricsReport.from_confusion(tp, fn, fp, tn)


def _accuracy(layers, ds) -> float:
    p = predict_proba(layers, ds.features)
    return float(np.mean((p >= THRESHOLD).astype(np.int64) == ds.labels))


def _dataset_digest(h, ds: MfccDataset) -> None:
    h.update(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())


def training_hashes(train: MfccDataset, val: MfccDataset, weights: ClassWeights,
                    lr: float, batch_size: int, patience: int, seed: int,
                    max_epochs) -> tuple[str, str]:
    """Digest of the exact data stream and of the hyperparameters.

    Initial weights are deliberately absent: a transfer run and its control
    must hash identically."""
    hd = hashlib.sha256()
    _dataset_digest(hd, train)
    _dataset_digest(hd, val)
    hh = hashlib.sha256()
    hh.update(struct.pack("<ddd", weights.w_pos, weights.w_neg, lr))
    hh.update(struct.pack("<qqqq", batch_size, patience, seed,
                          -1 if max_epochs is None else max_epochs))
    return hd.hexdigest(), hh.hexdigest()


def train_classifier(
    layers: list[DenseLayer],
    train: MfccDataset,
    val: MfccDataset,
    weights: ClassWeights,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 128,
    patience: int = 25,
    max_epochs: int | None = None,
) -> tuple[list[DenseLayer], TrainRecord]:
    """Mini-batch Adam with validation-loss early stopping.

    Runs until the validation loss stalls for `patience` epochs (or
    max_epochs, when given); the weights from the best epoch are restored
    before returning. The shuffle stream is seeded independently of the
    starting weights.
    """
    if len(train) == 0 or len(val) == 0:
        raise SizeError("train and validation sets must be non-empty")
    params = layer_params(layers)
    state = adam_init(params, lr=lr)
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    stopper = EarlyStopping(patience)
    record = TrainRecord()
    record.data_hash, record.hyper_hash = training_hashes(
        train, val, weights, lr, batch_size, patience, seed, max_epochs
    )

    epoch = 0
    while True:
        epoch += 1
        order = shuffle_rng.permutation(len(train))
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            _, grads = backward(layers, train.features[idx], train.labels[idx], weights)
            adam_step(params, flatten_grads(grads), state)

        record.train_loss.append(mean_weighted_bce(layers, train.features,
                                                   train.labels, weights))
        record.train_acc.append(_accuracy(layers, train))
        val_loss = mean_weighted_bce(layers, val.features, val.labels, weights)
        record.val_loss.append(val_loss)
        record.val_acc.append(_accuracy(layers, val))

        should_stop = stopper.update(epoch, val_loss,
                                     [p.copy() for p in params])
        if should_stop:
            record.stop_reason = "patience"
            break
        if max_epochs is not None and epoch >= max_epochs:
            record.stop_reason = "max_epochs"
            break

    if stopper.best_snapshot is not None:
        for p, bp in zip(params, stopper.best_snapshot):
            p[...] = bp
    record.best_epoch = stopper.best_epoch
    record.best_val_loss = float(stopper.best_loss)
    return layers, record


def classifier_to_tensors(layers: list[DenseLayer]) -> list[tuple[str, np.ndarray]]:
    act_code = {"identity": 0, "relu": 1, "sigmoid": 2, "tanh": 3, "softmax": 4}
    tensors = [
        ckpt.meta("kind", 0.0),
        ckpt.meta("layers", len(layers)),
        ckpt.meta("activations", [act_code[l.activation] for l in layers]),
    ]
    for i, layer in enumerate(layers):
        tensors.append((f"layer{i}/W", layer.W))
        tensors.append((f"layer{i}/b", layer.b))
    return tensors


def classifier_from_tensors(tensors) -> list[DenseLayer]:
    d = dict(tensors)
    n = int(ckpt.meta_value(d, "layers"))
    codes = d.get("meta/activations")
    if codes is None or len(codes) != n:
        raise TransferError("checkpoint activation list missing or wrong length")
    names = ("identity", "relu", "sigmoid", "tanh", "softmax")
    layers = []
    for i in range(n):
        try:
            W, b = d[f"layer{i}/W"], d[f"layer{i}/b"]
        except KeyError as exc:
            raise TransferError(f"checkpoint missing tensor {exc}") from exc
        layers.append(DenseLayer(W=W.copy(), b=b.copy(),
                                 activation=names[int(codes[i])]))
    return layers


def _check_topology(layers: list[DenseLayer]) -> None:
    widths = tuple(l.W.shape[0] for l in layers)
    ins = tuple(l.W.shape[1] for l in layers)
    expected_w = HIDDEN_UNITS + (1,)
    expected_i = (N_INPUTS,) + HIDDEN_UNITS
    if widths != expected_w or ins != expected_i:
        raise TransferError(
            f"checkpoint topology {ins}->{widths} does not match "
            f"{expected_i}->{expected_w}"
        )


def pretrain_on_synthetic(
    synthetic: MfccDataset,
    negatives: MfccDataset,
    seed: int,
    val_fraction: float = 0.3,
    patience: int = 25,
    lr: float = 1e-3,
    batch_size: int = 128,
    max_epochs: int | None = None,
) -> tuple[bytes, TrainRecord]:
    """Train a fresh net on synthetic positives vs real negatives.

    Returns the best weights as checkpoint bytes plus the run record.
    """
    if len(synthetic) == 0:
        raise SizeError("no synthetic rows to pretrain on")
    if np.any(synthetic.labels != 1):
        raise SizeError("synthetic rows must all carry label 1")
    combined = MfccDataset.concat(synthetic, negatives)
    weights = compute_class_weights(combined.labels)
    train, val = stratified_split(combined, val_fraction,
                                  derive_seed(seed, "pretrain-split"))
    layers = build_mlp(derive_seed(seed, "pretrain-init"))
    layers, record = train_classifier(
        layers, train, val, weights, seed=derive_seed(seed, "pretrain-train"),
        lr=lr, batch_size=batch_size, patience=patience, max_epochs=max_epochs,
    )
    return ckpt.save_tensors(classifier_to_tensors(layers)), record


def finetune(
    init_checkpoint: bytes | None,
    real: MfccDataset,
    seed: int,
    val_fraction: float = 0.3,
    patience: int = 25,
    lr: float = 1e-3,
    batch_size: int = 128,
    max_epochs: int | None = None,
) -> tuple[list[DenseLayer], TrainRecord, MetricsReport]:
    """Fine-tune on real rows from a checkpoint, or from scratch when None.

    The split and shuffle seeds depend only on `seed`, so a transfer run and
    its from-scratch control see byte-identical data order.
    """
    train, val = stratified_split(real, val_fraction, derive_seed(seed, "split"))
    weights = compute_class_weights(train.labels)
    if init_checkpoint is None:
        layers = build_mlp(derive_seed(seed, "init"))
    else:
        layers = classifier_from_tensors(ckpt.load_tensors(init_checkpoint))
        _check_topology(layers)
    layers, record = train_classifier(
        layers, train, val, weights, seed=derive_seed(seed, "train"),
        lr=lr, batch_size=batch_size, patience=patience, max_epochs=max_epochs,
    )
    return layers, record, evaluate(layers, val)
