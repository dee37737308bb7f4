"""Training loop, per-SNR evaluation and report rendering."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .dataset import IqDataset, batches
from .models import Model, predict
from .tensor import Tensor

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 0.1
    batch_size: int = 128
    seed: int = 0
    eval_every_epoch: bool = True
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    test_acc: float


@dataclass
class History:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    min_test_loss: float = math.inf

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,test_loss,test_acc"]
        for r in self.epochs:
            lines.append(f"{r.epoch},{r.train_loss:.9g},{r.test_loss:.9g},{r.test_acc:.9g}")
        return "\n".join(lines) + "\n"


def _check_geometry(model: Model, ds: IqDataset, what: str) -> None:
    if ds.frame_shape != tuple(model.spec.input_shape):
        raise ValueError(f"{what} frames {ds.frame_shape} do not match model input {tuple(model.spec.input_shape)}")
    if len(ds) and ds.labels.max() >= model.spec.n_classes:
        raise ValueError(f"{what} label {ds.labels.max()} >= model classes {model.spec.n_classes}")


def dataset_loss(model: Model, ds: IqDataset, batch_size: int = 512) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over ``ds`` and the predicted labels."""
    total, preds = 0.0, []
    with T.no_grad():
        for x, y, _ in batches(ds, batch_size):
            logits = model.forward(Tensor(model.prepare(x)))
            loss = T.softmax_cross_entropy(logits, y)
            total += float(loss.data) * len(y)
            preds.append(logits.data.argmax(axis=1))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return total / max(len(ds), 1), pred


def train(model: Model, train_ds: IqDataset, test_ds: IqDataset, cfg: TrainConfig = TrainConfig()
          ) -> Tuple[Model, History]:
    """Minibatch SGD on the mean cross-entropy.

    After every epoch the full test set is scored; the returned model is a copy
    of the parameters at the epoch with the lowest test loss (earliest wins).
    ``model`` itself is left at its final-epoch parameters.
    """
    _check_geometry(model, train_ds, "train")
    _check_geometry(model, test_ds, "test")
    params = model.trainable()
    hist = History()
    best = model.copy()
    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        shuffle = int(np.random.SeedSequence([cfg.seed, epoch]).generate_state(1)[0])
        for b, (x, y, _) in enumerate(batches(train_ds, cfg.batch_size, shuffle)):
            T.zero_grad(params)
            loss = T.softmax_cross_entropy(model.forward(Tensor(model.prepare(x))), y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            T.sgd_step(params, cfg.lr)
            total += value * len(y)
            seen += len(y)
        test_loss, pred = dataset_loss(model, test_ds, cfg.eval_batch_size)
        acc = float(np.mean(pred == test_ds.labels)) if len(test_ds) else math.nan
        hist.epochs.append(EpochRecord(epoch, total / max(seen, 1), test_loss, acc))
        log.info("epoch %d train_loss %.4f test_loss %.4f test_acc %.4f", epoch, total / max(seen, 1), test_loss, acc)
        if test_loss < hist.min_test_loss:
            hist.min_test_loss, hist.best_epoch = test_loss, epoch
            best = model.copy()
    return best, hist


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    overall_accuracy: float
    per_snr: Dict[float, float]
    per_snr_count: Dict[float, int]
    counts: np.ndarray  # K x K, rows = true label, columns = prediction
    class_names: List[str]
    best_epoch: int = 0
    min_test_loss: float = math.nan

    @property
    def n_test(self) -> int:
        return int(self.counts.sum())

    @property
    def confusion(self) -> np.ndarray:
        """Row-normalised confusion matrix; rows without support stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    @property
    def empty_rows(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.counts.sum(axis=1) == 0)]

    def accuracy_at_or_above(self, snr_db: float) -> float:
        keys = [k for k in self.per_snr if k >= snr_db]
        n = sum(self.per_snr_count[k] for k in keys)
        return sum(self.per_snr[k] * self.per_snr_count[k] for k in keys) / n if n else math.nan


def report_from_predictions(labels, preds, snr_db, class_names, best_epoch: int = 0,
                            min_test_loss: float = math.nan) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    snr_db = np.asarray(snr_db, dtype=np.float64)
    K = len(class_names)
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    per_snr, per_n = {}, {}
    for s in np.unique(snr_db):
        m = snr_db == s
        per_snr[float(s)] = float(np.mean(preds[m] == labels[m]))
        per_n[float(s)] = int(m.sum())
    overall = float(np.trace(counts) / counts.sum()) if counts.sum() else math.nan
    return EvalReport(overall, per_snr, per_n, counts, list(class_names), best_epoch, min_test_loss)


def evaluate(model: Model, test_ds: IqDataset, history: Optional[History] = None, batch_size: int = 512) -> EvalReport:
    if len(test_ds) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    _check_geometry(model, test_ds, "test")
    preds = np.concatenate([predict(model, x)[1] for x, _, _ in batches(test_ds, batch_size)])
    best_epoch = history.best_epoch if history else 0
    min_loss = history.min_test_loss if history else math.nan
    return report_from_predictions(test_ds.labels, preds, test_ds.snr_db, test_ds.class_names, best_epoch, min_loss)


def _fmt_snr(s: float) -> str:
    if math.isinf(s):
        return "inf"
    return f"{s:g}"


def emit_report(report: EvalReport, fmt: str = "csv") -> str:
    """CSV ``snr_db,accuracy`` table, or markdown with the confusion grid (two decimals)."""
    rows = sorted(report.per_snr.items())
    if fmt == "csv":
        out = ["snr_db,accuracy"] + [f"{_fmt_snr(s)},{a:.4f}" for s, a in rows]
        return "\n".join(out) + "\n"
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    buf.write(f"Overall accuracy: {report.overall_accuracy:.4f} (n={report.n_test})\n\n")
    buf.write("| SNR (dB) | Accuracy |\n|---:|---:|\n")
    for s, a in rows:
        buf.write(f"| {_fmt_snr(s)} | {a:.4f} |\n")
    names = report.class_names
    buf.write("\n| true \\ pred | " + " | ".join(names) + " |\n")
    buf.write("|---|" + "---:|" * len(names) + "\n")
    conf = report.confusion
    for i, name in enumerate(names):
        buf.write(f"| {name} | " + " | ".join(f"{v:.2f}" for v in conf[i]) + " |\n")
    if report.empty_rows:
        buf.write("\nRows without test support: " + ", ".join(names[i] for i in report.empty_rows) + "\n")
    return buf.getvalue()
