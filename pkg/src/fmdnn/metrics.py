"""Confusion matrices and macro-averaged one-vs-rest classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricsError

CSV_HEADER = "epoch,split,loss,acc,tpr,tnr,ppv,f1"


@dataclass
class Metrics:
    confusion: np.ndarray
    acc: float
    tpr: float
    tnr: float
    ppv: float
    f1: float
    flagged: list[int] = field(default_factory=list)

    def row(self) -> dict[str, float]:
        return {"acc": self.acc, "tpr": self.tpr, "tnr": self.tnr, "ppv": self.ppv, "f1": self.f1}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Metrics)
            and np.array_equal(self.confusion, other.confusion)
            and self.row() == other.row()
        )


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (labels, predictions), 1)
    return out


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1), 0.0), ~ok


def compute_metrics(confusion) -> Metrics:
    """ACC plus macro TPR, TNR, PPV and F1.

    Classes whose denominator is zero for some metric contribute 0 to it and
    are listed in ``flagged``.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise MetricsError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0):
        raise MetricsError("confusion matrix has negative counts")
    total = cm.sum()
    if total == 0:
        raise MetricsError("confusion matrix is empty")
    cm = cm.astype(np.float64)
    tp = np.diag(cm)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    tn = total - tp - fn - fp
    tpr, bad_tpr = _ratio(tp, tp + fn)
    tnr, bad_tnr = _ratio(tn, tn + fp)
    ppv, bad_ppv = _ratio(tp, tp + fp)
    f1, _ = _ratio(2 * ppv * tpr, ppv + tpr)
    flagged = np.flatnonzero(bad_tpr | bad_tnr | bad_ppv).tolist()
    return Metrics(
        confusion=np.asarray(confusion).astype(np.int64),
        acc=float(tp.sum() / total),
        tpr=float(tpr.mean()),
        tnr=float(tnr.mean()),
        ppv=float(ppv.mean()),
        f1=float(f1.mean()),
        flagged=flagged,
    )


def csv_line(epoch: int, split: str, loss: float, m: Metrics) -> str:
    return f"{epoch},{split},{loss:.6f},{m.acc:.6f},{m.tpr:.6f},{m.tnr:.6f},{m.ppv:.6f},{m.f1:.6f}"
