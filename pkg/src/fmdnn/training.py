"""SGD training loop and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .config import Config
from .data import Dataset, augment, split_dataset, to_batch
from .errors import ConfigError, MetricsError, TrainingError
from .fca import FMDNN
from .metrics import CSV_HEADER, Metrics, compute_metrics, confusion_matrix, csv_line

logger = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_loss": self.val_loss, "val_acc": self.val_acc}


def _images(ds: Dataset, indices, size: int) -> np.ndarray:
    imgs = [ds.image(i) for i in indices]
    for im in imgs:
        if im.shape[:2] != (size, size):
            raise ConfigError(f"image of shape {im.shape[:2]} does not match image_size {size}")
    return to_batch(imgs)


def predict_split(model: FMDNN, ds: Dataset, batch_size: int = 16) -> tuple[np.ndarray, float]:
    """Argmax predictions and mean cross-entropy over ``ds``, no augmentation."""
    if len(ds) == 0:
        raise MetricsError("cannot evaluate an empty split")
    labels = ds.labels()
    preds, loss_sum = [], 0.0
    size = model.config.model.image_size
    with T.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = range(start, min(start + batch_size, len(ds)))
            logits = model(_images(ds, idx, size))
            loss_sum += T.cross_entropy(logits, labels[start:start + len(idx)]).item() * len(idx)
            preds.append(logits.data.argmax(axis=1))
    return np.concatenate(preds), loss_sum / len(ds)


def evaluate(source, ds: Dataset, batch_size: int = 16) -> Metrics:
    """Metrics of a checkpoint (or model) over ``ds``."""
    model = source.build_model() if isinstance(source, Checkpoint) else source
    if model.config.model.num_classes != ds.num_classes:
        raise ConfigError(
            f"model has {model.config.model.num_classes} classes, dataset has {ds.num_classes}"
        )
    preds, _ = predict_split(model, ds, batch_size)
    return compute_metrics(confusion_matrix(ds.labels(), preds, ds.num_classes))


def train(config: Config, dataset: Dataset, val: Dataset | None = None,
          out_dir=None) -> tuple[Checkpoint, list[dict]]:
    """Train on ``dataset`` (split by ``config.train.split`` unless ``val`` is given).

    Returns the best-validation checkpoint (highest accuracy, then lowest loss)
    and the per-epoch history. With ``out_dir``, writes ``metrics.csv`` and
    ``best.ckpt`` there.
    """
    config = config.copy().validate()
    tc, mc = config.train, config.model
    if mc.num_classes != dataset.num_classes:
        config.model.num_classes = dataset.num_classes
    if val is None:
        train_ds, val_ds, _ = split_dataset(dataset, tc.split, tc.seed)
    else:
        train_ds, val_ds = dataset, val
    if len(train_ds) == 0:
        raise ConfigError("training split is empty")
    model = FMDNN(config)
    params = model.parameters()
    rng = np.random.default_rng(tc.seed)
    labels = train_ds.labels()
    size = mc.image_size
    weight_decay = tc.decay if tc.decay_mode == "weight" else 0.0

    csv = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv = open(out_dir / "metrics.csv", "w")
        csv.write(CSV_HEADER + "\n")

    history: list[dict] = []
    best = Checkpoint.from_model(model, 0, history)
    best_key = (-1.0, 0.0)
    try:
        for epoch in range(1, tc.epochs + 1):
            lr = tc.lr * (1.0 - tc.decay) ** (epoch - 1) if tc.decay_mode == "lr-per-epoch" else tc.lr
            order = rng.permutation(len(train_ds))
            total, seen = 0.0, 0
            for b, start in enumerate(range(0, len(order), tc.batch_size)):
                idx = order[start:start + tc.batch_size]
                imgs = [train_ds.image(i) for i in idx]
                if tc.augment:
                    imgs = [augment(im, rng, size) for im in imgs]
                logits = model(to_batch(imgs))
                loss = T.cross_entropy(logits, labels[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
                T.backward(loss)
                T.sgd_step(params, lr, weight_decay)
                total += value * len(idx)
                seen += len(idx)
            train_loss = total / seen
            if len(val_ds):
                preds, val_loss = predict_split(model, val_ds)
                val_metrics = compute_metrics(confusion_matrix(val_ds.labels(), preds, val_ds.num_classes))
            else:
                val_loss, val_metrics = float("nan"), None
            val_acc = val_metrics.acc if val_metrics else float("nan")
            record = EpochRecord(epoch, train_loss, val_loss, val_acc)
            history.append(record.as_dict())
            logger.info("epoch %d  train_loss %.4f  val_loss %.4f  val_acc %.3f",
                        epoch, train_loss, val_loss, val_acc)
            if csv:
                csv.write(f"{epoch},train,{train_loss:.6f},,,,,\n")
                if val_metrics:
                    csv.write(csv_line(epoch, "val", val_loss, val_metrics) + "\n")
            key = (val_acc if val_metrics else 0.0, -val_loss if val_metrics else -train_loss)
            if key >= best_key:
                best_key = key
                best = Checkpoint.from_model(model, epoch)
    finally:
        if csv:
            csv.close()
    best.history = list(history)
    if out_dir is not None:
        save_checkpoint(best, out_dir / "best.ckpt")
    return best, history

