"""Training loop: oversampled epochs, weighted loss, Adam, early stopping.

Every source of randomness is a stream derived from the config seed with
a fixed tag scheme, so runs are bit-reproducible regardless of where
early stopping lands:

    derive(4*epoch + 0)  oversampling draw for the epoch
    derive(4*epoch + 1)  dropout masks for the epoch
    derive(4*epoch + 2)  minibatch shuffle (batched mode only)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nncore as nc
from .evaluation import compute_metrics
from .gat import DisagreeGAT, SchemaMismatch
from .graph import EmptyTrainSet, InteractionGraph, SplitMasks, class_weights, oversample_minority

log = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-6


class Io(OSError):
    """Checkpoint file could not be read or written."""


class DivergedLoss(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    seed: int = 42
    lr: float = 1e-3
    weight_decay: float = 5e-4
    patience: int = 20
    max_epochs: int = 500
    dropout: float = 0.5
    batch_size: int | None = None  # None = full batch
    static_oversample: bool = False

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class TrainReport:
    epochs_run: int = 0
    best_epoch: int = 0
    stop_reason: str = ""
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_macro_f1: list[float] = field(default_factory=list)


class EarlyStopper:
    """Stop after `patience` epochs without val loss improving by more
    than IMPROVEMENT_TOL below the best seen."""

    def __init__(self, patience: int, tol: float = IMPROVEMENT_TOL):
        self.patience = patience
        self.tol = tol
        self.best = float("inf")
        self.since_improvement = 0

    def update(self, loss: float) -> bool:
        if loss < self.best - self.tol:
            self.best = loss
            self.since_improvement = 0
            return True
        self.since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience


def _epoch_loss(model: DisagreeGAT, graph, ids, labels, weights, rng) -> nc.Var:
    logits, _ = model.forward(graph, training=True, rng=rng)
    picked = nc.gather_rows(logits, np.asarray(ids, dtype=np.int64))
    return nc.weighted_cross_entropy(picked, labels[ids], weights)


def _eval_loss(model: DisagreeGAT, graph, ids, labels) -> tuple[float, float]:
    """Inference-mode unweighted CE and macro-F1 over ``ids``."""
    logits, _ = model.forward(graph, training=False)
    idx = np.asarray(ids, dtype=np.int64)
    picked = nc.Var(logits.value[idx])
    loss = nc.weighted_cross_entropy(picked, labels[idx], np.ones(3))
    preds = np.argmax(logits.value[idx], axis=1)
    macro_f1 = compute_metrics(preds, labels[idx]).macro_f1
    return float(loss.value), macro_f1


def fit(
    model: DisagreeGAT,
    graph: InteractionGraph,
    masks: SplitMasks,
    config: TrainConfig,
) -> tuple[dict, TrainReport]:
    """Train with per-epoch oversampling and early stopping on val loss.

    Returns (best checkpoint dict, report); the model is left holding
    the best epoch's parameters, not the last ones.
    """
    train_ids = sorted(masks.train)
    if not train_ids:
        raise EmptyTrainSet("fit: empty train mask")
    val_ids = sorted(masks.val)
    if not val_ids:
        log.warning("fit: empty val mask, early stopping falls back to train loss")
    labels = graph.labels_array()

    base = nc.RngStream(config.seed)
    opt = nc.AdamState(lr=config.lr, weight_decay=config.weight_decay)
    params = model.parameters()
    stopper = EarlyStopper(config.patience)
    report = TrainReport()
    best_checkpoint = model.to_checkpoint(seed=config.seed)
    best_epoch = 0

    static_ids: list[int] | None = None
    if config.static_oversample:
        static_ids = oversample_minority(train_ids, labels, seed=base.derive(0).seed)

    for epoch in range(1, config.max_epochs + 1):
        if static_ids is not None:
            epoch_ids = list(static_ids)
        else:
            epoch_ids = oversample_minority(train_ids, labels, seed=base.derive(4 * epoch).seed)
        weights = class_weights(labels[epoch_ids])
        dropout_rng = base.derive(4 * epoch + 1)

        if config.batch_size is None:
            batches = [epoch_ids]
        else:
            shuffled = list(epoch_ids)
            base.derive(4 * epoch + 2).shuffle(shuffled)
            batches = [
                shuffled[i : i + config.batch_size]
                for i in range(0, len(shuffled), config.batch_size)
            ]

        total, count = 0.0, 0
        for batch in batches:
            nc.zero_grad(params)
            loss = _epoch_loss(model, graph, batch, labels, weights, dropout_rng)
            if not np.isfinite(loss.value):
                raise DivergedLoss(f"non-finite train loss at epoch {epoch}")
            nc.backward(loss)
            nc.adam_step(params, opt)
            total += float(loss.value) * len(batch)
            count += len(batch)
        report.train_loss.append(total / count)

        if val_ids:
            vloss, vf1 = _eval_loss(model, graph, val_ids, labels)
        else:
            vloss, vf1 = report.train_loss[-1], 0.0
        if not np.isfinite(vloss):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        report.val_loss.append(vloss)
        report.val_macro_f1.append(vf1)
        report.epochs_run = epoch

        if stopper.update(vloss):
            best_epoch = epoch
            best_checkpoint = model.to_checkpoint(seed=config.seed)
        if stopper.should_stop:
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"

    report.best_epoch = best_epoch
    restored = DisagreeGAT.from_checkpoint(best_checkpoint)
    for p, q in zip(model.parameters(), restored.parameters()):
        p.value = q.value
    return best_checkpoint, report


def save_checkpoint(model: DisagreeGAT, path, seed: int | None = None) -> None:
    payload = json.dumps(model.to_checkpoint(seed=seed), sort_keys=True, indent=2)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    except OSError as exc:
        raise Io(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> DisagreeGAT:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise Io(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: not a valid checkpoint ({exc})") from None
    return DisagreeGAT.from_checkpoint(data)


def write_train_report(report: TrainReport, csv_path, json_path) -> None:
    import csv as csv_mod

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv_mod.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_macro_f1"])
        for i in range(report.epochs_run):
            w.writerow(
                [
                    i + 1,
                    repr(report.train_loss[i]),
                    repr(report.val_loss[i]),
                    repr(report.val_macro_f1[i]),
                ]
            )
    summary = {
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "stop_reason": report.stop_reason,
        "best_val_loss": min(report.val_loss) if report.val_loss else None,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
