"""Metrics, feature-ablation harness, attention histograms, entity reports.

All CSV emitters write float64 values with repr() so outputs round-trip
exactly and repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Label
from .graph import ABLATION_VARIANTS, InteractionGraph, SplitMasks, apply_ablation

log = logging.getLogger(__name__)

CLASS_NAMES = ("disagree", "neutral", "agree")


class EvalError(ValueError):
    pass


class LengthMismatch(EvalError):
    pass


class EmptyRecords(EvalError):
    pass


class UnknownEntity(EvalError):
    pass


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = true class, cols = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    precision_undefined: np.ndarray  # per class: no predictions made
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float

    def to_dict(self) -> dict:
        per_class = {
            CLASS_NAMES[c]: {
                "precision": float(self.precision[c]),
                "recall": float(self.recall[c]),
                "f1": float(self.f1[c]),
                "support": int(self.support[c]),
                "precision_undefined": bool(self.precision_undefined[c]),
            }
            for c in range(3)
        }
        return {
            "confusion": self.confusion.tolist(),
            "per_class": per_class,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "accuracy": self.accuracy,
        }


def confusion_matrix(preds, labels) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise LengthMismatch(f"preds {preds.shape} vs labels {labels.shape}")
    if preds.size == 0:
        raise LengthMismatch("no samples to evaluate")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.min() < 0 or arr.max() > 2:
            raise EvalError(f"{name} contain values outside {{0, 1, 2}}")
    cm = np.zeros((3, 3), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.shape != (3, 3) or (cm < 0).any():
        raise EvalError("confusion matrix must be 3x3 with non-negative counts")
    total = int(cm.sum())
    if total == 0:
        raise LengthMismatch("empty confusion matrix")
    support = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    tp = np.diag(cm).astype(np.float64)

    precision = np.zeros(3)
    recall = np.zeros(3)
    f1 = np.zeros(3)
    undefined = np.zeros(3, dtype=bool)
    for c in range(3):
        if pred_count[c] == 0:
            undefined[c] = True
            log.debug("precision undefined for class %s (no predictions)", CLASS_NAMES[c])
        else:
            precision[c] = tp[c] / pred_count[c]
        if support[c] > 0:
            recall[c] = tp[c] / support[c]
        if precision[c] + recall[c] > 0:
            f1[c] = 2 * precision[c] * recall[c] / (precision[c] + recall[c])

    weights = support / total
    return MetricsReport(
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        precision_undefined=undefined,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float((weights * precision).sum()),
        weighted_recall=float((weights * recall).sum()),
        weighted_f1=float((weights * f1).sum()),
        accuracy=float(tp.sum() / total),
    )


def compute_metrics(preds, labels) -> MetricsReport:
    return metrics_from_confusion(confusion_matrix(preds, labels))


def write_metrics_csv(report: MetricsReport, path) -> None:
    """Per-class rows, then macro/weighted averages, then accuracy."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "precision", "recall", "f1", "support", "precision_undefined"])
        for c in range(3):
            w.writerow(
                [
                    CLASS_NAMES[c],
                    repr(float(report.precision[c])),
                    repr(float(report.recall[c])),
                    repr(float(report.f1[c])),
                    int(report.support[c]),
                    int(report.precision_undefined[c]),
                ]
            )
        total = int(report.support.sum())
        w.writerow(
            ["macro_avg", repr(report.macro_precision), repr(report.macro_recall), repr(report.macro_f1), total, ""]
        )
        w.writerow(
            [
                "weighted_avg",
                repr(report.weighted_precision),
                repr(report.weighted_recall),
                repr(report.weighted_f1),
                total,
                "",
            ]
        )
        w.writerow(["accuracy", "", "", repr(report.accuracy), total, ""])


def run_ablation(
    graph: InteractionGraph,
    masks: SplitMasks,
    train_config,
    model_config,
    variant: str,
):
    """Train and test one feature-ablation variant.

    The ablated feature block is zeroed in a rebuilt graph (dimensions
    kept) and the ordinary fit runs under the same seed.  Returns
    (MetricsReport on the test split, TrainReport).
    """
    from . import train as train_mod
    from .gat import DisagreeGAT

    ablated = apply_ablation(graph, variant)
    model = DisagreeGAT(model_config, seed=train_config.seed)
    _, report = train_mod.fit(model, ablated, masks, train_config)
    test_ids = sorted(masks.test)
    preds, _ = model.predict(ablated)
    labels = ablated.labels_array()
    metrics = compute_metrics(preds[test_ids], labels[test_ids])
    return metrics, report


ABLATION_METRIC_ROWS = (
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "weighted_precision",
    "weighted_recall",
    "weighted_f1",
)


def write_ablation_csv(results: dict[str, MetricsReport], path) -> None:
    """One summary table: metric rows, one column per variant."""
    variants = [v for v in ABLATION_VARIANTS if v in results]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", *variants])
        for metric in ABLATION_METRIC_ROWS:
            w.writerow([metric, *(repr(float(getattr(results[v], metric))) for v in variants)])


def attention_histogram(records, bins: int) -> list[tuple[float, float, int]]:
    """Equal-width bins over [min, max] of the combined attention scores."""
    if bins < 1:
        raise EvalError(f"bins must be >= 1, got {bins}")
    scores = [r.combined if hasattr(r, "combined") else float(r) for r in records]
    if not scores:
        raise EmptyRecords("no attention records")
    lo, hi = min(scores), max(scores)
    counts = [0] * bins
    width = (hi - lo) / bins
    for s in scores:
        if width == 0.0:
            idx = 0
        else:
            idx = min(int((s - lo) / width), bins - 1)
        counts[idx] += 1
    out = []
    for b in range(bins):
        blo = lo + b * width
        bhi = hi if b == bins - 1 else lo + (b + 1) * width
        out.append((blo, bhi, counts[b]))
    return out


def write_histogram_csv(table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, count in table:
            w.writerow([repr(float(lo)), repr(float(hi)), count])


@dataclass
class EntityReportRow:
    entity: str
    frequency: int
    pct_agree: float
    pct_disagree: float
    pct_neutral: float
    mean_parent_sentiment: float
    mean_child_sentiment: float
    mean_attention: float | None
    parent_quartiles: tuple[float, float, float, float, float] = field(
        default=(0.0, 0.0, 0.0, 0.0, 0.0)
    )


def entity_report(
    rows,
    labels=None,
    attention=None,
    top_n: int | None = None,
    sort: str = "frequency",
) -> list[EntityReportRow]:
    """Per-entity label distribution, sentiment means, attention means.

    ``labels`` defaults to each row's own label; pass predictions to get
    the distribution over model outputs instead.  ``attention`` is a
    list of records aligned by sample_id = row index.  ``sort`` is
    "frequency" (descending) or "disagreement" (ascending
    disagree percentage); top_n keeps the N most frequent entities
    before sorting.  Parent-sentiment quartiles (min, Q1, median, Q3,
    max) use linear interpolation.
    """
    if labels is None:
        labels = [int(r.label) for r in rows]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(rows),):
        raise LengthMismatch(f"labels shape {labels.shape} vs {len(rows)} rows")
    combined = None
    if attention is not None:
        combined = {}
        for rec in attention:
            combined[rec.sample_id] = rec.combined

    by_entity: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        by_entity.setdefault(row.entity, []).append(i)

    out: list[EntityReportRow] = []
    for entity, idxs in by_entity.items():
        n = len(idxs)
        lab = labels[idxs]
        p_sent = np.array([rows[i].sentiment_parent.value for i in idxs])
        c_sent = np.array([rows[i].sentiment_child.value for i in idxs])
        att = None
        if combined is not None:
            vals = [combined[i] for i in idxs if i in combined]
            att = float(np.mean(vals)) if vals else None
        q = np.percentile(p_sent, [0, 25, 50, 75, 100])
        out.append(
            EntityReportRow(
                entity=entity,
                frequency=n,
                pct_agree=100.0 * int((lab == int(Label.AGREE)).sum()) / n,
                pct_disagree=100.0 * int((lab == int(Label.DISAGREE)).sum()) / n,
                pct_neutral=100.0 * int((lab == int(Label.NEUTRAL)).sum()) / n,
                mean_parent_sentiment=float(p_sent.mean()),
                mean_child_sentiment=float(c_sent.mean()),
                mean_attention=att,
                parent_quartiles=tuple(float(x) for x in q),
            )
        )

    out.sort(key=lambda r: (-r.frequency, r.entity))
    if top_n is not None:
        out = out[:top_n]
    if sort == "disagreement":
        out.sort(key=lambda r: (r.pct_disagree, r.entity))
    elif sort != "frequency":
        raise EvalError(f"unknown sort key {sort!r}")
    return out


def write_entity_report_csv(report: list[EntityReportRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "entity",
                "frequency",
                "pct_agree",
                "pct_disagree",
                "pct_neutral",
                "mean_parent_sentiment",
                "mean_child_sentiment",
                "mean_attention",
                "parent_min",
                "parent_q1",
                "parent_median",
                "parent_q3",
                "parent_max",
            ]
        )
        for r in report:
            w.writerow(
                [
                    r.entity,
                    r.frequency,
                    repr(r.pct_agree),
                    repr(r.pct_disagree),
                    repr(r.pct_neutral),
                    repr(r.mean_parent_sentiment),
                    repr(r.mean_child_sentiment),
                    "" if r.mean_attention is None else repr(r.mean_attention),
                    *(repr(x) for x in r.parent_quartiles),
                ]
            )


def attention_by_category(report: list[EntityReportRow], categories: dict[str, str]) -> dict[str, float]:
    """Mean of per-entity mean attentions within each category."""
    if not categories:
        raise EvalError("empty category map")
    by_name = {r.entity: r for r in report}
    buckets: dict[str, list[float]] = {}
    for entity, category in categories.items():
        row = by_name.get(entity)
        if row is None:
            raise UnknownEntity(f"category map references unknown entity {entity!r}")
        if row.mean_attention is None:
            raise EvalError(f"entity {entity!r} has no attention data")
        buckets.setdefault(category, []).append(row.mean_attention)
    return {cat: float(np.mean(vals)) for cat, vals in sorted(buckets.items())}
