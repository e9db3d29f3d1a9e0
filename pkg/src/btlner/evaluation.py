"""KNN decision rule over raw logits, and token-level classification metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .bias import as_records

DEFAULT_K = 17


@dataclass(frozen=True)
class KnnModel:
    k: int
    points: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return self.labels.size


def knn_fit(train_records, k: int = DEFAULT_K) -> KnnModel:
    """Store the training logits verbatim (lazy learner)."""
    rec = as_records(train_records)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rec) < k:
        raise ValueError(f"need at least k={k} points, got {len(rec)}")
    pts = np.ascontiguousarray(rec.logits, dtype=np.float64)
    return KnnModel(k, pts, rec.labels.copy(), int(max(rec.num_classes, rec.labels.max() + 1)))


def knn_predict_many(model: KnnModel, queries) -> np.ndarray:
    """Majority label among the k nearest stored points (squared Euclidean).

    Distance ties keep insertion order; vote ties go to the tied class
    whose nearest member ranks first.
    """
    q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    if not np.isfinite(q).all():
        raise ValueError("non-finite query")
    if q.shape[1] != model.points.shape[1]:
        raise ValueError("query dimension does not match stored points")
    idx = kernels.knn_search(model.points, q, model.k)
    return kernels.knn_vote(np.ascontiguousarray(model.labels[idx]), model.num_classes)


def knn_predict(model: KnnModel, logits) -> int:
    return int(knn_predict_many(model, np.asarray(logits)[None, :])[0])


@dataclass
class MetricsTable:
    class_names: list[str]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support_share: np.ndarray
    support: np.ndarray
    macro: tuple[float, float, float]
    micro: tuple[float, float, float]
    except_o: tuple[float, float, float]
    weighted_accuracy: float
    unweighted_accuracy: float
    num_tokens: int
    except_o_support: int
    confusion: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "num_tokens": self.num_tokens,
            "classes": [
                {"name": n, "N_share": float(self.support_share[c]), "support": int(self.support[c]),
                 "P": float(self.precision[c]), "R": float(self.recall[c]), "F1": float(self.f1[c])}
                for c, n in enumerate(self.class_names)
            ],
            "mean": dict(zip("PRF", map(float, self.macro))),
            "overall": dict(zip("PRF", map(float, self.micro))),
            "except_o": {**dict(zip("PRF", map(float, self.except_o))), "support": self.except_o_support},
            "weighted_accuracy": self.weighted_accuracy,
            "unweighted_accuracy": self.unweighted_accuracy,
        }


def _prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def compute_metrics(true_labels, predicted_labels, vocab=None) -> MetricsTable:
    """Per-class and aggregate token-level metrics.

    ``vocab`` may be a label vocabulary, a list of class names or an
    integer class count; by default the classes seen in the data.  Class 0
    is ``O``.  Macro averages run over classes that occur in the truth or
    the predictions; unweighted accuracy averages recall over classes
    present in the truth.  ``except_o`` is the micro P/R/F1 restricted to
    entity classes.
    """
    y = np.asarray(true_labels, dtype=np.int64)
    yp = np.asarray(predicted_labels, dtype=np.int64)
    if y.shape != yp.shape or y.ndim != 1:
        raise ValueError(f"length mismatch: {y.shape} vs {yp.shape}")
    if y.size == 0:
        raise ValueError("no tokens")
    if vocab is None:
        names = [str(i) for i in range(int(max(y.max(), yp.max())) + 1)]
    elif isinstance(vocab, (int, np.integer)):
        names = [str(i) for i in range(int(vocab))]
    else:
        names = list(getattr(vocab, "classes", vocab))
    C = len(names)
    if max(y.max(), yp.max()) >= C or min(y.min(), yp.min()) < 0:
        raise ValueError("label id outside the class list")

    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (y, yp), 1)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    fp = predicted - tp
    fn = support - tp
    prf = np.array([_prf(tp[c], fp[c], fn[c]) for c in range(C)])
    active = (support > 0) | (predicted > 0)
    macro = tuple(prf[active].mean(axis=0)) if active.any() else (0.0, 0.0, 0.0)
    micro = _prf(tp.sum(), fp.sum(), fn.sum())
    ent = slice(1, None)
    except_o = _prf(tp[ent].sum(), fp[ent].sum(), fn[ent].sum())
    share = support / y.size
    present = support > 0
    return MetricsTable(
        class_names=names, precision=prf[:, 0], recall=prf[:, 1], f1=prf[:, 2],
        support_share=share, support=support,
        macro=tuple(map(float, macro)), micro=tuple(map(float, micro)),
        except_o=tuple(map(float, except_o)),
        # sum of share * recall collapses to tp / n; computed that way it is exact
        weighted_accuracy=float(tp.sum() / y.size),
        unweighted_accuracy=float(prf[present, 1].mean()),
        num_tokens=int(y.size), except_o_support=int(support[ent].sum()), confusion=cm,
    )


def write_metrics_csv(path, tables: Mapping[str, MetricsTable]) -> None:
    """Table-style CSV: one row per entity with N share and P/R/F1 per decision rule.

    Values are percentages.  Aggregate rows follow: Mean, Overall, Except O,
    Weighted accuracy, Unweighted accuracy.
    """
    rules = list(tables)
    first = tables[rules[0]]
    header = ["entity", "N_share"] + [f"{r}_{m}" for r in rules for m in ("P", "R", "F1")]

    def pct(v):
        return round(100.0 * float(v), 2)

    rows = []
    for c, name in enumerate(first.class_names):
        row = [name, pct(first.support_share[c])]
        for r in rules:
            t = tables[r]
            row += [pct(t.precision[c]), pct(t.recall[c]), pct(t.f1[c])]
        rows.append(row)
    for label, attr, n in (("Mean", "macro", ""), ("Overall", "micro", first.num_tokens),
                           ("Except O", "except_o", first.except_o_support)):
        rows.append([label, n] + [pct(v) for r in rules for v in getattr(tables[r], attr)])
    for label, attr in (("Weighted accuracy", "weighted_accuracy"),
                        ("Unweighted accuracy", "unweighted_accuracy")):
        rows.append([label, ""] + [v for r in rules for v in (pct(getattr(tables[r], attr)), "", "")])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_metrics_json(path, tables: Mapping[str, MetricsTable]) -> None:
    Path(path).write_text(json.dumps({k: t.to_dict() for k, t in tables.items()}, indent=2),
                          encoding="utf-8")
