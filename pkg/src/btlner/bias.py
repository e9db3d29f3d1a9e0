"""Empirical-bias statistics over output logits.

For each class ``c``: ``A_c`` is the share of tokens whose highest logit is
``c``; ``N_share_c`` the share of tokens truly labeled ``c``.  On randomly
labeled data an evidence-calibrated model keeps ``A_c`` close to
``N_share_c``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_BINS = 60
HIST_MODES = ("all", "argmax")


@dataclass(frozen=True)
class LogitRecord:
    logits: np.ndarray
    true_label: int


@dataclass
class LogitRecords:
    """Column store of :class:`LogitRecord` rows (``logits`` is n x C)."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.logits.ndim != 2 or self.labels.shape != (self.logits.shape[0],):
            raise ValueError("need an n x C logit matrix and n labels")

    @classmethod
    def from_records(cls, records: Sequence[LogitRecord]) -> "LogitRecords":
        if not records:
            return cls(np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
        return cls(np.stack([r.logits for r in records]), [r.true_label for r in records])

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    def __len__(self):
        return self.labels.size

    def __getitem__(self, i) -> LogitRecord:
        return LogitRecord(self.logits[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[LogitRecord]:
        return (self[i] for i in range(len(self)))

    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


def as_records(records) -> LogitRecords:
    if isinstance(records, LogitRecords):
        return records
    return LogitRecords.from_records(list(records))


@dataclass
class BiasReport:
    epoch: int
    predicted_share: np.ndarray  # A_c
    true_share: np.ndarray  # N_share_c
    mean: np.ndarray
    std: np.ndarray
    bin_edges: np.ndarray
    hist_counts: np.ndarray  # C x bins
    num_tokens: int
    hist_mode: str = "all"
    class_names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.predicted_share.size

    def max_gap(self) -> float:
        """``max_c |A_c - N_share_c|``."""
        return float(np.abs(self.predicted_share - self.true_share).max())

    def name(self, c: int) -> str:
        return self.class_names[c] if c < len(self.class_names) else str(c)

    def rows(self) -> list[dict]:
        return [
            {"epoch": self.epoch, "class": self.name(c),
             "A": float(self.predicted_share[c]), "N_share": float(self.true_share[c]),
             "mean": float(self.mean[c]), "std": float(self.std[c])}
            for c in range(self.num_classes)
        ]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "num_tokens": self.num_tokens,
            "hist_mode": self.hist_mode,
            "bin_edges": self.bin_edges.tolist(),
            "classes": [
                {**row, "hist": self.hist_counts[c].tolist()} for c, row in enumerate(self.rows())
            ],
        }


def compute_bias_report(records, bins: int = DEFAULT_BINS, epoch: int = 0, hist_mode: str = "all",
                        class_names: Sequence[str] = ()) -> BiasReport:
    """Predicted vs. true class shares plus per-class logit statistics.

    ``hist_mode="all"`` histograms logit column ``c`` over every token;
    ``"argmax"`` only over tokens whose top logit is ``c``.  Bin edges span
    the observed min/max of all logits and are shared by every class.
    Argmax ties go to the lowest class id.
    """
    rec = as_records(records)
    if len(rec) == 0:
        raise ValueError("no logit records")
    if hist_mode not in HIST_MODES:
        raise ValueError(f"hist_mode must be one of {HIST_MODES}")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    x = rec.logits.astype(np.float64)
    n, C = x.shape
    pred = np.argmax(x, axis=1)
    A = np.bincount(pred, minlength=C) / n
    N = np.bincount(rec.labels, minlength=C)[:C] / n
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros((C, bins), dtype=np.int64)
    for c in range(C):
        col = x[:, c] if hist_mode == "all" else x[pred == c, c]
        counts[c] = np.histogram(col, bins=edges)[0]
    return BiasReport(epoch, A, N, x.mean(axis=0), x.std(axis=0), edges, counts, n,
                      hist_mode, list(class_names))


@dataclass
class RatioSeries:
    epochs: np.ndarray
    predicted_share: np.ndarray  # E x C
    true_share: np.ndarray  # E x C
    ratio: np.ndarray  # A / N_share, nan where N_share == 0

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in a]
        return {"epochs": self.epochs.tolist(), "A": clean(self.predicted_share),
                "N_share": clean(self.true_share), "ratio": clean(self.ratio)}


def epoch_ratio_series(traces) -> RatioSeries:
    """Per-class ``A_c`` and ``A_c / N_share_c`` by epoch, from traces or reports."""
    reports = [getattr(t, "bias_report", t) for t in traces]
    if not reports:
        raise ValueError("no traces")
    A = np.stack([r.predicted_share for r in reports])
    N = np.stack([r.true_share for r in reports])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(N > 0, A / np.where(N > 0, N, 1.0), np.nan)
    return RatioSeries(np.array([r.epoch for r in reports]), A, N, ratio)


def write_reports_csv(path, reports: Sequence[BiasReport], extra: dict | None = None) -> None:
    """One row per class per epoch: epoch, class, A, N_share, mean, std."""
    extra = extra or {}
    fields = list(extra) + ["epoch", "class", "A", "N_share", "mean", "std"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in reports:
            for row in r.rows():
                w.writerow({**extra, **row})


def write_reports_json(path, reports: Sequence[BiasReport]) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports]), encoding="utf-8")
