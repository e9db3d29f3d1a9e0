"""Plain-SGD training over ATL or BTL batch streams, evaluated every epoch."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .batching import balance_batches, build_atl_batches, build_btl_batches, focus_counts
from .bias import DEFAULT_BINS, BiasReport, LogitRecords, compute_bias_report
from .corpus import CorpusSplit, Passage, compute_class_weights
from .errors import ConfigError, TrainingError
from .loss import VARIANTS, batch_loss_and_grad
from .model import ModelState, backward, forward, forward_arrays

log = logging.getLogger(__name__)

REGIMES = ("atl", "btl")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 5e-5
    regime: str = "atl"
    batch_size: int = 4
    seed: int = 0
    eval_every: int = 1
    loss_variant: str = "log"
    balance: bool = True
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.batch_size < 1 or self.eval_every < 1 or self.bins < 1:
            raise ConfigError("batch_size, eval_every and bins must be >= 1")
        if self.loss_variant not in VARIANTS:
            raise ConfigError(f"loss_variant must be one of {VARIANTS}")


@dataclass
class EpochTrace:
    epoch: int
    mean_train_loss: float
    logit_records: LogitRecords
    bias_report: BiasReport
    steps: int = 0
    focus_counts: dict = field(default_factory=dict)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def epoch_batches(passages: Sequence[Passage], config: TrainConfig, epoch: int):
    s = epoch_seed(config.seed, epoch)
    if config.regime == "atl":
        return build_atl_batches(passages, config.batch_size, s)
    batches = build_btl_batches(passages, config.batch_size, s)
    return balance_batches(batches) if config.balance else batches


def evaluate(model: ModelState, passages: Sequence[Passage], batch_size: int = 16) -> LogitRecords:
    """Raw logits and true label for every token of ``passages``, in order."""
    C = model.config.num_classes
    if not passages:
        return LogitRecords(np.zeros((0, C), dtype=model.config.dtype), np.zeros(0, dtype=np.int64))
    logits, labels = [], []
    for lo in range(0, len(passages), batch_size):
        group = passages[lo:lo + batch_size]
        ids = np.concatenate([p.token_ids for p in group])
        lengths = np.array([len(p) for p in group])
        logits.append(forward_arrays(model, ids, lengths))
        labels.append(np.concatenate([p.labels for p in group]))
    return LogitRecords(np.concatenate(logits), np.concatenate(labels))


def sgd_step(model: ModelState, grads: dict, lr: float) -> None:
    for name, g in grads.items():
        model.params[name] -= lr * g


def train(model: ModelState, split: CorpusSplit, config: TrainConfig,
          on_epoch: Callable[[EpochTrace], None] | None = None,
          weights: np.ndarray | None = None):
    """Train a copy of ``model``; return ``(final_model, traces)``.

    Class weights default to ``1 - N_c/N`` over the training passages and
    stay fixed for the whole run.  Each epoch rebuilds the batch stream with
    a shuffle seed derived from ``(config.seed, epoch)``.
    """
    C = model.config.num_classes
    if C != len(split.vocab):
        raise ConfigError(f"model has {C} classes, corpus {len(split.vocab)}")
    top = max((int(p.token_ids.max()) for p in split.train + split.test if len(p)), default=0)
    if top >= model.config.vocab_size:
        raise ConfigError(f"token id {top} exceeds model vocab_size {model.config.vocab_size}")
    if weights is None:
        weights = compute_class_weights(split.train_vocab)
    weights = np.asarray(weights, dtype=np.float64)

    model = model.copy()
    traces = []
    for epoch in range(1, config.epochs + 1):
        batches = epoch_batches(split.train, config, epoch)
        losses = []
        for bi, batch in enumerate(batches):
            if not batch.mask.any():
                continue
            logits, cache = forward(model, batch, return_cache=True)
            try:
                lb, dlogits = batch_loss_and_grad(logits, batch.targets, batch.mask, weights,
                                                  config.loss_variant)
            except ValueError as exc:
                if not np.isfinite(logits).all():
                    raise TrainingError(f"non-finite logits at epoch {epoch}, batch {bi}") from exc
                raise
            if not np.isfinite(lb.batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            losses.append(lb.batch_loss)
            if config.learning_rate:
                sgd_step(model, backward(model, cache, dlogits), config.learning_rate)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            records = evaluate(model, split.test)
            report = compute_bias_report(records, config.bins, epoch, class_names=split.vocab.classes) \
                if len(records) else None
            trace = EpochTrace(epoch, mean_loss, records, report, len(losses),
                               focus_counts(batches) if config.regime == "btl" else {})
            traces.append(trace)
            log.info("epoch %d: loss %.4f steps %d%s", epoch, mean_loss, len(losses),
                     f" max|A-N| {report.max_gap():.3f}" if report else "")
            if on_epoch:
                on_epoch(trace)
    return model, traces


def write_traces(path, traces: Sequence[EpochTrace], spill_logits: bool = False) -> None:
    """JSON-lines trace file, one epoch per line.

    With ``spill_logits`` every epoch's records also go to
    ``<stem>.epochNNN.npy``: an ``n x (C + 1)`` float matrix of raw logits
    with the true label id in the last column.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in traces:
            row = {"epoch": t.epoch, "mean_train_loss": t.mean_train_loss, "steps": t.steps,
                   "focus_counts": {str(k): v for k, v in t.focus_counts.items()},
                   "num_records": len(t.logit_records),
                   "bias_report": t.bias_report.to_dict() if t.bias_report else None}
            if spill_logits:
                side = path.with_name(f"{path.stem}.epoch{t.epoch:03d}.npy")
                mat = np.column_stack([t.logit_records.logits.astype(np.float64),
                                       t.logit_records.labels.astype(np.float64)])
                np.save(side, mat)
                row["logits_file"] = side.name
            fh.write(json.dumps(row) + "\n")


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
