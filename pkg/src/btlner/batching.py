"""ATL and BTL batch construction plus per-class batch balancing."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Passage

NEGATIVE_ID = 0


@dataclass
class Batch:
    passages: list[Passage]
    token_ids: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    focus_class: int | None = None

    @property
    def num_tokens(self) -> int:
        return int(self.targets.size)

    @property
    def num_masked(self) -> int:
        return int((~self.mask).sum())

    def with_focus(self, focus: int) -> "Batch":
        """Copy sharing token/target arrays whose mask keeps only O and ``focus``."""
        mask = (self.targets == NEGATIVE_ID) | (self.targets == focus)
        return Batch(self.passages, self.token_ids, self.targets, mask, self.lengths, focus)


def _collate(passages: Sequence[Passage]) -> Batch:
    for p in passages:
        if p.token_ids is None:
            raise ValueError(f"passage {p.source_doc}@{p.token_offset} is not encoded")
    token_ids = np.concatenate([p.token_ids for p in passages]).astype(np.int64)
    targets = np.concatenate([p.labels for p in passages]).astype(np.int64)
    lengths = np.array([len(p) for p in passages], dtype=np.int64)
    return Batch(list(passages), token_ids, targets, np.ones(targets.size, dtype=bool), lengths)


def _groups(passages, batch_size, seed):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(passages))
    return [[passages[i] for i in order[lo:lo + batch_size]]
            for lo in range(0, len(passages), batch_size)]


def build_atl_batches(passages: Sequence[Passage], batch_size: int = 4, seed: int = 0) -> list[Batch]:
    """Shuffle passages by ``seed`` and group them; every token takes part in the loss."""
    return [_collate(g) for g in _groups(passages, batch_size, seed)]


def build_btl_batches(passages: Sequence[Passage], batch_size: int = 4, seed: int = 0) -> list[Batch]:
    """One copy of each ATL batch per entity class present in it.

    A copy focused on class ``c`` keeps ``O`` and ``c`` tokens in the loss
    and masks every other entity token.  A batch with no entity tokens
    yields a single unmasked copy focused on ``O``.  Grouping and order
    match :func:`build_atl_batches` for the same seed.
    """
    out = []
    for group in _groups(passages, batch_size, seed):
        base = _collate(group)
        present = np.unique(base.targets)
        present = present[present != NEGATIVE_ID]
        if present.size == 0:
            base.focus_class = NEGATIVE_ID
            out.append(base)
            continue
        out.extend(base.with_focus(int(c)) for c in present)
    return out


def balance_batches(batches: Sequence[Batch]) -> list[Batch]:
    """Repeat each focus class's batches cyclically up to the largest class's count.

    Output interleaves classes round-robin in ascending class id order.
    """
    by_class: dict[int, list[Batch]] = defaultdict(list)
    for b in batches:
        if b.focus_class is None:
            raise ValueError("balance_batches needs focus-class (BTL) batches")
        by_class[b.focus_class].append(b)
    if not by_class:
        return []
    target = max(len(v) for v in by_class.values())
    classes = sorted(by_class)
    return [by_class[c][i % len(by_class[c])] for i in range(target) for c in classes]


def focus_counts(batches: Sequence[Batch]) -> dict[int, int]:
    counts: dict[int, int] = defaultdict(int)
    for b in batches:
        counts[b.focus_class] += 1
    return dict(sorted(counts.items(), key=lambda kv: (kv[0] is None, kv[0] or 0)))


def dump_batches(batches: Sequence[Batch], path) -> None:
    """Write one JSON line per batch: focus class, passage/token/masked counts."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for b in batches:
            fh.write(json.dumps({
                "focus_class": b.focus_class,
                "passages": len(b.passages),
                "tokens": b.num_tokens,
                "masked": b.num_masked,
            }) + "\n")
