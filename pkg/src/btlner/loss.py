"""Token-level weighted cross-entropy with masked weighted-mean reduction.

The default ``log`` variant is ``l_n = -w_y * log softmax(x_n)[y]``.  The
``prob`` variant drops the logarithm (``l_n = -w_y * softmax(x_n)[y]``) and
is kept only for side-by-side comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

VARIANTS = ("log", "prob")


@dataclass
class LossBreakdown:
    batch_loss: float
    per_token_losses: np.ndarray  # nan where masked
    denominator: float


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"loss variant must be one of {VARIANTS}, got {variant!r}")
    return variant == "log"


def token_loss(logits_row, target: int, weights, variant: str = "log") -> float:
    x = np.asarray(logits_row, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite logits")
    if not 0 <= target < x.size:
        raise ValueError(f"target {target} outside 0..{x.size - 1}")
    w = float(weights[target])
    m = x.max()
    lse = m + math.log(np.exp(x - m).sum())
    if _check_variant(variant):
        return w * (lse - x[target])
    return -w * math.exp(x[target] - lse)


def batch_loss_and_grad(logits, targets, mask, weights, variant: str = "log"):
    """Return ``(LossBreakdown, dL/dlogits)``; masked rows of the gradient are zero."""
    use_log = _check_variant(variant)
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    weights = np.asarray(weights, dtype=np.float64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],) or mask.shape != targets.shape:
        raise ValueError("logits must be B x C with one target and mask flag per row")
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    if not mask.any():
        raise ValueError("every token is masked; batch loss undefined")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ValueError("target id outside the logit columns")
    per, denom, loss, grad = kernels.weighted_ce(logits, targets, mask, weights, use_log)
    if denom <= 0.0:
        raise ValueError("unmasked tokens carry zero total weight")
    return LossBreakdown(float(loss), per, float(denom)), grad.astype(logits.dtype, copy=False)


def batch_loss(logits, targets, mask, weights, variant: str = "log") -> LossBreakdown:
    return batch_loss_and_grad(logits, targets, mask, weights, variant)[0]
