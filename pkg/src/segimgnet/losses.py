"""Training objectives: class-weighted cross-entropy for the classifier, BCE + Dice for the segmenter."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Tensor, ops
from .errors import ConfigurationError, DataError

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights, renormalized to sum to one on construction."""

    w: tuple

    def __init__(self, w: Sequence[float]):
        arr = np.asarray(w, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ConfigurationError(f"class weights must be positive and finite, got {list(w)}")
        object.__setattr__(self, "w", tuple(float(v) for v in arr / arr.sum()))

    @classmethod
    def from_disease_weight(cls, disease_weight: float) -> "ClassWeights":
        """Binary case: (healthy, diseased) = (1 - w, w)."""
        return cls([1.0 - disease_weight, disease_weight])

    def __len__(self) -> int:
        return len(self.w)


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, num_classes), np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def wce_loss(y_hat: Tensor, y, weights: ClassWeights) -> Tensor:
    """-(1/N) sum_i sum_k w_k y_ik log(max(y_hat_ik, 1e-12)).

    ``y_hat`` holds softmax probabilities (N x K); ``y`` is a one-hot N x K array.
    """
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.ndim != 2 or y.shape != y_hat.shape:
        raise DataError(f"targets {y.shape} do not match predictions {y_hat.shape}")
    if not (np.isin(y, (0.0, 1.0)).all() and np.all(y.sum(axis=1) == 1)):
        raise DataError("targets must be one-hot rows")
    if len(weights) != y.shape[1]:
        raise ConfigurationError(f"{len(weights)} class weights for {y.shape[1]} classes")
    coef = -(np.asarray(weights.w)[None, :] * y) / y.shape[0]
    return (ops.log(y_hat, floor=LOG_FLOOR) * coef.astype(y_hat.dtype)).sum()


def bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy computed from logits (overflow-free)."""
    z = logits.data
    t = target.data.astype(z.dtype)
    n = z.size
    val = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))))

    def backward(g):
        sig = ops._sigmoid(z)
        return ((g * (sig - t) / n).astype(z.dtype),)

    return Tensor._result(np.asarray(val, dtype=z.dtype), (logits,), backward)


def soft_dice_loss(probs: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """1 - mean over samples of (2|P.T| + s) / (|P| + |T| + s)."""
    axes = tuple(range(1, probs.ndim))
    inter = (probs * target).sum(axis=axes)
    denom = probs.sum(axis=axes) + target.sum(axis=axes) + smooth
    return 1.0 - ((inter * 2.0 + smooth) / denom).mean()
