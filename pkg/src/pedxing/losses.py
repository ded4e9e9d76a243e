"""Classification losses and the λ-weighted multi-task objective."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import DataError, ParameterError
from .tensor import Tensor

# Sigmoid outputs are clamped this far from {0, 1} before taking logs.
_BCE_EPS = 1e-7


class EmptyMaskWarning(UserWarning):
    """Binary cross-entropy was asked to average over zero valid entries."""


@dataclass(frozen=True)
class ClassWeights:
    w: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.w)
        if not w or any(not np.isfinite(v) or v <= 0 for v in w):
            raise ParameterError(f"class weights must be positive, got {w}")
        object.__setattr__(self, "w", w)

    def __getitem__(self, i):
        return self.w[i]

    def __len__(self):
        return len(self.w)

    def as_array(self, dtype=np.float64):
        return np.asarray(self.w, dtype=dtype)


def compute_class_weights(n_cross, n_not_cross):
    """``[n_cross/total, 1 - n_cross/total]``, indexed by label (0 = not crossing).

    With the JAAD behavioural counts (1760 crossing, 374 not) this yields
    ``[1760/2134, 1 - 1760/2134]``.
    """
    total = n_cross + n_not_cross
    if n_cross < 0 or n_not_cross < 0 or total <= 0:
        raise DataError(f"class counts must be non-negative with a positive total, "
                        f"got ({n_cross}, {n_not_cross})")
    ratio = n_cross / total
    if ratio in (0.0, 1.0):
        raise DataError("both classes must be present to derive class weights")
    return ClassWeights((ratio, 1.0 - ratio))


def _check_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"crossing labels must be 0 or 1, got {np.unique(labels).tolist()}")
    return labels.astype(np.int64)


def weighted_cross_entropy(logits: Tensor, labels, weights: ClassWeights = None):
    """Weight-normalised mean of −log softmax(logits)[y]."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise DataError(f"expected [n,2] logits, got {list(logits.shape)}")
    labels = _check_labels(labels, logits.shape[0])
    w = np.ones(2) if weights is None else weights.as_array()
    onehot = np.eye(2, dtype=logits.dtype)[labels]
    sample_w = w[labels].astype(logits.dtype)
    nll = -(T.log_softmax(logits) * onehot).sum(axis=1)
    return (nll * sample_w).sum() * (1.0 / sample_w.sum())


def binary_cross_entropy(pred: Tensor, target, mask=None):
    """Mean BCE over unmasked entries; supports soft targets in [0, 1]."""
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DataError(f"target shape {target.shape} != prediction shape {pred.shape}")
    mask = np.ones_like(target) if mask is None else np.asarray(mask, dtype=pred.dtype)
    if mask.shape != pred.shape:
        raise DataError(f"mask shape {mask.shape} != prediction shape {pred.shape}")
    count = mask.sum()
    if count == 0:
        warnings.warn("binary_cross_entropy over an empty mask is defined as 0",
                      EmptyMaskWarning, stacklevel=2)
        return (pred * np.zeros_like(target)).sum()
    p = T.clip(pred, _BCE_EPS, 1 - _BCE_EPS)
    # masked targets are zeroed so their raw values cannot leak in
    target = target * mask
    terms = T.log(p) * target + T.log(1.0 - p) * (1.0 - target)
    return -(terms * mask).sum() * (1.0 / count)


@dataclass
class LossBundle:
    loss_cross: Tensor
    loss_pose: Tensor
    loss_speed: Tensor
    total: Tensor
    lam: float

    def values(self):
        """Plain floats for logging."""
        return {"loss_total": float(self.total.item()), "loss_cross": float(self.loss_cross.item()),
                "loss_pose": float(self.loss_pose.item()), "loss_speed": float(self.loss_speed.item())}


def combined_loss(loss_cross, loss_pose, loss_speed, lam):
    """total = loss_cross + λ·loss_pose + λ·loss_speed."""
    if lam < 0 or not np.isfinite(lam):
        raise ParameterError(f"lambda must be a finite non-negative number, got {lam}")
    # a model without side-task heads contributes zero auxiliary loss
    zero = np.zeros((), dtype=loss_cross.dtype)
    loss_pose = Tensor(zero) if loss_pose is None else loss_pose
    loss_speed = Tensor(zero) if loss_speed is None else loss_speed
    total = loss_cross + loss_pose * lam + loss_speed * lam
    return LossBundle(loss_cross, loss_pose, loss_speed, total, float(lam))
