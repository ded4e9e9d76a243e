"""scikit-learn style wrapper around the crossing-intention model."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .config import RunConfig
from .data.dataset import ClipDataset, ClipSample
from .data.tracks import CLIP_LENGTH
from .exceptions import DataError, DimensionError
from .heads import POSE_DIM
from .losses import EmptyMaskWarning
from .training import Trainer

__all__ = ["CrossingIntentionClassifier"]


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class CrossingIntentionClassifier(ClassifierMixin, BaseEstimator):
    """Binary crossing / not-crossing classifier over 16-frame clips.

    ``X`` has shape ``[n, 16, 3, h, w]`` with pixel values in [0, 1] and
    ``(h, w) == input_size``. ``y`` holds two distinct labels; the larger one
    (after sorting, as in ``classes_``) is treated as the crossing class.

    Pose and speed targets are optional. When either is missing the side-task
    heads cannot be supervised, so the model is trained with λ = 0 and
    ``aux_trained_`` is False.

    Parameters mirror :class:`pedxing.config.RunConfig`; ``random_state``
    seeds initialisation, dropout and batch order.
    """

    def __init__(self, backbone="squeeze", width=0.25, input_size=(64, 64), lam=0.01, lr=1e-3,
                 batch_size=16, epochs=20, weight_decay=1e-5, milestones=(50, 75), gamma=0.1,
                 class_weights="auto", speed_classes=5, random_state=0):
        self.backbone = backbone
        self.width = width
        self.input_size = input_size
        self.lam = lam
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.milestones = milestones
        self.gamma = gamma
        self.class_weights = class_weights
        self.speed_classes = speed_classes
        self.random_state = random_state

    # ------------------------------------------------------------ helpers
    def _config(self, lam):
        return RunConfig.desk(
            backbone=self.backbone, width=self.width, input_size=list(self.input_size), lam=lam,
            lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            weight_decay=self.weight_decay, milestones=list(self.milestones), gamma=self.gamma,
            class_weights=self.class_weights, speed_classes=self.speed_classes,
            seed=self.random_state).validate()

    def _check_clips(self, X):
        X = np.asarray(X, dtype=np.float32)
        h, w = self.input_size
        if X.ndim != 5 or X.shape[1:] != (CLIP_LENGTH, 3, h, w):
            raise DimensionError(f"X must have shape [n, {CLIP_LENGTH}, 3, {h}, {w}], "
                                 f"got {list(X.shape)}")
        if len(X) == 0:
            raise DataError("X contains no clips")
        if not np.isfinite(X).all() or X.min() < 0 or X.max() > 1:
            raise DataError("clip pixels must be finite and lie in [0, 1]")
        return X

    def _aux_targets(self, n, pose, pose_mask, speed):
        pose_shape = (n, CLIP_LENGTH, POSE_DIM)
        if pose is None or speed is None:
            return (np.zeros(pose_shape, np.float32), np.zeros(pose_shape, np.float32),
                    np.tile(np.eye(self.speed_classes, dtype=np.float32)[0], (n, CLIP_LENGTH, 1)),
                    False)
        pose = np.asarray(pose, dtype=np.float32)
        mask = np.ones(pose_shape, np.float32) if pose_mask is None else np.asarray(pose_mask, np.float32)
        if pose.shape != pose_shape or mask.shape != pose_shape:
            raise DimensionError(f"pose and pose_mask must have shape {list(pose_shape)}")
        speed = np.asarray(speed)
        if speed.shape == (n, CLIP_LENGTH):  # class indices
            if speed.min() < 0 or speed.max() >= self.speed_classes:
                raise DataError(f"speed classes must lie in [0, {self.speed_classes})")
            speed = np.eye(self.speed_classes, dtype=np.float32)[speed.astype(int)]
        if speed.shape != (n, CLIP_LENGTH, self.speed_classes):
            raise DimensionError(f"speed must be [n, {CLIP_LENGTH}] class indices or "
                                 f"[n, {CLIP_LENGTH}, {self.speed_classes}] one-hot")
        return pose * mask, mask, speed.astype(np.float32), True

    # ---------------------------------------------------------------- API
    def fit(self, X, y, pose=None, pose_mask=None, speed=None):
        """Train from scratch on clips ``X`` with labels ``y``.

        ``pose`` is ``[n, 16, 36]`` keypoint ratios in [0, 1], ``pose_mask``
        marks visible coordinates (default all visible) and ``speed`` is
        either ``[n, 16]`` class indices or ``[n, 16, S]`` one-hot rows.
        """
        X = self._check_clips(X)
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise DimensionError(f"y must have shape [{len(X)}], got {list(y.shape)}")
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise DataError(f"y must contain exactly two classes, got {self.classes_.tolist()}")
        labels = (y == self.classes_[1]).astype(int)
        pose, mask, speed, self.aux_trained_ = self._aux_targets(len(X), pose, pose_mask, speed)
        samples = [ClipSample(X[i], int(labels[i]), pose[i], mask[i], speed[i]).validate()
                   for i in range(len(X))]
        lam = self.lam if self.aux_trained_ else 0.0
        self.trainer_ = Trainer(self._config(lam), ClipDataset(samples))
        with warnings.catch_warnings():
            # batches whose keypoints are all hidden contribute no pose loss
            warnings.simplefilter("ignore", EmptyMaskWarning)
            self.history_ = self.trainer_.fit()
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def decision_function(self, X):
        """Raw crossing logits, shape ``[n, 2]``."""
        check_is_fitted(self, "trainer_")
        X = self._check_clips(X)
        model = self.trainer_.model
        model.eval()
        out = []
        with T.no_grad():
            for start in range(0, len(X), self.batch_size):
                out.append(model(T.Tensor(X[start:start + self.batch_size])).crossing.data)
        return np.concatenate(out).astype(np.float64)

    def predict_proba(self, X):
        """Class probabilities ordered as ``classes_``; rows sum to 1."""
        return _softmax(self.decision_function(X))

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    @property
    def model_(self):
        check_is_fitted(self, "trainer_")
        return self.trainer_.model
