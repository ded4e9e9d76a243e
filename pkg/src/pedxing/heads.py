"""Task heads and the assembled multi-task model.

A single extractor pass produces per-frame features that feed the GRU
crossing head and the two per-frame side-task heads (pose, speed).
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import tensor as T
from .backbones import FEATURE_DIM, BackboneConfig, build_extractor, extract_sequence_features
from .exceptions import DimensionError
from .nn import BatchNorm, Dropout, Linear, Module, Parameter, fan_in_uniform
from .tensor import Rng, Tensor

NUM_KEYPOINTS = 18
POSE_DIM = 2 * NUM_KEYPOINTS
DEFAULT_SPEED_CLASSES = 5
SPEED_CLASS_NAMES = ("stopped", "slow", "fast", "decelerating", "accelerating")


class GruParams(Module):
    """Input (W), recurrent (U) and bias (b) parameters of the three GRU gates."""

    def __init__(self, rng, input_size=FEATURE_DIM, hidden_size=FEATURE_DIM, dtype=np.float32):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        for gate in "zrh":
            setattr(self, f"W_{gate}", Parameter(
                fan_in_uniform(rng, (hidden_size, input_size), input_size, dtype)))
        for gate in "zrh":
            setattr(self, f"U_{gate}", Parameter(
                fan_in_uniform(rng, (hidden_size, hidden_size), hidden_size, dtype)))
        for gate in "zrh":
            setattr(self, f"b_{gate}", Parameter(np.zeros(hidden_size, dtype=dtype)))


def _gru_update(xz, xr, xh, h_prev, p: GruParams):
    # xz, xr, xh already hold W·x_t + b for each gate.
    z = T.sigmoid(xz + T.linear(h_prev, p.U_z))
    r = T.sigmoid(xr + T.linear(h_prev, p.U_r))
    h_cand = T.tanh(xh + T.linear(r * h_prev, p.U_h))
    return (1.0 - z) * h_prev + z * h_cand


def gru_cell(x_t, h_prev, p: GruParams):
    """One GRU step.

    z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
    ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h), h' = (1 − z) ⊙ h + z ⊙ ĥ.
    """
    if x_t.ndim != 2 or x_t.shape[1] != p.input_size:
        raise DimensionError(f"gru_cell: x_t {list(x_t.shape)} vs input size {p.input_size}")
    if h_prev.shape != (x_t.shape[0], p.hidden_size):
        raise DimensionError(f"gru_cell: h_prev {list(h_prev.shape)} vs hidden {p.hidden_size}")
    return _gru_update(T.linear(x_t, p.W_z, p.b_z), T.linear(x_t, p.W_r, p.b_r),
                       T.linear(x_t, p.W_h, p.b_h), h_prev, p)


class CrossingHead(Module):
    """GRU over the frame features of each clip; logits from the last state."""

    def __init__(self, rng, dtype=np.float32):
        super().__init__()
        self.gru = GruParams(rng, dtype=dtype)
        self.out = Linear(FEATURE_DIM, 2, rng, dtype=dtype)

    def forward(self, features, n, l):
        if features.ndim != 2 or features.shape[0] != n * l:
            raise DimensionError(
                f"crossing head: {list(features.shape)} rows do not match n·l = {n}·{l}")
        p = self.gru
        hidden = p.hidden_size

        def per_step(w, b):
            # [n·l, H] -> [l, n, H]
            return T.linear(features, w, b).reshape(n, l, hidden).transpose(1, 0, 2)

        xz, xr, xh = per_step(p.W_z, p.b_z), per_step(p.W_r, p.b_r), per_step(p.W_h, p.b_h)
        h = Tensor(np.zeros((n, hidden), dtype=features.dtype))
        for t in range(l):
            h = _gru_update(xz[t], xr[t], xh[t], h, p)
        return self.out(h)


def crossing_head(features, n, l, head: CrossingHead):
    return head(features, n, l)


class SideTaskHead(Module):
    """linear 512→512, batch-norm, ReLU, dropout, linear 512→out, sigmoid."""

    def __init__(self, out_features, rng, dropout_rng, p=0.5, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(FEATURE_DIM, FEATURE_DIM, rng, dtype=dtype)
        self.bn = BatchNorm(FEATURE_DIM, dtype=dtype)
        self.drop = Dropout(p, dropout_rng)
        self.fc2 = Linear(FEATURE_DIM, out_features, rng, dtype=dtype)

    def forward(self, features):
        x = self.drop(T.relu(self.bn(self.fc1(features))))
        return T.sigmoid(self.fc2(x))


class ModelOutput(NamedTuple):
    crossing: Tensor
    pose: Optional[Tensor]
    speed: Optional[Tensor]


class ModelPhi(Module):
    """Shared extractor plus crossing, pose and speed heads.

    Parameters are initialised from independent streams derived from
    ``seed`` so that dropping the side-task heads (``aux_heads=False``) leaves
    the extractor and crossing head initialisation unchanged.
    """

    def __init__(self, backbone: BackboneConfig = BackboneConfig(), n_speed_classes=DEFAULT_SPEED_CLASSES,
                 seed=0, aux_heads=True, dtype=np.float32):
        super().__init__()
        self.backbone_cfg = backbone
        self.n_speed_classes = int(n_speed_classes)
        self.aux_heads = aux_heads
        ext_rng, cross_rng, pose_rng, speed_rng, drop_rng = Rng(seed).spawn(5)
        self.dropout_rng = drop_rng
        self.extractor = build_extractor(backbone, ext_rng, dtype)
        self.crossing = CrossingHead(cross_rng, dtype)
        if aux_heads:
            self.pose = SideTaskHead(POSE_DIM, pose_rng, drop_rng, dtype=dtype)
            self.speed = SideTaskHead(self.n_speed_classes, speed_rng, drop_rng, dtype=dtype)
        else:
            self.pose = self.speed = None

    def head_parameters(self, which):
        """Parameters of one component: 'extractor', 'crossing', 'pose' or 'speed'."""
        module = getattr(self, which)
        return [] if module is None else module.parameters()

    def forward(self, x):
        if x.ndim != 5:
            raise DimensionError(f"model expects [n,l,3,h,w] clips, got {list(x.shape)}")
        n, l = x.shape[:2]
        feats = extract_sequence_features(x, self.extractor)
        crossing = self.crossing(feats, n, l)
        if not self.aux_heads:
            return ModelOutput(crossing, None, None)
        return ModelOutput(crossing, self.pose(feats), self.speed(feats))


def model_forward(x, model: ModelPhi, training: bool):
    model.train(training)
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return model(x)
