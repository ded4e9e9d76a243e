"""Per-frame feature extractors mapping [B,3,h,w] frames to 512-d vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, ParameterError
from .nn import BatchNorm, Conv2d, DepthwiseConv2d, Module

FEATURE_DIM = 512

# SqueezeNet v1.1 fire schedule: (squeeze, expand_1x1, expand_3x3); a max-pool
# follows the entries listed in _SQUEEZE_POOL_AFTER.
_SQUEEZE_FIRES = [(16, 64, 64), (16, 64, 64), (32, 128, 128), (32, 128, 128),
                  (48, 192, 192), (48, 192, 192), (64, 256, 256), (64, 256, 256)]
_SQUEEZE_POOL_AFTER = {1, 3}
_SQUEEZE_STEM = 64

# MobileNet v1 separable blocks up to the 512-channel stage: (out_channels, stride).
_MOBILE_STEM = 32
_MOBILE_BLOCKS = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2)] + [(512, 1)] * 5


@dataclass(frozen=True)
class FireConfig:
    in_channels: int
    squeeze_1x1: int
    expand_1x1: int
    expand_3x3: int

    def __post_init__(self):
        if min(self.in_channels, self.squeeze_1x1, self.expand_1x1, self.expand_3x3) < 1:
            raise ParameterError(f"fire channel counts must be positive: {self}")
        if self.squeeze_1x1 >= self.expand_1x1 + self.expand_3x3:
            raise ParameterError(f"fire squeeze must be narrower than its expand: {self}")

    @property
    def out_channels(self):
        return self.expand_1x1 + self.expand_3x3


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "squeeze"
    width_multiplier: float = 1.0
    input_size: tuple = (224, 224)
    feature_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.kind not in ("squeeze", "mobile"):
            raise ParameterError(f"backbone kind must be 'squeeze' or 'mobile', got {self.kind!r}")
        if not 0 < self.width_multiplier <= 1:
            raise ParameterError(f"width_multiplier must lie in (0, 1], got {self.width_multiplier}")
        if self.feature_dim != FEATURE_DIM:
            raise ParameterError(f"feature_dim is fixed at {FEATURE_DIM}")
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ParameterError(f"input_size must be (h, w), got {self.input_size}")

    def scaled(self, channels):
        return max(1, int(round(channels * self.width_multiplier)))


def squeeze_fire_configs(cfg: BackboneConfig):
    """Fire stack for ``cfg``; the last fire always emits 512 channels."""
    fires = []
    in_ch = cfg.scaled(_SQUEEZE_STEM)
    for i, (s, e1, e3) in enumerate(_SQUEEZE_FIRES):
        if i == len(_SQUEEZE_FIRES) - 1:
            fire = FireConfig(in_ch, cfg.scaled(s), FEATURE_DIM // 2, FEATURE_DIM // 2)
        else:
            fire = FireConfig(in_ch, cfg.scaled(s), cfg.scaled(e1), cfg.scaled(e3))
        fires.append(fire)
        in_ch = fire.out_channels
    return fires


def squeezenet_parameter_count(cfg: BackboneConfig):
    """Analytic parameter count from the configured layer shapes."""
    stem = cfg.scaled(_SQUEEZE_STEM)
    total = 3 * stem * 9 + stem
    for f in squeeze_fire_configs(cfg):
        total += f.in_channels * f.squeeze_1x1 + f.squeeze_1x1
        total += f.squeeze_1x1 * f.expand_1x1 + f.expand_1x1
        total += f.squeeze_1x1 * f.expand_3x3 * 9 + f.expand_3x3
    return total


def separable_block_macs(in_ch, out_ch, h, w, k=3):
    """Multiply-accumulates of a depthwise k×k + pointwise block vs. a standard conv.

    Returns ``(separable, standard)`` at stride 1 with 'same' padding.
    """
    separable = h * w * in_ch * k * k + h * w * in_ch * out_ch
    standard = h * w * in_ch * out_ch * k * k
    return separable, standard


class Fire(Module):
    """1×1 squeeze, then concatenated 1×1 and 3×3 expands, all with ReLU."""

    def __init__(self, cfg: FireConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.squeeze = Conv2d(cfg.in_channels, cfg.squeeze_1x1, 1, rng, dtype=dtype)
        self.expand1 = Conv2d(cfg.squeeze_1x1, cfg.expand_1x1, 1, rng, dtype=dtype)
        self.expand3 = Conv2d(cfg.squeeze_1x1, cfg.expand_3x3, 3, rng, padding=1, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"fire expects {self.cfg.in_channels} input channels, got {list(x.shape)}")
        s = T.relu(self.squeeze(x))
        return T.concat([T.relu(self.expand1(s)), T.relu(self.expand3(s))], axis=1)


def fire_forward(x, fire: Fire):
    return fire(x)


class Extractor(Module):
    """Common base: input validation and a forward-call counter."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.calls = 0

    def _check_input(self, x):
        h, w = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (h, w):
            raise DimensionError(
                f"{type(self).__name__} expects [B,3,{h},{w}] input, got {list(x.shape)}")

    def forward(self, x):
        self._check_input(x)
        self.calls += 1
        return self._features(x)


class SqueezeNetExtractor(Extractor):
    def __init__(self, cfg: BackboneConfig, rng, dtype=np.float32):
        super().__init__(cfg)
        self.stem = Conv2d(3, cfg.scaled(_SQUEEZE_STEM), 3, rng, stride=2, dtype=dtype)
        self.fires = []
        for i, fc in enumerate(squeeze_fire_configs(cfg)):
            fire = Fire(fc, rng, dtype)
            setattr(self, f"fire{i}", fire)
            self.fires.append(fire)
        check_input_geometry(cfg)

    def _features(self, x):
        x = T.max_pool2d(T.relu(self.stem(x)), 3, 2)
        for i, fire in enumerate(self.fires):
            x = fire(x)
            if i in _SQUEEZE_POOL_AFTER:
                x = T.max_pool2d(x, 3, 2)
        return T.global_avg_pool(x)


def check_input_geometry(cfg: BackboneConfig):
    """Raise DimensionError if ``cfg.input_size`` cannot pass the squeeze stack."""
    if cfg.kind != "squeeze":
        return
    size = cfg.input_size
    dims = list(size)
    steps = [(3, 2, "stem conv"), (3, 2, "pool"), (3, 2, "pool"), (3, 2, "pool")]
    for k, s, what in steps:
        if min(dims) < k:
            raise DimensionError(f"input size {tuple(size)} too small for squeeze {what}")
        dims = [(d - k) // s + 1 for d in dims]


class SeparableBlock(Module):
    """Depthwise 3×3 + BN + ReLU, then pointwise 1×1 + BN + ReLU."""

    def __init__(self, in_ch, out_ch, stride, rng, dtype=np.float32):
        super().__init__()
        self.depthwise = DepthwiseConv2d(in_ch, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.bn1 = BatchNorm(in_ch, dtype=dtype)
        self.pointwise = Conv2d(in_ch, out_ch, 1, rng, bias=False, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)

    def forward(self, x):
        x = T.relu(self.bn1(self.depthwise(x)))
        return T.relu(self.bn2(self.pointwise(x)))


class MobileNetExtractor(Extractor):
    def __init__(self, cfg: BackboneConfig, rng, dtype=np.float32):
        super().__init__(cfg)
        ch = cfg.scaled(_MOBILE_STEM)
        self.stem = Conv2d(3, ch, 3, rng, stride=2, padding=1, bias=False, dtype=dtype)
        self.stem_bn = BatchNorm(ch, dtype=dtype)
        self.blocks = []
        for i, (out, stride) in enumerate(_MOBILE_BLOCKS):
            block = SeparableBlock(ch, cfg.scaled(out), stride, rng, dtype)
            setattr(self, f"block{i}", block)
            self.blocks.append(block)
            ch = cfg.scaled(out)
        self.head = Conv2d(ch, FEATURE_DIM, 1, rng, bias=False, dtype=dtype)
        self.head_bn = BatchNorm(FEATURE_DIM, dtype=dtype)

    def _features(self, x):
        x = T.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            x = block(x)
        x = T.relu(self.head_bn(self.head(x)))
        return T.global_avg_pool(x)


def build_extractor(cfg: BackboneConfig, rng, dtype=np.float32):
    if cfg.kind == "squeeze":
        return SqueezeNetExtractor(cfg, rng, dtype)
    return MobileNetExtractor(cfg, rng, dtype)


def squeezenet_extract(x, extractor):
    return extractor(x)


def mobilenet_extract(x, extractor):
    return extractor(x)


def extract_sequence_features(x, extractor):
    """[n,l,c,h,w] clips -> [n·l,512]; row i·l+t is clip i, frame t."""
    if x.ndim != 5:
        raise DimensionError(f"expected [n,l,c,h,w] clips, got {list(x.shape)}")
    n, l, c, h, w = x.shape
    return extractor(x.reshape(n * l, c, h, w))
