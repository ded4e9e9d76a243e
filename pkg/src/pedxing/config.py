"""Run configuration: flat JSON key/value documents with validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .backbones import BackboneConfig, check_input_geometry
from .exceptions import ConfigError, ParameterError
from .losses import ClassWeights, compute_class_weights

# Fields that do not change what a given epoch computes; excluded from the
# fingerprint so that runs can be extended or pointed at a copied dataset.
_UNFINGERPRINTED = {"data", "out", "epochs", "checkpoint_every"}

# Paper class weights for the JAAD subsets: (crossing events, non-crossing events).
PAPER_COUNTS = {"paper_beh": (1760, 374), "paper_all": (1760, 6853)}


@dataclass
class RunConfig:
    backbone: str = "squeeze"
    width: float = 1.0
    input_size: list = field(default_factory=lambda: [224, 224])
    lam: float = 0.01
    stride: int = 8
    context: float = 0.1
    batch_size: int = 16
    lr: float = 1e-2
    weight_decay: float = 1e-5
    milestones: list = field(default_factory=lambda: [50, 75])
    gamma: float = 0.1
    seed: int = 0
    train_fraction: float = 0.8
    epochs: int = 100
    speed_classes: int = 5
    class_weights: object = "auto"
    aux_heads: bool = True
    checkpoint_every: int = 10
    data: str = ""
    out: str = ""

    @classmethod
    def desk(cls, **overrides):
        """Small CPU profile: width 0.25, 64×64 crops, lr 1e-3."""
        base = dict(width=0.25, input_size=[64, 64], lr=1e-3)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**values).validate()

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a flat key/value object")
        return cls.from_dict(values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def fingerprint(self):
        core = {k: v for k, v in self.to_dict().items() if k not in _UNFINGERPRINTED}
        blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def backbone_config(self):
        return BackboneConfig(self.backbone, self.width, tuple(self.input_size))

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg} (got {getattr(self, name)!r})")

        def is_int(v):
            return isinstance(v, int) and not isinstance(v, bool)

        def is_num(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool)

        need(self.backbone in ("squeeze", "mobile"), "backbone", "must be 'squeeze' or 'mobile'")
        need(is_num(self.width) and 0 < self.width <= 1, "width", "must lie in (0, 1]")
        need(isinstance(self.input_size, (list, tuple)) and len(self.input_size) == 2
             and all(is_int(v) and v > 0 for v in self.input_size),
             "input_size", "must be [h, w] positive integers")
        need(is_num(self.lam) and self.lam >= 0, "lam", "must be >= 0")
        need(is_int(self.stride) and self.stride >= 1, "stride", "must be an integer >= 1")
        need(is_num(self.context) and self.context >= 0, "context", "must be >= 0")
        need(is_int(self.batch_size) and self.batch_size >= 1, "batch_size", "must be >= 1")
        need(is_num(self.lr) and self.lr > 0, "lr", "must be > 0")
        need(is_num(self.weight_decay) and self.weight_decay >= 0, "weight_decay", "must be >= 0")
        need(isinstance(self.milestones, (list, tuple))
             and all(is_int(m) and m >= 0 for m in self.milestones),
             "milestones", "must be a list of non-negative integers")
        need(is_num(self.gamma) and 0 < self.gamma <= 1, "gamma", "must lie in (0, 1]")
        need(is_int(self.seed) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(is_num(self.train_fraction) and 0 < self.train_fraction < 1,
             "train_fraction", "must lie in (0, 1)")
        need(is_int(self.epochs) and self.epochs >= 1, "epochs", "must be >= 1")
        need(is_int(self.speed_classes) and self.speed_classes >= 1,
             "speed_classes", "must be >= 1")
        need(isinstance(self.aux_heads, bool), "aux_heads", "must be true or false")
        need(is_int(self.checkpoint_every) and self.checkpoint_every >= 1,
             "checkpoint_every", "must be >= 1")
        cw = self.class_weights
        ok = (isinstance(cw, str) and (cw in ("auto", "none") or cw in PAPER_COUNTS)) or (
            isinstance(cw, (list, tuple)) and len(cw) == 2 and all(is_num(v) and v > 0 for v in cw))
        need(ok, "class_weights", "must be 'auto', 'none', 'paper_beh', 'paper_all' or [w0, w1]")
        try:
            check_input_geometry(self.backbone_config())
        except (ParameterError, ValueError) as exc:
            raise ConfigError(f"input_size/width: {exc}") from None
        self.input_size = [int(v) for v in self.input_size]
        self.milestones = [int(m) for m in self.milestones]
        return self

    def resolve_class_weights(self, train_counts=None):
        """ClassWeights for the crossing loss, or None for unweighted."""
        cw = self.class_weights
        if not isinstance(cw, str):
            return ClassWeights(tuple(cw))
        if cw == "none":
            return None
        if cw in PAPER_COUNTS:
            return compute_class_weights(*PAPER_COUNTS[cw])
        if cw == "auto":
            if train_counts is None:
                return None
            return compute_class_weights(*train_counts)
        raise ConfigError(f"class_weights: unknown setting {cw!r}")
