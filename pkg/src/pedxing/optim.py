"""Adam with decoupled weight decay and a multi-step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, ParameterError


class Adam:
    """Bias-corrected Adam over named parameters.

    Weight decay is decoupled: ``lr · weight_decay · param`` is subtracted
    each step, independent of the gradient moments.
    """

    def __init__(self, named_params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-5):
        if lr <= 0 or eps <= 0 or weight_decay < 0 or not all(0 <= b < 1 for b in betas):
            raise ParameterError(f"invalid Adam hyper-parameters lr={lr} betas={betas} "
                                 f"eps={eps} weight_decay={weight_decay}")
        self.params = dict(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (self.lr * self.weight_decay) * p.data + self.lr * update

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {"t": self.t, "lr": self.lr, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        for name in self.params:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]


def adam_step(params, state: Adam):
    """Apply one step of ``state`` to ``params`` (already bound to it)."""
    state.step()


@dataclass
class MultiStepLR:
    """lr(e) = base_lr · gamma^(number of milestones ≤ e)."""

    base_lr: float = 1e-2
    milestones: list = field(default_factory=lambda: [50, 75])
    gamma: float = 0.1
    epoch: int = 0

    def __post_init__(self):
        self.milestones = sorted(int(m) for m in self.milestones)
        if self.base_lr <= 0 or not 0 < self.gamma <= 1:
            raise ParameterError(f"invalid schedule base_lr={self.base_lr} gamma={self.gamma}")

    def lr_at(self, epoch):
        # repeated multiplication, as a stepping scheduler would do it
        lr = self.base_lr
        for m in self.milestones:
            if m <= epoch:
                lr *= self.gamma
        return lr

    @property
    def lr(self):
        return self.lr_at(self.epoch)

    def step(self):
        self.epoch += 1
        return self.lr

    def state_dict(self):
        return {"base_lr": self.base_lr, "milestones": list(self.milestones),
                "gamma": self.gamma, "epoch": self.epoch}

    def load_state_dict(self, state):
        self.base_lr = float(state["base_lr"])
        self.milestones = [int(m) for m in state["milestones"]]
        self.gamma = float(state["gamma"])
        self.epoch = int(state["epoch"])


def scheduler_step(state: MultiStepLR):
    return state.step()
