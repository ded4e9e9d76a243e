"""Finite-difference gradient checking, independent of the autodiff path."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(fn, tensors, index, coords, h=1e-5):
    """Central differences of scalar ``fn(*tensors)`` w.r.t. ``tensors[index]``."""
    target = tensors[index].data
    flat = target.reshape(-1)
    out = np.empty(len(coords))
    with no_grad():
        for k, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            plus = float(fn(*tensors).item())
            flat[c] = orig - h
            minus = float(fn(*tensors).item())
            flat[c] = orig
            out[k] = (plus - minus) / (2 * h)
    return out


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(fn, tensors, h=1e-5, max_coords=None, rng=None):
    """Relative error between analytic and numerical gradients for each input.

    ``fn`` maps the tensors to a scalar Tensor and must be deterministic.
    When ``max_coords`` is set, a random subset of coordinates is checked.
    Returns a list of relative errors (``None`` for inputs without grad).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors:
        t.grad = None
    fn(*tensors).backward()
    errors = []
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            errors.append(None)
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        n = t.data.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else np.sort(
            rng.choice(n, size=max_coords, replace=False))
        numeric = numerical_gradient(fn, tensors, i, coords, h)
        errors.append(relative_error(analytic.reshape(-1)[coords], numeric))
    return errors


def random_tensor(rng, shape, requires_grad=True, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=requires_grad)
