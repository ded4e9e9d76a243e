"""Dense n-d tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a backward closure on
the output tensor. Outputs carry a global, monotonically increasing sequence
number, so the set of recorded operations reachable from a loss forms the
tape: ``Tensor.backward`` replays it in exact reverse execution order and
accumulates (``+=``) gradient contributions into leaves.

Storage is a row-major numpy array. Gradient checks run at float64; training
uses float32. Operations keep the dtype of their inputs.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError, DimensionError, ParameterError

__all__ = [
    "Tensor", "Rng", "no_grad", "is_grad_enabled",
    "matmul", "linear", "conv2d", "depthwise_conv2d", "activation",
    "relu", "sigmoid", "tanh", "softmax", "log_softmax", "batchnorm",
    "dropout", "pool", "max_pool2d", "global_avg_pool", "concat", "clip",
    "exp", "log",
]

_sequence = itertools.count()
_grad_enabled = True


def is_grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """n-dimensional array with optional gradient tracking."""

    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = -1
        self.name = name

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._seq = next(_sequence)
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
            out._seq = -1
        return out

    # ------------------------------------------------------------------ info
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{flag})"

    # -------------------------------------------------------------- backward
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() needs a scalar loss, got shape {list(self.shape)}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")
        if self.is_leaf:
            self.grad = grad.copy() if self.grad is None else self.grad + grad
            return

        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and not p.is_leaf and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        grads = {id(self): grad}
        for node in nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=parent.dtype, copy=True)
                    else:
                        parent.grad += pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return Tensor._from_op(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
        return Tensor._from_op(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                    _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
        return Tensor._from_op(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                  if b.requires_grad else None)
            return ga, gb
        return Tensor._from_op(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) / self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        a = self

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            return (full,)
        return Tensor._from_op(a.data[index], (a,), backward)

    # ------------------------------------------------------------- reshaping
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            out = a.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"cannot reshape {list(a.shape)} to {list(shape)}") from exc
        return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(np.ascontiguousarray(self.data.transpose(axes)), (self,),
                               lambda g: (g.transpose(inverse),))

    @property
    def T(self):
        return self.transpose()

    # ------------------------------------------------------------ reductions
    def sum(self, axis=None, keepdims=False):
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)
        return Tensor._from_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)),
                               (a,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


# ---------------------------------------------------------------- primitives

def matmul(a, b):
    """2-d matrix product with gradients dA = dC·Bᵀ and dB = Aᵀ·dC."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {list(a.shape)} @ {list(b.shape)}")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)
    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """Affine map ``x·Wᵀ + b`` over the rows of ``x``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input {list(x.shape)} incompatible with weight {list(weight.shape)}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"linear: bias {list(bias.shape)} does not match weight {list(weight.shape)}")

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)
    return Tensor._from_op(out, parents, backward)


def exp(x):
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def log(x):
    return Tensor._from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x, low, high):
    """Clamp values; gradient passes only where the input was inside the range."""
    inside = (x.data >= low) & (x.data <= high)
    return Tensor._from_op(np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tuple(tensors), backward)


# --------------------------------------------------------------- activations

def relu(x):
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,),
                           lambda g: (g * mask,))


def _stable_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    # keep the range open: saturated values would otherwise round to exactly 0 or 1
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, 1.0 - info.epsneg, out=out)


def sigmoid(x):
    out = _stable_sigmoid(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1 - out * out),))


def softmax(x):
    """Softmax over the last axis, shifted by the row max."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax needs a non-empty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return Tensor._from_op(out, (x,), backward)


def log_softmax(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)
    return Tensor._from_op(out, (x,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "softmax": softmax}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ParameterError(f"unknown activation {kind!r}") from None
    return fn(x)


# ------------------------------------------------------------- convolutions

def _out_extent(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _check_window(x, kh, kw, stride, padding, what):
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected [N,C,H,W] input, got {list(x.shape)}")
    if stride < 1:
        raise ParameterError(f"{what}: stride must be >= 1")
    h, w = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if kh > h or kw > w:
        raise DimensionError(
            f"{what}: kernel {kh}x{kw} larger than padded input {h}x{w}")


def _pad(a, padding):
    if padding == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-d cross-correlation of ``x`` [N,C,H,W] with ``weight`` [O,C,kh,kw]."""
    o, c, kh, kw = weight.shape
    _check_window(x, kh, kw, stride, padding, "conv2d")
    if x.shape[1] != c:
        raise DimensionError(
            f"conv2d: input channels {x.shape[1]} != weight channels {c} "
            f"(input {list(x.shape)}, weight {list(weight.shape)})")
    n, _, h, w = x.shape
    ho, wo = _out_extent(h, kh, stride, padding), _out_extent(w, kw, stride, padding)
    w2 = weight.data.reshape(o, c * kh * kw)

    xp = _pad(x.data, padding)
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo].reshape(n, c, ho * wo)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def backward(g):
        g = g.reshape(n, o, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g).reshape(n, c, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            gx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


def depthwise_conv2d(x, weight, bias=None, stride=1, padding=0):
    """Per-channel cross-correlation; ``weight`` is [C,1,kh,kw], channels never mix."""
    c, one, kh, kw = weight.shape
    _check_window(x, kh, kw, stride, padding, "depthwise_conv2d")
    if c != x.shape[1] or one != 1:
        raise DimensionError(
            f"depthwise_conv2d: weight {list(weight.shape)} incompatible with "
            f"input {list(x.shape)}; expected [{x.shape[1]},1,kh,kw]")
    n, _, h, w = x.shape
    ho, wo = _out_extent(h, kh, stride, padding), _out_extent(w, kw, stride, padding)
    xp = _pad(x.data, padding)
    k = weight.data[:, 0]

    def window(i, j):
        return xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]

    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += window(i, j) * k[None, :, i, j, None, None]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = (g * window(i, j)).sum(axis=(0, 2, 3))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        g * k[None, :, i, j, None, None])
            gx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


# ------------------------------------------------------------------ pooling

def max_pool2d(x, k, stride=None):
    stride = k if stride is None else stride
    if x.ndim == 4 and (k > x.shape[2] or k > x.shape[3]):
        raise DimensionError(
            f"max_pool2d: window {k} exceeds input {x.shape[2]}x{x.shape[3]}")
    _check_window(x, k, k, stride, 0, "max_pool2d")
    n, c, h, w = x.shape
    ho, wo = _out_extent(h, k, stride, 0), _out_extent(w, k, stride, 0)

    def window(i, j):
        return x.data[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]

    out = window(0, 0).copy()
    for i in range(k):
        for j in range(k):
            np.maximum(out, window(i, j), out=out)

    def backward(g):
        # Ties route to the first maximal position in row-major window order.
        dx = np.zeros_like(x.data)
        unclaimed = np.ones(out.shape, dtype=bool)
        for i in range(k):
            for j in range(k):
                hit = (window(i, j) == out) & unclaimed
                unclaimed &= ~hit
                dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return (dx,)
    return Tensor._from_op(out, (x,), backward)


def global_avg_pool(x):
    """Mean over the spatial extent: [N,C,H,W] -> [N,C]."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-d input, got {list(x.shape)}")
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] * scale, x.shape).astype(x.dtype),)
    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), backward)


def pool(x, kind, k=2, stride=None):
    if kind == "max":
        return max_pool2d(x, k, stride)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ParameterError(f"unknown pool kind {kind!r}")


# ------------------------------------------------------------ normalisation

def batchnorm(x, gamma, beta, running_mean, running_var, training,
              eps=1e-5, momentum=0.1):
    """Batch normalisation over axis 0 ([N,F]) or axes (0,2,3) ([N,C,H,W]).

    ``running_mean``/``running_var`` are numpy arrays updated in place when
    ``training`` is set.
    """
    if x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise DimensionError(f"batchnorm: expected 2-d or 4-d input, got {list(x.shape)}")
    features = x.shape[1]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise DimensionError(
            f"batchnorm: gamma/beta {list(gamma.shape)} do not match {features} features")
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if training:
        count = x.data.size // features
        mean = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mean.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * unbiased.reshape(-1)

        def backward(g):
            gx = ggamma = gbeta = None
            if x.requires_grad:
                dxhat = g * g_
                gx = (inv_std / count) * (
                    count * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            if gamma.requires_grad:
                ggamma = (g * xhat).sum(axis=axes)
            if beta.requires_grad:
                gbeta = g.sum(axis=axes)
            return gx, ggamma, gbeta
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(bshape).astype(x.dtype)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std

        def backward(g):
            return (g * g_ * inv_std if x.requires_grad else None,
                    (g * xhat).sum(axis=axes) if gamma.requires_grad else None,
                    g.sum(axis=axes) if beta.requires_grad else None)

    out = (xhat * g_ + b_).astype(x.dtype, copy=False)
    return Tensor._from_op(out, (x, gamma, beta), backward)


def dropout(x, p, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = rng.uniform(size=x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep * scale
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------- rng

class Rng:
    """Seeded PCG64 stream; ``spawn`` derives independent child streams."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._seedseq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seedseq))

    def spawn(self, n):
        children = self._seedseq.spawn(n)
        out = []
        for child in children:
            r = Rng.__new__(Rng)
            r.seed = self.seed
            r._seedseq = child
            r.generator = np.random.Generator(np.random.PCG64(child))
            out.append(r)
        return out

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def get_state(self):
        return self.generator.bit_generator.state

    def set_state(self, state):
        self.generator.bit_generator.state = state
