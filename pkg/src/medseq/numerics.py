"""Dense tensors with reverse-mode automatic differentiation.

Every gradient in this package (transformer and LSTM training, the linear
baseline, saliency) flows through the primitives defined here. A Tensor
wraps a numpy array; each primitive evaluates eagerly and records its
parent tensors plus a backward closure. ``Tensor.backward()`` replays the
recorded graph exactly once per node in reverse topological order and
accumulates gradients additively across fan-out, so ``f = g(x) + h(x)``
receives ``dg + dh`` at ``x``.

Conventions:
  * training runs in float32, gradient checks in float64 (dtype follows
    the leaves; nothing silently upcasts),
  * every primitive output is checked for NaN/Inf (a hard error) unless
    finite checks are disabled via ``set_finite_checks``,
  * masking never materialises -inf in a Tensor: ``masked_softmax`` fuses
    mask, optional top-k selection and the stabilised softmax so its
    output is finite with exact zeros at masked slots,
  * reduction order is whatever numpy uses for the given shapes, which is
    fixed within one build on one machine; bit-exactness tests rely on
    that and on single-threaded execution.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

__all__ = [
    "EngineError",
    "ShapeError",
    "NonFiniteError",
    "Tensor",
    "tensor",
    "constant",
    "parameter",
    "set_finite_checks",
    "no_grad",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "slice_axis",
    "gather_rows",
    "take_along_last",
    "tsum",
    "tmean",
    "relu",
    "sigmoid",
    "tanh",
    "gelu",
    "layer_norm",
    "softmax",
    "masked_softmax",
    "log_softmax",
    "rotate_pairs",
    "dropout",
    "grads_of",
    "gradient_check",
]


class EngineError(Exception):
    """Base error for the gradient engine."""


class ShapeError(EngineError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(tuple(s)) for s in shapes)}")


class NonFiniteError(EngineError):
    def __init__(self, op: str, where: str = "output"):
        super().__init__(f"{op}: non-finite values in {where}")


_FINITE_CHECKS = True
_GRAD_ENABLED = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf checking; returns the previous setting."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


class no_grad:
    """Context manager: ops inside build no backward closures (inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A node in the computation graph: a numpy array plus tape bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents=(), _backward_fn=None, _op: str = "leaf"):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = self.name or self._op
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse sweep from a scalar loss; fills .grad on the whole graph."""
        if self.data.shape != ():
            raise EngineError(f"backward: loss must be a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            if _FINITE_CHECKS and not np.all(np.isfinite(g)):
                raise NonFiniteError(node._op, "gradient")
            if node._backward_fn is not None:
                node._backward_fn(g)


def tensor(data, dtype=None, requires_grad: bool = False, name: str | None = None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype == np.float64 and dtype is None and not isinstance(data, np.ndarray):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def constant(data, like: Tensor | None = None) -> Tensor:
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(rng: np.random.Generator, shape, std: float = 0.02,
              dtype=np.float32, name: str | None = None) -> Tensor:
    """Trainable leaf: N(0, std^2) init, or zeros/constant via std=0."""
    if std == 0.0:
        data = np.zeros(shape, dtype=dtype)
    else:
        data = rng.normal(0.0, std, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: tuple, op: str, backward_fn) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents,
                      _backward_fn=backward_fn, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data + b  # python scalar: no dtype promotion surprises
        return _make(data, (a,), "add", lambda g: a._accumulate(g))
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), "add", _bw)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _make(a.data - b, (a,), "sub", lambda g: a._accumulate(g))
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), "sub", _bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: a._accumulate(-g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _make(a.data * b, (a,), "mul", lambda g: a._accumulate(g * b))
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), "mul", _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make(data, (a, b), "matmul", _bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), "reshape",
                 lambda g: a._accumulate(g.reshape(orig)))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), "transpose",
                 lambda g: a._accumulate(g.transpose(inv)))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.data.shape
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", orig, shape) from None
    return _make(data, (a,), "broadcast_to",
                 lambda g: a._accumulate(_unbroadcast(g, orig)))


def concat(parts: list[Tensor], axis: int) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(data, tuple(parts), "concat", _bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def _bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _make(a.data[idx].copy(), (a,), "slice", _bw)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise EngineError(
            f"gather: id out of range 0..{table.data.shape[0] - 1}")

    def _bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        table._accumulate(gt)

    return _make(table.data[ids], (table,), "gather", _bw)


def take_along_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row along the last axis (e.g. target log-probs)."""
    idx = np.asarray(idx)
    if idx.shape != a.data.shape[:-1]:
        raise ShapeError("take_along_last", a.shape, idx.shape)
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        a._accumulate(full)

    return _make(data, (a,), "take_along_last", _bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def _bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, shape).astype(a.data.dtype, copy=True))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, shape).copy())

    return _make(data, (a,), "sum", _bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    return _make(data, (a,), "relu",
                 lambda g: a._accumulate(g * (a.data > 0)))


def sigmoid(a: Tensor) -> Tensor:
    s = _sp.expit(a.data)
    return _make(s, (a,), "sigmoid", lambda g: a._accumulate(g * s * (1.0 - s)))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: a._accumulate(g * (1.0 - y * y)))


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU; the erf form keeps finite-difference checks tight."""
    x = a.data
    cdf = 0.5 * (1.0 + _sp.erf(x / _SQRT2))
    data = x * cdf

    def _bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        a._accumulate(g * (cdf + x * pdf))

    return _make(data.astype(x.dtype, copy=False), (a,), "gelu", _bw)


# ---------------------------------------------------------------------------
# normalisation and softmax family
# ---------------------------------------------------------------------------

def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance (no affine part).

    A constant vector maps to exactly zero: x - mean is exactly 0 there.
    """
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    y = xc * inv

    def _bw(g):
        gy = g * inv
        a._accumulate(gy - gy.mean(axis=-1, keepdims=True)
                      - y * inv * (g * y).mean(axis=-1, keepdims=True))

    return _make(y, (a,), "layer_norm", _bw)


def _softmax_data(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    p = _softmax_data(a.data)

    def _bw(g):
        a._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (a,), "softmax", _bw)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def _bw(g):
        p = np.exp(y)
        a._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    return _make(y, (a,), "log_softmax", _bw)


def masked_softmax(a: Tensor, visible: np.ndarray, topk: int = 0) -> Tensor:
    """Softmax over the last axis restricted to `visible` entries.

    Masked (and top-k-dropped) slots come out as exact 0.0 and receive zero
    gradient; the -inf sentinel used internally never escapes. With topk > 0
    only the k largest visible logits per row stay in the softmax, which is
    identical to the dense case whenever k >= number of visible entries.
    Rows with no visible entry are an error.
    """
    vis = np.broadcast_to(np.asarray(visible, dtype=bool), a.data.shape)
    if not vis.any(axis=-1).all():
        raise EngineError("masked_softmax: row with no visible entries")
    z = np.where(vis, a.data, -np.inf)
    if topk and topk < z.shape[-1]:
        # keep exactly k slots per row (deterministic under ties via argpartition)
        sel = np.argpartition(z, -topk, axis=-1)[..., -topk:]
        keep = np.zeros(z.shape, dtype=bool)
        np.put_along_axis(keep, sel, True, axis=-1)
        z = np.where(keep, z, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        a._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (a,), "masked_softmax", _bw)


# ---------------------------------------------------------------------------
# rotation (relative-position encoding) and dropout
# ---------------------------------------------------------------------------

def rotate_pairs(a: Tensor, positions: np.ndarray, base: float = 10000.0) -> Tensor:
    """Rotate coordinate pairs (2i, 2i+1) of the last axis by pos * base^(-2i/d).

    `a` has shape (..., S, d) with d even; `positions` has shape (S,).
    The backward pass applies the inverse rotation (rotations are orthogonal).
    """
    d = a.data.shape[-1]
    if d % 2 != 0:
        raise ShapeError("rotate_pairs", a.shape)
    positions = np.asarray(positions, dtype=a.data.dtype)
    half = d // 2
    freqs = base ** (-2.0 * np.arange(half, dtype=a.data.dtype) / d)
    ang = positions[:, None] * freqs[None, :]  # (S, d/2)
    cos = np.cos(ang).astype(a.data.dtype)
    sin = np.sin(ang).astype(a.data.dtype)
    ev = a.data[..., 0::2]
    od = a.data[..., 1::2]
    out = np.empty_like(a.data)
    out[..., 0::2] = ev * cos - od * sin
    out[..., 1::2] = ev * sin + od * cos

    def _bw(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        back = np.empty_like(g)
        back[..., 0::2] = ge * cos + go * sin
        back[..., 1::2] = -ge * sin + go * cos
        a._accumulate(back)

    return _make(out, (a,), "rotate_pairs", _bw)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p)
    scale = np.asarray(1.0 / (1.0 - p), dtype=a.data.dtype)
    data = a.data * keep * scale
    return _make(data, (a,), "dropout",
                 lambda g: a._accumulate(g * keep * scale))


# ---------------------------------------------------------------------------
# gradient utilities
# ---------------------------------------------------------------------------

def grads_of(loss: Tensor, leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Backward from `loss`; non-participating leaves get exact zeros.

    Leaf gradients are cleared first: leaves persist across training steps
    and must not accumulate gradients from earlier backward passes.
    """
    for t in leaves.values():
        t.grad = None
    loss.backward()
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in leaves.items()}


def gradient_check(fn, leaves: list[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` is a zero-argument callable returning a scalar Tensor built from
    `leaves` (use float64 leaves for tight tolerances). Relative error per
    coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    for t in leaves:
        t.grad = None
    loss = fn()
    if loss.data.shape != ():
        raise EngineError("gradient_check: fn must return a scalar")
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in leaves]
    worst = 0.0
    for t, an in zip(leaves, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = fn().item()
            flat[i] = keep - step
            dn = fn().item()
            flat[i] = keep
            num = (up - dn) / (2.0 * step)
            err = abs(an_flat[i] - num) / max(1.0, abs(an_flat[i]), abs(num))
            worst = max(worst, err)
    return worst
