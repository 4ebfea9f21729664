"""Dense tensors (row-major float32) with a taped reverse-mode autodiff.

Every op records a closure that scatters the output gradient back into its
parents. Training runs in float32 throughout; tests may switch the engine to
float64 via `default_dtype` so finite-difference oracles are not drowned in
rounding noise.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

from sptk.errors import ContractError, DimensionError, FiniteError, RangeError

_DEFAULT_DTYPE = np.float32
_DEBUG_FINITE = False

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_debug_finite(flag: bool) -> None:
    """Globally enable per-op NaN/Inf checking (slow; debugging only)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(flag)


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype newly created tensors use."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


class Tensor:
    """A dense array plus an optional gradient accumulator of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bw=None):
        if isinstance(data, np.ndarray) and data.dtype == _DEFAULT_DTYPE:
            arr = np.ascontiguousarray(data)
        else:
            arr = np.ascontiguousarray(np.asarray(data, dtype=_DEFAULT_DTYPE))
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bw = _bw
        if _DEBUG_FINITE and not np.all(np.isfinite(arr)):
            raise FiniteError("tensor holds non-finite values")

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped as non-grad tensors
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, parents, bw) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = req
    out._parents = tuple(parents) if req else ()
    out._bw = bw if req else None
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FiniteError("op produced non-finite values")
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    out_data = a.data * s

    def bw(g):
        a.accum_grad(g * s)

    return _make(out_data, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bw(g):
        a.accum_grad(g.reshape(a.data.shape))

    return _make(out_data, (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def bw(g):
        a.accum_grad(g.transpose(inv))

    return _make(out_data, (a,), bw)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t.accum_grad(p)

    return _make(out_data, tensors, bw)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor; gradient scatter-adds them back."""
    if a.data.ndim != 2:
        raise DimensionError("gather_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise RangeError("row index out of range")
    out_data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accum_grad(full)

    return _make(out_data, (a,), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """table (V, H), integer ids of any shape -> ids.shape + (H,)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise RangeError("embedding id out of range")
    out_data = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table.accum_grad(full)

    return _make(out_data, (table,), bw)


def tsum(a: Tensor, axis=None) -> Tensor:
    out_data = np.asarray(a.data.sum(axis=axis), dtype=a.data.dtype)

    def bw(g):
        if axis is None:
            a.accum_grad(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))
        else:
            a.accum_grad(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).astype(a.data.dtype))

    return _make(out_data, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (..., k, n); leading dims must match exactly."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul expects tensors of rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise DimensionError(
            f"leading dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a.accum_grad(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b.accum_grad(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out_data, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for rank {x.data.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        x.accum_grad(p * (g - dot))

    return _make(p, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    n = x.data.shape[-1]

    def bw(g):
        if gain.requires_grad:
            gain.accum_grad(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias.accum_grad(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gh = g * gain.data
            x.accum_grad(
                inv * (gh - gh.mean(axis=-1, keepdims=True)
                       - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            )

    return _make(out_data, (x, gain, bias), bw)


def gelu(x: Tensor) -> Tensor:
    """Exact erf formulation: 0.5 x (1 + erf(x / sqrt(2)))."""
    dt = x.data.dtype.type
    cdf = dt(0.5) * (dt(1.0) + erf(x.data * dt(_INV_SQRT2)))
    out_data = x.data * cdf

    def bw(g):
        pdf = dt(_INV_SQRT2PI) * np.exp(dt(-0.5) * x.data * x.data)
        x.accum_grad(g * (cdf + x.data * pdf))

    return _make(out_data, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    s = np.where(
        x.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x.data))),
        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))),
    ).astype(x.data.dtype)

    def bw(g):
        x.accum_grad(g * s * (1.0 - s))

    return _make(s, (x,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    draw_dtype = np.float32 if x.data.dtype == np.float32 else np.float64
    keep = rng.random(x.data.shape, dtype=draw_dtype) >= rate
    scaled = np.where(keep, x.data.dtype.type(1.0 / (1.0 - rate)), x.data.dtype.type(0.0))
    out_data = x.data * scaled

    def bw(g):
        x.accum_grad(g * scaled)

    return _make(out_data, (x,), bw)


# ---------------------------------------------------------------------------
# losses (scalar means over the non-ignored positions)
# ---------------------------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood; logits (N, C), integer targets (N,).

    `weights`, when given, re-weights positions (0 drops a position); the
    loss is the weighted mean.
    """
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy expects (N, C) logits")
    targets = np.asarray(targets)
    if targets.shape != (logits.data.shape[0],):
        raise DimensionError("targets must be a vector matching the batch")
    n, c = logits.data.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise RangeError("target id >= class count")
    if weights is None:
        w = np.ones(n, dtype=logits.data.dtype)
    else:
        w = np.asarray(weights, dtype=logits.data.dtype)
    wsum = w.sum()
    if wsum <= 0:
        raise ContractError("cross_entropy weights sum to zero")
    logp = _log_softmax(logits.data)
    nll = -logp[np.arange(n), targets]
    out_data = np.asarray((nll * w).sum() / wsum, dtype=logits.data.dtype)

    def bw(g):
        p = np.exp(logp)
        grad = p
        grad[np.arange(n), targets] -= 1.0
        grad *= (w / wsum)[:, None]
        logits.accum_grad(grad * g)

    return _make(out_data, (logits,), bw)


def binary_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean sigmoid BCE from logits; targets in [0, 1], same shape."""
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.data.shape:
        raise DimensionError("targets must match logits shape")
    if targets.size and (targets.min() < 0 or targets.max() > 1):
        raise RangeError("targets must lie in [0, 1]")
    if weights is None:
        w = np.ones_like(logits.data)
    else:
        w = np.asarray(weights, dtype=logits.data.dtype)
    wsum = w.sum()
    if wsum <= 0:
        raise ContractError("binary_cross_entropy weights sum to zero")
    x = logits.data
    # stable: max(x,0) - x*t + log1p(exp(-|x|))
    per = np.maximum(x, 0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    out_data = np.asarray((per * w).sum() / wsum, dtype=x.dtype)

    def bw(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        logits.accum_grad(((s - targets) * w / wsum) * g)

    return _make(out_data, (logits,), bw)


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise DimensionError("mse target must match prediction shape")
    diff = pred.data - target
    out_data = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def bw(g):
        pred.accum_grad((2.0 / diff.size) * diff * g)

    return _make(out_data, (pred,), bw)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from `loss`.

    Repeated calls without zeroing accumulate into leaf gradients.
    """
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    # reset interior accumulators so a second call re-derives them cleanly
    for node in topo:
        if node._parents:
            node.grad = None
    loss.accum_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)
