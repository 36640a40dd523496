"""Reverse-mode autodiff over dense numpy arrays.

Design notes:
  * define-by-run tape: every op records its parents and a VJP closure;
    ``backward`` walks the tape in reverse topological order.
  * float32 is the training dtype, float64 the testing dtype; ops never
    silently change dtype.
  * broadcasting is restricted to the cases the layers actually need
    (bias rows, leading batch axes, singleton expansion); anything else
    raises ``ShapeError`` naming the offending op.
  * ``detach`` is the only sanctioned way to stop gradients.  Ops that
    are genuinely non-differentiable (thresholding, rounding) poison the
    tape: backpropagating through them raises instead of yielding a
    silent zero.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonDifferentiableError",
    "as_tensor",
    "concat",
    "gated_attention",
    "matmul",
    "softmax",
    "layer_norm",
    "sigmoid",
    "relu",
    "gelu",
    "silu",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "mean",
    "tsum",
    "conv2d",
    "upsample2",
    "avg_pool",
    "pad2d",
    "bce_with_logits",
    "l2_norm",
    "inner",
]

LAYER_NORM_EPS = 1e-5

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager: ops built inside record no tape."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


class ShapeError(ValueError):
    """Raised when an op is constructed with inconsistent shapes."""


class NonDifferentiableError(RuntimeError):
    """Raised when gradient flows into an op with no defined derivative."""


def _require_same_dtype(op, *arrays):
    d = arrays[0].dtype
    for a in arrays[1:]:
        if a.dtype != d:
            raise ShapeError(f"{op}: mixed dtypes {d} vs {a.dtype}")


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_ok(sa, sb):
    """Allow suffix alignment with singleton expansion only."""
    for a, b in zip(reversed(sa), reversed(sb)):
        if a != b and a != 1 and b != 1:
            return False
    return True


class Tensor:
    """A dense array plus optional gradient tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, op="leaf", name=None):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self.op = op
        self.name = name

    # -- basic introspection -------------------------------------------------
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

    def __repr__(self):
        tag = f" op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad}{tag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        """New leaf sharing data; gradients never flow past it."""
        return Tensor(self.data, requires_grad=False, op="detach")

    # -- tape ------------------------------------------------------------------
    def backward(self, seed=None):
        """Accumulate gradients of ``self`` into every reachable leaf.

        ``seed`` defaults to ones (scalar outputs expect seed 1).
        Intermediate grads in the reachable subgraph are cleared first,
        so several backward calls over one forward graph stay
        independent; leaves accumulate until the caller zeroes them.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeError(f"backward: seed shape {seed.shape} != output shape {self.data.shape}")
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        for node in topo:
            if node._vjp is not None:
                node.grad = None
        self.grad = seed
        for node in reversed(topo):
            if node._vjp is None:
                continue
            if node.grad is None:
                continue
            node._vjp(node.grad)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        # grads are never mutated in place, so holding a view is safe
        self.grad = g if self.grad is None else self.grad + g

    # -- operators --------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return tslice(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _make(data, parents, vjp, op):
    rg = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, parents=tuple(p for p in parents if p.requires_grad) if rg else (),
                  vjp=vjp if rg else None, op=op)


def poisoned(x, op):
    """Mark an op non-differentiable: backward through it raises."""

    def vjp(g):
        raise NonDifferentiableError(
            f"gradient requested through non-differentiable op '{op}'; detach first")

    return Tensor(np.asarray(x), requires_grad=True, parents=(), vjp=vjp, op=op)


# -- elementwise ----------------------------------------------------------------

def _pair(a, b):
    """Convert operands, letting a Tensor operand pin the scalar's dtype."""
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        return as_tensor(a, b.dtype), b
    a = as_tensor(a)
    return a, as_tensor(b, a.dtype)


def add(a, b):
    a, b = _pair(a, b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not align")
    out = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), vjp, "add")


def sub(a, b):
    a, b = _pair(a, b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not align")
    out = a.data - b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out, (a, b), vjp, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not align")
    out = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), vjp, "mul")


def div(a, b):
    a, b = _pair(a, b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not align")
    out = a.data / b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), vjp, "div")


def power(a, p):
    a = as_tensor(a)
    out = a.data ** p

    def vjp(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _make(out, (a,), vjp, "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        a._accumulate(g * out)

    return _make(out, (a,), vjp, "exp")


def log(a):
    a = as_tensor(a)
    out = np.log(a.data)

    def vjp(g):
        a._accumulate(g / a.data)

    return _make(out, (a,), vjp, "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        a._accumulate(g * 0.5 / out)

    return _make(out, (a,), vjp, "sqrt")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), vjp, "tanh")


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        a._accumulate(g * (a.data > 0))

    return _make(out, (a,), vjp, "relu")


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    out = np.where(a.data >= 0, out, 1.0 - out)

    def vjp(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), vjp, "sigmoid")


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a):
    """tanh-approximated GELU (self-consistent forward/backward)."""
    a = as_tensor(a)
    x = a.data
    inner_ = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner_)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        a._accumulate(g * da)

    return _make(out, (a,), vjp, "gelu")


def silu(a):
    a = as_tensor(a)
    x = a.data
    s = 1.0 / (1.0 + np.exp(-np.abs(x)))
    s = np.where(x >= 0, s, 1.0 - s)
    out = x * s

    def vjp(g):
        a._accumulate(g * (s + x * s * (1.0 - s)))

    return _make(out, (a,), vjp, "silu")


# -- reductions -------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).astype(a.dtype, copy=True))

    return _make(np.asarray(out), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size if axis is None else a.shape[axis] if isinstance(axis, int) else np.prod([a.shape[i] for i in axis])

    def vjp(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=True))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg / n, a.shape).astype(a.dtype, copy=True))

    return _make(np.asarray(out), (a,), vjp, "mean")


def inner(a, b):
    """Inner product of identically shaped tensors -> scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"inner: shapes {a.shape} and {b.shape} differ")
    out = np.asarray((a.data * b.data).sum())

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(out, (a, b), vjp, "inner")


def l2_norm(a, eps=0.0):
    """Euclidean norm of the flattened tensor (eps guards the zero kink)."""
    a = as_tensor(a)
    sq = float((a.data * a.data).sum())
    out = np.asarray(np.sqrt(sq + eps))

    def vjp(g):
        denom = max(float(out), 1e-30)
        a._accumulate(g * a.data / denom)

    return _make(out, (a,), vjp, "l2_norm")


# -- shape ops ----------------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out, (a,), vjp, "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)

    def vjp(g):
        inv = None if axes is None else np.argsort(axes)
        a._accumulate(np.transpose(g, inv))

    return _make(out, (a,), vjp, "transpose")


def tslice(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a._accumulate(buf)

    return _make(out, (a,), vjp, "slice")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        s[axis] = ref[axis]
        if s != ref:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(out, tuple(tensors), vjp, "concat")


# -- linear algebra -------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_same_dtype("matmul", a.data, b.data)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dims {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.outer(g, b.data)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out, (a, b), vjp, "matmul")


def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate(out * (g - dot))

    return _make(out, (a,), vjp, "softmax")


def layer_norm(a, gamma=None, beta=None, eps=LAYER_NORM_EPS):
    """Normalize over the last axis; eps keeps constant inputs well-defined."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = a.shape[-1]
    g_t = as_tensor(gamma, a.dtype) if gamma is not None else None
    b_t = as_tensor(beta, a.dtype) if beta is not None else None
    out = xhat
    if g_t is not None:
        out = out * g_t.data
    if b_t is not None:
        out = out + b_t.data

    parents = [a] + [t for t in (g_t, b_t) if t is not None]

    def vjp(g):
        gx = g * (g_t.data if g_t is not None else 1.0)
        if a.requires_grad:
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gx - m1 - xhat * m2))
        if g_t is not None and g_t.requires_grad:
            g_t._accumulate(_unbroadcast(g * xhat, g_t.shape))
        if b_t is not None and b_t.requires_grad:
            b_t._accumulate(_unbroadcast(g, b_t.shape))

    return _make(out, tuple(parents), vjp, "layer_norm")


def gated_attention(q, k, v, logit_gate=None, attn_bias=None):
    """softmax((Q K^T / sqrt(d_k)) * gate + bias) V.

    q: [..., n_q, d_k], k: [..., n_k, d_k], v: [..., n_k, d_v];
    gate broadcastable to [..., n_q, n_k].  An all-ones gate reduces to
    standard scaled dot-product attention; softmax runs after gating so
    attention rows always normalize.  ``attn_bias`` is an additive
    pre-softmax term (large negatives mask padded keys).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"gated_attention: d_k mismatch {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"gated_attention: n_k mismatch {k.shape} vs {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = matmul(q, transpose(k, _swap_last(k.ndim))) * scale
    if logit_gate is not None:
        logits = mul(logits, logit_gate)
    if attn_bias is not None:
        logits = add(logits, attn_bias)
    attn = softmax(logits, axis=-1)
    return matmul(attn, v)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# -- image ops -----------------------------------------------------------------------

def pad2d(a, p):
    """Zero-pad spatial dims of [B, H, W, C]."""
    a = as_tensor(a)
    out = np.pad(a.data, ((0, 0), (p, p), (p, p), (0, 0)))

    def vjp(g):
        a._accumulate(g[:, p:-p or None, p:-p or None, :])

    return _make(out, (a,), vjp, "pad2d")


def conv2d(x, w, stride=1, padding=0):
    """2-D convolution, x: [B, H, W, Cin], w: [kh, kw, Cin, Cout].

    Implemented as kh*kw strided-slice matmuls, which keeps both the
    forward and backward passes BLAS-bound.
    """
    x, w = as_tensor(x), as_tensor(w)
    _require_same_dtype("conv2d", x.data, w.data)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input/kernel, got {x.shape}, {w.shape}")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: channels {x.shape[3]} != kernel Cin {cin}")
    b, h, ww_, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((b * oh * ow, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
            out += patch.reshape(-1, cin) @ w.data[i, j]
    out = out.reshape(b, oh, ow, cout)

    def vjp(g):
        gflat = g.reshape(-1, cout)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
                    gw[i, j] = patch.reshape(-1, cin).T @ gflat
            w._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gpatch = (gflat @ w.data[i, j].T).reshape(b, oh, ow, cin)
                    gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += gpatch
            if padding:
                gxp = gxp[:, padding:-padding, padding:-padding, :]
            x._accumulate(gxp)

    return _make(out, (x, w), vjp, "conv2d")


def upsample2(a):
    """Nearest-neighbour 2x upsampling of [B, H, W, C]."""
    a = as_tensor(a)
    out = a.data.repeat(2, axis=1).repeat(2, axis=2)

    def vjp(g):
        b, h2, w2, c = g.shape
        a._accumulate(g.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)))

    return _make(out, (a,), vjp, "upsample2")


def avg_pool(a, k):
    """k x k average pooling of [B, H, W, C] (H, W divisible by k)."""
    a = as_tensor(a)
    b, h, w, c = a.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool: {h}x{w} not divisible by {k}")
    out = a.data.reshape(b, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def vjp(g):
        gg = g[:, :, None, :, None, :] / (k * k)
        a._accumulate(np.broadcast_to(gg, (b, h // k, k, w // k, k, c)).reshape(b, h, w, c).astype(a.dtype, copy=True))

    return _make(out, (a,), vjp, "avg_pool")


def bce_with_logits(logits, targets):
    """Numerically stable binary cross entropy from logits (elementwise)."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=logits.dtype)
    x = logits.data
    out = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        s = 1.0 / (1.0 + np.exp(-np.abs(x)))
        s = np.where(x >= 0, s, 1.0 - s)
        logits._accumulate(g * (s - t))

    return _make(out, (logits,), vjp, "bce_with_logits")
