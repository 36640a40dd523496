"""Trainable layers on top of the tensor tape.

Parameters are created from a caller-supplied ``numpy.random.Generator``
(uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]), so a model built twice
from the same seed is bit-identical.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Parameter container with deterministic traversal order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def parameters(self, prefix=""):
        """Yield (name, tensor) pairs, insertion-ordered and stable."""
        for n, p in self._params.items():
            yield (f"{prefix}{n}", p)
        for n, c in self._children.items():
            yield from c.parameters(prefix=f"{prefix}{n}.")

    def param_dict(self):
        return dict(self.parameters())

    def state_arrays(self):
        return {n: p.data for n, p in self.parameters()}

    def load_state(self, arrays, strict=True):
        own = dict(self.parameters())
        for n, p in own.items():
            if n in arrays:
                a = np.asarray(arrays[n], dtype=p.dtype)
                if a.shape != p.shape:
                    raise ValueError(f"load_state: shape mismatch for {n}: {a.shape} vs {p.shape}")
                p.data = a
            elif strict:
                raise KeyError(f"load_state: missing array {n}")

    def set_requires_grad(self, flag):
        for _, p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self):
        for _, p in self.parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        self.mods = list(mods)
        for i, m in enumerate(mods):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self.mods)

    def __getitem__(self, i):
        return self.mods[i]

    def __len__(self):
        return len(self.mods)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = uniform_init(rng, (d_in, d_out), d_in, dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        return y if self.b is None else T.add(y, self.b)


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Linear stack with an activation between layers."""

    def __init__(self, dims, rng, dtype=np.float32, act=T.gelu, final_act=None):
        super().__init__()
        self.layers = ModuleList([Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])])
        self.act = act
        self.final_act = final_act

    def __call__(self, x):
        n = len(self.layers)
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < n - 1:
                x = self.act(x)
            elif self.final_act is not None:
                x = self.final_act(x)
        return x


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3, stride=1, padding=None, dtype=np.float32, zero_init=False):
        super().__init__()
        fan_in = k * k * c_in
        if zero_init:
            w = np.zeros((k, k, c_in, c_out), dtype=dtype)
        else:
            w = uniform_init(rng, (k, k, c_in, c_out), fan_in, dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = (k // 2) if padding is None else padding

    def __call__(self, x):
        return T.add(T.conv2d(x, self.w, stride=self.stride, padding=self.padding), self.b)


class MultiHeadAttention(Module):
    """Cross- or self-attention with an optional multiplicative logit gate.

    Shapes: query [B, n_q, d_model], context [B, n_k, d_ctx].  The gate
    (if given) broadcasts to [B, heads, n_q, n_k] and multiplies the
    pre-softmax logits, matching `gated_attention`.
    """

    def __init__(self, d_model, rng, heads=4, d_ctx=None, dtype=np.float32, zero_out=False, zero_v=False):
        super().__init__()
        d_ctx = d_model if d_ctx is None else d_ctx
        self.heads = heads
        self.d_head = d_model // heads
        assert self.d_head * heads == d_model
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_ctx, d_model, rng, dtype)
        self.v = Linear(d_ctx, d_model, rng, dtype, zero_init=zero_v)
        self.out = Linear(d_model, d_model, rng, dtype, zero_init=zero_out)

    def _split(self, x, b, n):
        return T.transpose(T.reshape(x, (b, n, self.heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, query, context=None, logit_gate=None, attn_bias=None):
        context = query if context is None else context
        b, n_q = query.shape[0], query.shape[1]
        n_k = context.shape[1]
        q = self._split(self.q(query), b, n_q)
        k = self._split(self.k(context), b, n_k)
        v = self._split(self.v(context), b, n_k)
        att = T.gated_attention(q, k, v, logit_gate, attn_bias)  # [B, H, n_q, d_head]
        merged = T.reshape(T.transpose(att, (0, 2, 1, 3)), (b, n_q, self.heads * self.d_head))
        return self.out(merged)


def timestep_embedding(t, dim, dtype=np.float32):
    """Sinusoidal embedding of integer timesteps, [B] -> [B, dim]."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)
    return Tensor(emb)
