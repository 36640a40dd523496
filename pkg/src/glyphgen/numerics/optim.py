"""Adam with bias-corrected per-parameter moment estimates."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)  # name -> Tensor
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, grads=None):
        """Apply one update from ``grads`` (name -> array) or tensor .grad."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for n, p in self.params.items():
            g = grads.get(n) if grads is not None else p.grad
            if g is None:
                continue
            g = g.astype(p.dtype, copy=False)
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            mhat = self.m[n] / c1
            vhat = self.v[n] / c2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self, prefix="opt."):
        out = {prefix + "step": np.array([self.step_count], dtype=np.float32)}
        for n in self.params:
            out[prefix + "m." + n] = self.m[n]
            out[prefix + "v." + n] = self.v[n]
        return out

    def load_state(self, arrays, prefix="opt."):
        self.step_count = int(round(float(arrays[prefix + "step"][0])))
        for n in self.params:
            self.m[n] = np.array(arrays[prefix + "m." + n], dtype=self.params[n].dtype)
            self.v[n] = np.array(arrays[prefix + "v." + n], dtype=self.params[n].dtype)
