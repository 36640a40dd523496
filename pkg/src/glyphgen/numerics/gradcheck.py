"""Finite-difference verification of reverse-mode gradients.

A check draws a random probe direction ``u`` per input and a random
seed ``s`` on the output, then compares

    central difference of  s . f(x + eps*u)      (two forward passes)
    against                sum_i  (df/dx_i . u_i)  from the tape.

This keeps every check O(2 forward + 1 backward) regardless of input
size.  Checks run in float64; tolerances are meaningless below that.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_check(fn, inputs, eps=1e-5, seed=0, trials=1):
    """Worst relative error between FD and reverse-mode directional grads.

    ``fn`` maps a dict of Tensors to a Tensor (or list of Tensors);
    ``inputs`` is that dict, all float64.  Never raises on disagreement;
    returns the error for the caller to judge.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        dirs = {k: rng.normal(size=v.shape) for k, v in inputs.items()}
        for d in dirs.values():
            d /= max(np.linalg.norm(d), 1e-12)

        def run(shift):
            xs = {
                k: Tensor(v.data + shift * dirs[k], requires_grad=True)
                for k, v in inputs.items()
            }
            out = fn(xs)
            outs = out if isinstance(out, (list, tuple)) else [out]
            return xs, outs

        _, outs0 = run(0.0)
        seeds = [rng.normal(size=o.shape) for o in outs0]

        def project(outs):
            return sum(float((s * o.data).sum()) for s, o in zip(seeds, outs))

        _, outs_p = run(+eps)
        _, outs_m = run(-eps)
        fd = (project(outs_p) - project(outs_m)) / (2 * eps)

        xs, outs = run(0.0)
        for s, o in zip(seeds, outs):
            if o.requires_grad:
                o.backward(s)
        analytic = 0.0
        for k, x in xs.items():
            if x.grad is not None:
                analytic += float((x.grad * dirs[k]).sum())
        denom = max(abs(fd), abs(analytic), 1e-8)
        worst = max(worst, abs(fd - analytic) / denom)
    return worst


_REGISTRY: dict[str, object] = {}


def register_block(name, factory):
    """Register a checkable block: factory() -> (fn, inputs) in float64."""
    _REGISTRY[name] = factory


def registered_blocks():
    return dict(_REGISTRY)


def check_registered(points=5, eps=1e-5, base_seed=0):
    """Run every registered block at ``points`` random probe points."""
    report = {}
    for name, factory in _REGISTRY.items():
        worst = 0.0
        for p in range(points):
            fn, inputs = factory(base_seed + 7919 * p)
            worst = max(worst, finite_difference_check(fn, inputs, eps=eps, seed=base_seed + p))
        report[name] = worst
    return report
