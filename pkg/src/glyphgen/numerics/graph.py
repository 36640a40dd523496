"""Functional graph surface over the tape.

A Graph wraps a forward function built from tape primitives.  The node
list and topological order live implicitly in the recorded tape; shape
validation happens when each op is constructed, which for define-by-run
is graph construction time.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Graph:
    def __init__(self, fn, input_names, output_names=("out",)):
        self.fn = fn
        self.input_names = tuple(input_names)
        self.output_names = tuple(output_names)

    def _bind(self, inputs, requires_grad):
        missing = [n for n in self.input_names if n not in inputs]
        if missing:
            raise KeyError(f"unbound graph inputs: {missing}")
        return {
            n: v if isinstance(v, Tensor) else Tensor(np.asarray(v), requires_grad=requires_grad)
            for n, v in inputs.items()
        }


def evaluate(graph, inputs):
    """Run the graph; same inputs and parameters give bit-identical outputs."""
    bound = graph._bind(inputs, requires_grad=False)
    outs = graph.fn(bound)
    outs = outs if isinstance(outs, (list, tuple)) else (outs,)
    return {n: o for n, o in zip(graph.output_names, outs)}


def gradient(graph, inputs, seed, output=None):
    """Reverse-mode gradients of one output w.r.t. every requires_grad input."""
    bound = {}
    for n, v in inputs.items():
        if isinstance(v, Tensor):
            bound[n] = v
        else:
            bound[n] = Tensor(np.asarray(v), requires_grad=True)
    missing = [n for n in graph.input_names if n not in bound]
    if missing:
        raise KeyError(f"unbound graph inputs: {missing}")
    outs = graph.fn(bound)
    outs = outs if isinstance(outs, (list, tuple)) else (outs,)
    picked = outs[0] if output is None else outs[graph.output_names.index(output)]
    picked.backward(np.asarray(seed, dtype=picked.dtype))
    return {n: t.grad for n, t in bound.items() if t.grad is not None}
