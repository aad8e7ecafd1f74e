"""Graph-level readouts and the prediction head.

Set2set controller (one LSTM cell, zero initial state and zero initial
query ``q*_0``), repeated ``steps`` times per graph::

    i = sigm(q* W_i + h U_i + b_i)      f = sigm(q* W_f + h U_f + b_f)
    o = sigm(q* W_o + h U_o + b_o)      g = tanh(q* W_g + h U_g + b_g)
    c = f * c + i * g                   h = o * tanh(c)          (q = h)
    a_v = softmax_{v in graph}(<x_v, q>)
    r = sum_v a_v x_v                   q* = [q, r]

The output is the final ``q*`` (width 2d).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParameterStore, Tensor
from .numerics import tensor as T
from .propagation import MLP


def sum_readout(h: Tensor, node_graph: np.ndarray, num_graphs: int) -> Tensor:
    return T.scatter_add_rows(h, node_graph, num_graphs)


@dataclass
class Set2Set:
    weights: dict[str, Tensor]
    hidden: int
    steps: int = 3

    GATES = ("i", "f", "o", "g")

    @classmethod
    def create(cls, store: ParameterStore, d: int, steps: int, seed: int,
               prefix: str = "set2set") -> "Set2Set":
        w = {}
        for gate in cls.GATES:
            w[f"w_{gate}"] = store.glorot(f"{prefix}.w_{gate}", 2 * d, d, seed)
            w[f"u_{gate}"] = store.glorot(f"{prefix}.u_{gate}", d, d, seed)
            w[f"b_{gate}"] = store.zeros(f"{prefix}.b_{gate}", d)
        return cls(w, d, steps)

    @classmethod
    def from_store(cls, store: ParameterStore, d: int, steps: int, prefix: str = "set2set") -> "Set2Set":
        w = {f"{k}_{g}": store[f"{prefix}.{k}_{g}"] for g in cls.GATES for k in ("w", "u", "b")}
        return cls(w, d, steps)

    def _gate(self, gate: str, x: Tensor, h: Tensor) -> Tensor:
        w = self.weights
        return T.add_bias(T.matmul(x, w[f"w_{gate}"]) + T.matmul(h, w[f"u_{gate}"]), w[f"b_{gate}"])


def set2set_readout(s2s: Set2Set, x: Tensor, node_graph: np.ndarray, num_graphs: int,
                    attention_log: list | None = None) -> Tensor:
    """Attention readout of width 2d; ``attention_log`` collects per-step weights."""
    if s2s.steps < 1:
        raise ValueError("set2set needs at least one processing step")
    d = s2s.hidden
    q_star = Tensor(np.zeros((num_graphs, 2 * d)))
    h = Tensor(np.zeros((num_graphs, d)))
    c = Tensor(np.zeros((num_graphs, d)))
    for _ in range(s2s.steps):
        i = T.sigmoid(s2s._gate("i", q_star, h))
        f = T.sigmoid(s2s._gate("f", q_star, h))
        o = T.sigmoid(s2s._gate("o", q_star, h))
        g = T.tanh(s2s._gate("g", q_star, h))
        c = T.mul(f, c) + T.mul(i, g)
        h = T.mul(o, T.tanh(c))
        logits = T.sum_(T.mul(x, T.gather_rows(h, node_graph)), axis=1)
        a = T.segment_softmax(logits, node_graph, num_graphs)
        if attention_log is not None:
            attention_log.append(a.data.copy())
        r = T.scatter_add_rows(T.mul(x, T.reshape(a, (-1, 1))), node_graph, num_graphs)
        q_star = T.concat([h, r], axis=1)
    return q_star


def create_head(store: ParameterStore, in_width: int, hidden: int, out_width: int, seed: int,
                prefix: str = "head") -> MLP:
    return MLP.create(store, prefix, [in_width, hidden, out_width], seed)


def output_head(r: Tensor, head: MLP) -> Tensor:
    """Two-layer MLP from the readout (or node states) to the target arity."""
    return head(r)
