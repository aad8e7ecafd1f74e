"""Random small problem instances and the per-layer gradient suite.

Each check builds a scalar loss from one layer (a random linear functional of
its output, or the loss itself) and compares backward() with central finite
differences for every differentiable input.
"""
from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from .graphs import Graph, GraphBatch, batch_graphs, undirected
from .infomax import EdgeDecoder, li_loss
from .numerics import ParameterStore, Tensor, check_gradients
from .numerics import tensor as T
from .objectives import graph_objective, node_objective
from .propagation import (MLP, EdgeNetwork, GruCell, gcn_step, gru_update, input_embed,
                          mpnn_message, rgcn_step)
from .readout import Set2Set, output_head, set2set_readout


def random_graph(rng: np.random.Generator, n: int, d_x: int = 3, d_e: int = 3,
                 num_relations: int = 2, edge_prob: float = 0.5, label_dim: int | None = 1,
                 node_label_dim: int | None = None) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < edge_prob
    pairs = np.stack([iu[keep], ju[keep]], axis=1)
    rel = rng.integers(0, num_relations, size=len(pairs))
    ef = rng.normal(size=(len(pairs), d_e))
    labels = {}
    if label_dim:
        labels["graph_label"] = rng.normal(size=label_dim)
    if node_label_dim:
        labels["node_labels"] = rng.normal(size=(n, node_label_dim))
    return undirected(rng.normal(size=(n, d_x)), pairs, ef, rel, **labels)


def random_batch(rng: np.random.Generator, sizes=(4, 3), **kw) -> GraphBatch:
    return batch_graphs([random_graph(rng, n, **kw) for n in sizes])


def _rand(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _functional(rng, out_shape) -> Tensor:
    return Tensor(rng.normal(size=out_shape))


def _mlp(rng, sizes, store: ParameterStore | None = None, prefix="mlp", seed=0) -> MLP:
    store = store or ParameterStore()
    mlp = MLP.create(store, prefix, sizes, seed)
    for w, b in mlp.layers:  # non-zero biases so every parameter is exercised
        b.data = rng.normal(scale=0.3, size=b.shape)
    return mlp


def _mlp_tensors(mlp: MLP, prefix: str) -> dict[str, Tensor]:
    out = {}
    for i, (w, b) in enumerate(mlp.layers):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def check_input_embed(rng) -> dict[str, float]:
    x = _rand(rng, 5, 3)
    w, b = _rand(rng, 3, 4), _rand(rng, 4)
    c = _functional(rng, (5, 4))
    return check_gradients(lambda: T.sum_(T.mul(T.tanh(input_embed(x, w, b)), c)),
                           {"x": x, "weight": w, "bias": b})


def check_gcn_step(rng) -> dict[str, float]:
    g = random_batch(rng, (4, 3))
    d = 3
    h, w0, w1 = _rand(rng, g.num_nodes, d), _rand(rng, d, d), _rand(rng, d, d)
    c = _functional(rng, (g.num_nodes, d))
    return check_gradients(lambda: T.sum_(T.mul(gcn_step(h, g, w0, w1), c)), {"h": h, "w0": w0, "w1": w1})


def check_rgcn_step(rng) -> dict[str, float]:
    g = random_batch(rng, (5, 3), num_relations=2, edge_prob=0.7)
    d = 3
    h, w0 = _rand(rng, g.num_nodes, d), _rand(rng, d, d)
    wr = [_rand(rng, d, d) for _ in range(2)]
    c = _functional(rng, (g.num_nodes, d))
    return check_gradients(lambda: T.sum_(T.mul(rgcn_step(h, g, wr, w0), c)),
                           {"h": h, "w0": w0, "w_rel0": wr[0], "w_rel1": wr[1]})


def check_edge_network(rng) -> dict[str, float]:
    d, d_e = 3, 2
    f = EdgeNetwork(_mlp(rng, [d_e, 4, d * d]), d)
    e = _rand(rng, 6, d_e)
    c = _functional(rng, (6, d, d))
    return check_gradients(lambda: T.sum_(T.mul(f(e), c)), {"e": e, **_mlp_tensors(f.mlp, "f")})


def check_mpnn_message(rng) -> dict[str, float]:
    g = random_batch(rng, (4, 3), d_e=2)
    d = 3
    f = EdgeNetwork(_mlp(rng, [2, 4, d * d]), d)
    h, w0 = _rand(rng, g.num_nodes, d), _rand(rng, d, d)
    e = Tensor(g.edge_features)
    c = _functional(rng, (g.num_nodes, d))
    return check_gradients(lambda: T.sum_(T.mul(mpnn_message(h, g, f(e), w0), c)),
                           {"h": h, "w0": w0, **_mlp_tensors(f.mlp, "f")})


def random_gru(rng, d: int) -> GruCell:
    kw = {}
    for gate in GruCell.GATES:
        kw[f"w_{gate}"] = _rand(rng, d, d, scale=0.7)
        kw[f"u_{gate}"] = _rand(rng, d, d, scale=0.7)
        kw[f"b_{gate}"] = _rand(rng, d, scale=0.3)
    return GruCell(**kw)


def check_gru_update(rng) -> dict[str, float]:
    d = 3
    cell = random_gru(rng, d)
    h, m = _rand(rng, 4, d), _rand(rng, 4, d)
    c = _functional(rng, (4, d))
    tensors = {"h": h, "m": m, **{k: v for k, v in vars(cell).items()}}
    return check_gradients(lambda: T.sum_(T.mul(gru_update(cell, h, m), c)), tensors)


def random_set2set(rng, d: int, steps: int) -> Set2Set:
    w = {}
    for gate in Set2Set.GATES:
        w[f"w_{gate}"] = _rand(rng, 2 * d, d, scale=0.7)
        w[f"u_{gate}"] = _rand(rng, d, d, scale=0.7)
        w[f"b_{gate}"] = _rand(rng, d, scale=0.3)
    return Set2Set(w, d, steps)


def check_set2set(rng) -> dict[str, float]:
    d = 3
    s2s = random_set2set(rng, d, 3)
    node_graph = np.array([0, 0, 0, 1, 1, 2])
    x = _rand(rng, 6, d)
    c = _functional(rng, (3, 2 * d))
    return check_gradients(lambda: T.sum_(T.mul(set2set_readout(s2s, x, node_graph, 3), c)),
                           {"x": x, **s2s.weights})


def check_output_head(rng) -> dict[str, float]:
    head = _mlp(rng, [4, 5, 2])
    r = _rand(rng, 3, 4)
    c = _functional(rng, (3, 2))
    return check_gradients(lambda: T.sum_(T.mul(output_head(r, head), c)), {"r": r, **_mlp_tensors(head, "head")})


def check_li_loss(rng) -> dict[str, float]:
    d, d_e, m = 2, 3, 5
    f = EdgeNetwork(_mlp(rng, [d_e, 4, d * d], prefix="f"), d)
    dec = EdgeDecoder(_mlp(rng, [d * d, 3, d_e], prefix="g"))
    e = Tensor(rng.normal(size=(m, d_e)))
    return check_gradients(lambda: li_loss(dec, e, f.flat(e), 0.7).mean_li,
                           {**_mlp_tensors(f.mlp, "f"), **_mlp_tensors(dec.mlp, "g")})


def _objective_check(rng, node_level: bool) -> dict[str, float]:
    d, d_e = 2, 2
    sizes = (4,) if node_level else (3, 4)
    g = random_batch(rng, sizes, d_x=2, d_e=d_e, edge_prob=0.8,
                     label_dim=None if node_level else 1, node_label_dim=1 if node_level else None)
    f = EdgeNetwork(_mlp(rng, [d_e, 3, d * d], prefix="f"), d)
    dec = EdgeDecoder(_mlp(rng, [d * d, 3, d_e], prefix="g"))
    cell = random_gru(rng, d)
    w0 = _rand(rng, d, d)
    head = _mlp(rng, [d, 3, 1], prefix="head")
    e = Tensor(g.edge_features)

    def loss():
        w_flat = f.flat(e)
        h = Tensor(g.node_features)
        m = mpnn_message(h, g, T.reshape(w_flat, (g.num_edges, d, d)), w0)
        h = gru_update(cell, h, m)
        li = li_loss(dec, e, w_flat, 1.0)
        if node_level:
            return node_objective("mse", output_head(h, head), g.node_labels, li, 1, g.num_edges)[0]
        r = T.scatter_add_rows(h, g.node_graph, g.num_graphs)
        return graph_objective("mse", output_head(r, head), g.graph_labels, li, g.num_nodes, g.num_edges)[0]

    tensors = {"w0": w0, **_mlp_tensors(f.mlp, "f"), **_mlp_tensors(dec.mlp, "g"),
               **_mlp_tensors(head, "head"), **{f"gru.{k}": v for k, v in vars(cell).items()}}
    return check_gradients(loss, tensors)


def check_graph_objective(rng) -> dict[str, float]:
    return _objective_check(rng, node_level=False)


def check_node_objective(rng) -> dict[str, float]:
    return _objective_check(rng, node_level=True)


GRADIENT_CHECKS: dict[str, Callable[[np.random.Generator], dict[str, float]]] = {
    "input_embed": check_input_embed,
    "gcn_step": check_gcn_step,
    "rgcn_step": check_rgcn_step,
    "edge_network_forward": check_edge_network,
    "mpnn_message": check_mpnn_message,
    "gru_update": check_gru_update,
    "set2set_readout": check_set2set,
    "output_head": check_output_head,
    "li_loss": check_li_loss,
    "graph_objective": check_graph_objective,
    "node_objective": check_node_objective,
}


def gradient_suite(seed: int) -> dict[str, float]:
    """Max relative error (backward vs finite differences) per layer for one seed."""
    out = {}
    for name, check in GRADIENT_CHECKS.items():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        out[name] = max(check(rng).values())
    return out
