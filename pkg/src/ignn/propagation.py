"""Node-state propagation: GCN, RGCN and edge-conditioned MPNN with a GRU update.

All matrices act on row vectors (``h @ W``).  The edge network is the one
exception: it emits per-edge matrices in the column convention, so a message
is ``W_vw h_w`` computed with ``bmv``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import GraphBatch
from .numerics import ParameterStore, Tensor
from .numerics import tensor as T

SCHEMES = ("gcn", "rgcn", "mpnn", "ignn")


@dataclass
class PropagationConfig:
    scheme: str = "ignn"
    num_layers: int = 3
    hidden: int = 64
    num_relations: int = 4
    edge_hidden: tuple[int, ...] = (128,)
    activation: str = "relu"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        self.edge_hidden = tuple(self.edge_hidden)

    @property
    def uses_edge_network(self) -> bool:
        return self.scheme in ("mpnn", "ignn")


@dataclass
class MLP:
    """Dense layers with a hidden activation and a linear output layer."""

    layers: list[tuple[Tensor, Tensor]]
    activation: str = "relu"

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, sizes: list[int], seed: int,
               activation: str = "relu") -> "MLP":
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append((store.glorot(f"{prefix}.layer{i}.weight", a, b, seed),
                           store.zeros(f"{prefix}.layer{i}.bias", b)))
        return cls(layers, activation)

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str, activation: str = "relu") -> "MLP":
        layers = []
        i = 0
        while f"{prefix}.layer{i}.weight" in store:
            layers.append((store[f"{prefix}.layer{i}.weight"], store[f"{prefix}.layer{i}.bias"]))
            i += 1
        return cls(layers, activation)

    def __call__(self, x: Tensor) -> Tensor:
        act = T.ACTIVATIONS[self.activation]
        for i, (w, b) in enumerate(self.layers):
            x = T.linear(x, w, b)
            if i < len(self.layers) - 1:
                x = act(x)
        return x


@dataclass
class EdgeNetwork:
    """f: e -> W, one d x d matrix per edge (row-major reshape of the MLP output)."""

    mlp: MLP
    hidden: int

    @classmethod
    def create(cls, store, d_e: int, hidden: int, widths: tuple[int, ...], seed: int,
               prefix: str = "edge_net") -> "EdgeNetwork":
        return cls(MLP.create(store, prefix, [d_e, *widths, hidden * hidden], seed), hidden)

    @classmethod
    def from_store(cls, store, hidden: int, prefix: str = "edge_net") -> "EdgeNetwork":
        return cls(MLP.from_store(store, prefix), hidden)

    def flat(self, e: Tensor) -> Tensor:
        return self.mlp(e)

    def __call__(self, e: Tensor) -> Tensor:
        return T.reshape(self.flat(e), (e.shape[0], self.hidden, self.hidden))


def edge_network_forward(f: EdgeNetwork, e: Tensor | np.ndarray) -> Tensor:
    return f(e if isinstance(e, Tensor) else Tensor(e))


@dataclass
class GruCell:
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    GATES = ("z", "r", "h")

    @classmethod
    def create(cls, store, d: int, seed: int, prefix: str = "gru") -> "GruCell":
        kw = {}
        for gate in cls.GATES:
            kw[f"w_{gate}"] = store.glorot(f"{prefix}.w_{gate}", d, d, seed)
            kw[f"u_{gate}"] = store.glorot(f"{prefix}.u_{gate}", d, d, seed)
            kw[f"b_{gate}"] = store.zeros(f"{prefix}.b_{gate}", d)
        return cls(**kw)

    @classmethod
    def from_store(cls, store, prefix: str = "gru") -> "GruCell":
        return cls(**{f"{k}_{g}": store[f"{prefix}.{k}_{g}"] for g in cls.GATES for k in ("w", "u", "b")})


def gru_update(cell: GruCell, h_prev: Tensor, m: Tensor) -> Tensor:
    z = T.sigmoid(T.add_bias(T.matmul(m, cell.w_z) + T.matmul(h_prev, cell.u_z), cell.b_z))
    r = T.sigmoid(T.add_bias(T.matmul(m, cell.w_r) + T.matmul(h_prev, cell.u_r), cell.b_r))
    cand = T.tanh(T.add_bias(T.matmul(m, cell.w_h) + T.matmul(T.mul(r, h_prev), cell.u_h), cell.b_h))
    return T.mul(1.0 - z, h_prev) + T.mul(z, cand)


def input_embed(x: Tensor | np.ndarray, weight: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """h0 = x W + b, or x unchanged when no weight is given (identity mode)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if weight is None:
        return x
    return T.linear(x, weight, bias)


def gcn_coefficients(g: GraphBatch) -> np.ndarray:
    """1 / sqrt(deg(v) deg(w)) per edge (w, v), degrees clamped to at least 1."""
    deg = np.maximum(g.in_degree, 1).astype(np.float64)
    return 1.0 / np.sqrt(deg[g.dst] * deg[g.src])


def gcn_step(h: Tensor, g: GraphBatch, w0: Tensor, w1: Tensor, activation: str = "relu") -> Tensor:
    coef = Tensor(gcn_coefficients(g)[:, None])
    agg = T.scatter_add_rows(T.mul(T.gather_rows(h, g.src), coef), g.dst, g.num_nodes)
    return T.ACTIVATIONS[activation](T.matmul(agg, w1) + T.matmul(h, w0))


def relation_counts(g: GraphBatch, num_relations: int) -> np.ndarray:
    """[n, R] number of incoming edges of each relation."""
    if g.relation_ids is None:
        raise ValueError("rgcn needs relation ids")
    rel = g.relation_ids
    if rel.size and (rel.min() < 0 or rel.max() >= num_relations):
        raise ValueError(f"relation id out of range [0, {num_relations})")
    counts = np.zeros((g.num_nodes, num_relations))
    np.add.at(counts, (g.dst, rel), 1.0)
    return counts


def rgcn_step(h: Tensor, g: GraphBatch, w_rel: list[Tensor], w0: Tensor,
              activation: str = "relu") -> Tensor:
    counts = np.maximum(relation_counts(g, len(w_rel)), 1.0)
    out = T.matmul(h, w0)
    for r, w_r in enumerate(w_rel):
        idx = np.flatnonzero(g.relation_ids == r)
        if idx.size == 0:
            continue
        src, dst = g.src[idx], g.dst[idx]
        coef = Tensor((1.0 / counts[dst, r])[:, None])
        agg = T.scatter_add_rows(T.mul(T.gather_rows(h, src), coef), dst, g.num_nodes)
        out = out + T.matmul(agg, w_r)
    return T.ACTIVATIONS[activation](out)


def mpnn_message(h: Tensor, g: GraphBatch, edge_matrices: Tensor, w0: Tensor,
                 activation: str = "relu") -> Tensor:
    """m_v = act(sum_{(w,v)} W_vw h_w + h_v W0) with W_vw = f(e_vw) precomputed."""
    msgs = T.bmv(edge_matrices, T.gather_rows(h, g.src))
    agg = T.scatter_add_rows(msgs, g.dst, g.num_nodes)
    return T.ACTIVATIONS[activation](agg + T.matmul(h, w0))


@dataclass
class PropagationParams:
    """Typed view of the propagation parameters held in a ParameterStore."""

    w0: list[Tensor]
    w1: list[Tensor] = field(default_factory=list)
    w_rel: list[list[Tensor]] = field(default_factory=list)
    edge_net: EdgeNetwork | None = None
    gru: GruCell | None = None


def create_propagation_params(store: ParameterStore, cfg: PropagationConfig, d_e: int,
                              seed: int) -> None:
    d = cfg.hidden
    for l in range(cfg.num_layers):
        store.glorot(f"prop.layer{l}.w0", d, d, seed)
        if cfg.scheme == "gcn":
            store.glorot(f"prop.layer{l}.w1", d, d, seed)
        elif cfg.scheme == "rgcn":
            for r in range(cfg.num_relations):
                store.glorot(f"prop.layer{l}.rel{r}", d, d, seed)
    if cfg.uses_edge_network:
        EdgeNetwork.create(store, d_e, d, cfg.edge_hidden, seed)
        GruCell.create(store, d, seed)


def propagation_params(store: ParameterStore, cfg: PropagationConfig) -> PropagationParams:
    L = cfg.num_layers
    pp = PropagationParams(w0=[store[f"prop.layer{l}.w0"] for l in range(L)])
    if cfg.scheme == "gcn":
        pp.w1 = [store[f"prop.layer{l}.w1"] for l in range(L)]
    elif cfg.scheme == "rgcn":
        pp.w_rel = [[store[f"prop.layer{l}.rel{r}"] for r in range(cfg.num_relations)] for l in range(L)]
    else:
        pp.edge_net = EdgeNetwork.from_store(store, cfg.hidden)
        pp.gru = GruCell.from_store(store)
    return pp


def propagate(cfg: PropagationConfig, params: PropagationParams, g: GraphBatch, h0: Tensor,
              edge_matrices: Tensor | None = None) -> Tensor:
    """Apply ``cfg.num_layers`` propagation steps starting from ``h0``.

    For mpnn/ignn the per-edge matrices are computed once (or taken from
    ``edge_matrices``) and reused by every layer, as is the single GRU cell.
    """
    h = h0
    if cfg.uses_edge_network and cfg.num_layers and edge_matrices is None:
        edge_matrices = params.edge_net(Tensor(g.edge_features))
    for l in range(cfg.num_layers):
        if cfg.scheme == "gcn":
            h = gcn_step(h, g, params.w0[l], params.w1[l], cfg.activation)
        elif cfg.scheme == "rgcn":
            h = rgcn_step(h, g, params.w_rel[l], params.w0[l], cfg.activation)
        else:
            m = mpnn_message(h, g, edge_matrices, params.w0[l], cfg.activation)
            h = gru_update(params.gru, h, m)
        if not np.isfinite(h.data).all():
            raise FloatingPointError(f"non-finite node states after layer {l}")
    return h
