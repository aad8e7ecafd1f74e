"""Graphs with dense node/edge features and disjoint-union batching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True, eq=False)
class Graph:
    node_features: np.ndarray          # [n, d_x]
    edges: np.ndarray                  # [m, 2] int (src, dst); message flows src -> dst
    edge_features: np.ndarray          # [m, d_e]
    relation_ids: np.ndarray | None = None
    graph_label: np.ndarray | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "node_features", np.asarray(self.node_features, dtype=np.float64))
        set_(self, "edges", np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        set_(self, "edge_features", np.asarray(self.edge_features, dtype=np.float64))
        if self.relation_ids is not None:
            set_(self, "relation_ids", np.asarray(self.relation_ids, dtype=np.int64))
        if self.graph_label is not None:
            set_(self, "graph_label", np.atleast_1d(np.asarray(self.graph_label, dtype=np.float64)))
        if self.node_labels is not None:
            nl = np.asarray(self.node_labels, dtype=np.float64)
            set_(self, "node_labels", nl.reshape(len(nl), -1))

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def d_x(self) -> int:
        return self.node_features.shape[1]

    @property
    def d_e(self) -> int:
        return self.edge_features.shape[1]

    def permute(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes so that old node ``perm[i]`` becomes new node ``i``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(
            node_features=self.node_features[perm],
            edges=inv[self.edges],
            edge_features=self.edge_features,
            relation_ids=self.relation_ids,
            graph_label=self.graph_label,
            node_labels=None if self.node_labels is None else self.node_labels[perm],
        )


def undirected(node_features, pairs, pair_features, relation_ids=None, **labels) -> Graph:
    """Build a Graph from undirected pairs; each pair becomes (u,v) then (v,u)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pf = np.asarray(pair_features, dtype=np.float64)
    if pf.ndim != 2:
        pf = pf.reshape(len(pairs), -1)
    edges = np.empty((2 * len(pairs), 2), dtype=np.int64)
    edges[0::2] = pairs
    edges[1::2] = pairs[:, ::-1]
    rel = None
    if relation_ids is not None:
        rel = np.repeat(np.asarray(relation_ids, dtype=np.int64), 2)
    return Graph(node_features, edges, np.repeat(pf, 2, axis=0), rel, **labels)


def validate_graph(g: Graph, num_relations: int | None = None) -> list[str]:
    """Return every invariant violation found in ``g`` (empty list when valid)."""
    problems = []
    n, m = g.num_nodes, g.num_edges
    if g.node_features.ndim != 2:
        problems.append(f"node_features must be 2-D, got shape {g.node_features.shape}")
    if g.edge_features.ndim != 2:
        problems.append(f"edge_features must be 2-D, got shape {g.edge_features.shape}")
    bad = np.flatnonzero(((g.edges < 0) | (g.edges >= n)).any(axis=1)) if m else []
    for i in bad:
        problems.append(f"edge {int(i)} {tuple(int(v) for v in g.edges[i])}: endpoint out of range [0, {n})")
    if g.edge_features.shape[0] != m:
        problems.append(f"edge_features has {g.edge_features.shape[0]} rows for {m} edges")
    for what, arr in (("node_features", g.node_features), ("edge_features", g.edge_features)):
        rows = np.flatnonzero(~np.isfinite(arr).all(axis=1)) if arr.ndim == 2 and arr.size else []
        for r in rows:
            problems.append(f"non-finite value in {what} row {int(r)}")
    if g.relation_ids is not None:
        if g.relation_ids.shape != (m,):
            problems.append(f"relation_ids has shape {g.relation_ids.shape} for {m} edges")
        elif m and (g.relation_ids.min() < 0 or (num_relations is not None and g.relation_ids.max() >= num_relations)):
            problems.append(f"relation id out of range [0, {num_relations})")
    if g.graph_label is not None and g.node_labels is not None:
        problems.append("graph_label and node_labels both set")
    if g.graph_label is not None and not np.isfinite(g.graph_label).all():
        problems.append("non-finite graph_label")
    if g.node_labels is not None:
        if g.node_labels.shape[0] != n:
            problems.append(f"node_labels has {g.node_labels.shape[0]} rows for {n} nodes")
        if not np.isfinite(g.node_labels).all():
            problems.append("non-finite node_labels")
    return problems


def ensure_valid(g: Graph, num_relations: int | None = None) -> Graph:
    problems = validate_graph(g, num_relations)
    if problems:
        raise GraphError(problems)
    return g


def neighbors(g: "Graph | GraphBatch", v: int) -> list[tuple[int, int]]:
    """Incoming neighbourhood of ``v``: (w, edge id) for every edge (w, v), by edge id."""
    n = g.num_nodes
    if not 0 <= v < n:
        raise IndexError(f"node {v} not in [0, {n})")
    ids = np.flatnonzero(g.edges[:, 1] == v)
    return [(int(g.edges[i, 0]), int(i)) for i in ids]


@dataclass(frozen=True, eq=False)
class GraphBatch:
    node_features: np.ndarray
    edges: np.ndarray
    edge_features: np.ndarray
    relation_ids: np.ndarray | None
    node_graph: np.ndarray             # graph id of every node
    node_offsets: np.ndarray           # [num_graphs + 1] prefix sums of node counts
    edge_offsets: np.ndarray           # [num_graphs + 1]
    graph_labels: np.ndarray | None
    node_labels: np.ndarray | None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_graphs(self) -> int:
        return len(self.node_offsets) - 1

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    @property
    def in_degree(self) -> np.ndarray:
        if "deg" not in self._cache:
            self._cache["deg"] = np.bincount(self.dst, minlength=self.num_nodes)
        return self._cache["deg"]

    def edge_graph(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_graphs), np.diff(self.edge_offsets))

    def split(self) -> list[Graph]:
        out = []
        for k in range(self.num_graphs):
            n0, n1 = self.node_offsets[k], self.node_offsets[k + 1]
            e0, e1 = self.edge_offsets[k], self.edge_offsets[k + 1]
            out.append(Graph(
                node_features=self.node_features[n0:n1],
                edges=self.edges[e0:e1] - n0,
                edge_features=self.edge_features[e0:e1],
                relation_ids=None if self.relation_ids is None else self.relation_ids[e0:e1],
                graph_label=None if self.graph_labels is None else self.graph_labels[k],
                node_labels=None if self.node_labels is None else self.node_labels[n0:n1],
            ))
        return out


def batch_graphs(gs: list[Graph]) -> GraphBatch:
    """Pack graphs into one disjoint union with node indices offset per graph."""
    if not gs:
        raise ValueError("cannot batch an empty list of graphs")
    first = gs[0]
    problems = []
    for k, g in enumerate(gs[1:], start=1):
        if g.d_x != first.d_x:
            problems.append(f"graph {k}: d_x {g.d_x} != {first.d_x}")
        if g.d_e != first.d_e:
            problems.append(f"graph {k}: d_e {g.d_e} != {first.d_e}")
        if (g.relation_ids is None) != (first.relation_ids is None):
            problems.append(f"graph {k}: relation_ids presence differs")
        for attr in ("graph_label", "node_labels"):
            a, b = getattr(g, attr), getattr(first, attr)
            if (a is None) != (b is None) or (a is not None and a.shape[-1] != b.shape[-1]):
                problems.append(f"graph {k}: {attr} arity differs")
    if problems:
        raise GraphError(problems)

    n_counts = np.array([g.num_nodes for g in gs], dtype=np.int64)
    e_counts = np.array([g.num_edges for g in gs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(n_counts)])
    edge_offsets = np.concatenate([[0], np.cumsum(e_counts)])
    edges = np.concatenate([g.edges + node_offsets[k] for k, g in enumerate(gs)])
    return GraphBatch(
        node_features=np.concatenate([g.node_features for g in gs]),
        edges=edges.reshape(-1, 2),
        edge_features=np.concatenate([g.edge_features for g in gs]),
        relation_ids=None if first.relation_ids is None else np.concatenate([g.relation_ids for g in gs]),
        node_graph=np.repeat(np.arange(len(gs)), n_counts),
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
        graph_labels=None if first.graph_label is None else np.stack([g.graph_label for g in gs]),
        node_labels=None if first.node_labels is None else np.concatenate([g.node_labels for g in gs]),
    )
