"""Synthetic molecule-like datasets and the dataset file format.

File layout::

    byte 0          format version (currently 1)
    line 1          JSON header: d_x, d_e, num_relations, target_dim, count,
                    encoding ("binary" | "text"), target_stats, provenance
    lines 2..       one JSON record per graph:
                    {"n", "pairs", "rel", "ef", "x", "y"}

Records store each undirected edge once; loading expands it to two directed
edges with identical features.  With the binary encoding every array is
base64 of little-endian float64/int64 bytes, so floats survive bit-exactly;
the text encoding writes plain JSON numbers for inspection.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graphs import Graph, GraphError, undirected, validate_graph
from .objectives import TargetStats

FORMAT_VERSION = 1

# Bond-energy-like coefficients: k_r per relation (single, double, triple,
# aromatic) and c_t per node type.
BOND_COEFFS = (1.0, 2.0, 3.0, 1.5)
NODE_COEFFS = (-0.5, 0.3, 1.0, -1.2, 0.6)


class DatasetFormatError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    min_nodes: int = 5
    max_nodes: int = 9
    edge_prob: float = 0.4
    num_relations: int = 4
    num_node_types: int = 5
    dist_low: float = 0.8
    dist_high: float = 3.0
    formula: str = "bond_energy"
    bond_coeffs: tuple[float, ...] = BOND_COEFFS
    node_coeffs: tuple[float, ...] | None = NODE_COEFFS   # None drops the node term
    noise_std: float = 0.0
    complete_graph: bool = False
    seed: int = 0

    def __post_init__(self):
        self.bond_coeffs = tuple(self.bond_coeffs)
        if self.node_coeffs is not None:
            self.node_coeffs = tuple(self.node_coeffs)
        problems = []
        if not 1 <= self.min_nodes <= self.max_nodes:
            problems.append("need 1 <= min_nodes <= max_nodes")
        if not 0 < self.edge_prob <= 1:
            problems.append("edge_prob must be in (0, 1]")
        if len(self.bond_coeffs) != self.num_relations:
            problems.append("need one bond coefficient per relation")
        if self.node_coeffs is not None and len(self.node_coeffs) != self.num_node_types:
            problems.append("need one node coefficient per node type")
        if not 0 < self.dist_low <= self.dist_high:
            problems.append("need 0 < dist_low <= dist_high")
        if self.formula != "bond_energy":
            problems.append(f"unknown target formula {self.formula!r}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def total_relations(self) -> int:
        # complete-graph mode adds a "no bond" relation
        return self.num_relations + (1 if self.complete_graph else 0)

    @property
    def d_e(self) -> int:
        return self.total_relations + 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["bond_coeffs"] = list(self.bond_coeffs)
        d["node_coeffs"] = None if self.node_coeffs is None else list(self.node_coeffs)
        return d


@dataclass
class Dataset:
    graphs: list[Graph]
    d_x: int
    d_e: int
    num_relations: int
    target_dim: int
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    def targets(self, idx=None) -> np.ndarray:
        gs = self.graphs if idx is None else [self.graphs[i] for i in idx]
        return np.stack([g.graph_label for g in gs]) if gs else np.zeros((0, self.target_dim))

    def subset(self, idx) -> "Dataset":
        return Dataset([self.graphs[i] for i in idx], self.d_x, self.d_e, self.num_relations,
                       self.target_dim, dict(self.provenance))

    @property
    def stats(self) -> TargetStats:
        return TargetStats.from_targets(self.targets())


def _connected(n: int, pairs: list[tuple[int, int]]) -> bool:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a
    for a, b in pairs:
        parent[find(a)] = find(b)
    return len({find(v) for v in range(n)}) == 1


def bond_energy(pairs: np.ndarray, relations: np.ndarray, distances: np.ndarray,
                node_types: np.ndarray, spec: SyntheticSpec) -> float:
    """sum over bonds of k_r / d  +  sum over nodes of c_type."""
    k = np.asarray(spec.bond_coeffs)
    bonded = relations < spec.num_relations
    y = float(np.sum(k[relations[bonded]] / distances[bonded]))
    if spec.node_coeffs is not None:
        y += float(np.sum(np.asarray(spec.node_coeffs)[node_types]))
    return y


def synthetic_graph(rng: np.random.Generator, spec: SyntheticSpec) -> Graph:
    for _ in range(1000):
        n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < spec.edge_prob
        bonds = list(zip(iu[keep].tolist(), ju[keep].tolist()))
        if _connected(n, bonds):
            break
    else:
        raise ValueError("could not draw a connected graph in 1000 attempts")

    node_types = rng.integers(0, spec.num_node_types, size=n)
    rel = rng.integers(0, spec.num_relations, size=len(bonds))
    dist = rng.uniform(spec.dist_low, spec.dist_high, size=len(bonds))
    pairs = np.asarray(bonds, dtype=np.int64).reshape(-1, 2)
    if spec.complete_graph:
        bonded = set(bonds)
        extra = [(int(a), int(b)) for a, b in zip(iu, ju) if (int(a), int(b)) not in bonded]
        pairs = np.concatenate([pairs, np.asarray(extra, dtype=np.int64).reshape(-1, 2)])
        rel = np.concatenate([rel, np.full(len(extra), spec.num_relations)])
        dist = np.concatenate([dist, rng.uniform(spec.dist_high, 2 * spec.dist_high, size=len(extra))])

    y = bond_energy(pairs, rel, dist, node_types, spec)
    if spec.noise_std > 0:
        y += float(rng.normal(0.0, spec.noise_std))
    x = np.eye(spec.num_node_types)[node_types]
    ef = np.concatenate([np.eye(spec.total_relations)[rel], dist[:, None]], axis=1)
    return undirected(x, pairs, ef, rel, graph_label=np.array([y]))


def generate_synthetic(spec: SyntheticSpec, n: int) -> Dataset:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, 0x5EED])))
    graphs = [synthetic_graph(rng, spec) for _ in range(n)]
    return Dataset(graphs, spec.num_node_types, spec.d_e, spec.total_relations, 1,
                   {"generator": "synthetic", "spec": spec.to_json(), "count": n})


def oracle_target(g: Graph, spec: SyntheticSpec) -> float:
    """Read the bond-energy target straight back off a generated graph."""
    pairs = g.edges[0::2]
    rel = g.relation_ids[0::2]
    dist = g.edge_features[0::2, -1]
    types = np.argmax(g.node_features, axis=1)
    return bond_energy(pairs, rel, dist, types, spec)


def zero_continuous_edge_features(ds: Dataset) -> Dataset:
    """Copy of ``ds`` with every column after the relation one-hot set to 0."""
    out = []
    for g in ds.graphs:
        ef = g.edge_features.copy()
        ef[:, ds.num_relations:] = 0.0
        out.append(Graph(g.node_features, g.edges, ef, g.relation_ids, g.graph_label, g.node_labels))
    return Dataset(out, ds.d_x, ds.d_e, ds.num_relations, ds.target_dim,
                   {**ds.provenance, "ablation": "continuous edge features zeroed"})


# ----------------------------------------------------------------------------
# Serialization


def _enc(arr: np.ndarray, kind: str, binary: bool):
    if binary:
        return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8" if kind == "f" else "<i8").tobytes()).decode()
    return arr.tolist()


def _dec(val, kind: str, binary: bool) -> np.ndarray:
    if binary:
        return np.frombuffer(base64.b64decode(val, validate=True), dtype="<f8" if kind == "f" else "<i8").astype(
            np.float64 if kind == "f" else np.int64)
    return np.asarray(val, dtype=np.float64 if kind == "f" else np.int64)


def _pairs_of(g: Graph, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fwd, rev = g.edges[0::2], g.edges[1::2]
    if g.num_edges % 2 or not np.array_equal(fwd, rev[:, ::-1]) or not np.array_equal(
            g.edge_features[0::2], g.edge_features[1::2]):
        raise DatasetFormatError(f"graph {k}: edges are not stored as undirected (u,v),(v,u) pairs")
    rel = g.relation_ids[0::2] if g.relation_ids is not None else np.zeros(len(fwd), dtype=np.int64)
    return fwd, rel, g.edge_features[0::2]


def save_dataset(ds: Dataset, path: str | Path, binary: bool = True) -> None:
    header = {
        "d_x": ds.d_x, "d_e": ds.d_e, "num_relations": ds.num_relations,
        "target_dim": ds.target_dim, "count": len(ds),
        "encoding": "binary" if binary else "text",
        "target_stats": ds.stats.to_json() if len(ds) else None,
        "provenance": ds.provenance,
    }
    with open(path, "wb") as fh:
        fh.write(bytes([FORMAT_VERSION]))
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for k, g in enumerate(ds.graphs):
            pairs, rel, ef = _pairs_of(g, k)
            rec = {
                "n": g.num_nodes,
                "x": _enc(g.node_features, "f", binary),
                "pairs": _enc(pairs, "i", binary),
                "rel": _enc(rel, "i", binary),
                "ef": _enc(ef, "f", binary),
                "y": _enc(g.graph_label, "f", binary),
            }
            fh.write((json.dumps(rec) + "\n").encode())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        version = fh.read(1)
        if not version or version[0] != FORMAT_VERSION:
            raise DatasetFormatError(f"{path}: unsupported format version")
        try:
            return json.loads(fh.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetFormatError(f"{path}: line 1: malformed header ({exc})") from None


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if not raw or raw[0] != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version")
    lines = raw[1:].split(b"\n")
    try:
        header = json.loads(lines[0].decode())
        d_x, d_e, R, tdim = header["d_x"], header["d_e"], header["num_relations"], header["target_dim"]
        binary = header["encoding"] == "binary"
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise DatasetFormatError(f"{path}: line 1: malformed header ({exc})") from None
    body = lines[1:]
    if body and body[-1] == b"":
        body = body[:-1]
    elif body:
        raise DatasetFormatError(f"{path}: line {len(body) + 1}: truncated record (no newline)")
    graphs = []
    for i, line in enumerate(body, start=2):
        try:
            rec = json.loads(line.decode())
            n = int(rec["n"])
            x = _dec(rec["x"], "f", binary).reshape(n, d_x) if n else np.zeros((0, d_x))
            pairs = _dec(rec["pairs"], "i", binary)
            rel = _dec(rec["rel"], "i", binary)
            ef_flat = _dec(rec["ef"], "f", binary)
            y = _dec(rec["y"], "f", binary)
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path}: line {i}: malformed record ({exc})") from None
        m = len(rel)
        if pairs.size != 2 * m or ef_flat.size != m * d_e:
            width = ef_flat.size // m if m else 0
            raise DatasetFormatError(
                f"{path}: line {i}: edge feature width {width} does not match header d_e={d_e}")
        if y.size != tdim:
            raise DatasetFormatError(f"{path}: line {i}: target arity {y.size} != header {tdim}")
        g = undirected(x, pairs.reshape(m, 2), ef_flat.reshape(m, d_e), rel, graph_label=y)
        problems = validate_graph(g, R)
        if problems:
            raise DatasetFormatError(f"{path}: line {i}: " + "; ".join(problems))
        graphs.append(g)
    if "count" in header and header["count"] != len(graphs):
        raise DatasetFormatError(f"{path}: header promises {header['count']} records, found {len(graphs)}")
    return Dataset(graphs, d_x, d_e, R, tdim, header.get("provenance", {}))


# ----------------------------------------------------------------------------
# Splits


def split(n: int | Dataset, seed: int, sizes: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint (train, val, test) index arrays drawn from a seeded permutation."""
    total = len(n) if isinstance(n, Dataset) else int(n)
    n_train, n_val, n_test = (int(s) for s in sizes)
    if min(n_train, n_val, n_test) < 0 or n_train + n_val + n_test > total:
        raise ValueError(f"split sizes {sizes} exceed dataset size {total}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5B117])))
    perm = rng.permutation(total)
    val = np.sort(perm[:n_val])
    test = np.sort(perm[n_val:n_val + n_test])
    train = np.sort(perm[n_val + n_test:n_val + n_test + n_train])
    return train, val, test


def default_sizes(n: int, val_frac: float = 0.1, test_frac: float = 0.1) -> tuple[int, int, int]:
    n_val, n_test = int(round(n * val_frac)), int(round(n * test_frac))
    return n - n_val - n_test, n_val, n_test


__all__ = [
    "SyntheticSpec", "Dataset", "DatasetFormatError", "GraphError", "generate_synthetic",
    "oracle_target", "save_dataset", "load_dataset", "read_header", "split", "default_sizes",
    "zero_continuous_edge_features", "bond_energy",
]
