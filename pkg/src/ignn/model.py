"""Full model: input embedding, propagation, optional decoder, readout and head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .graphs import GraphBatch
from .infomax import EdgeDecoder, InfomaxTerm, li_loss
from .numerics import ParameterStore, Tensor, config_hash
from .numerics import tensor as T
from .propagation import (MLP, PropagationConfig, create_propagation_params, input_embed,
                          propagate, propagation_params)
from .readout import Set2Set, create_head, output_head, set2set_readout, sum_readout

READOUTS = ("set2set", "sum", "none")


@dataclass
class ModelConfig:
    scheme: str
    d_x: int
    d_e: int
    target_dim: int
    num_relations: int = 4
    hidden: int = 64
    num_layers: int = 3
    edge_hidden: tuple[int, ...] = (64,)
    decoder_hidden: tuple[int, ...] | None = None   # default: (hidden*hidden // 2,)
    readout: str = "set2set"
    set2set_steps: int = 3
    head_hidden: int | None = None                   # default: hidden
    embed: str = "linear"                            # or "identity" (needs d_x == hidden)
    activation: str = "relu"

    def __post_init__(self):
        self.edge_hidden = tuple(self.edge_hidden)
        if self.decoder_hidden is not None:
            self.decoder_hidden = tuple(self.decoder_hidden)
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.embed == "identity" and self.d_x != self.hidden:
            raise ValueError("identity embedding needs d_x == hidden")
        self.propagation  # validates the scheme

    @property
    def propagation(self) -> PropagationConfig:
        return PropagationConfig(self.scheme, self.num_layers, self.hidden, self.num_relations,
                                 self.edge_hidden, self.activation)

    @property
    def has_decoder(self) -> bool:
        return self.scheme == "ignn"

    @property
    def readout_width(self) -> int:
        return {"set2set": 2 * self.hidden, "sum": self.hidden, "none": self.hidden}[self.readout]

    def to_json(self) -> dict:
        d = asdict(self)
        d["edge_hidden"] = list(self.edge_hidden)
        d["decoder_hidden"] = None if self.decoder_hidden is None else list(self.decoder_hidden)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @property
    def hash(self) -> str:
        return config_hash(self.to_json())


def build_params(cfg: ModelConfig, seed: int) -> ParameterStore:
    store = ParameterStore()
    if cfg.embed == "linear":
        store.glorot("embed.weight", cfg.d_x, cfg.hidden, seed)
        store.zeros("embed.bias", cfg.hidden)
    create_propagation_params(store, cfg.propagation, cfg.d_e, seed)
    if cfg.has_decoder:
        EdgeDecoder.create(store, cfg.hidden, cfg.d_e, seed, cfg.decoder_hidden)
    if cfg.readout == "set2set":
        Set2Set.create(store, cfg.hidden, cfg.set2set_steps, seed)
    create_head(store, cfg.readout_width, cfg.head_hidden or cfg.hidden, cfg.target_dim, seed)
    return store


@dataclass
class ForwardOutput:
    y_hat: Tensor
    h: Tensor
    li: InfomaxTerm | None = None
    attention: list = field(default_factory=list)


class Model:
    def __init__(self, cfg: ModelConfig, params: ParameterStore):
        self.cfg = cfg
        self.params = params
        self._prop = propagation_params(params, cfg.propagation)
        self._head = MLP.from_store(params, "head")
        self._decoder = EdgeDecoder.from_store(params) if cfg.has_decoder else None
        self._s2s = Set2Set.from_store(params, cfg.hidden, cfg.set2set_steps) if cfg.readout == "set2set" else None

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int) -> "Model":
        return cls(cfg, build_params(cfg, seed))

    def embed(self, x: np.ndarray) -> Tensor:
        if self.cfg.embed == "identity":
            return input_embed(x)
        return input_embed(x, self.params["embed.weight"], self.params["embed.bias"])

    def forward(self, g: GraphBatch, lam: float = 1.0, detach_f: bool = False,
                record_attention: bool = False) -> ForwardOutput:
        cfg = self.cfg
        h0 = self.embed(g.node_features)
        w_flat = edge_mats = None
        if cfg.propagation.uses_edge_network:
            e = Tensor(g.edge_features)
            w_flat = self._prop.edge_net.flat(e)
            edge_mats = T.reshape(w_flat, (g.num_edges, cfg.hidden, cfg.hidden))
        h = propagate(cfg.propagation, self._prop, g, h0, edge_mats)
        attention = [] if record_attention else None
        if cfg.readout == "set2set":
            r = set2set_readout(self._s2s, h, g.node_graph, g.num_graphs, attention)
        elif cfg.readout == "sum":
            r = sum_readout(h, g.node_graph, g.num_graphs)
        else:
            r = h
        out = ForwardOutput(output_head(r, self._head), h, attention=attention or [])
        if self._decoder is not None:
            out.li = li_loss(self._decoder, g.edge_features, w_flat, lam, detach_f)
        return out
