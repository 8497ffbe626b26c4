"""GCN baseline, gated bi-kernel layers and the precomputed fast gate."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .analysis import graph_homophily
from .autodiff import Aggregator, ParamStore, Tensor
from .errors import ConfigError
from .graph import Graph, SplitMasks
from .seeding import make_rng


class GateMode(str, enum.Enum):
    LEARNED = "learned"
    FAST = "fast"
    NONE = "none"


class LossKind(str, enum.Enum):
    CE = "ce"
    CE_REWEIGHT = "reweight"
    LOGIT_ADJ = "logit-adj"
    BAL_SOFTMAX = "balanced"


@dataclass(frozen=True)
class ModelConfig:
    layer_sizes: tuple
    gate_mode: GateMode = GateMode.LEARNED
    epsilon: float = 0.1
    lam: float = 1.0
    tau: float = 1.0
    loss_kind: LossKind = LossKind.CE
    activation: str = "tanh"
    # which labels feed the fallback homophily of the fast gate
    homophily_source: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "gate_mode", GateMode(self.gate_mode))
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise ConfigError(f"layer_sizes needs at least input and output sizes, got {self.layer_sizes}")
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.activation not in ("tanh", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.homophily_source not in ("train", "all"):
            raise ConfigError(f"homophily_source must be 'train' or 'all', got {self.homophily_source!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        d["gate_mode"] = self.gate_mode.value
        d["loss_kind"] = self.loss_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class GateTable:
    """Fixed gate value for every CSR slot of a graph."""

    values: np.ndarray
    homophily: float

    def __len__(self):
        return int(self.values.shape[0])


def fast_gate_table(graph: Graph, masks: SplitMasks, epsilon: float = 0.1, homophily_source: str = "train") -> GateTable:
    """Label-derived gates for edges between training nodes, H(G) elsewhere.

    Train-train edges get ``1 - epsilon`` (same label) or ``epsilon``; all
    other edges get the graph homophily, measured on train-train edges by
    default or on every edge with ``homophily_source="all"``.
    """
    if not 0.0 < epsilon < 0.5:
        raise ConfigError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    train = masks.train
    if homophily_source == "train":
        und = graph.undirected_edges()
        both = train[und[:, 0]] & train[und[:, 1]]
        if not both.any():
            raise ConfigError("no edge joins two training nodes; cannot estimate homophily from train labels")
        h = graph_homophily(graph, both)
    elif homophily_source == "all":
        h = graph_homophily(graph)
    else:
        raise ConfigError(f"unknown homophily_source {homophily_source!r}")
    src, dst = graph.edge_sources, graph.csr_neighbors
    known = train[src] & train[dst]
    same = graph.labels[src] == graph.labels[dst]
    vals = np.full(src.shape[0], h)
    vals[known] = np.maximum((1.0 - epsilon) * same[known], epsilon)
    vals.setflags(write=False)
    return GateTable(vals, h)


def gcn_operator(graph: Graph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with self-loops added."""
    n = graph.n_nodes
    a = sp.csr_matrix(
        (np.ones(graph.n_edge_directions), graph.csr_neighbors, graph.csr_offsets), shape=(n, n)
    )
    a = a + sp.identity(n, format="csr")
    d = np.asarray(a.sum(axis=1)).reshape(-1) ** -0.5
    return sp.csr_matrix(sp.diags(d) @ a @ sp.diags(d))


# ---------------------------------------------------------------------------
# layers


def _activate(h: Tensor, activation: str) -> Tensor:
    return ad.tanh(h) if activation == "tanh" else h


def propagate_project(s, h: Tensor, w: Tensor, s_t=None) -> Tensor:
    """``s @ h @ w`` with the cheaper association for the layer's widths."""
    if w.shape[1] < w.shape[0]:
        return ad.spmm(s, ad.matmul(h, w), s_t)
    return ad.matmul(ad.spmm(s, h, s_t), w)


def gcn_layer(h: Tensor, a_hat, w: Tensor, a_hat_t=None) -> Tensor:
    return propagate_project(a_hat, h, w, a_hat_t)


def learned_gate(h: Tensor, agg: Aggregator, w_g: Tensor):
    """Edge gates from concatenated endpoint embeddings ``[h_i, h_j]``.

    Returns ``(logits, alpha)``, both ``n_slots x 1``.
    """
    pair = ad.concat_cols(ad.select_rows(h, agg.src), ad.select_rows(h, agg.indices))
    z = ad.matmul(pair, w_g)
    return z, ad.sigmoid(z)


def gbk_layer(h: Tensor, agg: Aggregator, w_f: Tensor, w_s: Tensor, w_d: Tensor, alpha) -> Tensor:
    """Self term plus the gate-mixed mean of the two neighbour kernels (pre-activation)."""
    alpha = ad.constant(np.asarray(alpha, dtype=np.float64).reshape(-1, 1)) if not isinstance(alpha, Tensor) else alpha
    agg_term = ad.gated_aggregate(ad.matmul(h, w_s), ad.matmul(h, w_d), alpha, agg)
    return ad.add(ad.matmul(h, w_f), agg_term)


# ---------------------------------------------------------------------------
# full model


def param_names(config: ModelConfig) -> list:
    names = []
    for l in range(config.n_layers):
        if config.gate_mode is GateMode.NONE:
            names.append(f"layer{l}.W")
        else:
            names += [f"layer{l}.W_f", f"layer{l}.W_s", f"layer{l}.W_d"]
            if config.gate_mode is GateMode.LEARNED:
                names.append(f"layer{l}.W_g")
    return names


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    rng = make_rng(seed, "init")
    store = ParamStore()
    sizes = config.layer_sizes
    for l in range(config.n_layers):
        d_in, d_out = sizes[l], sizes[l + 1]
        if config.gate_mode is GateMode.NONE:
            store.add(f"layer{l}.W", ad.glorot_init(rng, d_in, d_out))
            continue
        for k in ("W_f", "W_s", "W_d"):
            store.add(f"layer{l}.{k}", ad.glorot_init(rng, d_in, d_out))
        if config.gate_mode is GateMode.LEARNED:
            store.add(f"layer{l}.W_g", ad.glorot_init(rng, 2 * d_in, 1))
    return store


@dataclass
class ForwardResult:
    logits: Tensor
    gate_logits: List[Tensor] = field(default_factory=list)


class Model:
    """A configured network bound to one graph.

    Everything that depends only on the graph (aggregation layout, GCN
    operator, fixed fast-gate operators and their action on the input
    features) is built once here.
    """

    def __init__(self, graph: Graph, config: ModelConfig, gate_table: Optional[GateTable] = None):
        if config.layer_sizes[0] != graph.n_features:
            raise ConfigError(f"input size {config.layer_sizes[0]} != feature dimension {graph.n_features}")
        if config.layer_sizes[-1] != graph.n_classes:
            raise ConfigError(f"output size {config.layer_sizes[-1]} != number of classes {graph.n_classes}")
        if config.gate_mode is GateMode.FAST and gate_table is None:
            raise ConfigError("fast gate mode needs a GateTable")
        if gate_table is not None and len(gate_table) != graph.n_edge_directions:
            raise ConfigError("GateTable is not aligned with the graph")
        self.graph = graph
        self.config = config
        self.gate_table = gate_table
        self.x = Tensor(graph.features)
        self.agg = Aggregator(graph.csr_offsets, graph.csr_neighbors)
        mode = config.gate_mode
        if mode is GateMode.NONE:
            self.a_hat = gcn_operator(graph)
            self.a_hat_t = self.a_hat.T.tocsr()
            self._x_prop = Tensor(np.asarray(self.a_hat @ graph.features))
        elif mode is GateMode.FAST:
            self.s_same = self.agg.matrix(gate_table.values)
            self.s_diff = self.agg.matrix(1.0 - gate_table.values)
            self.s_same_t = self.s_same.T.tocsr()
            self.s_diff_t = self.s_diff.T.tocsr()
            self._x_same = Tensor(np.asarray(self.s_same @ graph.features))
            self._x_diff = Tensor(np.asarray(self.s_diff @ graph.features))

    def check_params(self, store: ParamStore) -> None:
        expected = param_names(self.config)
        if store.names() != expected:
            raise ConfigError(f"parameters {store.names()} do not match config {expected}")
        sizes = self.config.layer_sizes
        for name in expected:
            l = int(name.split(".")[0][len("layer"):])
            want = (2 * sizes[l], 1) if name.endswith("W_g") else (sizes[l], sizes[l + 1])
            if store.params[name].shape != want:
                raise ConfigError(f"{name} has shape {store.params[name].shape}, expected {want}")

    def _fast_neighbours(self, h: Tensor, layer: int, w_s: Tensor, w_d: Tensor) -> Tensor:
        if layer == 0:
            return ad.add(ad.matmul(self._x_same, w_s), ad.matmul(self._x_diff, w_d))
        return ad.add(
            propagate_project(self.s_same, h, w_s, self.s_same_t),
            propagate_project(self.s_diff, h, w_d, self.s_diff_t),
        )

    def forward(self, store: ParamStore) -> ForwardResult:
        cfg = self.config
        h = self.x
        gate_logits = []
        for l in range(cfg.n_layers):
            p = lambda k: store.tensor(f"layer{l}.{k}")
            if cfg.gate_mode is GateMode.NONE:
                z = ad.matmul(self._x_prop, p("W")) if l == 0 else gcn_layer(h, self.a_hat, p("W"), self.a_hat_t)
            elif cfg.gate_mode is GateMode.FAST:
                z = ad.add(ad.matmul(h, p("W_f")), self._fast_neighbours(h, l, p("W_s"), p("W_d")))
            else:
                g_logit, alpha = learned_gate(h, self.agg, p("W_g"))
                gate_logits.append(g_logit)
                z = gbk_layer(h, self.agg, p("W_f"), p("W_s"), p("W_d"), alpha)
            h = _activate(z, cfg.activation) if l < cfg.n_layers - 1 else z
        return ForwardResult(h, gate_logits)


def model_forward(graph: Graph, config: ModelConfig, store: ParamStore, gate_table: Optional[GateTable] = None) -> ForwardResult:
    model = Model(graph, config, gate_table)
    model.check_params(store)
    return model.forward(store)
