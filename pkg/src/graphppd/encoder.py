"""GIN / GINE graph encoder with sum readout."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import Param, Tensor, ops
from .graphdata import DatasetError, Graph
from .nn import Params, init_linear, init_mlp, linear, mlp


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 3
    hidden_dim: int = 64
    mlp_layers: int = 2
    dropout_p: float = 0.0
    use_edge_features: bool = False

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.mlp_layers < 1:
            raise ValueError("num_layers, hidden_dim and mlp_layers must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


@dataclass
class GraphBatch:
    """Disjoint union of graphs, ready for message passing."""

    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_x: np.ndarray | None
    node_graph: np.ndarray
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]


def pack(graphs: Sequence[Graph], edge_dim: int = 0) -> GraphBatch:
    """Stack graphs into one node matrix; ``edge_dim > 0`` also gathers edge features."""
    xs, srcs, dsts, exs, owner = [], [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        src, dst, rows = g.directed
        xs.append(g.node_features)
        srcs.append(src + offset)
        dsts.append(dst + offset)
        owner.append(np.full(g.num_nodes, gi, dtype=np.int64))
        if edge_dim:
            if g.edge_features is None:
                raise DatasetError("encoder expects edge features but a graph has none")
            if g.num_edges and g.edge_features.shape[1] != edge_dim:
                raise DatasetError(f"edge feature width {g.edge_features.shape[1]} != {edge_dim}")
            exs.append(g.edge_features[rows].reshape(-1, edge_dim))
        offset += g.num_nodes
    edge_x = np.concatenate(exs, axis=0) if edge_dim else None
    return GraphBatch(
        x=np.concatenate(xs, axis=0),
        src=np.concatenate(srcs).astype(np.int64),
        dst=np.concatenate(dsts).astype(np.int64),
        edge_x=edge_x,
        node_graph=np.concatenate(owner),
        num_graphs=len(graphs),
    )


def init_encoder_params(
    config: EncoderConfig, node_dim: int, edge_dim: int, rng: np.random.Generator
) -> Params:
    """Glorot-uniform weights, zero biases, every GIN ``eps`` starts at 0."""
    d = config.hidden_dim
    params: Params = {}
    init_linear(params, "enc.in", node_dim, d, rng)
    if config.use_edge_features:
        if edge_dim < 1:
            raise ValueError("use_edge_features needs edge_dim >= 1")
        init_linear(params, "enc.edge", edge_dim, d, rng)
    for layer in range(config.num_layers):
        params[f"enc.l{layer}.eps"] = Param(np.zeros((1, 1)), f"enc.l{layer}.eps")
        init_mlp(params, f"enc.l{layer}.mlp", [d] * (config.mlp_layers + 1), rng)
    return params


def encode_batch(
    graphs: Sequence[Graph],
    params: Params,
    config: EncoderConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Embed each graph; row ``i`` of the result is the embedding of ``graphs[i]``.

    Per layer: ``h_v <- MLP((1 + eps) h_v + sum_u m_uv)`` where the message
    ``m_uv`` is ``h_u`` (GIN) or ``relu(h_u + W_e e_uv)`` (GINE). Node states
    are summed per graph after the last layer. In train mode dropout is applied
    to every layer output; one mask per layer is drawn over the stacked nodes.
    """
    edge_dim = params["enc.edge.W"].shape[0] if config.use_edge_features else 0
    batch = pack(graphs, edge_dim)
    node_dim = params["enc.in.W"].shape[0]
    if batch.x.shape[1] != node_dim:
        raise DatasetError(f"node feature width {batch.x.shape[1]} != encoder input width {node_dim}")
    h = linear(Tensor(batch.x), params, "enc.in")
    edge_h = None
    if edge_dim:
        edge_h = linear(Tensor(batch.edge_x), params, "enc.edge")
    for layer in range(config.num_layers):
        msg = ops.take_rows(h, batch.src)
        if edge_h is not None:
            msg = ops.relu(ops.add(msg, edge_h))
        agg = ops.segment_sum(msg, batch.dst, batch.num_nodes)
        one_plus_eps = ops.add_const(params[f"enc.l{layer}.eps"], 1.0)
        h = ops.add(ops.scalar_mul(h, one_plus_eps), agg)
        h = mlp(h, params, f"enc.l{layer}.mlp", config.mlp_layers)
        if train:
            h = ops.dropout(h, config.dropout_p, rng)
    return ops.segment_sum(h, batch.node_graph, batch.num_graphs)


def encode(
    graph: Graph,
    params: Params,
    config: EncoderConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Embedding of a single graph as a length-``hidden_dim`` tensor."""
    out = encode_batch([graph], params, config, train=train, rng=rng)
    return ops.reshape(out, (config.hidden_dim,))
