"""Layer vocabulary of the peer-dependence models.

All layers are pure functions of their inputs and parameters; parameters
are ``Tensor`` leaves owned by the model's parameter store.
"""

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from peer_valuation.errors import (
    InvalidInputError,
    InvalidShapeError,
    IsolatedNodeError,
)
from peer_valuation.graph.knhs import SpatialGraph
from peer_valuation.nn.tensor import (
    Tensor,
    add,
    concat_rows,
    gather_rows,
    matmul,
    mul_rows,
    relu,
    row_dot,
    scale,
    segment_mean,
    segment_softmax,
    segment_sum,
)

MAX_EMBEDDING_DIM = 50


def embedding_size(cardinality: int) -> int:
    """Embedding width for a categorical variable:
    ``min(50, floor((cardinality + 1) / 2))``, at least 1."""
    if cardinality < 1:
        raise InvalidInputError(
            f"Cardinality must be >= 1. Got {cardinality}"
        )
    return max(1, min(MAX_EMBEDDING_DIM, (cardinality + 1) // 2))


@dataclass(frozen=True)
class EmbeddingSpec:
    cardinality: int
    dim: int

    @classmethod
    def for_cardinality(cls, cardinality: int) -> "EmbeddingSpec":
        return cls(cardinality, embedding_size(cardinality))

    def __post_init__(self):
        if self.dim != embedding_size(self.cardinality):
            raise InvalidInputError(
                f"Embedding of {self.cardinality} categories must have "
                f"dim {embedding_size(self.cardinality)}. Got {self.dim}"
            )


def glorot_uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, name: str = ""
) -> Tensor:
    """A trainable (fan_in, fan_out) matrix drawn from
    U(-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out)))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class GraphTensors:
    """The parts of a ``SpatialGraph`` a layer reads, with edge attributes
    already scaled."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    edge_features: np.ndarray

    @classmethod
    def from_graph(
        cls, graph: SpatialGraph, edge_features: np.ndarray | None = None
    ) -> "GraphTensors":
        feats = graph.edge_attrs if edge_features is None else edge_features
        feats = np.asarray(feats, dtype=np.float64)
        if len(feats) != graph.n_edges:
            raise InvalidShapeError(
                f"Got {len(feats)} edge feature rows for "
                f"{graph.n_edges} edges"
            )
        return cls(graph.n_nodes, graph.src.copy(), graph.dst.copy(), feats)

    @property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)


def _as_graph_tensors(graph: SpatialGraph | GraphTensors) -> GraphTensors:
    if isinstance(graph, GraphTensors):
        return graph
    return GraphTensors.from_graph(graph)


def embed(
    categorical: np.ndarray, tables: Sequence[Tensor]
) -> Tensor | None:
    """Look up one embedding table per categorical column and join the
    resulting rows. Returns None when there are no categorical columns."""
    categorical = np.asarray(categorical, dtype=np.int64)
    if categorical.ndim != 2 or categorical.shape[1] != len(tables):
        raise InvalidShapeError(
            f"Expected {len(tables)} categorical columns. "
            f"Got array of shape {categorical.shape}"
        )
    if not tables:
        return None
    parts = [gather_rows(t, categorical[:, c]) for c, t in enumerate(tables)]
    return concat_rows(*parts)


@dataclass
class GcnLayerParams:
    W_self: Tensor
    W_neigh: Tensor

    @property
    def d_in(self) -> int:
        return self.W_self.shape[0]

    @property
    def d_out(self) -> int:
        return self.W_self.shape[1]


def gcn_layer(
    H: Tensor, graph: SpatialGraph | GraphTensors, params: GcnLayerParams
) -> Tensor:
    """Graph convolution with mean aggregation.

    ``out_i = h_i W_self + ReLU(mean_{j -> i} h_j) W_neigh``; a node without
    in-edges gets a zero neighbor mean.
    """
    g = _as_graph_tensors(graph)
    if H.shape[0] != g.n_nodes or H.shape[1] != params.d_in:
        raise InvalidShapeError(
            f"Node features of shape {H.shape} do not fit a graph of "
            f"{g.n_nodes} nodes and a layer with d_in={params.d_in}"
        )
    neigh_mean = segment_mean(gather_rows(H, g.src), g.dst, g.n_nodes)
    return add(
        matmul(H, params.W_self), matmul(relu(neigh_mean), params.W_neigh)
    )


@dataclass
class TransformerConvParams:
    W_query: list[Tensor]
    W_key: list[Tensor]
    W_value: list[Tensor]
    W_edge: list[Tensor]
    W_aggr: Tensor

    def __post_init__(self):
        heads = len(self.W_query)
        if heads < 1:
            raise InvalidInputError("At least one attention head is needed")
        if not (
            len(self.W_key) == len(self.W_value) == len(self.W_edge) == heads
        ):
            raise InvalidShapeError("Every head needs Q, K, V and edge maps")
        expected = self.d_in + heads * self.d_head
        if self.W_aggr.shape[0] != expected:
            raise InvalidShapeError(
                f"W_aggr must have {expected} rows. "
                f"Got {self.W_aggr.shape[0]}"
            )

    @property
    def heads(self) -> int:
        return len(self.W_query)

    @property
    def d_in(self) -> int:
        return self.W_query[0].shape[0]

    @property
    def d_head(self) -> int:
        return self.W_query[0].shape[1]

    @property
    def d_edge(self) -> int:
        return self.W_edge[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.W_aggr.shape[1]


def transformer_conv(
    H: Tensor,
    graph: SpatialGraph | GraphTensors,
    params: TransformerConvParams,
    strict_isolated: bool = False,
    attention_log: list | None = None,
) -> Tensor:
    """Transformer graph convolution with edge attributes.

    For every head and edge ``j -> i``::

        score_ij = Q_i . (K_j + U_ij) / sqrt(d_head)
        alpha_ij = softmax of score over the in-edges of i
        hhat_i   = sum_j alpha_ij (V_j + U_ij)

    where ``U_ij`` is the linear map of the edge attributes. The heads are
    joined and ``out_i = [h_i, hhat_i] W_aggr``. Edge attributes pass
    through unchanged. A node without in-edges gets ``hhat_i = 0`` unless
    ``strict_isolated`` is set, which raises instead.

    Parameters
    ----------
    H : Tensor
        (n, d_in) node features.
    graph : SpatialGraph or GraphTensors
        Graph whose (scaled) edge attributes have width ``d_edge``.
    params : TransformerConvParams
        Per-head projections and the aggregation map.
    strict_isolated : bool, optional
        Raise ``IsolatedNodeError`` for nodes without in-edges.
    attention_log : list, optional
        When given, the (E,) attention weights of every head are appended.

    Returns
    -------
    Tensor
        (n, d_out) node representations.
    """
    g = _as_graph_tensors(graph)
    if H.shape[0] != g.n_nodes or H.shape[1] != params.d_in:
        raise InvalidShapeError(
            f"Node features of shape {H.shape} do not fit a graph of "
            f"{g.n_nodes} nodes and a layer with d_in={params.d_in}"
        )
    if g.edge_features.shape[1] != params.d_edge:
        raise InvalidShapeError(
            f"Edge attributes have width {g.edge_features.shape[1]}. "
            f"Expected {params.d_edge}"
        )
    if strict_isolated and np.any(g.in_degree == 0):
        isolated = np.flatnonzero(g.in_degree == 0)
        raise IsolatedNodeError(
            f"{len(isolated)} nodes have no in-edges, e.g. {isolated[:5]}"
        )

    edge_feats = Tensor(g.edge_features)
    inv_sqrt_d = 1.0 / np.sqrt(params.d_head)
    aggregates = []
    for h in range(params.heads):
        Q = matmul(H, params.W_query[h])
        K = matmul(H, params.W_key[h])
        V = matmul(H, params.W_value[h])
        U = matmul(edge_feats, params.W_edge[h])
        q_i = gather_rows(Q, g.dst)
        k_j = gather_rows(K, g.src)
        v_j = gather_rows(V, g.src)
        scores = scale(row_dot(q_i, add(k_j, U)), inv_sqrt_d)
        alpha = segment_softmax(scores, g.dst, g.n_nodes)
        if attention_log is not None:
            attention_log.append(alpha.data.copy())
        messages = mul_rows(add(v_j, U), alpha)
        aggregates.append(segment_sum(messages, g.dst, g.n_nodes))
    return matmul(concat_rows(H, *aggregates), params.W_aggr)


def dense(
    H: Tensor,
    W: Tensor,
    b: Tensor,
    activation: Literal["relu", "identity"] = "identity",
) -> Tensor:
    """Affine map ``H W + b`` with optional ReLU."""
    out = add(matmul(H, W), b)
    if activation == "relu":
        return relu(out)
    if activation != "identity":
        raise InvalidInputError(
            f"Unknown activation {activation}. Expected relu or identity"
        )
    return out
