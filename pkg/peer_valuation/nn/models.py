"""Model assemblies: PD-GCN, PD-TGCN and the hedonic linear baseline.

Both graph models embed the categorical columns, join the embeddings to
the scaled continuous columns and apply exactly two graph convolutions
(more layers over-smooth the node representations).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from loguru import logger
from scipy import linalg

from peer_valuation.errors import (
    InvalidInputError,
    InvalidShapeError,
    SingularSystemError,
)
from peer_valuation.graph.knhs import EDGE_ATTR_NAMES, SpatialGraph
from peer_valuation.io import load_json, save_json
from peer_valuation.nn.layers import (
    EmbeddingSpec,
    GcnLayerParams,
    GraphTensors,
    TransformerConvParams,
    dense,
    embed,
    gcn_layer,
    glorot_uniform,
    transformer_conv,
)
from peer_valuation.nn.tensor import Tensor, concat_rows, reshape

ModelKind = Literal["pd_gcn", "pd_tgcn", "linreg"]
MODEL_KINDS: tuple[str, ...] = ("pd_gcn", "pd_tgcn", "linreg")
N_CONV_LAYERS = 2
LINREG_RIDGE = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters of one model."""

    kind: ModelKind = "pd_tgcn"
    continuous_dim: int = 1
    embedding_specs: tuple[EmbeddingSpec, ...] = ()
    hidden_dim: int = 32
    heads: int = 4
    d_head: int = 16
    d_edge: int = len(EDGE_ATTR_NAMES)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidInputError(
                f"Unknown model kind {self.kind}. Expected one of "
                f"{MODEL_KINDS}"
            )
        if self.continuous_dim < 0 or self.hidden_dim < 1:
            raise InvalidInputError("Layer widths must be positive")
        if self.heads < 1 or self.d_head < 1:
            raise InvalidInputError("heads and d_head must be >= 1")
        object.__setattr__(
            self, "embedding_specs", tuple(self.embedding_specs)
        )

    @property
    def input_dim(self) -> int:
        return self.continuous_dim + sum(e.dim for e in self.embedding_specs)

    @property
    def d_attn(self) -> int:
        return self.heads * self.d_head

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "continuous_dim": self.continuous_dim,
            "embedding_specs": [
                [e.cardinality, e.dim] for e in self.embedding_specs
            ],
            "hidden_dim": self.hidden_dim,
            "heads": self.heads,
            "d_head": self.d_head,
            "d_edge": self.d_edge,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, document: dict) -> "ModelSpec":
        document = dict(document)
        document["embedding_specs"] = tuple(
            EmbeddingSpec(int(c), int(d))
            for c, d in document.get("embedding_specs", [])
        )
        return cls(**document)


@dataclass
class ModelInputs:
    """Preprocessed node inputs: scaled continuous columns and encoded
    categorical ids."""

    continuous: np.ndarray
    categorical: np.ndarray = field(
        default_factory=lambda: np.empty((0, 0), dtype=np.int64)
    )

    def __post_init__(self):
        self.continuous = np.asarray(self.continuous, dtype=np.float64)
        n = len(self.continuous)
        cat = np.asarray(self.categorical, dtype=np.int64)
        if cat.size == 0:
            cat = np.empty((n, 0), dtype=np.int64)
        if cat.ndim != 2 or len(cat) != n:
            raise InvalidShapeError(
                f"Categorical ids of shape {cat.shape} do not match "
                f"{n} continuous rows"
            )
        self.categorical = cat

    @property
    def n_rows(self) -> int:
        return len(self.continuous)

    def permuted(self, perm: np.ndarray) -> "ModelInputs":
        return ModelInputs(self.continuous[perm], self.categorical[perm])


def init_params(spec: ModelSpec) -> dict[str, Tensor]:
    """Draw the trainable parameters of a graph model from its seed.

    Matrices use Glorot-uniform initialisation; biases start at zero.
    """
    if spec.kind == "linreg":
        raise InvalidInputError(
            "The linear baseline is fitted in closed form, see fit_linreg"
        )
    rng = np.random.default_rng(spec.seed)
    params: dict[str, Tensor] = {}
    for c, emb in enumerate(spec.embedding_specs):
        params[f"emb{c}.table"] = glorot_uniform(
            rng, emb.cardinality, emb.dim, f"emb{c}.table"
        )

    d_in, hidden = spec.input_dim, spec.hidden_dim
    for layer in range(1, N_CONV_LAYERS + 1):
        width_in = d_in if layer == 1 else hidden
        if spec.kind == "pd_gcn":
            for part in ("W_self", "W_neigh"):
                name = f"gcn{layer}.{part}"
                params[name] = glorot_uniform(rng, width_in, hidden, name)
        else:
            for h in range(spec.heads):
                for part in ("query", "key", "value"):
                    name = f"tc{layer}.{part}{h}"
                    params[name] = glorot_uniform(
                        rng, width_in, spec.d_head, name
                    )
                name = f"tc{layer}.edge{h}"
                params[name] = glorot_uniform(
                    rng, spec.d_edge, spec.d_head, name
                )
            name = f"tc{layer}.aggr"
            params[name] = glorot_uniform(
                rng, width_in + spec.d_attn, hidden, name
            )

    if spec.kind == "pd_gcn":
        params["dense.W"] = glorot_uniform(rng, hidden, hidden, "dense.W")
        params["dense.b"] = Tensor(np.zeros(hidden), True, "dense.b")
    params["out.W"] = glorot_uniform(rng, hidden, 1, "out.W")
    params["out.b"] = Tensor(np.zeros(1), True, "out.b")
    return params


def _node_features(
    spec: ModelSpec, params: dict[str, Tensor], inputs: ModelInputs
) -> Tensor:
    if inputs.continuous.shape[1] != spec.continuous_dim:
        raise InvalidShapeError(
            f"Expected {spec.continuous_dim} continuous columns. "
            f"Got {inputs.continuous.shape[1]}"
        )
    n_tables = len(spec.embedding_specs)
    tables = [params[f"emb{c}.table"] for c in range(n_tables)]
    embedded = embed(inputs.categorical, tables)
    continuous = Tensor(inputs.continuous)
    if embedded is None:
        return continuous
    return concat_rows(continuous, embedded)


def _tc_params(params: dict[str, Tensor], layer: int, heads: int):
    return TransformerConvParams(
        W_query=[params[f"tc{layer}.query{h}"] for h in range(heads)],
        W_key=[params[f"tc{layer}.key{h}"] for h in range(heads)],
        W_value=[params[f"tc{layer}.value{h}"] for h in range(heads)],
        W_edge=[params[f"tc{layer}.edge{h}"] for h in range(heads)],
        W_aggr=params[f"tc{layer}.aggr"],
    )


def forward_pd_gcn(
    spec: ModelSpec,
    params: dict[str, Tensor],
    inputs: ModelInputs,
    graph: SpatialGraph | GraphTensors,
) -> Tensor:
    """Embed, two mean-aggregation graph convolutions, a ReLU dense layer
    and a linear head. Returns (n,) predictions in scaled target space."""
    H = _node_features(spec, params, inputs)
    for layer in range(1, N_CONV_LAYERS + 1):
        layer_params = GcnLayerParams(
            params[f"gcn{layer}.W_self"], params[f"gcn{layer}.W_neigh"]
        )
        H = gcn_layer(H, graph, layer_params)
    H = dense(H, params["dense.W"], params["dense.b"], "relu")
    out = dense(H, params["out.W"], params["out.b"])
    return reshape(out, (inputs.n_rows,))


def forward_pd_tgcn(
    spec: ModelSpec,
    params: dict[str, Tensor],
    inputs: ModelInputs,
    graph: SpatialGraph | GraphTensors,
    attention_log: list | None = None,
) -> Tensor:
    """Embed, two transformer graph convolutions sharing the same edge
    attributes, and a linear head. Returns (n,) predictions."""
    H = _node_features(spec, params, inputs)
    for layer in range(1, N_CONV_LAYERS + 1):
        H = transformer_conv(
            H,
            graph,
            _tc_params(params, layer, spec.heads),
            attention_log=attention_log,
        )
    out = dense(H, params["out.W"], params["out.b"])
    return reshape(out, (inputs.n_rows,))


def forward(
    spec: ModelSpec,
    params: dict[str, Tensor],
    inputs: ModelInputs,
    graph: SpatialGraph | GraphTensors,
    attention_log: list | None = None,
) -> Tensor:
    """Dispatch to the forward pass of ``spec.kind``."""
    if spec.kind == "pd_gcn":
        return forward_pd_gcn(spec, params, inputs, graph)
    if spec.kind == "pd_tgcn":
        return forward_pd_tgcn(spec, params, inputs, graph, attention_log)
    raise InvalidInputError(f"{spec.kind} has no graph forward pass")


# -- hedonic baseline ----------------------------------------------------


def linreg_design(spec: ModelSpec, inputs: ModelInputs) -> np.ndarray:
    """Continuous columns followed by one-hot categorical columns.

    Id 0 is the slot for levels unseen in training and id 1 the first
    seen level; both share the reference row of zeros, so the design
    stays full rank next to the intercept.
    """
    blocks = [inputs.continuous]
    for c, emb in enumerate(spec.embedding_specs):
        ids = inputs.categorical[:, c]
        onehot = np.zeros((inputs.n_rows, max(emb.cardinality - 2, 0)))
        rows = np.flatnonzero(ids > 1)
        onehot[rows, ids[rows] - 2] = 1.0
        blocks.append(onehot)
    return np.concatenate(blocks, axis=1)


def fit_linreg(
    X: np.ndarray, y: np.ndarray, ridge: float = LINREG_RIDGE
) -> np.ndarray:
    """Least-squares fit of ``y ~ a0 + X a`` via the normal equations.

    Parameters
    ----------
    X : np.ndarray
        (n, d) design matrix without intercept column, n > d.
    y : np.ndarray
        (n,) targets.
    ridge : float, optional
        Jitter added to the diagonal of the normal matrix. It keeps
        all-zero columns (constant features) solvable; collinear
        non-zero columns raise ``SingularSystemError``.

    Returns
    -------
    np.ndarray
        (d + 1,) coefficients, intercept first.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidShapeError(
            f"Design of shape {X.shape} does not match {len(y)} targets"
        )
    if len(X) <= X.shape[1]:
        raise InvalidInputError(
            f"Need more rows than columns. Got {X.shape}"
        )
    X1 = np.column_stack([np.ones(len(X)), X])
    # all-zero columns only pick up a zero coefficient under the jitter
    active = X1[:, np.any(X1 != 0, axis=0)]
    rank = np.linalg.matrix_rank(active)
    if rank < active.shape[1]:
        raise SingularSystemError(
            f"Normal equations are singular: design of rank {rank} "
            f"has {active.shape[1]} non-zero columns"
        )
    normal = X1.T @ X1 + ridge * np.eye(X1.shape[1])
    try:
        factor = linalg.cho_factor(normal)
    except linalg.LinAlgError as err:
        raise SingularSystemError(str(err)) from err
    return linalg.cho_solve(factor, X1.T @ y)


def predict_linreg(coef: np.ndarray, X: np.ndarray) -> np.ndarray:
    return coef[0] + np.asarray(X, dtype=np.float64) @ coef[1:]


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(
    dest_path: Path,
    spec: ModelSpec,
    params: dict[str, Tensor],
    extra: dict | None = None,
):
    """Write ``{model_kind, spec, tensors, ...extra}`` as JSON."""
    document = {
        "model_kind": spec.kind,
        "spec": spec.to_dict(),
        "tensors": {
            name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }
    if extra:
        document.update(extra)
    save_json(document, dest_path)
    logger.debug(f"Saved {spec.kind} checkpoint to {dest_path}")


def params_from_document(document: dict) -> dict[str, Tensor]:
    params = {}
    for name, entry in document["tensors"].items():
        data = np.array(entry["data"], dtype=np.float64).reshape(
            entry["shape"]
        )
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def load_checkpoint(
    src_path: Path,
) -> tuple[ModelSpec, dict[str, Tensor], dict]:
    """Read a checkpoint; returns the spec, parameters and any extra
    fields stored alongside them."""
    document = load_json(src_path)
    spec = ModelSpec.from_dict(document["spec"])
    if document["model_kind"] != spec.kind:
        raise InvalidInputError(
            f"Checkpoint kind {document['model_kind']} does not match "
            f"its spec ({spec.kind})"
        )
    params = params_from_document(document)
    extra = {
        k: v
        for k, v in document.items()
        if k not in ("schema_version", "model_kind", "spec", "tensors")
    }
    return spec, params, extra
