"""Feature matrices for peer selection and for the models.

``similarity_matrix`` is a property of the features alone and is shared by
every split. ``FeaturePipeline`` holds the statistics fitted on the training
split: continuous and target scalers, categorical levels and the edge
attribute scaler.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.knhs import SpatialGraph
from peer_valuation.nn.layers import EmbeddingSpec
from peer_valuation.nn.models import ModelInputs
from peer_valuation.preproc.records import HouseRecord
from peer_valuation.preproc.scaling import Scaler

BASE_CONTINUOUS = ("appraisal_uf", "area_m2")


def continuous_names(records: Sequence[HouseRecord]) -> list[str]:
    """Appraisal and area first, then the record's extra continuous
    columns in their stored order."""
    extra = list(records[0].continuous) if records else []
    return [*BASE_CONTINUOUS, *extra]


def categorical_names(records: Sequence[HouseRecord]) -> list[str]:
    return list(records[0].categorical) if records else []


def continuous_matrix(
    records: Sequence[HouseRecord], names: Sequence[str]
) -> np.ndarray:
    """(n, len(names)) raw continuous values."""
    known = set(continuous_names(records))
    unknown = [name for name in names if name not in known]
    if unknown:
        raise InvalidInputError(
            f"Unknown continuous features {unknown}. "
            f"Expected a subset of {sorted(known)}"
        )
    cols = []
    for name in names:
        if name in BASE_CONTINUOUS:
            cols.append([getattr(r, name) for r in records])
        else:
            cols.append([r.continuous[name] for r in records])
    return np.array(cols, dtype=np.float64).T.reshape(len(records), -1)


def similarity_matrix(
    records: Sequence[HouseRecord], names: Sequence[str] | None = None
) -> tuple[list[str], np.ndarray]:
    """Min-max scaled similarity features over all records.

    Returns the feature names and the (n, l) scaled matrix used by KNHS.
    """
    names = list(names) if names else continuous_names(records)
    raw = continuous_matrix(records, names)
    return names, Scaler.fit(raw, "minmax").transform(raw)


@dataclass
class FeaturePipeline:
    """Train-fitted preprocessing for the models."""

    continuous: list[str]
    log_features: list[str]
    categorical: list[str]
    levels: dict[str, list[str]]
    log_scaler: Scaler | None
    plain_scaler: Scaler | None
    target_scaler: Scaler
    edge_scaler: Scaler

    @classmethod
    def fit(
        cls,
        records: Sequence[HouseRecord],
        train_idx: np.ndarray,
        graph: SpatialGraph,
        log_features: Sequence[str] = ("area_m2", "appraisal_uf"),
    ) -> "FeaturePipeline":
        """Fit every statistic on the rows in ``train_idx``.

        Categorical levels are the sorted values seen in training plus
        ``"<unknown>"`` at id 0. Edge attributes are scaled with bounds
        from the edges pointing into training nodes.
        """
        train_idx = np.asarray(train_idx, dtype=np.int64)
        if len(train_idx) == 0:
            raise InvalidInputError("The training split is empty")
        train = [records[i] for i in train_idx]
        names = continuous_names(records)
        log_cols = [f for f in names if f in set(log_features)]
        plain_cols = [f for f in names if f not in set(log_features)]

        levels = {
            c: ["<unknown>", *sorted({r.categorical[c] for r in train})]
            for c in categorical_names(records)
        }

        in_train = np.zeros(graph.n_nodes, dtype=bool)
        in_train[train_idx] = True
        train_edges = graph.edge_attrs[in_train[graph.dst]]
        if len(train_edges) == 0:
            train_edges = np.zeros((1, graph.edge_attrs.shape[1]))

        prices = np.array([r.price_uf for r in train])
        log_scaler = plain_scaler = None
        if log_cols:
            log_raw = continuous_matrix(train, log_cols)
            log_scaler = Scaler.fit(log_raw, "log_then_minmax")
        if plain_cols:
            plain_raw = continuous_matrix(train, plain_cols)
            plain_scaler = Scaler.fit(plain_raw, "minmax")
        return cls(
            continuous=names,
            log_features=log_cols,
            categorical=categorical_names(records),
            levels=levels,
            log_scaler=log_scaler,
            plain_scaler=plain_scaler,
            target_scaler=Scaler.fit(prices, "log_then_minmax"),
            edge_scaler=Scaler.fit(train_edges, "minmax"),
        )

    @property
    def plain_features(self) -> list[str]:
        return [f for f in self.continuous if f not in self.log_features]

    @property
    def embedding_specs(self) -> tuple[EmbeddingSpec, ...]:
        return tuple(
            EmbeddingSpec.for_cardinality(len(self.levels[c]))
            for c in self.categorical
        )

    @property
    def continuous_dim(self) -> int:
        return len(self.continuous)

    def inputs(self, records: Sequence[HouseRecord]) -> ModelInputs:
        """Scaled continuous columns (log-scaled block first) and
        categorical ids; unseen levels map to id 0."""
        blocks = []
        if self.log_scaler is not None:
            raw = continuous_matrix(records, self.log_features)
            blocks.append(self.log_scaler.transform(raw))
        if self.plain_scaler is not None:
            raw = continuous_matrix(records, self.plain_features)
            blocks.append(self.plain_scaler.transform(raw))
        continuous = (
            np.concatenate(blocks, axis=1)
            if blocks
            else np.empty((len(records), 0))
        )
        categorical = np.zeros(
            (len(records), len(self.categorical)), dtype=np.int64
        )
        for c, name in enumerate(self.categorical):
            lookup = {lv: i for i, lv in enumerate(self.levels[name])}
            categorical[:, c] = [
                lookup.get(r.categorical[name], 0) for r in records
            ]
        return ModelInputs(continuous, categorical)

    def target(self, records: Sequence[HouseRecord]) -> np.ndarray:
        prices = np.array([r.price_uf for r in records], dtype=np.float64)
        return self.target_scaler.transform(prices)

    def prices(self, scaled: np.ndarray) -> np.ndarray:
        """Map scaled predictions back to UF."""
        return self.target_scaler.inverse(np.asarray(scaled))

    def edge_features(self, graph: SpatialGraph) -> np.ndarray:
        if graph.n_edges == 0:
            return graph.edge_attrs.copy()
        return self.edge_scaler.transform(graph.edge_attrs)

    def to_dict(self) -> dict:
        return {
            "continuous": self.continuous,
            "log_features": self.log_features,
            "categorical": self.categorical,
            "levels": self.levels,
            "log_scaler": self.log_scaler and self.log_scaler.to_dict(),
            "plain_scaler": self.plain_scaler and self.plain_scaler.to_dict(),
            "target_scaler": self.target_scaler.to_dict(),
            "edge_scaler": self.edge_scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, document: dict) -> "FeaturePipeline":
        def scaler(key):
            entry = document.get(key)
            return Scaler.from_dict(entry) if entry else None

        return cls(
            continuous=list(document["continuous"]),
            log_features=list(document["log_features"]),
            categorical=list(document["categorical"]),
            levels={k: list(v) for k, v in document["levels"].items()},
            log_scaler=scaler("log_scaler"),
            plain_scaler=scaler("plain_scaler"),
            target_scaler=Scaler.from_dict(document["target_scaler"]),
            edge_scaler=Scaler.from_dict(document["edge_scaler"]),
        )
