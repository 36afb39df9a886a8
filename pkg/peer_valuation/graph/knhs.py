"""k-nearest similar house sampling (KNHS) and the directed peer graph.

Stage one (``geo.geo_neighborhoods``) keeps the houses within ``t`` km of
each house. Stage two, implemented here, keeps the ``k`` candidates most
similar in (weighted) feature space and lays them out around the center
house. Every selected peer ``j`` of house ``i`` becomes an edge ``j -> i``
carrying ``[geo_km, feat_dist, rank]``.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Mapping, Sequence

import numpy as np
from loguru import logger

from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.geo import (
    DEFAULT_MATRIX_CAP,
    GeoNeighborhood,
    geo_neighborhoods,
)
from peer_valuation.io import load_json, save_json

if TYPE_CHECKING:
    from peer_valuation.preproc.records import HouseRecord

Variant = Literal["normal", "random", "geo"]
VARIANTS: tuple[str, ...] = ("normal", "random", "geo")
EDGE_ATTR_NAMES = ("geo_km", "feat_dist", "rank")


@dataclass(frozen=True)
class FeatureWeights:
    """Per-feature weights of the similarity distance, all finite and > 0."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidInputError(
                f"Feature weights must be finite and > 0. Got {w.tolist()}"
            )
        object.__setattr__(self, "w", w)

    @classmethod
    def ones(cls, n_features: int) -> "FeatureWeights":
        return cls(np.ones(n_features))

    @classmethod
    def from_mapping(
        cls, feature_names: Sequence[str], weights: Mapping[str, float]
    ) -> "FeatureWeights":
        """Build weights from ``{feature: weight}``; unnamed features get 1."""
        unknown = set(weights) - set(feature_names)
        if unknown:
            raise InvalidInputError(
                f"Weights given for unknown features {sorted(unknown)}. "
                f"Expected a subset of {list(feature_names)}"
            )
        return cls(np.array([weights.get(f, 1.0) for f in feature_names]))

    def __len__(self) -> int:
        return len(self.w)


@dataclass
class KnhsSequence:
    """The peers of one house, laid out with the house in the middle.

    ``ordered`` holds house indices; positions next to the center hold the
    best-ranked peers and rank grows moving outward on each side.
    ``distances`` holds the feature distance of each entry to the center
    (0 for the center itself), ``geo_km`` the geodesic distance and
    ``ranks`` the similarity rank (0 for the center).
    """

    center: int
    ordered: list[int]
    distances: list[float]
    geo_km: list[float]
    ranks: list[int]
    degenerate: bool = False

    @property
    def peers(self) -> list[tuple[int, float, float, int]]:
        """(index, geo_km, feat_dist, rank) for every peer, by rank."""
        rows = [
            (i, g, d, r)
            for i, g, d, r in zip(
                self.ordered, self.geo_km, self.distances, self.ranks
            )
            if r > 0
        ]
        return sorted(rows, key=lambda row: row[3])


@dataclass
class SpatialGraph:
    """Directed peer graph; edge ``(src, dst)`` means src informs dst."""

    n_nodes: int
    edges: np.ndarray = field(
        default_factory=lambda: np.empty((0, 2), dtype=np.int64)
    )
    edge_attrs: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), dtype=np.float64)
    )

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.edge_attrs = np.asarray(
            self.edge_attrs, dtype=np.float64
        ).reshape(-1, len(EDGE_ATTR_NAMES))
        if len(self.edges) != len(self.edge_attrs):
            raise InvalidInputError(
                f"Got {len(self.edges)} edges but "
                f"{len(self.edge_attrs)} attribute rows"
            )
        if len(self.edges) and (
            self.edges.min() < 0 or self.edges.max() >= self.n_nodes
        ):
            raise InvalidInputError("Edge endpoints out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise InvalidInputError("Self-loops are not allowed")
        keys = self.edges[:, 0] * max(self.n_nodes, 1) + self.edges[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise InvalidInputError("Duplicate (src, dst) edges")
        if not np.all(np.isfinite(self.edge_attrs)):
            raise InvalidInputError("Edge attributes must be finite")

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def permuted(self, perm: np.ndarray) -> "SpatialGraph":
        """Relabel nodes so that old node ``perm[new]`` becomes ``new``."""
        perm = np.asarray(perm, dtype=np.int64)
        new_label = np.empty_like(perm)
        new_label[perm] = np.arange(len(perm))
        return SpatialGraph(
            self.n_nodes, new_label[self.edges], self.edge_attrs.copy()
        )

    def to_dict(self) -> dict:
        return {
            "n_nodes": int(self.n_nodes),
            "edges": self.edges.tolist(),
            "edge_attrs": self.edge_attrs.tolist(),
        }

    @classmethod
    def from_dict(cls, document: dict) -> "SpatialGraph":
        return cls(
            n_nodes=int(document["n_nodes"]),
            edges=np.array(document["edges"], dtype=np.int64),
            edge_attrs=np.array(document["edge_attrs"], dtype=np.float64),
        )

    def save(self, dest_path: Path):
        save_json(self.to_dict(), dest_path)

    @classmethod
    def load(cls, src_path: Path) -> "SpatialGraph":
        return cls.from_dict(load_json(src_path))


def feature_distance(
    a: np.ndarray, b: np.ndarray, weights: FeatureWeights | None = None
) -> float:
    """Weighted Euclidean distance between two feature vectors.

    With unit weights (the default) this is the plain Euclidean distance.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidInputError(
            f"Feature vectors differ in length: {len(a)} vs {len(b)}"
        )
    if weights is not None and len(weights) != len(a):
        raise InvalidInputError(
            f"Expected {len(a)} feature weights. Got {len(weights)}"
        )
    return float(_feature_distances(a, b[None, :], weights)[0])


def _feature_distances(
    center: np.ndarray, others: np.ndarray, weights: FeatureWeights | None
) -> np.ndarray:
    sq = (others - center[None, :]) ** 2
    if weights is not None:
        sq = sq * weights.w[None, :]
    return np.sqrt(sq.sum(axis=1))


def _center_out(center: int, peers_by_rank: list[int]) -> tuple[list, int]:
    """Place peers around the center, best rank adjacent, alternating sides
    starting on the left. Returns the layout and the center position."""
    length = len(peers_by_rank) + 1
    mid = length // 2
    layout: list[int | None] = [None] * length
    layout[mid] = center
    left, right = mid - 1, mid + 1
    go_left = True
    for peer in peers_by_rank:
        if (go_left and left >= 0) or right >= length:
            layout[left] = peer
            left -= 1
        else:
            layout[right] = peer
            right += 1
        go_left = not go_left
    return layout, mid


def knhs_select(
    center: int,
    geo_nbhd: GeoNeighborhood,
    features: np.ndarray,
    weights: FeatureWeights,
    k: int,
    variant: Variant = "normal",
    rng: np.random.Generator | None = None,
) -> KnhsSequence:
    """Select and order the ``k`` peers of one house.

    Parameters
    ----------
    center : int
        Index of the house being valued.
    geo_nbhd : GeoNeighborhood
        The stage-one candidates of ``center``.
    features : np.ndarray
        (n, l) matrix of scaled similarity features for all houses.
    weights : FeatureWeights
        Per-feature weights, length l.
    k : int
        Number of peers to keep (all candidates if fewer).
    variant : {"normal", "random", "geo"}
        "normal" keeps the most feature-similar candidates (ties broken by
        geodesic distance, then index), "geo" the geographically nearest,
        "random" a uniform sample drawn from ``rng``.
    rng : np.random.Generator, optional
        Required for the "random" variant.

    Returns
    -------
    KnhsSequence
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1. Got {k}")
    if variant not in VARIANTS:
        raise InvalidInputError(
            f"Unknown KNHS variant {variant}. Expected one of {VARIANTS}"
        )
    if len(weights) != features.shape[1]:
        raise InvalidInputError(
            f"Expected {features.shape[1]} feature weights. "
            f"Got {len(weights)}"
        )
    if geo_nbhd.center != center:
        raise InvalidInputError(
            f"Neighborhood of house {geo_nbhd.center} passed for {center}"
        )

    if len(geo_nbhd) == 0:
        logger.debug(f"House {center} has no geographic peers")
        return KnhsSequence(center, [center], [0.0], [0.0], [0], True)

    cand = geo_nbhd.indices
    geo_km = geo_nbhd.distances_km
    feat_d = _feature_distances(features[center], features[cand], weights)

    if variant == "normal":
        order = np.lexsort((cand, geo_km, feat_d))[:k]
    elif variant == "geo":
        # stage one output is already sorted by (distance, index)
        order = np.arange(min(k, len(cand)))
    else:
        if rng is None:
            raise InvalidInputError("The random variant needs a seeded rng")
        order = rng.choice(len(cand), size=min(k, len(cand)), replace=False)

    peers = [int(cand[o]) for o in order]
    info = {
        int(cand[o]): (float(geo_km[o]), float(feat_d[o]), r + 1)
        for r, o in enumerate(order)
    }
    layout, _ = _center_out(center, peers)
    info[center] = (0.0, 0.0, 0)
    return KnhsSequence(
        center=center,
        ordered=list(layout),
        distances=[info[i][1] for i in layout],
        geo_km=[info[i][0] for i in layout],
        ranks=[info[i][2] for i in layout],
    )


def build_graph_from_arrays(
    coords: np.ndarray,
    features: np.ndarray,
    t: float,
    k: int,
    weights: FeatureWeights | None = None,
    variant: Variant = "normal",
    seed: int = 0,
    matrix_cap: int = DEFAULT_MATRIX_CAP,
) -> SpatialGraph:
    """Build the peer graph from (n, 2) coordinates and (n, l) features.

    The random variant draws each node's sample from its own generator
    seeded with ``seed + node``, so the result does not depend on the
    order in which nodes are processed.
    """
    features = np.asarray(features, dtype=np.float64)
    n = len(coords)
    if n == 0:
        raise InvalidInputError("Cannot build a graph without houses")
    if features.ndim != 2 or len(features) != n:
        raise InvalidInputError(
            f"Expected a feature matrix with {n} rows. Got {features.shape}"
        )
    if weights is None:
        weights = FeatureWeights.ones(features.shape[1])

    neighborhoods = geo_neighborhoods(coords, t, matrix_cap=matrix_cap)
    edges, attrs = [], []
    for i, nbhd in enumerate(neighborhoods):
        rng = (
            np.random.default_rng(seed + i) if variant == "random" else None
        )
        seq = knhs_select(i, nbhd, features, weights, k, variant, rng)
        for j, g, d, r in seq.peers:
            edges.append((j, i))
            attrs.append((g, d, float(r)))

    graph = SpatialGraph(n, np.array(edges, dtype=np.int64), np.array(attrs))
    summary = graph_summary(graph)
    logger.info(
        f"Built {variant} KNHS graph: {summary['n_nodes']} nodes, "
        f"{summary['n_edges']} edges, {summary['n_isolated']} isolated "
        f"(t={t} km, k={k})"
    )
    return graph


def build_graph(
    records: "Sequence[HouseRecord]",
    t: float,
    k: int,
    weights: FeatureWeights | Mapping[str, float] | None = None,
    variant: Variant = "normal",
    seed: int = 0,
    similarity_features: Sequence[str] | None = None,
    matrix_cap: int = DEFAULT_MATRIX_CAP,
) -> SpatialGraph:
    """Build the KNHS peer graph over a list of house records.

    Similarity features are min-max scaled over all records before
    distances are taken. Weights may be given as a ``{feature: weight}``
    mapping; features not named keep weight 1.
    """
    from peer_valuation.preproc.features import similarity_matrix

    if len(records) == 0:
        raise InvalidInputError("Cannot build a graph without houses")
    names, features = similarity_matrix(records, similarity_features)
    if weights is None or isinstance(weights, Mapping):
        weights = FeatureWeights.from_mapping(names, dict(weights or {}))
    coords = np.array([(r.point.lat, r.point.lon) for r in records])
    return build_graph_from_arrays(
        coords, features, t, k, weights, variant, seed, matrix_cap
    )


def graph_summary(graph: SpatialGraph) -> dict:
    """Node and edge counts, isolated nodes and in-degree statistics."""
    deg = graph.in_degree()
    return {
        "n_nodes": int(graph.n_nodes),
        "n_edges": int(graph.n_edges),
        "n_isolated": int(np.sum(deg == 0)),
        "mean_in_degree": float(deg.mean()) if graph.n_nodes else 0.0,
        "max_in_degree": int(deg.max()) if graph.n_nodes else 0,
    }
