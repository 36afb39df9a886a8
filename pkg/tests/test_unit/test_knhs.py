import numpy as np
import pytest

from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.geo import GeoNeighborhood, GeoPoint, haversine_km
from peer_valuation.graph.knhs import (
    FeatureWeights,
    SpatialGraph,
    build_graph,
    build_graph_from_arrays,
    feature_distance,
    graph_summary,
    knhs_select,
)


def neighborhood(center, indices, distances):
    return GeoNeighborhood(
        center,
        np.array(indices, dtype=np.int64),
        np.array(distances, dtype=np.float64),
    )


@pytest.fixture()
def one_feature():
    """House 0 at feature 0; candidates 1..5 at increasing distance."""
    return np.array([[0.0], [0.5], [0.1], [0.4], [0.2], [0.3]])


@pytest.fixture()
def cluster():
    rng = np.random.default_rng(0)
    lat = -33.45 + rng.uniform(-0.02, 0.02, 40)
    lon = -70.6 + rng.uniform(-0.02, 0.02, 40)
    coords = np.column_stack([lat, lon])
    features = rng.uniform(size=(40, 3))
    return coords, features


def test_feature_distance_unit_weights_is_euclidean():
    assert feature_distance([0, 0], [3, 4]) == pytest.approx(5.0)


def test_feature_distance_weighted():
    w = FeatureWeights(np.array([4.0, 1.0]))
    assert feature_distance([0, 0], [1, 0], w) == pytest.approx(2.0)


@pytest.mark.parametrize("w", [[0.0, 1.0], [-1.0, 1.0], [np.nan, 1.0]])
def test_feature_weights_must_be_positive(w):
    with pytest.raises(InvalidInputError, match="finite and > 0"):
        FeatureWeights(np.array(w))


def test_weights_for_unknown_feature():
    with pytest.raises(InvalidInputError, match="unknown features"):
        FeatureWeights.from_mapping(["area_m2"], {"rooms": 2.0})


def test_normal_variant_keeps_most_similar(one_feature):
    nb = neighborhood(0, [1, 2, 3, 4, 5], [0.1, 0.2, 0.3, 0.4, 0.5])
    seq = knhs_select(0, nb, one_feature, FeatureWeights.ones(1), k=3)
    assert [p[0] for p in seq.peers] == [2, 4, 5]
    assert [p[3] for p in seq.peers] == [1, 2, 3]


def test_center_out_layout(one_feature):
    nb = neighborhood(0, [1, 2, 3, 4, 5], [0.1, 0.2, 0.3, 0.4, 0.5])
    seq = knhs_select(0, nb, one_feature, FeatureWeights.ones(1), k=4)
    # ranks 1..4 are houses 2, 4, 5, 3
    assert seq.ordered == [5, 2, 0, 4, 3]
    assert seq.ranks == [3, 1, 0, 2, 4]
    assert seq.distances[2] == 0.0


def test_k_larger_than_candidates(one_feature):
    nb = neighborhood(0, [1, 3], [0.1, 0.2])
    seq = knhs_select(0, nb, one_feature, FeatureWeights.ones(1), k=8)
    assert len(seq.ordered) == 3
    assert {p[0] for p in seq.peers} == {1, 3}


def test_isolated_house_is_degenerate(one_feature):
    seq = knhs_select(
        0, neighborhood(0, [], []), one_feature, FeatureWeights.ones(1), k=3
    )
    assert seq.degenerate
    assert seq.ordered == [0]
    assert seq.peers == []


def test_ties_broken_by_geo_distance_then_index():
    features = np.array([[0.0], [1.0], [1.0], [1.0]])
    nb = neighborhood(0, [3, 1, 2], [0.2, 0.5, 0.5])
    seq = knhs_select(0, nb, features, FeatureWeights.ones(1), k=3)
    assert [p[0] for p in seq.peers] == [3, 1, 2]


def test_weight_changes_the_selection():
    features = np.array([[0.0, 0.0], [0.1, 0.5], [0.4, 0.0]])
    nb = neighborhood(0, [1, 2], [1.0, 1.0])
    plain = knhs_select(0, nb, features, FeatureWeights.ones(2), k=1)
    heavy = knhs_select(0, nb, features, FeatureWeights([10.0, 1.0]), k=1)
    assert plain.peers[0][0] == 2
    assert heavy.peers[0][0] == 1


def test_geo_variant_keeps_nearest(one_feature):
    nb = neighborhood(0, [1, 2, 3, 4, 5], [0.1, 0.2, 0.3, 0.4, 0.5])
    seq = knhs_select(
        0, nb, one_feature, FeatureWeights.ones(1), k=2, variant="geo"
    )
    assert [p[0] for p in seq.peers] == [1, 2]


def test_random_variant_is_seeded(one_feature):
    nb = neighborhood(0, [1, 2, 3, 4, 5], [0.1, 0.2, 0.3, 0.4, 0.5])

    def draw(seed):
        seq = knhs_select(
            0,
            nb,
            one_feature,
            FeatureWeights.ones(1),
            k=3,
            variant="random",
            rng=np.random.default_rng(seed),
        )
        return [p[0] for p in seq.peers]

    assert draw(11) == draw(11)
    assert set(draw(11)) <= {1, 2, 3, 4, 5}
    assert len(set(draw(11))) == 3


def test_random_variant_needs_rng(one_feature):
    nb = neighborhood(0, [1, 2], [0.1, 0.2])
    with pytest.raises(InvalidInputError, match="seeded rng"):
        knhs_select(
            0, nb, one_feature, FeatureWeights.ones(1), 1, variant="random"
        )


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"k": 0}, "k must be >= 1"),
        ({"k": 1, "variant": "nearest"}, "Unknown KNHS variant"),
    ],
)
def test_select_rejects_bad_arguments(one_feature, kwargs, message):
    nb = neighborhood(0, [1], [0.1])
    with pytest.raises(InvalidInputError, match=message):
        knhs_select(0, nb, one_feature, FeatureWeights.ones(1), **kwargs)


@pytest.mark.parametrize("variant", ["normal", "random", "geo"])
def test_graph_invariants(cluster, variant):
    coords, features = cluster
    graph = build_graph_from_arrays(
        coords, features, t=3.0, k=5, variant=variant, seed=4
    )
    assert graph.n_nodes == 40
    assert np.all(graph.src != graph.dst)
    assert np.all(graph.in_degree() <= 5)
    assert np.all(graph.edge_attrs[:, 0] < 3.0)
    assert set(graph.edge_attrs[:, 2]) <= {1.0, 2.0, 3.0, 4.0, 5.0}


def test_graph_is_deterministic(cluster):
    coords, features = cluster
    a = build_graph_from_arrays(coords, features, 3.0, 5, variant="random")
    b = build_graph_from_arrays(coords, features, 3.0, 5, variant="random")
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_array_equal(a.edge_attrs, b.edge_attrs)


def test_edges_point_into_the_valued_house():
    coords = np.array([[0.0, 0.0], [0.0, 0.001], [0.0, 1.0]])
    features = np.array([[0.0], [1.0], [0.5]])
    graph = build_graph_from_arrays(coords, features, t=1.0, k=3)
    assert sorted(map(tuple, graph.edges.tolist())) == [(0, 1), (1, 0)]
    assert graph_summary(graph)["n_isolated"] == 1


def test_build_graph_from_records(line_records):
    graph = build_graph(line_records, t=2.0, k=2, weights={"rooms": 2.0})
    assert graph.n_nodes == 6
    # every house has its line neighbours within 2 km
    assert np.all(graph.in_degree() >= 1)


def test_spatial_graph_validation():
    with pytest.raises(InvalidInputError, match="Self-loops"):
        SpatialGraph(2, np.array([[1, 1]]), np.zeros((1, 3)))
    with pytest.raises(InvalidInputError, match="Duplicate"):
        SpatialGraph(2, np.array([[0, 1], [0, 1]]), np.zeros((2, 3)))
    with pytest.raises(InvalidInputError, match="out of range"):
        SpatialGraph(2, np.array([[0, 2]]), np.zeros((1, 3)))


def test_spatial_graph_save_load(tmp_path, cluster):
    coords, features = cluster
    graph = build_graph_from_arrays(coords, features, 3.0, 4)
    graph.save(tmp_path / "graph.json")
    loaded = SpatialGraph.load(tmp_path / "graph.json")
    np.testing.assert_array_equal(loaded.edges, graph.edges)
    np.testing.assert_allclose(loaded.edge_attrs, graph.edge_attrs)


def test_permuted_graph_relabels_nodes():
    graph = SpatialGraph(3, np.array([[0, 1], [2, 1]]), np.ones((2, 3)))
    perm = np.array([1, 2, 0])
    relabeled = graph.permuted(perm)
    assert sorted(map(tuple, relabeled.edges.tolist())) == [(1, 0), (2, 0)]


def brute_force_edges(coords, features, t, k, w, variant):
    """Pairwise reference: every candidate pair checked one at a time."""
    points = [GeoPoint(lat, lon) for lat, lon in coords]
    rows = []
    for i, center in enumerate(points):
        cands = []
        for j, other in enumerate(points):
            geo = haversine_km(center, other)
            if j == i or geo >= t:
                continue
            feat = np.sqrt(np.sum(w * (features[i] - features[j]) ** 2))
            key = (feat, geo, j) if variant == "normal" else (geo, j)
            cands.append((key, j, geo, feat))
        for rank, (_, j, geo, feat) in enumerate(sorted(cands)[:k], 1):
            rows.append((j, i, geo, feat, float(rank)))
    return sorted(rows)


@pytest.mark.parametrize("variant", ["normal", "geo"])
@pytest.mark.parametrize("weight", [1.0, 1.5, 3.0])
@pytest.mark.parametrize("seed", range(4))
def test_graph_matches_brute_force(seed, weight, variant):
    rng = np.random.default_rng(seed)
    n = 30 + 15 * seed
    coords = np.column_stack(
        [rng.uniform(-33.5, -33.4, n), rng.uniform(-70.7, -70.6, n)]
    )
    features = rng.uniform(size=(n, 3))
    w = np.array([weight, 1.0, 1.0])
    graph = build_graph_from_arrays(
        coords, features, 4.0, 5, FeatureWeights(w), variant
    )
    got = sorted(
        (int(s), int(d), *map(float, a))
        for (s, d), a in zip(graph.edges, graph.edge_attrs)
    )
    expected = brute_force_edges(coords, features, 4.0, 5, w, variant)
    assert [row[:2] for row in got] == [row[:2] for row in expected]
    np.testing.assert_allclose(
        np.array(got)[:, 2:], np.array(expected)[:, 2:], rtol=1e-12
    )
