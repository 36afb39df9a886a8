import numpy as np
import pytest

from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.geo import (
    EARTH_RADIUS_KM,
    GeoPoint,
    geo_neighborhoods,
    haversine_km,
    haversine_row,
)

ONE_DEGREE_KM = np.pi / 180 * EARTH_RADIUS_KM


@pytest.fixture()
def equator_line():
    """Eleven points 0.01 degrees apart on the equator."""
    return np.column_stack([np.zeros(11), np.linspace(0.0, 0.1, 11)])


@pytest.fixture()
def scattered():
    rng = np.random.default_rng(3)
    lat = -33.45 + rng.uniform(-0.1, 0.1, 200)
    lon = -70.65 + rng.uniform(-0.1, 0.1, 200)
    return np.column_stack([lat, lon])


def test_haversine_identical_points_is_zero():
    p = GeoPoint(-33.45, -70.65)
    assert haversine_km(p, p) == 0.0


def test_haversine_one_degree_of_latitude():
    d = haversine_km(GeoPoint(0.0, 10.0), GeoPoint(1.0, 10.0))
    assert d == pytest.approx(ONE_DEGREE_KM, rel=1e-12)


def test_haversine_antipodal():
    d = haversine_km(GeoPoint(0.0, 0.0), GeoPoint(0.0, 180.0))
    assert d == pytest.approx(np.pi * EARTH_RADIUS_KM, rel=1e-12)
    assert np.isfinite(d)


def test_haversine_is_symmetric():
    a, b = GeoPoint(-33.4, -70.6), GeoPoint(-33.0, -71.6)
    assert haversine_km(a, b) == pytest.approx(haversine_km(b, a), abs=1e-9)


@pytest.mark.parametrize(
    "lat, lon", [(91.0, 0.0), (-90.5, 0.0), (0.0, 180.5), (np.nan, 0.0)]
)
def test_geopoint_rejects_out_of_range(lat, lon):
    with pytest.raises(InvalidInputError):
        GeoPoint(lat, lon)


def test_haversine_rejects_non_points():
    with pytest.raises(InvalidInputError, match="Expected a GeoPoint"):
        haversine_km((0.0, 0.0), GeoPoint(0.0, 0.0))


def test_neighborhoods_of_a_line(equator_line):
    """At 2 km only the adjacent points (about 1.11 km) qualify."""
    nbhds = geo_neighborhoods(equator_line, t=2.0)
    assert len(nbhds) == 11
    assert nbhds[0].indices.tolist() == [1]
    assert nbhds[5].indices.tolist() == [4, 6]
    assert nbhds[10].indices.tolist() == [9]
    for nb in nbhds:
        assert nb.center not in nb.indices
        assert np.all(nb.distances_km < 2.0)


def test_neighborhood_members_sorted_by_distance(equator_line):
    nb = geo_neighborhoods(equator_line, t=5.0)[0]
    assert nb.indices.tolist() == [1, 2, 3, 4]
    assert np.all(np.diff(nb.distances_km) > 0)
    assert nb.members[0] == (1, pytest.approx(0.01 * ONE_DEGREE_KM))


def test_threshold_is_strict(equator_line):
    lats, lons = equator_line[:, 0], equator_line[:, 1]
    t = haversine_row(lats[0], lons[0], lats, lons)[2]
    nb = geo_neighborhoods(equator_line, t=t)[0]
    assert nb.indices.tolist() == [1]


def test_isolated_house_has_empty_neighborhood():
    coords = np.array([[0.0, 0.0], [0.0, 0.001], [10.0, 10.0]])
    nbhds = geo_neighborhoods(coords, t=1.0)
    assert len(nbhds[2]) == 0
    assert nbhds[0].indices.tolist() == [1]


def test_tree_path_matches_matrix_path(scattered):
    full = geo_neighborhoods(scattered, t=2.5)
    streamed = geo_neighborhoods(scattered, t=2.5, matrix_cap=10)
    for a, b in zip(full, streamed):
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_allclose(a.distances_km, b.distances_km)


def test_accepts_geopoints():
    points = [GeoPoint(0.0, 0.0), GeoPoint(0.0, 0.01)]
    nbhds = geo_neighborhoods(points, t=5.0)
    assert nbhds[1].indices.tolist() == [0]


@pytest.mark.parametrize("t", [0.0, -1.0, np.inf])
def test_invalid_threshold(equator_line, t):
    with pytest.raises(InvalidInputError, match="Threshold t must be > 0"):
        geo_neighborhoods(equator_line, t=t)


def test_invalid_coordinate_array():
    with pytest.raises(InvalidInputError, match="shape"):
        geo_neighborhoods(np.zeros((3, 3)), t=1.0)
