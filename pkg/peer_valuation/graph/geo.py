"""Great-circle distances and threshold neighborhoods between houses."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger
from scipy.spatial import cKDTree

from peer_valuation.errors import InvalidInputError

EARTH_RADIUS_KM = 6371.0
DEFAULT_MATRIX_CAP = 20_000


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (np.isfinite(self.lat) and np.isfinite(self.lon)):
            raise InvalidInputError(
                f"Coordinates must be finite. Got ({self.lat}, {self.lon})"
            )
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(
                f"Latitude {self.lat} is outside [-90, 90] degrees"
            )
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInputError(
                f"Longitude {self.lon} is outside [-180, 180] degrees"
            )


@dataclass
class GeoNeighborhood:
    """Houses within the distance threshold of a center house.

    ``indices`` and ``distances_km`` are parallel arrays sorted by ascending
    distance, ties broken by ascending index. The center is never included.
    """

    center: int
    indices: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int64)
    )
    distances_km: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.float64)
    )

    @property
    def members(self) -> list[tuple[int, float]]:
        return [
            (int(i), float(d))
            for i, d in zip(self.indices, self.distances_km)
        ]

    def __len__(self) -> int:
        return len(self.indices)


def as_latlon_array(points: Sequence[GeoPoint] | np.ndarray) -> np.ndarray:
    """Return an (n, 2) float array of validated (lat, lon) degrees."""
    if isinstance(points, np.ndarray):
        coords = np.asarray(points, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise InvalidInputError(
                f"Coordinates must be of shape (n, 2). Got {coords.shape}"
            )
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("Coordinates must be finite")
        if np.any(np.abs(coords[:, 0]) > 90) or np.any(
            np.abs(coords[:, 1]) > 180
        ):
            raise InvalidInputError("Coordinates out of range")
        return coords
    return np.array(
        [(p.lat, p.lon) for p in points], dtype=np.float64
    ).reshape(-1, 2)


def haversine_row(
    lat: float, lon: float, lats: np.ndarray, lons: np.ndarray
) -> np.ndarray:
    """Distances in km from one point to many, all in degrees."""
    phi_i = np.radians(lat)
    phi_j = np.radians(lats)
    d_phi = phi_j - phi_i
    d_lambda = np.radians(lons) - np.radians(lon)
    a = (
        np.sin(d_phi / 2.0) ** 2
        + np.cos(phi_i) * np.cos(phi_j) * np.sin(d_lambda / 2.0) ** 2
    )
    # rounding can push a marginally above 1 for antipodal points
    central_angle = 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return EARTH_RADIUS_KM * central_angle


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points on a sphere of mean Earth
    radius, in kilometers.

    Parameters
    ----------
    a, b : GeoPoint
        The two points.

    Returns
    -------
    float
        Distance in km, symmetric and exactly 0 for identical points.
    """
    for p in (a, b):
        if not isinstance(p, GeoPoint):
            raise InvalidInputError(f"Expected a GeoPoint. Got {p!r}")
    row = haversine_row(
        a.lat, a.lon, np.array([b.lat], float), np.array([b.lon], float)
    )
    return float(row[0])


def _neighborhood_from_row(
    center: int, row_km: np.ndarray, candidates: np.ndarray, t: float
) -> GeoNeighborhood:
    keep = (row_km < t) & (candidates != center)
    idx = candidates[keep]
    dist = row_km[keep]
    order = np.lexsort((idx, dist))
    return GeoNeighborhood(
        center=center,
        indices=idx[order].astype(np.int64),
        distances_km=dist[order],
    )


def _unit_sphere_xyz(coords: np.ndarray) -> np.ndarray:
    phi = np.radians(coords[:, 0])
    lam = np.radians(coords[:, 1])
    return np.column_stack(
        [np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)]
    )


def geo_neighborhoods(
    points: Sequence[GeoPoint] | np.ndarray,
    t: float,
    matrix_cap: int = DEFAULT_MATRIX_CAP,
) -> list[GeoNeighborhood]:
    """Find, for every house, all other houses closer than ``t`` km.

    Up to ``matrix_cap`` points the full pairwise distance matrix is built.
    Above it, candidates are retrieved per row from a k-d tree over unit
    sphere coordinates and then filtered with exact haversine distances,
    so both paths return the same neighborhoods.

    Parameters
    ----------
    points : sequence of GeoPoint or np.ndarray
        House locations, or an (n, 2) array of (lat, lon) degrees.
    t : float
        Distance threshold in km. Only distances strictly below ``t`` count.
    matrix_cap : int, optional
        Largest n for which the full matrix is materialised.

    Returns
    -------
    list[GeoNeighborhood]
        One neighborhood per input point, in input order.
    """
    if not (np.isfinite(t) and t > 0):
        raise InvalidInputError(f"Threshold t must be > 0 km. Got {t}")
    coords = as_latlon_array(points)
    n = len(coords)
    if n == 0:
        raise InvalidInputError("At least one point is required")
    lats, lons = coords[:, 0], coords[:, 1]
    all_idx = np.arange(n, dtype=np.int64)

    neighborhoods = []
    if n <= matrix_cap:
        for i in range(n):
            row = haversine_row(lats[i], lons[i], lats, lons)
            neighborhoods.append(_neighborhood_from_row(i, row, all_idx, t))
    else:
        logger.info(
            f"{n} points exceed the matrix cap of {matrix_cap}; "
            "streaming neighborhoods row by row"
        )
        xyz = _unit_sphere_xyz(coords)
        tree = cKDTree(xyz)
        # chord length for the threshold angle, padded against rounding
        angle = min(t / EARTH_RADIUS_KM, np.pi)
        chord = 2.0 * np.sin(angle / 2.0) * (1.0 + 1e-9) + 1e-12
        for i in range(n):
            cand = np.asarray(
                sorted(tree.query_ball_point(xyz[i], chord)), dtype=np.int64
            )
            row = haversine_row(lats[i], lons[i], lats[cand], lons[cand])
            neighborhoods.append(_neighborhood_from_row(i, row, cand, t))

    n_isolated = sum(1 for nb in neighborhoods if len(nb) == 0)
    if n_isolated:
        logger.debug(f"{n_isolated} of {n} houses have no peer within {t} km")
    return neighborhoods
