"""A synthetic housing market with tunable spatial autocorrelation.

Every house is either a condo or not (``condo`` is 1.0 or 0.0), and each
of the two housing types has its own location value. Log price
decomposes as::

    log price = log(BASE_UF_PER_M2) + log(area)
                + h(features)                     # linear in the features
                + 0.45 * spatial_strength * z_t   # location value of type t
                + eps                             # eps ~ N(0, 0.05^2)

with ``z_t = sqrt(SHARED) * c + sqrt(1 - SHARED) * u_t``. ``c``, ``u_0``
and ``u_1`` are independent sums of Gaussian bumps over the bounding box,
each standardized over the houses; ``z_t`` is clipped to [-2, 2] and
``eps`` to +-0.15. ``h`` is

    0.02 * (rooms - 3.5) - 0.0015 * (age_years - 30) + 0.03 * condo
    + MATERIAL_EFFECT[material] + QUALITY_EFFECT[quality]

Appraisals follow the features but not the location::

    log appraisal = log(price without z_t and eps) - log(sqrt(10)) + eta

with ``eta ~ N(0, 0.03^2)`` clipped to +-0.09. Log area carries its own
smooth location component. The categorical ``location_rating`` bins
``spatial_strength * z_t + N(0, 1)`` into five levels, so one house's
rating is a weak view of its location value while the ratings of nearby
houses of the same type average to a strong one. Houses of the other
type only share the ``c`` part.

Every bound above is chosen so that all generated sales pass the
exclusion rules of ``peer_valuation.preproc.filtering``.
"""

import datetime
from dataclasses import dataclass

import numpy as np
from loguru import logger

from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.geo import GeoPoint, haversine_row
from peer_valuation.preproc.records import HouseRecord

BASE_UF_PER_M2 = 105.0
FIELD_SCALE = 0.45
NOISE_SD, NOISE_CLIP = 0.05, 0.15
APPRAISAL_SD, APPRAISAL_CLIP = 0.03, 0.09
APPRAISAL_FACTOR = 1.0 / np.sqrt(10.0)
MATERIAL_EFFECT = {"adobe": -0.03, "brick": 0.0, "concrete": 0.03}
QUALITY_EFFECT = {"low": -0.04, "mid": -0.015, "good": 0.015, "high": 0.04}
CONDO_EFFECT = 0.03
SHARED_LOCATION = 0.25
RATING_CUTS = (-1.0, -0.35, 0.35, 1.0)
FIRST_SALE = datetime.date(2015, 1, 1)
SALE_PERIOD_DAYS = 5 * 365
MIN_HOUSES = 10


@dataclass(frozen=True)
class SyntheticMarket:
    """Geometry of the synthetic city.

    ``bbox`` is (min_lat, min_lon, max_lat, max_lon). The box is cut into
    a ``grid`` of (rows, cols) districts named ``D<row><col>``.
    """

    bbox: tuple[float, float, float, float] = (-33.65, -70.85, -33.30, -70.45)
    grid: tuple[int, int] = (4, 4)
    n_bumps: int = 40
    bump_sigma_km: float = 2.0
    area_sigma_km: float = 5.0

    def __post_init__(self):
        min_lat, min_lon, max_lat, max_lon = self.bbox
        if not (min_lat < max_lat and min_lon < max_lon):
            raise InvalidInputError(f"Degenerate bounding box {self.bbox}")
        if min(self.grid) < 1 or self.n_bumps < 1:
            raise InvalidInputError("grid and n_bumps must be >= 1")

    @property
    def center(self) -> GeoPoint:
        min_lat, min_lon, max_lat, max_lon = self.bbox
        return GeoPoint((min_lat + max_lat) / 2, (min_lon + max_lon) / 2)

    def _edges(self) -> tuple[np.ndarray, np.ndarray]:
        min_lat, min_lon, max_lat, max_lon = self.bbox
        rows, cols = self.grid
        return (
            np.linspace(min_lat, max_lat, rows + 1),
            np.linspace(min_lon, max_lon, cols + 1),
        )

    def district_of(self, lat: np.ndarray, lon: np.ndarray) -> list[str]:
        lat_edges, lon_edges = self._edges()
        rows, cols = self.grid
        r = np.clip(np.searchsorted(lat_edges, lat, "right") - 1, 0, rows - 1)
        c = np.clip(np.searchsorted(lon_edges, lon, "right") - 1, 0, cols - 1)
        return [f"D{i}{j}" for i, j in zip(r, c)]

    def regions(self) -> dict[str, dict]:
        """Box region of every district, for the commune consistency
        rule."""
        lat_edges, lon_edges = self._edges()
        rows, cols = self.grid
        return {
            f"D{i}{j}": {
                "box": [
                    float(lat_edges[i]),
                    float(lon_edges[j]),
                    float(lat_edges[i + 1]),
                    float(lon_edges[j + 1]),
                ]
            }
            for i in range(rows)
            for j in range(cols)
        }

    def grouping(self) -> dict[str, list[str]]:
        """Adjacent 2 x 2 blocks of districts, named ``G1``, ``G2``, ..."""
        rows, cols = self.grid
        groups: dict[str, list[str]] = {}
        for bi, i0 in enumerate(range(0, rows, 2)):
            for bj, j0 in enumerate(range(0, cols, 2)):
                name = f"G{bi * ((cols + 1) // 2) + bj + 1}"
                groups[name] = [
                    f"D{i}{j}"
                    for i in range(i0, min(i0 + 2, rows))
                    for j in range(j0, min(j0 + 2, cols))
                ]
        return groups


def _bump_field(
    rng: np.random.Generator,
    market: SyntheticMarket,
    lat: np.ndarray,
    lon: np.ndarray,
    sigma_km: float,
) -> np.ndarray:
    """Sum of Gaussian bumps with N(0, 1) amplitudes, standardized over
    the given houses."""
    min_lat, min_lon, max_lat, max_lon = market.bbox
    centers_lat = rng.uniform(min_lat, max_lat, market.n_bumps)
    centers_lon = rng.uniform(min_lon, max_lon, market.n_bumps)
    amplitudes = rng.normal(0.0, 1.0, market.n_bumps)
    field = np.zeros(len(lat))
    for c_lat, c_lon, amp in zip(centers_lat, centers_lon, amplitudes):
        d = haversine_row(c_lat, c_lon, lat, lon)
        field += amp * np.exp(-0.5 * (d / sigma_km) ** 2)
    sd = field.std()
    return (field - field.mean()) / sd if sd > 0 else np.zeros(len(lat))


def generate_synthetic(
    n: int,
    spatial_strength: float,
    seed: int = 0,
    market: SyntheticMarket | None = None,
) -> list[HouseRecord]:
    """
    Draw ``n`` house sales from the synthetic market.

    Parameters
    ----------
    n : int
        Number of sales, at least 10.
    spatial_strength : float
        Weight of the smooth location value in log price, in [0, 1].
    seed : int, optional
        Seed of every random draw, by default 0.
    market : SyntheticMarket, optional
        City geometry; the default box covers about 39 x 37 km.

    Returns
    -------
    list of HouseRecord
        Sales with unique property ids, so no repeat sales occur.
    """
    if n < MIN_HOUSES:
        raise InvalidInputError(f"n must be >= {MIN_HOUSES}. Got {n}")
    if not 0.0 <= spatial_strength <= 1.0:
        raise InvalidInputError(
            f"spatial_strength must lie in [0, 1]. Got {spatial_strength}"
        )
    market = market or SyntheticMarket()
    rng = np.random.default_rng(seed)
    min_lat, min_lon, max_lat, max_lon = market.bbox

    lat = rng.uniform(min_lat, max_lat, n)
    lon = rng.uniform(min_lon, max_lon, n)
    condo = rng.integers(0, 2, n)
    shared = _bump_field(rng, market, lat, lon, market.bump_sigma_km)
    own = np.stack(
        [
            _bump_field(rng, market, lat, lon, market.bump_sigma_km)
            for _ in range(2)
        ]
    )
    weight = np.sqrt(SHARED_LOCATION)
    z = weight * shared + np.sqrt(1 - weight**2) * own[condo, np.arange(n)]
    z = np.clip(z, -2, 2)
    area_field = np.clip(
        _bump_field(rng, market, lat, lon, market.area_sigma_km), -1, 1
    )
    log_area = np.log(75.0) + 0.35 * area_field + rng.uniform(-0.2, 0.2, n)

    rooms = rng.integers(1, 7, n)
    age = rng.integers(0, 61, n)
    materials = rng.choice(sorted(MATERIAL_EFFECT), n)
    qualities = rng.choice(list(QUALITY_EFFECT), n)
    h = (
        0.02 * (rooms - 3.5)
        - 0.0015 * (age - 30)
        + CONDO_EFFECT * condo
        + np.array([MATERIAL_EFFECT[m] for m in materials])
        + np.array([QUALITY_EFFECT[q] for q in qualities])
    )
    eps = np.clip(rng.normal(0.0, NOISE_SD, n), -NOISE_CLIP, NOISE_CLIP)
    eta = np.clip(
        rng.normal(0.0, APPRAISAL_SD, n), -APPRAISAL_CLIP, APPRAISAL_CLIP
    )
    rating = np.digitize(
        spatial_strength * z + rng.normal(0.0, 1.0, n), RATING_CUTS
    )
    sale_offsets = rng.integers(0, SALE_PERIOD_DAYS, n)

    hedonic = np.log(BASE_UF_PER_M2) + log_area + h
    log_price = hedonic + FIELD_SCALE * spatial_strength * z + eps
    log_appraisal = hedonic + np.log(APPRAISAL_FACTOR) + eta

    center = market.center
    dist_center = haversine_row(center.lat, center.lon, lat, lon)
    districts = market.district_of(lat, lon)

    records = [
        HouseRecord(
            id=f"H{i:06d}",
            point=GeoPoint(float(lat[i]), float(lon[i])),
            price_uf=float(np.exp(log_price[i])),
            appraisal_uf=float(np.exp(log_appraisal[i])),
            area_m2=float(np.exp(log_area[i])),
            district=districts[i],
            sale_date=FIRST_SALE + datetime.timedelta(int(sale_offsets[i])),
            continuous={
                "rooms": float(rooms[i]),
                "age_years": float(age[i]),
                "condo": float(condo[i]),
                "dist_center_km": float(dist_center[i]),
            },
            categorical={
                "material": str(materials[i]),
                "quality": str(qualities[i]),
                "location_rating": f"r{rating[i] + 1}",
            },
        )
        for i in range(n)
    ]
    logger.info(
        f"Generated {n} synthetic sales "
        f"(spatial_strength={spatial_strength}, seed={seed})"
    )
    return records
