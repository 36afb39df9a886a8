import datetime

import pytest

from peer_valuation.graph.geo import GeoPoint
from peer_valuation.preproc.records import HouseRecord
from peer_valuation.preproc.synthetic import generate_synthetic


def make_record(
    i: int,
    lat: float = -33.45,
    lon: float = -70.65,
    price: float = 3000.0,
    appraisal: float = 1500.0,
    area: float = 80.0,
    district: str = "A",
    sale_date: datetime.date = datetime.date(2020, 1, 1),
    **continuous: float,
) -> HouseRecord:
    return HouseRecord(
        id=f"H{i:03d}",
        point=GeoPoint(lat, lon),
        price_uf=price,
        appraisal_uf=appraisal,
        area_m2=area,
        district=district,
        sale_date=sale_date,
        continuous=dict(continuous),
    )


@pytest.fixture()
def line_records():
    """Six houses on a parallel, roughly 0.9 km apart, in two communes."""
    return [
        make_record(
            i,
            lon=-70.65 + 0.01 * i,
            price=2000.0 + 150.0 * i,
            appraisal=1000.0 + 60.0 * i,
            area=60.0 + 5.0 * i,
            district="A" if i < 3 else "B",
            rooms=float(1 + i % 3),
        )
        for i in range(6)
    ]


@pytest.fixture(scope="session")
def synthetic_records():
    return generate_synthetic(120, spatial_strength=0.8, seed=7)
