"""House records and their conversion to and from tables."""

import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from peer_valuation.config import SchemaConfig
from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.geo import GeoPoint
from peer_valuation.io import save_table_to_csv


@dataclass(frozen=True)
class HouseRecord:
    """One sale. Prices are in UF, an opaque positive unit of account."""

    id: str
    point: GeoPoint
    price_uf: float
    appraisal_uf: float
    area_m2: float
    district: str
    sale_date: datetime.date
    continuous: dict[str, float] = field(default_factory=dict)
    categorical: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("price_uf", "appraisal_uf", "area_m2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidInputError(
                    f"{name} must be finite and > 0. Got {value}"
                )

    @property
    def price_per_m2(self) -> float:
        return self.price_uf / self.area_m2


def records_to_frame(
    records: Sequence[HouseRecord], schema: SchemaConfig | None = None
) -> pd.DataFrame:
    """Lay records out as a table with the column names of ``schema``.

    Extra continuous and categorical fields follow the fixed columns in
    the order of the first record.
    """
    schema = schema or SchemaConfig()
    fixed = [
        schema.id_col,
        schema.lat_col,
        schema.lon_col,
        schema.price_col,
        schema.appraisal_col,
        schema.area_col,
        schema.district_col,
        schema.date_col,
    ]
    cont = list(records[0].continuous) if records else []
    cat = list(records[0].categorical) if records else []
    rows = [
        [
            r.id,
            r.point.lat,
            r.point.lon,
            r.price_uf,
            r.appraisal_uf,
            r.area_m2,
            r.district,
            r.sale_date.isoformat(),
            *(r.continuous[c] for c in cont),
            *(r.categorical[c] for c in cat),
        ]
        for r in records
    ]
    return pd.DataFrame(rows, columns=fixed + cont + cat)


def frame_to_records(
    frame: pd.DataFrame, schema: SchemaConfig
) -> list[HouseRecord]:
    """Build records from an already validated and typed table."""
    return [_record_from_row(row, schema) for row in frame.to_dict("records")]


def _record_from_row(by_name: dict, schema: SchemaConfig) -> HouseRecord:
    sale_date = by_name[schema.date_col]
    if isinstance(sale_date, pd.Timestamp):
        sale_date = sale_date.date()
    elif isinstance(sale_date, str):
        sale_date = datetime.date.fromisoformat(sale_date)
    return HouseRecord(
        id=str(by_name[schema.id_col]),
        point=GeoPoint(
            float(by_name[schema.lat_col]), float(by_name[schema.lon_col])
        ),
        price_uf=float(by_name[schema.price_col]),
        appraisal_uf=float(by_name[schema.appraisal_col]),
        area_m2=float(by_name[schema.area_col]),
        district=str(by_name[schema.district_col]),
        sale_date=sale_date,
        continuous={c: float(by_name[c]) for c in schema.continuous},
        categorical={c: str(by_name[c]) for c in schema.categorical},
    )


def schema_for(records: Sequence[HouseRecord]) -> SchemaConfig:
    """The default-named schema that reads back a table written by
    ``save_records_csv``."""
    if not records:
        return SchemaConfig()
    return SchemaConfig(
        continuous=tuple(records[0].continuous),
        categorical=tuple(records[0].categorical),
    )


def save_records_csv(records: Sequence[HouseRecord], file_path: Path):
    """Write records as CSV with default column names."""
    save_table_to_csv(records_to_frame(records), file_path)
