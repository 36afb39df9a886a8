"""CSV ingestion and the sale exclusion rules.

Rules are applied in this order, each to the survivors of the previous:

1. ``appraisal_ratio``: keep 1 < price / appraisal < 10
2. ``price_range``: keep 400 < price < 50000 UF
3. ``price_per_m2``: keep 30 < price / area < 6000 UF per m2
4. ``repeat_sales``: drop every sale of a property sold twice within
   365 days
5. ``commune_region``: drop sales whose coordinates fall outside the
   region configured for their commune
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from matplotlib.path import Path as Polygon

from peer_valuation.config import SchemaConfig
from peer_valuation.errors import InvalidInputError, SchemaError
from peer_valuation.io import save_table_to_csv
from peer_valuation.preproc.records import HouseRecord, frame_to_records

RATIO_BOUNDS = (1.0, 10.0)
PRICE_BOUNDS = (400.0, 50_000.0)
PRICE_PER_M2_BOUNDS = (30.0, 6_000.0)
REPEAT_SALE_WINDOW_DAYS = 365
RULE_ORDER: tuple[str, ...] = (
    "appraisal_ratio",
    "price_range",
    "price_per_m2",
    "repeat_sales",
    "commune_region",
)
REJECT_REASON = "reject_reason"


@dataclass
class FilterReport:
    """Counts of one ingestion. ``input_count`` counts parseable rows;
    rows that failed to parse are reported separately."""

    input_count: int = 0
    dropped: dict[str, int] = field(
        default_factory=lambda: {rule: 0 for rule in RULE_ORDER}
    )
    output_count: int = 0
    unparseable_count: int = 0

    @property
    def fractions(self) -> dict[str, float]:
        if self.input_count == 0:
            return {rule: 0.0 for rule in self.dropped}
        return {
            rule: count / self.input_count
            for rule, count in self.dropped.items()
        }

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "output_count": self.output_count,
            "unparseable_count": self.unparseable_count,
            "dropped": dict(self.dropped),
            "dropped_fraction": self.fractions,
        }


def _between(values: pd.Series, bounds: tuple[float, float]) -> pd.Series:
    low, high = bounds
    return (values > low) & (values < high)


def _keep_ratio(frame: pd.DataFrame, schema: SchemaConfig, regions):
    ratio = frame[schema.price_col] / frame[schema.appraisal_col]
    return _between(ratio, RATIO_BOUNDS)


def _keep_price(frame: pd.DataFrame, schema: SchemaConfig, regions):
    return _between(frame[schema.price_col], PRICE_BOUNDS)


def _keep_price_per_m2(frame: pd.DataFrame, schema: SchemaConfig, regions):
    per_m2 = frame[schema.price_col] / frame[schema.area_col]
    return _between(per_m2, PRICE_PER_M2_BOUNDS)


def _keep_single_sales(frame: pd.DataFrame, schema: SchemaConfig, regions):
    """False for every sale of a property with two sales less than
    365 days apart."""
    ordered = frame.sort_values([schema.id_col, schema.date_col])
    gap = ordered.groupby(schema.id_col)[schema.date_col].diff()
    too_close = gap < pd.Timedelta(days=REPEAT_SALE_WINDOW_DAYS)
    flagged = set(ordered.loc[too_close, schema.id_col])
    return ~frame[schema.id_col].isin(flagged)


def _inside(region: Mapping, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    if "box" in region:
        min_lat, min_lon, max_lat, max_lon = region["box"]
        return (
            (lat >= min_lat)
            & (lat <= max_lat)
            & (lon >= min_lon)
            & (lon <= max_lon)
        )
    if "polygon" in region:
        polygon = Polygon(np.asarray(region["polygon"], dtype=np.float64))
        return polygon.contains_points(np.column_stack([lat, lon]))
    raise InvalidInputError(
        f"Region {dict(region)} is not valid. Expected a 'box' or "
        f"'polygon' entry"
    )


def _keep_in_region(frame: pd.DataFrame, schema: SchemaConfig, regions):
    """Communes without a configured region are kept."""
    keep = pd.Series(True, index=frame.index)
    if not regions:
        return keep
    for district, rows in frame.groupby(schema.district_col):
        region = regions.get(str(district))
        if region is None:
            continue
        lat = rows[schema.lat_col].to_numpy()
        lon = rows[schema.lon_col].to_numpy()
        keep.loc[rows.index] = _inside(region, lat, lon)
    return keep


RULES: dict[str, Callable] = {
    "appraisal_ratio": _keep_ratio,
    "price_range": _keep_price,
    "price_per_m2": _keep_price_per_m2,
    "repeat_sales": _keep_single_sales,
    "commune_region": _keep_in_region,
}


def apply_filters(
    frame: pd.DataFrame,
    schema: SchemaConfig,
    regions: Mapping | None = None,
    rule_order: Sequence[str] = RULE_ORDER,
) -> tuple[pd.DataFrame, pd.DataFrame, FilterReport]:
    """Apply the exclusion rules to a typed frame.

    Returns
    -------
    kept : pd.DataFrame
        Surviving rows, in input order.
    rejected : pd.DataFrame
        Dropped rows with a ``reject_reason`` column naming the rule.
    report : FilterReport
    """
    if sorted(rule_order) != sorted(RULE_ORDER):
        raise InvalidInputError(
            f"rule_order must be a permutation of {RULE_ORDER}. "
            f"Got {list(rule_order)}"
        )
    report = FilterReport(input_count=len(frame))
    kept = frame
    rejected = []
    for rule in rule_order:
        if kept.empty:
            break
        keep = RULES[rule](kept, schema, regions).to_numpy(dtype=bool)
        dropped = kept.loc[~keep].assign(**{REJECT_REASON: rule})
        report.dropped[rule] = len(dropped)
        logger.debug(f"Rule {rule} dropped {len(dropped)} rows")
        rejected.append(dropped)
        kept = kept.loc[keep]
    report.output_count = len(kept)
    rejected_frame = (
        pd.concat(rejected)
        if rejected
        else frame.iloc[0:0].assign(**{REJECT_REASON: ""})
    )
    return kept, rejected_frame, report


def read_typed_csv(
    path: Path, schema: SchemaConfig
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Read a CSV and type its schema columns.

    Returns the parseable rows and the rejected ones; a row is rejected
    when a numeric or date field does not parse or a coordinate lies
    outside the valid latitude/longitude range.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    for col in schema.required_columns:
        if col not in frame.columns:
            raise SchemaError(
                f"Column {col} is missing from {path}. "
                f"Found columns {list(frame.columns)}"
            )

    numeric = [
        schema.lat_col,
        schema.lon_col,
        schema.price_col,
        schema.appraisal_col,
        schema.area_col,
        *schema.continuous,
    ]
    typed = frame.copy()
    reason = pd.Series("", index=frame.index)
    for col in numeric:
        typed[col] = pd.to_numeric(frame[col], errors="coerce")
        bad = ~np.isfinite(typed[col].to_numpy(dtype=np.float64))
        reason[bad & (reason == "")] = f"unparseable {col}"
    typed[schema.date_col] = pd.to_datetime(
        frame[schema.date_col], format="%Y-%m-%d", errors="coerce"
    )
    reason[typed[schema.date_col].isna() & (reason == "")] = (
        f"unparseable {schema.date_col}"
    )
    out_of_range = (typed[schema.lat_col].abs() > 90) | (
        typed[schema.lon_col].abs() > 180
    )
    reason[out_of_range & (reason == "")] = "coordinates out of range"
    for col in (schema.price_col, schema.appraisal_col, schema.area_col):
        reason[(typed[col] <= 0) & (reason == "")] = f"non-positive {col}"

    bad = reason != ""
    unparseable = frame.loc[bad].assign(**{REJECT_REASON: reason[bad]})
    return typed.loc[~bad], unparseable


def ingest_csv(
    path: Path,
    schema: SchemaConfig | None = None,
    reject_path: Path | None = None,
    rule_order: Sequence[str] = RULE_ORDER,
) -> tuple[list[HouseRecord], FilterReport]:
    """
    Read sales from a CSV file and apply the exclusion rules.

    Parameters
    ----------
    path : pathlib.Path
        Input CSV with a header row, '.' decimal separator, UTF-8.
    schema : SchemaConfig, optional
        Column roles and commune regions. Defaults to ``SchemaConfig()``.
    reject_path : pathlib.Path, optional
        If given, every dropped or unparseable row is written there with
        a ``reject_reason`` column.
    rule_order : sequence of str, optional
        A permutation of the rule names, by default the documented order.

    Returns
    -------
    records : list of HouseRecord
        Surviving sales in input order.
    report : FilterReport
    """
    schema = schema or SchemaConfig()
    typed, unparseable = read_typed_csv(path, schema)
    if len(unparseable):
        logger.warning(f"{len(unparseable)} rows of {path} failed to parse")
    kept, rejected, report = apply_filters(
        typed, schema, schema.regions, rule_order
    )
    report.unparseable_count = len(unparseable)

    if reject_path is not None:
        rejects = pd.concat([unparseable, _as_text(rejected, schema)])
        save_table_to_csv(rejects, reject_path)

    records = frame_to_records(kept, schema)
    logger.info(
        f"Ingested {report.output_count} of {report.input_count} sales "
        f"from {path}"
    )
    return records, report


def _as_text(frame: pd.DataFrame, schema: SchemaConfig) -> pd.DataFrame:
    out = frame.copy()
    if len(out):
        out[schema.date_col] = out[schema.date_col].dt.strftime("%Y-%m-%d")
    return out


def load_records(
    path: Path, schema: SchemaConfig | None = None
) -> list[HouseRecord]:
    """Read already filtered sales; any unparseable row is an error."""
    schema = schema or SchemaConfig()
    typed, unparseable = read_typed_csv(path, schema)
    if len(unparseable):
        first = unparseable.iloc[0]
        raise InvalidInputError(
            f"{len(unparseable)} rows of {path} failed to parse, e.g. "
            f"{first[schema.id_col]}: {first[REJECT_REASON]}"
        )
    records = frame_to_records(typed, schema)
    logger.info(f"Loaded {len(records)} sales from {path}")
    return records
