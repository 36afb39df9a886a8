"""Sensitivity of test metrics to the peer selection settings.

One graph is rebuilt and one model trained per (variant, weight, k) cell.
The weight multiplies one similarity feature in the KNHS distance, by
default the appraisal.
"""

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import pandas as pd
from loguru import logger

from peer_valuation.config import KnhsConfig, TrainConfig
from peer_valuation.errors import InvalidInputError
from peer_valuation.graph.knhs import VARIANTS, build_graph
from peer_valuation.nn.models import ModelSpec
from peer_valuation.preproc.records import HouseRecord
from peer_valuation.training.trainer import train

GRID_COLUMNS = ["r2", "rmse", "mape", "weight", "k", "knhs"]
DEFAULT_WEIGHTED_FEATURE = "appraisal_uf"


@dataclass(frozen=True)
class GridCell:
    index: int
    variant: str
    weight: float
    k: int

    def seed(self, base_seed: int) -> int:
        return base_seed ^ self.index


@dataclass(frozen=True)
class _CellJob:
    cell: GridCell
    records: tuple[HouseRecord, ...]
    knhs: KnhsConfig
    spec: ModelSpec
    train_config: TrainConfig
    weighted_feature: str


def grid_cells(
    w_values: Sequence[float],
    k_values: Sequence[int],
    variants: Sequence[str],
) -> list[GridCell]:
    """Enumerate cells variant-major, then weight, then k."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise InvalidInputError(
            f"Unknown KNHS variants {unknown}. Expected a subset of "
            f"{VARIANTS}"
        )
    if not (w_values and k_values and variants):
        raise InvalidInputError("Every grid axis needs at least one value")
    return [
        GridCell(i, variant, float(w), int(k))
        for i, (variant, w, k) in enumerate(
            itertools.product(variants, w_values, k_values)
        )
    ]


def run_cell(job: _CellJob) -> dict:
    """Train one cell; a failure becomes a row with an ``error`` message."""
    cell = job.cell
    row = {"weight": cell.weight, "k": cell.k, "knhs": cell.variant}
    seed = cell.seed(job.train_config.seed)
    try:
        weights = {**job.knhs.weights, job.weighted_feature: cell.weight}
        graph = build_graph(
            list(job.records),
            t=job.knhs.t_km,
            k=cell.k,
            weights=weights,
            variant=cell.variant,
            seed=seed,
            similarity_features=job.knhs.similarity_features,
            matrix_cap=job.knhs.matrix_cap,
        )
        _, report = train(
            replace(job.spec, seed=seed),
            graph,
            job.records,
            job.train_config,
        )
    except Exception as err:
        logger.warning(
            f"Grid cell variant={cell.variant} w={cell.weight} k={cell.k} "
            f"failed: {err}"
        )
        return {
            **row,
            "r2": np.nan,
            "rmse": np.nan,
            "mape": np.nan,
            "error": f"{type(err).__name__}: {err}",
        }
    logger.info(
        f"Grid cell variant={cell.variant} w={cell.weight} k={cell.k}: "
        f"MAPE {report.mape:.4f}"
    )
    return {**row, "r2": report.r2, "rmse": report.rmse, "mape": report.mape}


def sensitivity_grid(
    records: Sequence[HouseRecord],
    knhs: KnhsConfig,
    spec: ModelSpec,
    train_config: TrainConfig,
    w_values: Sequence[float],
    k_values: Sequence[int],
    variants: Sequence[str],
    weighted_feature: str = DEFAULT_WEIGHTED_FEATURE,
    jobs: int = 1,
) -> pd.DataFrame:
    """
    Train one model per grid cell and collect the test metrics.

    Parameters
    ----------
    records : sequence of HouseRecord
        All houses; every cell shares the train/test split of
        ``train_config.seed``.
    knhs : KnhsConfig
        Threshold and feature settings; ``k``, ``variant`` and the weight
        of ``weighted_feature`` are overridden per cell.
    spec : ModelSpec
        Architecture trained in every cell.
    train_config : TrainConfig
        Optimisation settings shared by every cell.
    w_values, k_values, variants : sequence
        The grid axes.
    weighted_feature : str, optional
        Similarity feature scaled by the cell weight.
    jobs : int, optional
        Number of worker processes, by default 1 (serial).

    Returns
    -------
    pd.DataFrame
        Columns ``r2,rmse,mape,weight,k,knhs``, sorted by
        (knhs, weight, k), plus an ``error`` column when a cell failed.
        Cell ``i`` draws its model and sampling seed from
        ``train_config.seed ^ i``.
    """
    if knhs.t_km is None:
        raise InvalidInputError("The grid needs a distance threshold t_km")
    cells = grid_cells(w_values, k_values, variants)
    frozen = tuple(records)
    job_list = [
        _CellJob(cell, frozen, knhs, spec, train_config, weighted_feature)
        for cell in cells
    ]
    logger.info(f"Running a sensitivity grid of {len(cells)} cells")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, job_list))
    else:
        rows = [run_cell(job) for job in job_list]

    table = pd.DataFrame(rows)
    columns = list(GRID_COLUMNS)
    if "error" in table.columns:
        columns.append("error")
    table = table.sort_values(["knhs", "weight", "k"], kind="stable")
    return table[columns].reset_index(drop=True)
