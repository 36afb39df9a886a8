from dataclasses import replace

import numpy as np
import pytest

from peer_valuation.config import KnhsConfig, TrainConfig
from peer_valuation.errors import InvalidInputError
from peer_valuation.evaluation.sensitivity import (
    GRID_COLUMNS,
    grid_cells,
    sensitivity_grid,
)
from peer_valuation.graph.knhs import build_graph
from peer_valuation.nn.models import ModelSpec
from peer_valuation.training.trainer import train


@pytest.fixture()
def settings():
    return (
        KnhsConfig(t_km=6.0),
        ModelSpec(kind="pd_gcn", hidden_dim=4, seed=0),
        TrainConfig(epochs=2, log_every=0, seed=5),
    )


def test_grid_cells_order_and_seeds():
    cells = grid_cells([1.0, 2.0], [3, 4], ["normal", "geo"])
    assert len(cells) == 8
    as_tuples = [(c.variant, c.weight, c.k) for c in cells]
    assert as_tuples[0] == ("normal", 1.0, 3)
    assert as_tuples[5] == ("geo", 1.0, 4)
    assert [c.seed(5) for c in cells[:3]] == [5, 4, 7]


def test_grid_cells_reject_unknown_variant():
    with pytest.raises(InvalidInputError, match="Unknown KNHS variants"):
        grid_cells([1.0], [3], ["nearest"])


def test_grid_table(synthetic_records, settings):
    knhs, spec, train_config = settings
    table = sensitivity_grid(
        synthetic_records,
        knhs,
        spec,
        train_config,
        w_values=[2.0, 1.0],
        k_values=[3],
        variants=["random", "geo"],
    )
    assert list(table.columns) == GRID_COLUMNS
    assert table["knhs"].tolist() == ["geo", "geo", "random", "random"]
    assert table["weight"].tolist() == [1.0, 2.0, 1.0, 2.0]
    assert np.all(np.isfinite(table["mape"]))


def test_failed_cells_become_error_rows(synthetic_records, settings):
    knhs, spec, train_config = settings
    table = sensitivity_grid(
        synthetic_records,
        knhs,
        spec,
        train_config,
        w_values=[1.5],
        k_values=[3],
        variants=["normal"],
        weighted_feature="garden_m2",
    )
    assert list(table.columns) == GRID_COLUMNS + ["error"]
    assert np.isnan(table["mape"].iloc[0])
    assert "garden_m2" in table["error"].iloc[0]


def test_grid_needs_a_threshold(synthetic_records, settings):
    _, spec, train_config = settings
    with pytest.raises(InvalidInputError, match="t_km"):
        sensitivity_grid(
            synthetic_records,
            KnhsConfig(),
            spec,
            train_config,
            w_values=[1.0],
            k_values=[3],
            variants=["normal"],
        )


@pytest.mark.slow
def test_parallel_grid_matches_serial(synthetic_records, settings):
    knhs, spec, train_config = settings
    kwargs = dict(w_values=[1.0, 3.0], k_values=[3, 5], variants=["normal"])
    serial = sensitivity_grid(
        synthetic_records, knhs, spec, train_config, **kwargs
    )
    parallel = sensitivity_grid(
        synthetic_records, knhs, spec, train_config, jobs=2, **kwargs
    )
    np.testing.assert_allclose(parallel["mape"], serial["mape"])


def test_single_cell_matches_a_direct_run(synthetic_records, settings):
    knhs, spec, train_config = settings
    table = sensitivity_grid(
        synthetic_records,
        knhs,
        spec,
        train_config,
        w_values=[1.5],
        k_values=[3],
        variants=["normal"],
    )
    graph = build_graph(
        synthetic_records,
        t=knhs.t_km,
        k=3,
        weights={"appraisal_uf": 1.5},
        seed=train_config.seed,
    )
    _, report = train(
        replace(spec, seed=train_config.seed),
        graph,
        synthetic_records,
        train_config,
    )
    assert len(table) == 1
    row = table.iloc[0]
    assert row["mape"] == report.mape
    assert row["rmse"] == report.rmse
    assert row["r2"] == report.r2
