import numpy as np
import pytest

from peer_valuation.errors import DegenerateVarianceError, InvalidInputError
from peer_valuation.evaluation.metrics import (
    GROUP_COLUMNS,
    EvalReport,
    group_metrics,
    mape,
    r2,
    rmse,
)


def test_perfect_predictions():
    actual = np.array([100.0, 200.0, 300.0])
    assert mape(actual, actual) == 0.0
    assert rmse(actual, actual) == 0.0
    assert r2(actual, actual) == 1.0


def test_metrics_by_hand():
    actual = np.array([100.0, 200.0])
    pred = np.array([110.0, 180.0])
    assert mape(actual, pred) == pytest.approx(0.1)
    assert rmse(actual, pred) == pytest.approx(np.sqrt(250.0))
    assert r2(actual, pred) == pytest.approx(1.0 - 500.0 / 5000.0)


def test_mape_needs_positive_actuals():
    with pytest.raises(InvalidInputError, match="strictly positive"):
        mape([0.0, 1.0], [1.0, 1.0])


def test_r2_of_constant_actuals():
    with pytest.raises(DegenerateVarianceError):
        r2([5.0, 5.0], [4.0, 6.0])


def test_group_metrics_table():
    table = group_metrics(
        [100.0, 200.0, 50.0], [110.0, 180.0, 50.0], ["b", "b", "a"]
    )
    assert list(table.columns) == GROUP_COLUMNS
    assert table["group"].tolist() == ["a", "b"]
    assert table["n"].tolist() == [1, 2]
    assert table["mape"].tolist() == pytest.approx([0.0, 0.1])
    # a single sale has no R2
    assert np.isnan(table["r2"].iloc[0])


def test_report_serializes_missing_values_as_null():
    report = EvalReport.from_predictions(
        "linreg", [100.0, 200.0, 50.0], [110.0, 180.0, 50.0], ["b", "b", "a"]
    )
    document = report.to_dict()
    assert document["n_test"] == 3
    assert document["morans_i"] is None
    assert document["per_group"]["a"]["r2"] is None
    assert report.group_table()["group"].tolist() == ["a", "b"]
