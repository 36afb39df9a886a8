"""Prediction metrics and the evaluation report."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from peer_valuation.errors import (
    DegenerateVarianceError,
    InvalidInputError,
    InvalidShapeError,
)

GROUP_COLUMNS = ["group", "n", "mape", "rmse", "r2"]


def _pair(actual, pred) -> tuple[np.ndarray, np.ndarray]:
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if actual.shape != pred.shape:
        raise InvalidShapeError(
            f"Got {len(actual)} actual values and {len(pred)} predictions"
        )
    if len(actual) == 0:
        raise InvalidInputError("Metrics need at least one value")
    return actual, pred


def mape(actual, pred) -> float:
    """Mean absolute percentage error, as a fraction (0.1 is 10%)."""
    actual, pred = _pair(actual, pred)
    if np.any(actual <= 0):
        raise InvalidInputError("MAPE needs strictly positive actual values")
    return float(np.mean(np.abs(actual - pred) / actual))


def rmse(actual, pred) -> float:
    actual, pred = _pair(actual, pred)
    return float(np.sqrt(np.mean((actual - pred) ** 2)))


def r2(actual, pred) -> float:
    """Coefficient of determination, ``1 - SS_res / SS_tot``."""
    actual, pred = _pair(actual, pred)
    ss_tot = np.sum((actual - actual.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateVarianceError("R2 is undefined for constant actuals")
    return float(1.0 - np.sum((actual - pred) ** 2) / ss_tot)


def _safe_r2(actual, pred) -> float:
    try:
        return r2(actual, pred)
    except DegenerateVarianceError:
        return float("nan")


def group_metrics(actual, pred, groups: Sequence[str]) -> pd.DataFrame:
    """Per-group ``group,n,mape,rmse,r2`` table, sorted by group.

    R2 is left empty for groups with a single sale or constant prices.
    """
    actual, pred = _pair(actual, pred)
    labels = np.asarray(groups, dtype=object)
    if len(labels) != len(actual):
        raise InvalidShapeError(
            f"Got {len(labels)} group labels for {len(actual)} values"
        )
    rows = []
    for group in sorted(set(labels)):
        mask = labels == group
        rows.append(
            [
                group,
                int(mask.sum()),
                mape(actual[mask], pred[mask]),
                rmse(actual[mask], pred[mask]),
                _safe_r2(actual[mask], pred[mask]),
            ]
        )
    return pd.DataFrame(rows, columns=GROUP_COLUMNS)


@dataclass
class EvalReport:
    """Test-split metrics of one model, in UF."""

    model_kind: str
    n_test: int
    mape: float
    rmse: float
    r2: float
    morans_i: float | None = None
    morans_p: float | None = None
    per_group: dict[str, dict] = field(default_factory=dict)
    per_commune_group: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(
        cls,
        model_kind: str,
        actual,
        pred,
        groups: Sequence[str] | None = None,
        config: dict | None = None,
    ) -> "EvalReport":
        actual, pred = _pair(actual, pred)
        per_group = {}
        if groups is not None:
            table = group_metrics(actual, pred, groups)
            per_group = {
                row["group"]: {k: row[k] for k in GROUP_COLUMNS[1:]}
                for row in table.to_dict("records")
            }
        return cls(
            model_kind=model_kind,
            n_test=len(actual),
            mape=mape(actual, pred),
            rmse=rmse(actual, pred),
            r2=_safe_r2(actual, pred),
            per_group=per_group,
            config=dict(config or {}),
        )

    def group_table(self, commune_groups: bool = False) -> pd.DataFrame:
        """Per-commune rows, or per commune group when asked."""
        groups = self.per_commune_group if commune_groups else self.per_group
        rows = [
            [group, *(m[k] for k in GROUP_COLUMNS[1:])]
            for group, m in sorted(groups.items())
        ]
        return pd.DataFrame(rows, columns=GROUP_COLUMNS)

    def to_dict(self) -> dict:
        def finite_or_none(value):
            if value is None or not np.isfinite(value):
                return None
            return float(value)

        def metrics_of(groups: dict) -> dict:
            return {
                g: {
                    "n": m["n"],
                    "mape": m["mape"],
                    "rmse": m["rmse"],
                    "r2": finite_or_none(m["r2"]),
                }
                for g, m in groups.items()
            }

        return {
            "model_kind": self.model_kind,
            "n_test": self.n_test,
            "mape": self.mape,
            "rmse": self.rmse,
            "r2": finite_or_none(self.r2),
            "morans_i": finite_or_none(self.morans_i),
            "morans_p": finite_or_none(self.morans_p),
            "per_group": metrics_of(self.per_group),
            "per_commune_group": metrics_of(self.per_commune_group),
            "config": self.config,
        }
