"""Min-max scaling, optionally after a natural log."""

from dataclasses import dataclass
from typing import Literal

import numpy as np
from loguru import logger

from peer_valuation.errors import InvalidInputError, InvalidShapeError

ScalerKind = Literal["minmax", "log_then_minmax"]
SCALER_KINDS: tuple[str, ...] = ("minmax", "log_then_minmax")


@dataclass
class Scaler:
    """Per-column min-max scaler.

    Columns whose fitted max equals their min are flagged constant and
    transform to 0. Fit on the training split only; ``transform`` and
    ``inverse`` never look at the data for statistics.
    """

    kind: ScalerKind
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if self.kind not in SCALER_KINDS:
            raise InvalidInputError(
                f"Unknown scaler kind {self.kind}. Expected one of "
                f"{SCALER_KINDS}"
            )
        self.mins = np.asarray(self.mins, dtype=np.float64).reshape(-1)
        self.maxs = np.asarray(self.maxs, dtype=np.float64).reshape(-1)
        if self.mins.shape != self.maxs.shape:
            raise InvalidShapeError("mins and maxs differ in length")

    @classmethod
    def fit(
        cls, values: np.ndarray, kind: ScalerKind = "minmax"
    ) -> "Scaler":
        """Fit per-column bounds on a (n, d) or (n,) array, n >= 1."""
        X = _as_2d(values)
        if len(X) == 0:
            raise InvalidInputError("Cannot fit a scaler on zero rows")
        X = cls._pre(kind, X)
        scaler = cls(kind, X.min(axis=0), X.max(axis=0))
        if np.any(scaler.constant):
            logger.warning(
                f"{int(scaler.constant.sum())} constant column(s) "
                f"will scale to 0"
            )
        return scaler

    @staticmethod
    def _pre(kind: str, X: np.ndarray) -> np.ndarray:
        if kind == "log_then_minmax":
            if np.any(X <= 0):
                raise InvalidInputError(
                    "log_then_minmax needs strictly positive values"
                )
            return np.log(X)
        return X

    @property
    def constant(self) -> np.ndarray:
        return ~(self.maxs > self.mins)

    @property
    def n_features(self) -> int:
        return len(self.mins)

    def _span(self) -> np.ndarray:
        return np.where(self.constant, 1.0, self.maxs - self.mins)

    def transform(self, values: np.ndarray) -> np.ndarray:
        was_1d = np.ndim(values) == 1
        X = _as_2d(values)
        if X.shape[1] != self.n_features:
            raise InvalidShapeError(
                f"Scaler fitted on {self.n_features} columns. "
                f"Got {X.shape[1]}"
            )
        out = (self._pre(self.kind, X) - self.mins) / self._span()
        out[:, self.constant] = 0.0
        return out[:, 0] if was_1d else out

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        was_1d = np.ndim(scaled) == 1
        Z = _as_2d(scaled)
        X = Z * self._span() + self.mins
        X[:, self.constant] = self.mins[self.constant]
        if self.kind == "log_then_minmax":
            X = np.exp(X)
        return X[:, 0] if was_1d else X

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
        }

    @classmethod
    def from_dict(cls, document: dict) -> "Scaler":
        return cls(document["kind"], document["mins"], document["maxs"])


def _as_2d(values) -> np.ndarray:
    X = np.asarray(values, dtype=np.float64)
    if X.ndim == 1:
        return X[:, None].copy()
    if X.ndim != 2:
        raise InvalidShapeError(f"Expected 1-D or 2-D values. Got {X.shape}")
    return X
