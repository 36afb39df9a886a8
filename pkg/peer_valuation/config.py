"""Configuration dataclasses shared by the pipeline and the CLI.

Every config round-trips through ``to_dict`` / ``from_dict`` so a run can
echo its fully-resolved settings as JSON next to its outputs.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Literal, Mapping

from peer_valuation.errors import InvalidInputError


class _DictMixin:
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, document: Mapping | None):
        document = dict(document or {})
        document.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = set(document) - known
        if unknown:
            raise InvalidInputError(
                f"Unknown {cls.__name__} keys {sorted(unknown)}. "
                f"Expected a subset of {sorted(known)}"
            )
        for f in fields(cls):
            if f.name in document and isinstance(document[f.name], list):
                document[f.name] = tuple(document[f.name])
        return cls(**document)


@dataclass(frozen=True)
class SchemaConfig(_DictMixin):
    """Maps input CSV columns to house record roles."""

    id_col: str = "property_id"
    lat_col: str = "lat"
    lon_col: str = "lon"
    price_col: str = "price_uf"
    appraisal_col: str = "appraisal_uf"
    area_col: str = "area_m2"
    district_col: str = "commune"
    date_col: str = "sale_date"
    continuous: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    # district -> {"box": [min_lat, min_lon, max_lat, max_lon]}
    # or {"polygon": [[lat, lon], ...]}
    regions: dict = field(default_factory=dict)

    @property
    def required_columns(self) -> list[str]:
        return [
            self.id_col,
            self.lat_col,
            self.lon_col,
            self.price_col,
            self.appraisal_col,
            self.area_col,
            self.district_col,
            self.date_col,
            *self.continuous,
            *self.categorical,
        ]


@dataclass(frozen=True)
class KnhsConfig(_DictMixin):
    """Peer graph construction settings."""

    t_km: float | None = None
    k: int = 8
    variant: Literal["normal", "random", "geo"] = "normal"
    # None selects every scaled continuous feature
    similarity_features: tuple[str, ...] | None = None
    # feature -> weight; features not named keep weight 1
    weights: dict = field(default_factory=dict)
    matrix_cap: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.t_km is not None and not self.t_km > 0:
            raise InvalidInputError(f"t_km must be > 0. Got {self.t_km}")
        if self.k < 1:
            raise InvalidInputError(f"k must be >= 1. Got {self.k}")


@dataclass(frozen=True)
class TrainConfig(_DictMixin):
    """Optimisation settings of one training run."""

    epochs: int = 300
    learning_rate: float = 1e-3
    optimizer: Literal["adam", "sgd"] = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    split_ratio: float = 0.75
    seed: int = 0
    early_stop_patience: int | None = None
    log_every: int = 50
    # continuous features passed through log before min-max scaling
    log_features: tuple[str, ...] = ("area_m2", "appraisal_uf")

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise InvalidInputError(
                f"split_ratio must lie in (0, 1). Got {self.split_ratio}"
            )
        if not self.learning_rate > 0:
            raise InvalidInputError(
                f"learning_rate must be > 0. Got {self.learning_rate}"
            )
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0. Got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(
                f"Unknown optimizer {self.optimizer}. Expected adam or sgd"
            )


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one CLI invocation.

    ``paths`` holds input and output locations, ``options`` the
    command-specific values and ``model`` the ``ModelSpec`` fields.
    """

    command: str
    seed: int = 0
    paths: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    knhs: KnhsConfig = field(default_factory=KnhsConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "paths": dict(self.paths),
            "options": dict(self.options),
            "schema": self.schema.to_dict(),
            "knhs": self.knhs.to_dict(),
            "model": dict(self.model),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, document: Mapping) -> "RunConfig":
        document = dict(document)
        document.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = set(document) - known
        if unknown:
            raise InvalidInputError(
                f"Unknown RunConfig keys {sorted(unknown)}. "
                f"Expected a subset of {sorted(known)}"
            )
        return cls(
            command=document.get("command", ""),
            seed=int(document.get("seed", 0)),
            paths=dict(document.get("paths", {})),
            options=dict(document.get("options", {})),
            schema=SchemaConfig.from_dict(document.get("schema")),
            knhs=KnhsConfig.from_dict(document.get("knhs")),
            model=dict(document.get("model", {})),
            train=TrainConfig.from_dict(document.get("train")),
        )
