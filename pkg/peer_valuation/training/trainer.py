"""Training and evaluation of one model on one peer graph.

Evaluation is transductive: every house takes part in message passing,
while the loss only sees the targets of the training split.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from loguru import logger

from peer_valuation.config import TrainConfig
from peer_valuation.errors import (
    DivergenceError,
    InvalidInputError,
    NonFiniteError,
)
from peer_valuation.evaluation.metrics import EvalReport, group_metrics
from peer_valuation.evaluation.moran import (
    DEFAULT_MORAN_K,
    DEFAULT_PERMUTATIONS,
    knn_weights,
    morans_i,
)
from peer_valuation.graph.knhs import SpatialGraph
from peer_valuation.nn.layers import GraphTensors
from peer_valuation.nn.models import (
    ModelSpec,
    fit_linreg,
    forward,
    init_params,
    linreg_design,
    load_checkpoint,
    predict_linreg,
    save_checkpoint,
)
from peer_valuation.nn.tensor import (
    Tape,
    Tensor,
    backward,
    gather_rows,
    mse_loss,
    zero_grad,
)
from peer_valuation.preproc.features import FeaturePipeline
from peer_valuation.preproc.grouping import group_of
from peer_valuation.preproc.records import HouseRecord
from peer_valuation.training.optim import make_optimizer

LINREG_COEF = "linreg.coef"
EpochCallback = Callable[[int, float, list], None]


def split_indices(
    n: int, ratio: float = 0.75, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test split of ``n`` rows; both parts sorted and
    non-empty."""
    if n < 2:
        raise InvalidInputError(f"Need at least 2 houses to split. Got {n}")
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(
            f"Split ratio must lie in (0, 1). Got {ratio}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class Checkpoint:
    """Everything needed to predict with a trained model."""

    spec: ModelSpec
    params: dict[str, Tensor]
    pipeline: FeaturePipeline
    train_idx: np.ndarray
    test_idx: np.ndarray
    history: list[float] = field(default_factory=list)
    best_epoch: int = 0
    train_config: dict = field(default_factory=dict)

    def save(self, dest_path: Path):
        save_checkpoint(
            dest_path,
            self.spec,
            self.params,
            extra={
                "pipeline": self.pipeline.to_dict(),
                "train_idx": self.train_idx.tolist(),
                "test_idx": self.test_idx.tolist(),
                "history": list(self.history),
                "best_epoch": self.best_epoch,
                "train_config": self.train_config,
            },
        )

    @classmethod
    def load(cls, src_path: Path) -> "Checkpoint":
        spec, params, extra = load_checkpoint(src_path)
        return cls(
            spec=spec,
            params=params,
            pipeline=FeaturePipeline.from_dict(extra["pipeline"]),
            train_idx=np.array(extra["train_idx"], dtype=np.int64),
            test_idx=np.array(extra["test_idx"], dtype=np.int64),
            history=list(extra.get("history", [])),
            best_epoch=int(extra.get("best_epoch", 0)),
            train_config=dict(extra.get("train_config", {})),
        )


def _check_alignment(graph: SpatialGraph, records: Sequence[HouseRecord]):
    if graph.n_nodes != len(records):
        raise InvalidInputError(
            f"Graph has {graph.n_nodes} nodes but there are "
            f"{len(records)} records; build it over the same records"
        )


def _graph_tensors(
    pipeline: FeaturePipeline, graph: SpatialGraph
) -> GraphTensors:
    return GraphTensors.from_graph(graph, pipeline.edge_features(graph))


def _snapshot(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {
        name: Tensor(p.data.copy(), requires_grad=True, name=name)
        for name, p in params.items()
    }


def _masked_loss(pred: Tensor, train_idx: np.ndarray, y: np.ndarray):
    return mse_loss(gather_rows(pred, train_idx), y[train_idx])


def fit(
    spec: ModelSpec,
    graph: SpatialGraph,
    records: Sequence[HouseRecord],
    config: TrainConfig | None = None,
    on_epoch: EpochCallback | None = None,
) -> Checkpoint:
    """
    Fit one model and return the checkpoint with the lowest training loss.

    Parameters
    ----------
    spec : ModelSpec
        Architecture. Input widths are filled in from the data.
    graph : SpatialGraph
        Peer graph built over ``records`` in the same order.
    records : sequence of HouseRecord
        All houses; the split is drawn from ``config.seed``.
    config : TrainConfig, optional
        Optimisation settings, by default ``TrainConfig()``.
    on_epoch : callable, optional
        Called as ``on_epoch(epoch, loss, attention_log)`` after every
        recorded forward pass of a graph model.

    Returns
    -------
    Checkpoint
    """
    config = config or TrainConfig()
    _check_alignment(graph, records)
    train_idx, test_idx = split_indices(
        len(records), config.split_ratio, config.seed
    )
    pipeline = FeaturePipeline.fit(
        records, train_idx, graph, config.log_features
    )
    spec = replace(
        spec,
        continuous_dim=pipeline.continuous_dim,
        embedding_specs=pipeline.embedding_specs,
    )
    inputs = pipeline.inputs(records)
    y = pipeline.target(records)
    checkpoint = Checkpoint(
        spec=spec,
        params={},
        pipeline=pipeline,
        train_idx=train_idx,
        test_idx=test_idx,
        train_config=config.to_dict(),
    )

    if spec.kind == "linreg":
        X = linreg_design(spec, inputs)
        coef = fit_linreg(X[train_idx], y[train_idx])
        checkpoint.params = {LINREG_COEF: Tensor(coef, True, LINREG_COEF)}
        residual = predict_linreg(coef, X[train_idx]) - y[train_idx]
        checkpoint.history = [float(np.mean(residual**2))]
        logger.info(f"Fitted linreg, train MSE {checkpoint.history[0]:.6g}")
        return checkpoint

    gt = _graph_tensors(pipeline, graph)
    params = init_params(spec)
    optimizer = make_optimizer(config)
    patience = config.early_stop_patience
    best_loss, best_params, best_epoch = math.inf, _snapshot(params), 0
    stale = 0
    for epoch in range(1, config.epochs + 1):
        zero_grad(params)
        attention_log: list = []
        try:
            with Tape() as tape:
                pred = forward(spec, params, inputs, gt, attention_log)
                loss = _masked_loss(pred, train_idx, y)
        except NonFiniteError as err:
            raise DivergenceError(
                f"Training diverged at epoch {epoch}: {err}"
            ) from err
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(f"Training loss is NaN at epoch {epoch}")
        checkpoint.history.append(value)
        if on_epoch is not None:
            on_epoch(epoch, value, attention_log)
        # the loss belongs to the parameters before this epoch's step
        if value < best_loss:
            best_loss, best_epoch = value, epoch - 1
            best_params = _snapshot(params)
            stale = 0
        else:
            stale += 1
        if patience and stale >= patience:
            logger.info(f"Early stop at epoch {epoch}")
            break
        backward(tape, loss)
        optimizer.step(params)
        if config.log_every and epoch % config.log_every == 0:
            logger.info(f"epoch {epoch}: train MSE {value:.6g}")
    else:
        try:
            pred = forward(spec, params, inputs, gt)
            final = float(_masked_loss(pred, train_idx, y).data)
        except NonFiniteError:
            final = math.inf
        if final < best_loss:
            best_loss, best_epoch = final, config.epochs
            best_params = _snapshot(params)

    checkpoint.params = best_params
    checkpoint.best_epoch = best_epoch
    logger.info(
        f"Trained {spec.kind}: best train MSE {best_loss:.6g} "
        f"after {best_epoch} steps"
    )
    return checkpoint


def predict(
    checkpoint: Checkpoint,
    graph: SpatialGraph,
    records: Sequence[HouseRecord],
    attention_log: list | None = None,
) -> np.ndarray:
    """Predicted prices in UF for every house."""
    _check_alignment(graph, records)
    pipeline, spec = checkpoint.pipeline, checkpoint.spec
    inputs = pipeline.inputs(records)
    if spec.kind == "linreg":
        coef = checkpoint.params[LINREG_COEF].data
        scaled = predict_linreg(coef, linreg_design(spec, inputs))
    else:
        gt = _graph_tensors(pipeline, graph)
        scaled = forward(
            spec, checkpoint.params, inputs, gt, attention_log
        ).data
    return pipeline.prices(scaled)


def evaluate(
    checkpoint: Checkpoint,
    graph: SpatialGraph,
    records: Sequence[HouseRecord],
    grouping: Mapping[str, str] | None = None,
    moran_k: int = DEFAULT_MORAN_K,
    permutations: int = DEFAULT_PERMUTATIONS,
    config: dict | None = None,
    seed: int | None = None,
) -> EvalReport:
    """
    Test-split metrics in UF.

    ``per_group`` holds the metrics of every commune of the test split,
    and ``per_commune_group`` those of every group of ``grouping`` when
    it is given. Moran's I is taken of the log-price residuals over the
    geographic ``moran_k`` nearest test neighbors; it is left out when
    the test split has ``moran_k`` houses or fewer. Its permutation test
    draws from ``seed``, which defaults to the seed the checkpoint was
    trained with.
    """
    test_idx = checkpoint.test_idx
    prices = predict(checkpoint, graph, records)
    test = [records[i] for i in test_idx]
    actual = np.array([r.price_uf for r in test])
    pred = prices[test_idx]
    report = EvalReport.from_predictions(
        checkpoint.spec.kind,
        actual,
        pred,
        groups=[r.district for r in test],
        config=config,
    )
    if grouping is not None:
        table = group_metrics(actual, pred, group_of(test, grouping))
        report.per_commune_group = {
            row["group"]: {k: row[k] for k in ("n", "mape", "rmse", "r2")}
            for row in table.to_dict("records")
        }

    if seed is None:
        seed = int(checkpoint.train_config.get("seed", 0))
    residual = np.log(actual) - np.log(pred)
    if len(test) > moran_k and np.ptp(residual) > 0:
        weights = knn_weights(
            np.array([(r.point.lat, r.point.lon) for r in test]), moran_k
        )
        report.morans_i, report.morans_p = morans_i(
            residual, weights, permutations, seed=seed
        )
    return report


def train(
    spec: ModelSpec,
    graph: SpatialGraph,
    records: Sequence[HouseRecord],
    config: TrainConfig | None = None,
    grouping: Mapping[str, str] | None = None,
    on_epoch: EpochCallback | None = None,
) -> tuple[Checkpoint, EvalReport]:
    """Fit a model and evaluate it on the held-out split."""
    config = config or TrainConfig()
    checkpoint = fit(spec, graph, records, config, on_epoch)
    report = evaluate(
        checkpoint,
        graph,
        records,
        grouping,
        config={"train": config.to_dict(), "model": checkpoint.spec.to_dict()},
        seed=config.seed,
    )
    logger.info(
        f"{spec.kind} test MAPE {report.mape:.4f}, RMSE {report.rmse:.4g}, "
        f"R2 {report.r2:.4f}"
    )
    return checkpoint, report
