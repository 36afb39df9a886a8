"""Command-line interface: ``peer-valuation <command> [flags]``.

Every command writes its results into ``--out`` together with the fully
resolved ``config.json`` and a ``run.log``. Settings come from built-in
defaults, then an optional ``--config`` JSON file, then flags.

Exit codes: 0 on success, 2 for usage errors, 1 for runtime errors.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from peer_valuation.config import RunConfig, TrainConfig
from peer_valuation.errors import InvalidInputError
from peer_valuation.evaluation.moran import (
    DEFAULT_MORAN_K,
    DEFAULT_PERMUTATIONS,
    knn_weights,
    morans_i,
)
from peer_valuation.evaluation.sensitivity import (
    DEFAULT_WEIGHTED_FEATURE,
    sensitivity_grid,
)
from peer_valuation.graph.knhs import (
    VARIANTS,
    SpatialGraph,
    build_graph,
    graph_summary,
)
from peer_valuation.io import load_json, save_json, save_table_to_csv
from peer_valuation.nn.models import MODEL_KINDS, ModelSpec
from peer_valuation.preproc.features import continuous_matrix
from peer_valuation.preproc.filtering import ingest_csv, load_records
from peer_valuation.preproc.grouping import (
    commune_groups,
    load_grouping,
    save_grouping,
)
from peer_valuation.preproc.records import (
    HouseRecord,
    records_to_frame,
    save_records_csv,
    schema_for,
)
from peer_valuation.preproc.synthetic import (
    SyntheticMarket,
    generate_synthetic,
)
from peer_valuation.training.trainer import Checkpoint, evaluate, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_W_VALUES = (1.2, 1.5, 1.8, 3.0)
DEFAULT_K_VALUES = (6, 8, 10, 12, 14, 16)

# flag dest -> (section, key) of the RunConfig document
FLAG_TARGETS: dict[str, tuple[str, str]] = {
    "input": ("paths", "input"),
    "out": ("paths", "out"),
    "schema": ("paths", "schema"),
    "graph": ("paths", "graph"),
    "checkpoint": ("paths", "checkpoint"),
    "grouping": ("paths", "grouping"),
    "t_km": ("knhs", "t_km"),
    "k": ("knhs", "k"),
    "variant": ("knhs", "variant"),
    "similarity_features": ("knhs", "similarity_features"),
    "matrix_cap": ("knhs", "matrix_cap"),
    "model": ("model", "kind"),
    "hidden_dim": ("model", "hidden_dim"),
    "heads": ("model", "heads"),
    "d_head": ("model", "d_head"),
    "epochs": ("train", "epochs"),
    "lr": ("train", "learning_rate"),
    "optimizer": ("train", "optimizer"),
    "split_ratio": ("train", "split_ratio"),
    "early_stop_patience": ("train", "early_stop_patience"),
    "n": ("options", "n"),
    "spatial_strength": ("options", "spatial_strength"),
    "group": ("options", "group"),
    "moran_k": ("options", "moran_k"),
    "permutations": ("options", "permutations"),
    "column": ("options", "column"),
    "w_values": ("options", "w_values"),
    "k_values": ("options", "k_values"),
    "variants": ("options", "variants"),
    "weighted_feature": ("options", "weighted_feature"),
    "jobs": ("options", "jobs"),
}
FLAG_DESTS = {target: dest for dest, target in FLAG_TARGETS.items()}


class UsageError(Exception):
    """Flags or config values that cannot describe a valid run."""


# -- parser ---------------------------------------------------------------


def _weight_pair(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(
            f"Weight {text} is not valid. Expected FEATURE=WEIGHT"
        )
    try:
        return name, float(value)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from err


def _common_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=Path, help="JSON run config")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="seed of every draw")
    return parser


def _data_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--input", type=Path, help="sales CSV")
    parser.add_argument("--schema", type=Path, help="schema JSON")
    return parser


def _knhs_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--t-km", type=float, help="distance threshold")
    parser.add_argument("--k", type=int, help="peers per house")
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument(
        "--weight",
        type=_weight_pair,
        action="append",
        metavar="FEATURE=W",
        help="similarity weight of one feature (repeatable)",
    )
    parser.add_argument("--similarity-features", nargs="+")
    parser.add_argument("--matrix-cap", type=int)
    return parser


def _model_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--model", choices=MODEL_KINDS)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--heads", type=int)
    parser.add_argument("--d-head", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--optimizer", choices=("adam", "sgd"))
    parser.add_argument("--split-ratio", type=float)
    parser.add_argument("--early-stop-patience", type=int)
    parser.add_argument("--grouping", type=Path, help="grouping JSON")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peer-valuation",
        description="Peer-dependence house valuation on KNHS graphs",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common, data = _common_flags(), _data_flags()
    knhs, model = _knhs_flags(), _model_flags()

    gen = sub.add_parser(
        "generate", parents=[common], help="draw a synthetic market"
    )
    gen.add_argument("--n", type=int)
    gen.add_argument("--spatial-strength", type=float)

    sub.add_parser(
        "ingest", parents=[common, data], help="filter a sales CSV"
    )
    sub.add_parser(
        "build-graph", parents=[common, data, knhs], help="build KNHS graph"
    )

    tr = sub.add_parser(
        "train", parents=[common, data, knhs, model], help="train a model"
    )
    tr.add_argument("--graph", type=Path)
    tr.add_argument("--group", help="train on one commune group")

    ev = sub.add_parser(
        "evaluate", parents=[common, data], help="evaluate a checkpoint"
    )
    ev.add_argument("--graph", type=Path)
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--grouping", type=Path)

    sens = sub.add_parser(
        "sensitivity",
        parents=[common, data, knhs, model],
        help="grid over weight, k and variant",
    )
    sens.add_argument("--w-values", type=float, nargs="+")
    sens.add_argument("--k-values", type=int, nargs="+")
    sens.add_argument("--variants", choices=VARIANTS, nargs="+")
    sens.add_argument("--weighted-feature")
    sens.add_argument("--jobs", type=int)

    mor = sub.add_parser(
        "moran", parents=[common, data], help="Moran's I of one column"
    )
    mor.add_argument("--moran-k", type=int)
    mor.add_argument("--permutations", type=int)
    mor.add_argument("--column", help="price_uf, price_per_m2 or a feature")

    cmp_ = sub.add_parser(
        "compare",
        parents=[common, data, knhs, model],
        help="linreg vs the graph models",
    )
    cmp_.add_argument("--graph", type=Path)
    return parser


# -- config resolution ----------------------------------------------------


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the ``--config`` file and the flags (flags win)."""
    document: dict = {}
    if getattr(args, "config", None) is not None:
        document = load_json(args.config)
        document.pop("schema_version", None)
    document = {
        key: dict(value) if isinstance(value, dict) else value
        for key, value in document.items()
    }
    document["command"] = args.command
    for section in ("paths", "options", "knhs", "model", "train", "schema"):
        document.setdefault(section, {})

    for dest, (section, key) in FLAG_TARGETS.items():
        value = getattr(args, dest, None)
        if value is not None:
            document[section][key] = (
                value.as_posix() if isinstance(value, Path) else value
            )
    if getattr(args, "weight", None):
        document["knhs"]["weights"] = {
            **document["knhs"].get("weights", {}),
            **dict(args.weight),
        }
    if args.seed is not None:
        document["seed"] = args.seed

    schema_path = document["paths"].get("schema")
    if schema_path is not None:
        from_file = load_json(Path(schema_path))
        from_file.pop("schema_version", None)
        document["schema"] = {**document["schema"], **from_file}

    seed = int(document.get("seed", 0))
    document["knhs"]["seed"] = seed
    document["train"]["seed"] = seed
    try:
        config = RunConfig.from_dict(document)
        ModelSpec(**{**config.model, "seed": seed})
    except (InvalidInputError, TypeError) as err:
        raise UsageError(str(err)) from err
    return config


def _require(config: RunConfig, section: str, key: str):
    value = getattr(config, section).get(key)
    if value is None:
        dest = FLAG_DESTS[(section, key)]
        flag = "--" + dest.replace("_", "-")
        raise UsageError(f"{config.command} needs {flag}")
    return value


def _model_spec(config: RunConfig) -> ModelSpec:
    return ModelSpec(**{**config.model, "seed": config.seed})


def _records(config: RunConfig) -> list[HouseRecord]:
    path = Path(_require(config, "paths", "input"))
    return load_records(path, config.schema)


def _graph_for(config: RunConfig, records) -> SpatialGraph:
    graph_path = config.paths.get("graph")
    if graph_path is not None:
        return SpatialGraph.load(Path(graph_path))
    if config.knhs.t_km is None:
        raise UsageError(f"{config.command} needs --graph or --t-km")
    return _build_graph(config, records)


def _build_graph(config: RunConfig, records) -> SpatialGraph:
    knhs = config.knhs
    return build_graph(
        records,
        t=knhs.t_km,
        k=knhs.k,
        weights=knhs.weights,
        variant=knhs.variant,
        seed=knhs.seed,
        similarity_features=knhs.similarity_features,
        matrix_cap=knhs.matrix_cap,
    )


def _grouping(config: RunConfig) -> dict[str, str] | None:
    path = config.paths.get("grouping")
    return load_grouping(Path(path)) if path is not None else None


def _write_report(report, out: Path):
    save_json(report.to_dict(), out / "report.json")
    save_table_to_csv(report.group_table(), out / "mape_by_commune.csv")
    if report.per_commune_group:
        save_table_to_csv(
            report.group_table(commune_groups=True), out / "mape_by_group.csv"
        )


# -- commands -------------------------------------------------------------


def cmd_generate(config: RunConfig, out: Path):
    """Synthetic sales plus the schema, regions and grouping that match."""
    n = int(config.options.get("n", 1000))
    strength = float(config.options.get("spatial_strength", 0.8))
    market = SyntheticMarket()
    records = generate_synthetic(n, strength, config.seed, market)
    save_records_csv(records, out / "houses.csv")
    schema = replace(schema_for(records), regions=market.regions())
    save_json(schema.to_dict(), out / "schema.json")
    save_grouping(market.grouping(), out / "grouping.json")


def cmd_ingest(config: RunConfig, out: Path):
    records, report = ingest_csv(
        Path(_require(config, "paths", "input")),
        config.schema,
        reject_path=out / "rejects.csv",
    )
    frame = records_to_frame(records, config.schema)
    if not records:
        frame = pd.DataFrame(columns=config.schema.required_columns)
    save_table_to_csv(frame, out / "filtered.csv")
    save_json(report.to_dict(), out / "filter_report.json")


def cmd_build_graph(config: RunConfig, out: Path):
    records = _records(config)
    if config.knhs.t_km is None:
        raise UsageError("build-graph needs --t-km")
    graph = _build_graph(config, records)
    graph.save(out / "graph.json")
    save_json(graph_summary(graph), out / "graph_summary.json")


def cmd_train(config: RunConfig, out: Path):
    records = _records(config)
    grouping = _grouping(config)
    group = config.options.get("group")
    if group is not None:
        if grouping is None:
            raise UsageError("--group needs --grouping")
        if config.paths.get("graph") is not None:
            raise UsageError(
                "--group builds its own graph; drop --graph and pass --t-km"
            )
        subsets = commune_groups(records, grouping)
        if group not in subsets:
            raise UsageError(
                f"Group {group} has no sales. Found {sorted(subsets)}"
            )
        records = subsets[group]
    graph = _graph_for(config, records)
    checkpoint, report = train(
        _model_spec(config), graph, records, config.train, grouping
    )
    checkpoint.save(out / "checkpoint.json")
    _write_report(report, out)


def cmd_evaluate(config: RunConfig, out: Path):
    records = _records(config)
    graph = SpatialGraph.load(Path(_require(config, "paths", "graph")))
    checkpoint = Checkpoint.load(
        Path(_require(config, "paths", "checkpoint"))
    )
    train_config = TrainConfig.from_dict(checkpoint.train_config)
    report = evaluate(
        checkpoint,
        graph,
        records,
        _grouping(config),
        config={
            "train": train_config.to_dict(),
            "model": checkpoint.spec.to_dict(),
        },
        seed=train_config.seed,
    )
    _write_report(report, out)


def cmd_sensitivity(config: RunConfig, out: Path):
    records = _records(config)
    if config.knhs.t_km is None:
        raise UsageError("sensitivity needs --t-km")
    options = config.options
    table = sensitivity_grid(
        records,
        config.knhs,
        _model_spec(config),
        config.train,
        w_values=options.get("w_values", DEFAULT_W_VALUES),
        k_values=options.get("k_values", DEFAULT_K_VALUES),
        variants=options.get("variants", VARIANTS),
        weighted_feature=options.get(
            "weighted_feature", DEFAULT_WEIGHTED_FEATURE
        ),
        jobs=int(options.get("jobs", 1)),
    )
    save_table_to_csv(table, out / "sensitivity.csv")


def _column_values(records: Sequence[HouseRecord], column: str):
    if column == "price_uf":
        return np.array([r.price_uf for r in records])
    if column == "price_per_m2":
        return np.array([r.price_per_m2 for r in records])
    try:
        return continuous_matrix(records, [column])[:, 0]
    except InvalidInputError as err:
        raise UsageError(str(err)) from err


def cmd_moran(config: RunConfig, out: Path):
    records = _records(config)
    k = int(config.options.get("moran_k", DEFAULT_MORAN_K))
    permutations = int(
        config.options.get("permutations", DEFAULT_PERMUTATIONS)
    )
    column = config.options.get("column", "price_uf")
    values = _column_values(records, column)
    coords = np.array([(r.point.lat, r.point.lon) for r in records])
    stat, p_value = morans_i(
        values, knn_weights(coords, k), permutations, config.seed
    )
    logger.info(f"Moran's I of {column}: {stat:.4f} (p={p_value:.4g})")
    save_json(
        {
            "column": column,
            "n": len(records),
            "k": k,
            "permutations": permutations,
            "morans_i": stat,
            "p_value": p_value,
        },
        out / "moran.json",
    )


def cmd_compare(config: RunConfig, out: Path):
    """Train every model kind on one graph and one split."""
    records = _records(config)
    graph = _graph_for(config, records)
    base = _model_spec(config)
    rows = []
    for kind in MODEL_KINDS:
        spec = replace(base, kind=kind)
        _, report = train(spec, graph, records, config.train)
        rows.append([kind, report.mape, report.rmse, report.r2])
    table = pd.DataFrame(rows, columns=["model", "mape", "rmse", "r2"])
    save_table_to_csv(table, out / "compare.csv")


COMMANDS: dict[str, Callable[[RunConfig, Path], None]] = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sensitivity": cmd_sensitivity,
    "moran": cmd_moran,
    "compare": cmd_compare,
}


# -- entry point ----------------------------------------------------------


def _setup_logging(level: str, out: Path | None) -> list[int]:
    logger.remove()
    handlers = [logger.add(sys.stderr, level=level)]
    if out is not None:
        handlers.append(logger.add(out / "run.log", level=level))
    return handlers


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    try:
        config = resolve_config(args)
        out = Path(_require(config, "paths", "out"))
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME

    out.mkdir(parents=True, exist_ok=True)
    handlers = _setup_logging(args.log_level, out)
    try:
        save_json(config.to_dict(), out / "config.json")
        COMMANDS[config.command](config, out)
    except UsageError as err:
        logger.error(str(err))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:
        logger.error(f"{type(err).__name__}: {err}")
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        for handler in handlers[1:]:
            logger.remove(handler)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
