"""Command-line entry point: bstnn <simulate|train|predict|evaluate|plot> [options]"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.cli.plots import metric_heatmap, node_time_series
from src.common.errors import ContractError, DataError, DimensionError, DomainError, NumericError
from src.config.settings import RunConfig, load_settings
from src.graph.spatial_graph import SpatialGraph, layout_hash, load_graph_csv
from src.metrics.report import (
    MetricReport,
    PointForecast,
    evaluate_forecast,
    load_per_node,
    summarize_ensemble,
)
from src.metrics.scores import IntervalSpec, calendar_weeks
from src.models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.models.ensemble import predict_ensemble
from src.synthdata.dataset_io import FLOAT_FORMAT, LakeDataset, load_dataset, save_dataset
from src.synthdata.simulator import simulate
from src.training.config import SPATIAL_MODES, TrainingConfig
from src.training.splits import split_weekly
from src.training.trainer import train

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
HEATMAP_METRICS = ("rmse", "r2", "picp", "mpiw")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key-value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="out_dir", type=Path, help="output directory")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", dest="data_dir", type=Path, help="dataset directory")
    data.add_argument("--nodes-csv", type=Path, help="graph nodes (node,x,y[,shore])")
    data.add_argument("--edges-csv", type=Path, help="explicit edge list (src,dst,weight)")
    data.add_argument("--graph-method", choices=["diffusion", "threshold"])
    data.add_argument("--graph-radius", type=float)
    data.add_argument("--shore-independent", action="store_true", default=None)

    ensemble = argparse.ArgumentParser(add_help=False)
    ensemble.add_argument("--checkpoint", type=Path)
    ensemble.add_argument("--ensemble", type=int, help="number of stochastic forward passes")
    ensemble.add_argument("--workers", type=int)
    ensemble.add_argument("--span", choices=["test", "all"])
    ensemble.add_argument(
        "--paper-verbatim-variance",
        "--squared-aleatoric-variance",
        dest="squared_aleatoric_variance",
        action="store_true",
        default=None,
        help="use the mean of exp(s)^2 as the compBNN aleatoric term",
    )

    parser = argparse.ArgumentParser(prog="bstnn", description="Bayesian spatio-temporal lake temperature networks")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    sim.add_argument("--num-nodes", type=int)
    sim.add_argument("--hours", type=int)
    sim.add_argument("--mask-rate", type=float)
    sim.add_argument("--cloud-blobs", action="store_true", default=None)

    tr = commands.add_parser("train", parents=[common, data], help="train one regime")
    tr.add_argument("--mode", choices=["BTNN", "PT", "FT", "JT", "COMPBNN"])
    tr.add_argument("--from", dest="init_checkpoint", type=Path, help="checkpoint to start from (PT, FT)")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--checkpoint", type=Path, help="where to write the trained checkpoint")
    tr.add_argument("--max-batches-per-epoch", type=int)

    commands.add_parser("predict", parents=[common, data, ensemble], help="write ensemble predictions")

    ev = commands.add_parser("evaluate", parents=[common, data, ensemble], help="score ensemble predictions")
    ev.add_argument("--use-dense-truth", action="store_true", default=None)

    pl = commands.add_parser("plot", parents=[common], help="render SVG maps and time series")
    pl.add_argument("--report", dest="report_dir", type=Path, help="directory holding per_node.csv")
    pl.add_argument("--node", help="node for the time-series plot")
    return parser


def configure_logging(settings: RunConfig):
    logging.getLogger().setLevel(settings.log_level)


def dataset_graph(settings: RunConfig, dataset: LakeDataset) -> SpatialGraph:
    options = settings.graph_options()
    if settings.nodes_csv is not None:
        graph = load_graph_csv(settings.nodes_csv, settings.edges_csv, settings.shore_independent, **options)
        if graph.node_ids != dataset.node_ids:
            raise DataError(f"{settings.nodes_csv} lists nodes in a different order than the dataset")
        return graph
    return dataset.graph(settings.shore_independent, **options)


def cmd_simulate(settings: RunConfig) -> Dict[str, Path]:
    dataset = simulate(settings.synthetic)
    paths = save_dataset(dataset, settings.out_dir)
    print(
        f"nodes={dataset.num_nodes} steps={dataset.num_steps} "
        f"valid_fraction={dataset.mask.mean():.4f} out={settings.out_dir}"
    )
    return paths


def cmd_train(settings: RunConfig) -> Path:
    settings.require("data_dir")
    config = settings.training
    if config.mode in ("PT", "FT") and settings.init_checkpoint is None:
        raise ContractError(f"{config.mode} training needs --from CKPT (a {'BTNN' if config.mode == 'PT' else 'PT'} checkpoint)")
    if settings.init_checkpoint is not None:
        settings.require("init_checkpoint")

    out_dir = settings.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "train.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    try:
        dataset = load_dataset(settings.data_dir)
        graph = dataset_graph(settings, dataset) if config.mode in SPATIAL_MODES else None
        init_model = load_checkpoint(settings.init_checkpoint).model if settings.init_checkpoint else None
        result = train(config, dataset, graph, init_model)

        stem = config.mode.lower()
        path = settings.checkpoint or out_dir / f"{stem}.ckpt"
        save_checkpoint(
            path,
            result.model,
            config.mode,
            config=config.model_dump(mode="json"),
            graph=graph,
            layout_hash=layout_hash(dataset.node_ids, dataset.coords),
        )
        result.history.to_csv(out_dir / f"{stem}_history.csv", index=False, float_format=FLOAT_FORMAT)
        print(f"mode={config.mode} epochs={len(result.history)} checkpoint={path}")
        return path
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def _check_layout(checkpoint: Checkpoint, dataset: LakeDataset, path: Path):
    if checkpoint.layout_hash != layout_hash(dataset.node_ids, dataset.coords):
        nodes = checkpoint.graph.num_nodes if checkpoint.graph is not None else "a different set of"
        raise DataError(
            f"Checkpoint {path} was trained on {nodes} nodes with another layout; "
            f"dataset has {dataset.num_nodes} nodes"
        )


def _forecast(settings: RunConfig):
    settings.require("checkpoint", "data_dir")
    checkpoint = load_checkpoint(settings.checkpoint)
    dataset = load_dataset(settings.data_dir)
    _check_layout(checkpoint, dataset, settings.checkpoint)
    config = TrainingConfig(**checkpoint.config) if checkpoint.config else TrainingConfig()

    span = (0, dataset.num_steps)
    if settings.span == "test":
        split = split_weekly(
            dataset.num_weeks(config.hours_per_week), config.test_year, config.val_fraction,
            config.seed, config.weeks_per_year,
        )
        span = split.test_span(config.hours_per_week)
    ensemble = predict_ensemble(
        checkpoint.model, dataset.features, settings.ensemble, settings.seed,
        window=config.window, horizon=config.horizon, span=span, workers=settings.workers,
    )
    if not np.all(np.isfinite(ensemble.samples)):
        raise NumericError("Ensemble predictions contain NaN or infinite values")
    forecast = summarize_ensemble(ensemble, settings.coverage_levels, settings.squared_aleatoric_variance)
    return checkpoint, dataset, span, forecast


def write_predictions(
    path: Path, forecast: PointForecast, dataset: LakeDataset, span, levels, use_dense_truth: bool = False
) -> Path:
    start, stop = span
    target, mask = dataset.evaluation_targets(use_dense_truth)
    T, N = forecast.center.shape
    frame = pd.DataFrame({
        "time": np.repeat(np.arange(start, stop), N),
        "node": np.tile(np.asarray(dataset.node_ids, dtype=object), T),
        "median": forecast.center.reshape(-1),
    })
    for c in levels:
        label = IntervalSpec(c).label
        if forecast.bounds is not None:
            lower, upper = forecast.bounds[label]
            frame[f"lower_{label}"] = lower.reshape(-1)
            frame[f"upper_{label}"] = upper.reshape(-1)
    frame["target"] = target[start:stop].reshape(-1)
    frame["valid"] = mask[start:stop].reshape(-1).astype(int)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    logger.info(f"Wrote {len(frame)} predictions to {path}")
    return path


def cmd_predict(settings: RunConfig) -> Path:
    checkpoint, dataset, span, forecast = _forecast(settings)
    path = write_predictions(
        settings.out_dir / "predictions.csv", forecast, dataset, span, settings.coverage_levels
    )
    print(f"regime={checkpoint.regime} members={settings.ensemble} steps={span[1] - span[0]} out={path}")
    return path


def cmd_evaluate(settings: RunConfig) -> MetricReport:
    checkpoint, dataset, span, forecast = _forecast(settings)
    start, stop = span
    target, mask = dataset.evaluation_targets(settings.use_dense_truth)
    config = TrainingConfig(**checkpoint.config) if checkpoint.config else TrainingConfig()
    report = evaluate_forecast(
        forecast,
        target[start:stop],
        mask[start:stop],
        calendar_weeks(stop - start, config.hours_per_week, offset=start),
        dataset.node_ids,
        dataset.coords,
        settings.coverage_levels,
        metadata={
            "regime": checkpoint.regime,
            "ensemble": settings.ensemble,
            "seed": settings.seed,
            "span": [start, stop],
            "dense_truth": settings.use_dense_truth,
        },
    )
    report.save(settings.out_dir)
    write_predictions(
        settings.out_dir / "predictions.csv", forecast, dataset, span,
        settings.coverage_levels, settings.use_dense_truth,
    )
    print(f"rmse={report.rmse} r2_spatial_mean={report.r2_spatial_mean} picp={report.picp} mpiw={report.mpiw}")
    return report


def cmd_plot(settings: RunConfig) -> List[Path]:
    report_dir = settings.report_dir or settings.out_dir
    per_node = load_per_node(Path(report_dir) / "per_node.csv")
    written = []
    for column in per_node.columns:
        if column.split("_")[0] in HEATMAP_METRICS and column != "n_valid":
            written.append(metric_heatmap(per_node, column, settings.out_dir / f"map_{column}.svg"))

    predictions_path = Path(report_dir) / "predictions.csv"
    if predictions_path.exists():
        predictions = pd.read_csv(predictions_path)
        node = settings.node
        if node is None:
            valid_counts = predictions.groupby("node")["valid"].sum()
            node = str(valid_counts.idxmax())
        level = IntervalSpec(max(settings.coverage_levels)).label
        written.append(node_time_series(predictions, node, settings.out_dir / f"series_{node}.svg", level))
    print(f"plots={len(written)} out={settings.out_dir}")
    return written


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        settings = load_settings(args.command, args.config, overrides)
        configure_logging(settings)
        COMMANDS[settings.command](settings)
        return EXIT_OK
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except (DataError, DimensionError, FileNotFoundError, OSError) as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except (ContractError, DomainError, ValidationError, ValueError) as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
