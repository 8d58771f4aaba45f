"""Reading and writing lake datasets as CSV.

A dataset directory holds:
    features.csv   time,node,channel,value   (long format)
    targets.csv    time,node,value,valid[,truth]
    nodes.csv      node,x,y,shore
    manifest.json  generator settings and summary counts
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from src.common.errors import DataError, DimensionError
from src.graph.spatial_graph import SpatialGraph, read_table

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

FEATURE_NAMES = ("air_temperature", "wind_speed", "radiation", "bulk_temperature")
START_TIME = "2000-01-01"
FLOAT_FORMAT = "%.6f"


@dataclass
class LakeDataset:
    """Gridded hourly features [T, N, D] with sparse surface-temperature targets [T, N]"""
    features: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    node_ids: Tuple[str, ...]
    coords: np.ndarray
    shore: np.ndarray
    feature_names: Tuple[str, ...] = FEATURE_NAMES
    dense_targets: Optional[np.ndarray] = None
    start_time: str = START_TIME
    manifest: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.shore = np.asarray(self.shore, dtype=bool)
        self.node_ids = tuple(str(n) for n in self.node_ids)
        self.feature_names = tuple(self.feature_names)
        if self.features.ndim != 3:
            raise DimensionError(f"Features must be [T, N, D], got shape {self.features.shape}")
        T, N, D = self.features.shape
        for label, array, shape in (
            ("targets", self.targets, (T, N)),
            ("mask", self.mask, (T, N)),
            ("coords", self.coords, (N, 2)),
            ("shore", self.shore, (N,)),
        ):
            if array.shape != shape:
                raise DimensionError(f"{label} has shape {array.shape}, expected {shape}")
        if len(self.node_ids) != N or len(self.feature_names) != D:
            raise DimensionError("Node ids or feature names do not match the feature array")
        if self.dense_targets is not None:
            self.dense_targets = np.asarray(self.dense_targets, dtype=np.float64)
            if self.dense_targets.shape != (T, N):
                raise DimensionError(f"Dense targets have shape {self.dense_targets.shape}, expected {(T, N)}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("Features contain missing or non-finite values")
        if not np.all(np.isfinite(self.targets[self.mask])):
            raise DataError("Targets flagged valid contain non-finite values")
        self.targets = np.where(self.mask, self.targets, np.nan)

    @property
    def num_steps(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[2])

    def num_weeks(self, hours_per_week: int = 168) -> int:
        return self.num_steps // hours_per_week

    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_time, periods=self.num_steps, freq="h")

    def graph(self, shore_independent: bool = False, **construction) -> SpatialGraph:
        independent = np.flatnonzero(self.shore).tolist() if shore_independent else []
        return SpatialGraph.from_coords(self.coords, self.node_ids, independent_nodes=independent, **construction)

    def evaluation_targets(self, use_dense_truth: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """Targets and validity mask to score against; dense truth scores every cell."""
        if use_dense_truth:
            if self.dense_targets is None:
                raise DataError("Dataset has no dense ground truth")
            return self.dense_targets, np.ones_like(self.mask)
        return self.targets, self.mask


def save_dataset(dataset: LakeDataset, directory: Path) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    T, N, D = dataset.features.shape
    times = np.repeat(np.arange(T), N)
    nodes = np.tile(np.asarray(dataset.node_ids, dtype=object), T)

    features = pd.DataFrame({
        "time": np.repeat(times, D),
        "node": np.repeat(nodes, D),
        "channel": np.tile(np.asarray(dataset.feature_names, dtype=object), T * N),
        "value": dataset.features.reshape(-1),
    })

    targets = pd.DataFrame({
        "time": times,
        "node": nodes,
        "value": dataset.targets.reshape(-1),
        "valid": dataset.mask.reshape(-1).astype(int),
    })
    if dataset.dense_targets is not None:
        targets["truth"] = dataset.dense_targets.reshape(-1)

    node_table = pd.DataFrame({
        "node": list(dataset.node_ids),
        "x": dataset.coords[:, 0],
        "y": dataset.coords[:, 1],
        "shore": dataset.shore.astype(int),
    })

    paths = {
        "features": directory / "features.csv",
        "targets": directory / "targets.csv",
        "nodes": directory / "nodes.csv",
        "manifest": directory / "manifest.json",
    }
    features.to_csv(paths["features"], index=False, float_format=FLOAT_FORMAT)
    targets.to_csv(paths["targets"], index=False, float_format=FLOAT_FORMAT)
    node_table.to_csv(paths["nodes"], index=False, float_format=FLOAT_FORMAT)
    manifest = dict(dataset.manifest)
    manifest.update({
        "num_steps": T,
        "num_nodes": N,
        "feature_names": list(dataset.feature_names),
        "start_time": dataset.start_time,
        "valid_targets": int(dataset.mask.sum()),
    })
    with open(paths["manifest"], "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Wrote dataset with {T} steps and {N} nodes to {directory}")
    return paths


def _check_rows(frame: pd.DataFrame, path: Path) -> pd.DataFrame:
    if frame["time"].isna().any():
        line = int(frame.index[frame["time"].isna().to_numpy()][0]) + 2
        raise DataError(f"{path} line {line}: missing time index")
    fractional = (frame["time"] % 1 != 0).to_numpy()
    if fractional.any():
        raise DataError(f"{path} line {int(frame.index[fractional][0]) + 2}: time index must be an integer")
    frame["time"] = frame["time"].astype(int)
    frame["node"] = frame["node"].astype(str)
    duplicated = frame.duplicated(["time", "node"]).to_numpy()
    if duplicated.any():
        raise DataError(f"{path} line {int(frame.index[duplicated][0]) + 2}: duplicate (time, node) row")
    return frame


def _pivot(frame: pd.DataFrame, column: str, node_ids, num_steps: int, path: Path) -> np.ndarray:
    table = frame.pivot(index="time", columns="node", values=column)
    if len(table.index) != num_steps or set(table.columns) != set(node_ids):
        raise DataError(f"{path} does not cover every (time, node) pair")
    return table.reindex(index=range(num_steps), columns=list(node_ids)).to_numpy(dtype=np.float64)


def load_dataset(directory: Path) -> LakeDataset:
    directory = Path(directory)
    nodes = read_table(directory / "nodes.csv", ["node", "x", "y"], numeric=["x", "y"])
    node_ids = tuple(str(n) for n in nodes["node"])
    shore = nodes["shore"].fillna(0).astype(bool).to_numpy() if "shore" in nodes.columns else np.zeros(len(nodes), bool)

    manifest: Dict[str, Any] = {}
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        try:
            with open(manifest_path) as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Malformed manifest {manifest_path}: line {e.lineno}") from e

    features_path = directory / "features.csv"
    feature_frame = read_table(features_path, ["time", "node", "channel", "value"], numeric=["time", "value"])
    feature_frame["channel"] = feature_frame["channel"].astype(str)
    feature_names = tuple(manifest.get("feature_names") or pd.unique(feature_frame["channel"]))
    num_steps = int(feature_frame["time"].max()) + 1
    channels = []
    for name in feature_names:
        rows = _check_rows(feature_frame[feature_frame["channel"] == name].copy(), features_path)
        channels.append(_pivot(rows, "value", node_ids, num_steps, features_path))
    features = np.stack(channels, axis=-1)

    targets_path = directory / "targets.csv"
    target_frame = read_table(targets_path, ["time", "node", "value", "valid"], numeric=["time", "value", "valid"])
    target_frame = _check_rows(target_frame, targets_path)
    values = _pivot(target_frame, "value", node_ids, num_steps, targets_path)
    valid = _pivot(target_frame, "valid", node_ids, num_steps, targets_path)
    mask = (valid > 0) & np.isfinite(values)
    dense = None
    if "truth" in target_frame.columns:
        target_frame["truth"] = pd.to_numeric(target_frame["truth"], errors="coerce")
        dense = _pivot(target_frame, "truth", node_ids, num_steps, targets_path)

    logger.info(f"Loaded dataset from {directory}: {num_steps} steps, {len(node_ids)} nodes, {int(mask.sum())} targets")
    return LakeDataset(
        features=features,
        targets=values,
        mask=mask,
        node_ids=node_ids,
        coords=nodes[["x", "y"]].to_numpy(dtype=np.float64),
        shore=shore,
        feature_names=feature_names,
        dense_targets=dense,
        start_time=manifest.get("start_time", START_TIME),
        manifest=manifest,
    )
