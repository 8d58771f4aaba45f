import logging
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# fixed ids and no timestamp so reruns produce identical files
plt.rcParams["svg.hashsalt"] = "lakegraph-bnn"
plt.rcParams["svg.fonttype"] = "none"

SVG_METADATA = {"Date": None}
MISSING_COLOR = "#bdbdbd"


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def metric_heatmap(per_node: pd.DataFrame, metric: str, path: Path, cmap: str = "viridis") -> Path:
    """Per-node metric over the lake layout; the colour scale spans the data min/max."""
    values = per_node[metric].to_numpy(dtype=np.float64)
    defined = np.isfinite(values)
    fig, ax = plt.subplots(figsize=(6, 4))
    if not defined.all():
        ax.scatter(per_node["x"][~defined], per_node["y"][~defined], c=MISSING_COLOR, s=80, marker="s")
    if defined.any():
        vmin, vmax = float(values[defined].min()), float(values[defined].max())
        points = ax.scatter(
            per_node["x"][defined], per_node["y"][defined], c=values[defined],
            cmap=cmap, vmin=vmin, vmax=vmax, s=80, marker="s",
        )
        points.set_gid("nodes")
        fig.colorbar(points, ax=ax, label=metric)
        ax.set_title(f"{metric} (min {vmin:.4g}, max {vmax:.4g})")
    else:
        ax.set_title(f"{metric} (undefined)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _save(fig, path)


def node_time_series(predictions: pd.DataFrame, node: str, path: Path, level: Optional[str] = None) -> Path:
    """Median prediction with the shaded interval and the observed targets of one node."""
    rows = predictions[predictions["node"].astype(str) == str(node)].sort_values("time")
    fig, ax = plt.subplots(figsize=(10, 4))
    if level is not None and f"lower_{level}" in rows.columns:
        ax.fill_between(
            rows["time"], rows[f"lower_{level}"], rows[f"upper_{level}"],
            alpha=0.3, label=f"{level}% interval",
        )
    ax.plot(rows["time"], rows["median"], lw=1.0, label="median")
    observed = rows[rows["valid"].astype(bool)]
    ax.scatter(observed["time"], observed["target"], s=8, c="k", label="observed")
    ax.set_title(f"node {node}")
    ax.set_xlabel("time step")
    ax.set_ylabel("temperature")
    ax.legend(loc="upper right")
    return _save(fig, path)
