import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from src.common.errors import DataError
from src.graph.spatial_graph import SpatialGraph
from src.models.networks import ProbabilisticModel, build_model

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lakegraph-bnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A trained model with the regime and settings it was produced under"""
    model: ProbabilisticModel
    regime: str
    config: Dict[str, Any] = field(default_factory=dict)
    graph: Optional[SpatialGraph] = None
    layout_hash: Optional[str] = None


def save_checkpoint(
    path: Path,
    model: ProbabilisticModel,
    regime: str,
    config: Optional[Dict[str, Any]] = None,
    graph: Optional[SpatialGraph] = None,
    layout_hash: Optional[str] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    graph = graph if graph is not None else getattr(model, "graph", None)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "regime": regime,
        "architecture": model.architecture(),
        "shapes": {name: list(t.shape) for name, t in model.state_dict().items()},
        "state_dict": model.state_dict(),
        "graph": graph.to_payload() if graph is not None else None,
        "layout_hash": layout_hash or (graph.graph_hash() if graph is not None else None),
        "config": config or {},
    }
    try:
        torch.save(payload, path)
        logger.info(f"Saved {regime} checkpoint to {path}")
    except Exception as e:
        logger.error(f"Failed to write checkpoint {path}: {str(e)}")
        raise
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as e:
        raise DataError(f"Unreadable checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path} has unsupported checkpoint version {payload.get('version')}")

    graph = SpatialGraph.from_payload(payload["graph"]) if payload["graph"] is not None else None
    model = build_model(payload["architecture"], graph)
    for name, tensor in payload["state_dict"].items():
        expected = payload["shapes"].get(name)
        if expected is not None and list(tensor.shape) != list(expected):
            raise DataError(f"{path}: tensor {name} has shape {list(tensor.shape)}, header says {expected}")
    model.load_state_dict(payload["state_dict"])
    logger.info(f"Loaded {payload['regime']} checkpoint from {path}")
    return Checkpoint(
        model=model,
        regime=payload["regime"],
        config=payload["config"],
        graph=graph,
        layout_hash=payload["layout_hash"],
    )
