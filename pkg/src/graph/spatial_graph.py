import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.spatial.distance import cdist

from src.common.errors import ContractError, DataError, DimensionError, DomainError
from src.tensor.autodiff import DTYPE

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SIGMA_DK2_DEFAULT = 1000.0


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Node positions, symmetric adjacency A and the normalized operator S"""
    coords: np.ndarray
    adjacency: np.ndarray
    s_matrix: np.ndarray
    node_ids: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def num_nodes(self) -> int:
        return int(self.adjacency.shape[0])

    def operator(self) -> torch.Tensor:
        return torch.as_tensor(self.s_matrix, dtype=DTYPE)

    def graph_hash(self) -> str:
        return layout_hash(self.node_ids, self.coords)

    def permuted(self, order: Sequence[int]) -> "SpatialGraph":
        """Relabel nodes so that new node k is old node order[k]."""
        order = np.asarray(order, dtype=int)
        return SpatialGraph(
            coords=self.coords[order],
            adjacency=self.adjacency[np.ix_(order, order)],
            s_matrix=self.s_matrix[np.ix_(order, order)],
            node_ids=tuple(self.node_ids[i] for i in order),
        )

    def to_payload(self) -> Dict[str, object]:
        return {
            "coords": torch.as_tensor(self.coords, dtype=DTYPE),
            "adjacency": torch.as_tensor(self.adjacency, dtype=DTYPE),
            "s_matrix": torch.as_tensor(self.s_matrix, dtype=DTYPE),
            "node_ids": list(self.node_ids),
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, object]) -> "SpatialGraph":
        return cls(
            coords=np.asarray(payload["coords"], dtype=np.float64),
            adjacency=np.asarray(payload["adjacency"], dtype=np.float64),
            s_matrix=np.asarray(payload["s_matrix"], dtype=np.float64),
            node_ids=tuple(str(n) for n in payload["node_ids"]),
        )

    @classmethod
    def from_adjacency(
        cls,
        coords: np.ndarray,
        adjacency: np.ndarray,
        node_ids: Optional[Sequence[str]] = None,
        independent_nodes: Iterable[int] = (),
    ) -> "SpatialGraph":
        coords = np.asarray(coords, dtype=np.float64)
        adjacency = np.array(adjacency, dtype=np.float64)
        if node_ids is None:
            node_ids = [str(i) for i in range(len(coords))]
        for index in independent_nodes:
            adjacency[index, :] = 0.0
            adjacency[:, index] = 0.0
        return cls(
            coords=coords,
            adjacency=adjacency,
            s_matrix=normalize(adjacency),
            node_ids=tuple(str(n) for n in node_ids),
        )

    @classmethod
    def from_coords(
        cls,
        coords: np.ndarray,
        node_ids: Optional[Sequence[str]] = None,
        method: str = "diffusion",
        sigma_dk2: float = SIGMA_DK2_DEFAULT,
        radius: Optional[float] = None,
        cutoff: Optional[float] = None,
        squared_distance: bool = False,
        independent_nodes: Iterable[int] = (),
    ) -> "SpatialGraph":
        if method == "diffusion":
            adjacency = build_adjacency_diffusion(coords, sigma_dk2, cutoff=cutoff, squared_distance=squared_distance)
        elif method == "threshold":
            if radius is None:
                raise ContractError("Threshold graphs need a radius")
            adjacency = build_adjacency_threshold(coords, radius)
        else:
            raise ContractError(f"Unknown graph construction method: {method}")
        graph = cls.from_adjacency(coords, adjacency, node_ids, independent_nodes)
        logger.info(
            f"Built {method} graph: {graph.num_nodes} nodes, "
            f"{int(np.count_nonzero(graph.adjacency) // 2)} weighted edges"
        )
        return graph


def layout_hash(node_ids: Sequence[str], coords: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update("|".join(str(n) for n in node_ids).encode())
    digest.update(np.round(np.asarray(coords, dtype=np.float64), 6).tobytes())
    return digest.hexdigest()


def _distances(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] != 2:
        raise ContractError(f"Expected at least one node with 2-D coordinates, got shape {coords.shape}")
    return cdist(coords, coords)


def build_adjacency_threshold(coords: np.ndarray, radius: float) -> np.ndarray:
    """a_ij = 1 when 0 < d(i, j) < radius"""
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    d = _distances(coords)
    return ((d > 0) & (d < radius)).astype(np.float64)


def build_adjacency_diffusion(
    coords: np.ndarray,
    sigma_dk2: float,
    cutoff: Optional[float] = None,
    squared_distance: bool = False,
) -> np.ndarray:
    """ã_ij = exp(−d(i, j) / σ_dk²) for i ≠ j.

    The exponent uses the plain distance; `squared_distance` switches to
    d² for a conventional Gaussian kernel.
    """
    if not sigma_dk2 > 0:
        raise DomainError(f"sigma_dk2 must be positive, got {sigma_dk2}")
    d = _distances(coords)
    if squared_distance:
        d = d**2
    adjacency = np.exp(-d / sigma_dk2)
    np.fill_diagonal(adjacency, 0.0)
    if cutoff is not None:
        adjacency[adjacency < cutoff] = 0.0
    return adjacency


def normalize(adjacency: np.ndarray) -> np.ndarray:
    """S = D̃^(−1/2) (A + I) D̃^(−1/2)"""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise DimensionError(f"Adjacency must be square, got shape {adjacency.shape}")
    if not np.all(np.isfinite(adjacency)):
        raise DomainError("Adjacency weights must be finite")
    if np.any(adjacency < 0):
        raise DomainError("Adjacency weights must be nonnegative")
    a_tilde = adjacency + np.eye(adjacency.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]


def read_table(path: Path, required: Sequence[str], numeric: Sequence[str] = ()) -> pd.DataFrame:
    """Read a CSV, insisting on `required` columns and finite-or-empty `numeric` ones."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise DataError(f"Empty CSV {path}") from e
    except pd.errors.ParserError as e:
        raise DataError(f"Malformed CSV {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns: {', '.join(missing)}")
    return coerce_numeric(frame, numeric, path)


def coerce_numeric(frame: pd.DataFrame, columns: Sequence[str], path: Path) -> pd.DataFrame:
    for column in columns:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna() & frame[column].notna()
        if bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise DataError(f"{path} line {line}: non-numeric value in column '{column}'")
        frame[column] = values
    return frame


def load_graph_csv(
    nodes_csv: Path,
    edges_csv: Optional[Path] = None,
    shore_independent: bool = False,
    **construction,
) -> SpatialGraph:
    """Build a graph from `node,x,y[,shore]` and an optional `src,dst,weight` edge list.

    Without an edge list the adjacency is derived from the coordinates
    (keyword arguments are passed to `SpatialGraph.from_coords`).
    """
    nodes = read_table(nodes_csv, ["node", "x", "y"], numeric=["x", "y"])
    node_ids = [str(n) for n in nodes["node"]]
    coords = nodes[["x", "y"]].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise DataError(f"{nodes_csv} has nodes without coordinates")
    independent: List[int] = []
    if shore_independent and "shore" in nodes.columns:
        independent = [i for i, flag in enumerate(nodes["shore"].astype(bool)) if flag]

    if edges_csv is None:
        return SpatialGraph.from_coords(coords, node_ids, independent_nodes=independent, **construction)

    edges = read_table(edges_csv, ["src", "dst", "weight"], numeric=["weight"])
    position = {node: i for i, node in enumerate(node_ids)}
    adjacency = np.zeros((len(node_ids), len(node_ids)))
    for line, (src, dst, weight) in enumerate(edges[["src", "dst", "weight"]].itertuples(index=False), start=2):
        src, dst = str(src), str(dst)
        if src not in position or dst not in position:
            raise DataError(f"{edges_csv} line {line}: unknown node in edge {src}-{dst}")
        weight = float(weight)
        if not np.isfinite(weight) or weight < 0:
            raise DataError(f"{edges_csv} line {line}: edge {src}-{dst} needs a finite nonnegative weight")
        if src == dst:
            continue
        adjacency[position[src], position[dst]] = weight
        adjacency[position[dst], position[src]] = weight
    logger.info(f"Loaded explicit edge list with {len(edges)} rows from {edges_csv}")
    return SpatialGraph.from_adjacency(coords, adjacency, node_ids, independent)
