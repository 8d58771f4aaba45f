"""BTNN, BSTNN and the MC-dropout comparison network.

All three share one calling convention: `sample_weights(noise)` draws the
weights for a forward pass (one ε per variational parameter) and
`apply_nodes(X, sample, noise)` maps standardized features [..., T, N, D]
to predictions [..., T, N] plus, for the comparison network, log-variances.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from src.common.errors import ContractError, DimensionError, describe_shape
from src.graph.spatial_graph import SpatialGraph
from src.layers.bayesian_layers import BayesianDense, BayesianGraphConv, BayesianLSTM
from src.layers.dropout_layers import DropoutDense, mc_dropout
from src.tensor.autodiff import DTYPE
from src.tensor.noise import NoiseStream
from src.variational.posterior import (
    ETA_INIT,
    RHO_INIT,
    VariationalParameter,
    WeightSample,
    name_parameters,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

LSTM_UNITS = (16, 32)
GRAPH_UNITS = (64, 64)
COMPBNN_DROPOUT = 0.1


def nodes_to_batch(X: torch.Tensor) -> Tuple[torch.Tensor, Tuple[int, ...]]:
    """[..., T, N, D] -> [(...)·N, T, D]; returns the leading shape for `batch_to_nodes`."""
    lead = tuple(X.shape[:-3])
    T, N, D = X.shape[-3:]
    flat = X.reshape(-1, T, N, D).permute(0, 2, 1, 3).reshape(-1, T, D)
    return flat, lead + (N,)


def batch_to_nodes(Y: torch.Tensor, lead: Tuple[int, ...]) -> torch.Tensor:
    """[(...)·N, T, C] -> [..., T, N, C]"""
    *outer, N = lead
    T, C = Y.shape[-2:]
    Y = Y.reshape(-1, N, T, C).permute(0, 2, 1, 3)
    return Y.reshape(tuple(outer) + (T, N, C))


class ProbabilisticModel(nn.Module):
    """Shared plumbing: parameter naming, weight sampling and standardization buffers"""

    kind = ""

    def __init__(self, num_features: int):
        super().__init__()
        self.num_features = num_features
        self.register_buffer("feature_mean", torch.zeros(num_features, dtype=DTYPE))
        self.register_buffer("feature_std", torch.ones(num_features, dtype=DTYPE))
        self.register_buffer("target_mean", torch.zeros((), dtype=DTYPE))
        self.register_buffer("target_std", torch.ones((), dtype=DTYPE))

    def _finish_init(self):
        name_parameters(self)

    def variational_parameters(self) -> List[VariationalParameter]:
        return [m for m in self.modules() if isinstance(m, VariationalParameter)]

    def parameter_groups(self) -> Dict[str, List[VariationalParameter]]:
        return {"all": self.variational_parameters()}

    def sample_weights(self, noise: NoiseStream) -> WeightSample:
        return {vp: vp.sample(noise) for vp in self.variational_parameters()}

    def set_scaling(self, feature_mean, feature_std, target_mean, target_std):
        self.feature_mean.copy_(torch.as_tensor(feature_mean, dtype=DTYPE))
        self.feature_std.copy_(torch.as_tensor(feature_std, dtype=DTYPE))
        self.target_mean.copy_(torch.as_tensor(target_mean, dtype=DTYPE))
        self.target_std.copy_(torch.as_tensor(target_std, dtype=DTYPE))

    def standardize_features(self, X: torch.Tensor) -> torch.Tensor:
        return (X - self.feature_mean) / self.feature_std

    def standardize_targets(self, Y: torch.Tensor) -> torch.Tensor:
        return (Y - self.target_mean) / self.target_std

    def restore_targets(self, Y: torch.Tensor) -> torch.Tensor:
        return Y * self.target_std + self.target_mean

    def restore_log_variance(self, s: torch.Tensor) -> torch.Tensor:
        return s + 2.0 * torch.log(self.target_std)

    def apply_nodes(
        self, X: torch.Tensor, sample: WeightSample, noise: NoiseStream
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        raise NotImplementedError

    def predict_nodes(
        self, X: torch.Tensor, sample: WeightSample, noise: NoiseStream
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """Physical-unit predictions for raw features [..., T, N, D]."""
        y, s = self.apply_nodes(self.standardize_features(X), sample, noise)
        return self.restore_targets(y), None if s is None else self.restore_log_variance(s)

    def architecture(self) -> Dict[str, object]:
        raise NotImplementedError


class TemporalStack(nn.Module):
    """Stacked Bayesian LSTMs shared by every node"""

    def __init__(
        self,
        num_features: int,
        units: Sequence[int] = LSTM_UNITS,
        generator: Optional[torch.Generator] = None,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
    ):
        super().__init__()
        sizes = [num_features] + list(units)
        self.layers = nn.ModuleList([
            BayesianLSTM(sizes[i], sizes[i + 1], generator, rho_init, eta_init) for i in range(len(units))
        ])
        self.output_size = sizes[-1]

    def forward(self, x: torch.Tensor, sample: WeightSample) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, sample)
        return x


class BTNNModel(ProbabilisticModel):
    kind = "BTNN"

    def __init__(
        self,
        num_features: int,
        lstm_units: Sequence[int] = LSTM_UNITS,
        seed: int = 0,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
    ):
        super().__init__(num_features)
        generator = torch.Generator().manual_seed(int(seed))
        self.lstm_units = tuple(lstm_units)
        self.temporal = TemporalStack(num_features, lstm_units, generator, rho_init, eta_init)
        self.head = BayesianDense(self.temporal.output_size, 1, generator, rho_init, eta_init)
        self._finish_init()

    def parameter_groups(self) -> Dict[str, List[VariationalParameter]]:
        return {
            "temporal": [m for m in self.temporal.modules() if isinstance(m, VariationalParameter)],
            "head": [self.head.weight, self.head.bias],
        }

    def forward(self, x: torch.Tensor, sample: WeightSample) -> torch.Tensor:
        """x [batch, T, D] -> [batch, T]"""
        if x.shape[-1] != self.num_features:
            raise DimensionError(f"Expected {self.num_features} features, got {describe_shape(x.shape)}")
        return self.head(self.temporal(x, sample), sample).squeeze(-1)

    def apply_nodes(self, X, sample, noise):
        flat, lead = nodes_to_batch(X)
        return batch_to_nodes(self(flat, sample).unsqueeze(-1), lead).squeeze(-1), None

    def architecture(self) -> Dict[str, object]:
        return {"kind": self.kind, "num_features": self.num_features, "lstm_units": list(self.lstm_units)}


def btnn_forward(model: BTNNModel, X: torch.Tensor, noise: NoiseStream) -> torch.Tensor:
    """One stochastic prediction per time step for a single series X [T, D]."""
    if X.dim() != 2 or X.shape[-1] != model.num_features:
        raise DimensionError(f"Expected [T, {model.num_features}] features, got {describe_shape(X.shape)}")
    sample = model.sample_weights(noise)
    return model(X.unsqueeze(0), sample)[0]


class BSTNNModel(ProbabilisticModel):
    kind = "BSTNN"

    def __init__(
        self,
        num_features: int,
        graph: SpatialGraph,
        lstm_units: Sequence[int] = LSTM_UNITS,
        graph_units: Sequence[int] = GRAPH_UNITS,
        seed: int = 0,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
    ):
        super().__init__(num_features)
        generator = torch.Generator().manual_seed(int(seed))
        self.graph = graph
        self.lstm_units = tuple(lstm_units)
        self.graph_units = tuple(graph_units)
        self.register_buffer("s_matrix", graph.operator())
        self.temporal = TemporalStack(num_features, lstm_units, generator, rho_init, eta_init)
        widths = [self.temporal.output_size] + list(graph_units)
        self.spatial = nn.ModuleList([
            BayesianGraphConv(widths[i], widths[i + 1], generator, rho_init, eta_init)
            for i in range(len(graph_units))
        ])
        self.head = BayesianDense(widths[-1], 1, generator, rho_init, eta_init)
        self._finish_init()

    def parameter_groups(self) -> Dict[str, List[VariationalParameter]]:
        return {
            "temporal": [m for m in self.temporal.modules() if isinstance(m, VariationalParameter)],
            "spatial": [layer.theta for layer in self.spatial] + [self.head.weight, self.head.bias],
        }

    def load_temporal(self, source: ProbabilisticModel):
        """Copy the LSTM posteriors of a trained BTNN or BSTNN into this model."""
        if not hasattr(source, "temporal") or tuple(source.lstm_units) != self.lstm_units:
            raise ContractError("Source model has no compatible temporal stack")
        self.temporal.load_state_dict(source.temporal.state_dict())

    def forward(self, X: torch.Tensor, sample: WeightSample) -> torch.Tensor:
        """X [..., T, N, D] -> [..., T, N]"""
        if X.dim() < 3 or X.shape[-2] != self.graph.num_nodes or X.shape[-1] != self.num_features:
            raise DimensionError(
                f"Expected [..., T, {self.graph.num_nodes}, {self.num_features}] features, "
                f"got {describe_shape(X.shape)}"
            )
        flat, lead = nodes_to_batch(X)
        H = batch_to_nodes(self.temporal(flat, sample), lead)
        for layer in self.spatial:
            H = layer(H, self.s_matrix, sample)
        return self.head(H, sample).squeeze(-1)

    def apply_nodes(self, X, sample, noise):
        return self(X, sample), None

    def architecture(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "num_features": self.num_features,
            "lstm_units": list(self.lstm_units),
            "graph_units": list(self.graph_units),
        }


def bstnn_forward(model: BSTNNModel, X: torch.Tensor, noise: NoiseStream) -> torch.Tensor:
    """Draw ε once, set every weight once, then run the shared LSTMs, graph layers and head."""
    sample = model.sample_weights(noise)
    return model(X, sample)


class CompBNNModel(ProbabilisticModel):
    """Two point-estimate LSTMs with MC dropout and a (ŷ, s = log σ̂²) head"""

    kind = "COMPBNN"

    def __init__(
        self,
        num_features: int,
        lstm_units: Sequence[int] = LSTM_UNITS,
        dropout_rate: float = COMPBNN_DROPOUT,
        seed: int = 0,
    ):
        super().__init__(num_features)
        self.lstm_units = tuple(lstm_units)
        self.dropout_rate = dropout_rate
        sizes = [num_features] + list(lstm_units)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(seed))
            self.recurrent = nn.ModuleList([
                nn.LSTM(sizes[i], sizes[i + 1], batch_first=True, dtype=DTYPE) for i in range(len(lstm_units))
            ])
            self.head = DropoutDense(sizes[-1], 2, dropout_rate, generator=torch.Generator().manual_seed(int(seed)))

    def forward(self, x: torch.Tensor, noise: NoiseStream) -> Tuple[torch.Tensor, torch.Tensor]:
        """x [batch, T, D] -> (ŷ, s), each [batch, T]"""
        if x.shape[-1] != self.num_features:
            raise DimensionError(f"Expected {self.num_features} features, got {describe_shape(x.shape)}")
        h = x
        for index, lstm in enumerate(self.recurrent):
            h, _ = lstm(h)
            if index < len(self.recurrent) - 1:
                h = mc_dropout(h, self.dropout_rate, noise, key=f"recurrent.{index}")
        out = self.head(h, noise)
        return out[..., 0], out[..., 1]

    def apply_nodes(self, X, sample, noise):
        flat, lead = nodes_to_batch(X)
        y, s = self(flat, noise)
        y = batch_to_nodes(y.unsqueeze(-1), lead).squeeze(-1)
        s = batch_to_nodes(s.unsqueeze(-1), lead).squeeze(-1)
        return y, s

    def architecture(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "num_features": self.num_features,
            "lstm_units": list(self.lstm_units),
            "dropout_rate": self.dropout_rate,
        }


def build_model(architecture: Dict[str, object], graph: Optional[SpatialGraph] = None, seed: int = 0):
    kind = architecture["kind"]
    if kind == "BTNN":
        return BTNNModel(architecture["num_features"], architecture["lstm_units"], seed=seed)
    if kind == "BSTNN":
        if graph is None:
            raise ContractError("A spatial graph is required to build a BSTNN")
        return BSTNNModel(
            architecture["num_features"], graph, architecture["lstm_units"], architecture["graph_units"], seed=seed
        )
    if kind == "COMPBNN":
        return CompBNNModel(
            architecture["num_features"], architecture["lstm_units"], architecture["dropout_rate"], seed=seed
        )
    raise ContractError(f"Unknown model kind: {kind}")
