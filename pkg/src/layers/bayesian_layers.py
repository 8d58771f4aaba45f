"""Bayesian dense, LSTM and graph-convolution layers.

Layers hold variational parameters only; a forward pass receives a
`WeightSample` drawn once by the owning model, so one sample serves every
time step, node and window of the pass.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
from torch import nn

from src.common.errors import DimensionError, describe_shape
from src.tensor.autodiff import DTYPE, matmul
from src.variational.posterior import ETA_INIT, RHO_INIT, VariationalParameter, WeightSample

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

GATES = ("input", "forget", "cell", "output")
FORGET_BIAS_INIT = 1.0


class BayesianDense(nn.Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        generator: Optional[torch.Generator] = None,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = VariationalParameter((in_features, out_features), in_features, generator, rho_init, eta_init)
        self.bias = VariationalParameter((out_features,), in_features, generator, rho_init, eta_init)

    def forward(self, x: torch.Tensor, sample: WeightSample) -> torch.Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                f"Dense layer expects {self.in_features} input features, got {describe_shape(x.shape)}"
            )
        return matmul(x, sample[self.weight]) + sample[self.bias]


@dataclass
class LSTMGates:
    """Gate weights fused along the last axis in (input, forget, cell, output) order"""
    W: torch.Tensor
    U: torch.Tensor
    b: torch.Tensor

    @property
    def hidden_size(self) -> int:
        return int(self.U.shape[0])


def lstm_step(
    x_t: torch.Tensor, h: torch.Tensor, c: torch.Tensor, gates: LSTMGates
) -> Tuple[torch.Tensor, torch.Tensor]:
    if x_t.shape[-1] != gates.W.shape[0] or h.shape[-1] != gates.hidden_size or c.shape != h.shape:
        raise DimensionError(
            f"LSTM step got input {describe_shape(x_t.shape)}, hidden {describe_shape(h.shape)}, "
            f"cell {describe_shape(c.shape)} for W {describe_shape(gates.W.shape)}"
        )
    z = x_t @ gates.W + h @ gates.U + gates.b
    i, f, g, o = z.split(gates.hidden_size, dim=-1)
    i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
    g = torch.tanh(g)
    c_next = f * c + i * g
    h_next = o * torch.tanh(c_next)
    return h_next, c_next


class BayesianLSTM(nn.Module):
    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        generator: Optional[torch.Generator] = None,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
    ):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.input_weights = nn.ModuleDict({
            gate: VariationalParameter((input_size, hidden_size), input_size, generator, rho_init, eta_init)
            for gate in GATES
        })
        self.recurrent_weights = nn.ModuleDict({
            gate: VariationalParameter((hidden_size, hidden_size), hidden_size, generator, rho_init, eta_init)
            for gate in GATES
        })
        self.biases = nn.ModuleDict({
            gate: VariationalParameter(
                (hidden_size,), hidden_size, generator, rho_init, eta_init,
                mu_fill=FORGET_BIAS_INIT if gate == "forget" else 0.0,
            )
            for gate in GATES
        })

    def gates(self, sample: WeightSample) -> LSTMGates:
        return LSTMGates(
            W=torch.cat([sample[self.input_weights[g]] for g in GATES], dim=-1),
            U=torch.cat([sample[self.recurrent_weights[g]] for g in GATES], dim=-1),
            b=torch.cat([sample[self.biases[g]] for g in GATES], dim=-1),
        )

    def forward(self, x: torch.Tensor, sample: WeightSample) -> torch.Tensor:
        """Run the cell over x [batch, T, input] and return hidden states [batch, T, hidden]."""
        if x.dim() != 3 or x.shape[-1] != self.input_size:
            raise DimensionError(
                f"LSTM expects [batch, time, {self.input_size}] input, got {describe_shape(x.shape)}"
            )
        gates = self.gates(sample)
        h = torch.zeros(x.shape[0], self.hidden_size, dtype=DTYPE)
        c = torch.zeros_like(h)
        outputs = []
        for t in range(x.shape[1]):
            h, c = lstm_step(x[:, t, :], h, c, gates)
            outputs.append(h)
        return torch.stack(outputs, dim=1)


def graph_conv_forward(H: torch.Tensor, s_matrix: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """z_tnf = Σ_k (Σ_j s_nj h_tjk) θ_kf for H [..., T, N, K]; the same θ serves every step."""
    if (
        H.dim() < 3
        or s_matrix.dim() != 2
        or s_matrix.shape[0] != s_matrix.shape[1]
        or s_matrix.shape[1] != H.shape[-2]
        or theta.dim() != 2
        or theta.shape[0] != H.shape[-1]
    ):
        raise DimensionError(
            f"Graph convolution got H {describe_shape(H.shape)}, S {describe_shape(s_matrix.shape)}, "
            f"theta {describe_shape(theta.shape)}"
        )
    return torch.einsum("nj,...jk,kf->...nf", s_matrix, H, theta)


class BayesianGraphConv(nn.Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        generator: Optional[torch.Generator] = None,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.theta = VariationalParameter((in_channels, out_channels), in_channels, generator, rho_init, eta_init)

    def forward(
        self, H: torch.Tensor, s_matrix: torch.Tensor, sample: WeightSample, activate: bool = True
    ) -> torch.Tensor:
        z = graph_conv_forward(H, s_matrix, sample[self.theta])
        return torch.relu(z) if activate else z
