import logging
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.variational.posterior import MC_KL_SAMPLES, SIGMA0_DEFAULT, SharpeningConfig
from src.variational.priors import Prior, build_prior

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Mode = Literal["BTNN", "PT", "FT", "JT", "COMPBNN"]

DEFAULT_EPOCHS: Dict[str, int] = {"BTNN": 60, "PT": 60, "FT": 10, "JT": 40, "COMPBNN": 60}
EARLY_STOPPING_MODES = {"BTNN", "PT", "COMPBNN"}
SPATIAL_MODES = {"PT", "FT", "JT"}


class TrainingConfig(BaseModel):
    """Hyper-parameters of one training run"""
    model_config = ConfigDict(extra="forbid")

    mode: Mode = "BTNN"
    epochs: Optional[int] = Field(default=None, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, ge=1)
    alpha_kl: float = Field(default=0.001, ge=0)
    window: int = Field(default=36, ge=1)
    horizon: int = Field(default=8, ge=1)
    prior_kind: Literal["gaussian", "mixture"] = "gaussian"
    prior_std: float = Field(default=1.0, gt=0)
    mixture_weights: List[float] = Field(default_factory=lambda: [0.5, 0.5])
    mixture_stds: List[float] = Field(default_factory=lambda: [1.0, 0.1])
    mc_kl_samples: int = Field(default=MC_KL_SAMPLES, ge=1)
    sharpening: bool = True
    sigma0: float = Field(default=SIGMA0_DEFAULT, gt=0)
    sharpen_head: bool = True
    kl_per_batch: bool = True
    early_stopping: Optional[bool] = None
    patience: int = Field(default=10, ge=1)
    val_fraction: float = Field(default=0.2, ge=0, lt=1)
    test_year: int = -1
    weeks_per_year: int = Field(default=52, ge=1)
    hours_per_week: int = Field(default=168, ge=1)
    max_batches_per_epoch: Optional[int] = Field(default=None, ge=1)
    max_validation_windows: int = Field(default=512, ge=1)
    dropout_rate: float = Field(default=0.1, ge=0, lt=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_window(self):
        if self.horizon > self.window:
            raise ValueError(f"horizon ({self.horizon}) cannot exceed window ({self.window})")
        if self.window > self.hours_per_week:
            raise ValueError(f"window ({self.window}) must fit inside one week ({self.hours_per_week} steps)")
        return self

    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[self.mode]

    def uses_early_stopping(self) -> bool:
        if self.early_stopping is not None:
            return self.early_stopping
        return self.mode in EARLY_STOPPING_MODES

    def prior(self) -> Prior:
        return build_prior(self.prior_kind, self.prior_std, self.mixture_weights, self.mixture_stds)

    def sharpening_config(self) -> SharpeningConfig:
        return SharpeningConfig(sigma0=self.sigma0, enabled=self.sharpening and self.mode == "BTNN")
