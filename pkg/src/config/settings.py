"""Run settings: model defaults < key-value config file < BSTNN_* environment < command-line flags.

Flat keys are routed to whichever model declares them; `seed` reaches all three.
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field

from src.common.errors import ContractError
from src.synthdata.simulator import SyntheticConfig
from src.training.config import TrainingConfig

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ENV_PREFIX = "BSTNN_"
LIST_KEYS = {"coverage_levels", "mixture_weights", "mixture_stds"}
SHARED_KEYS = {"seed"}

Command = Literal["simulate", "train", "predict", "evaluate", "plot"]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Command
    data_dir: Optional[Path] = None
    nodes_csv: Optional[Path] = None
    edges_csv: Optional[Path] = None
    checkpoint: Optional[Path] = None
    init_checkpoint: Optional[Path] = None
    report_dir: Optional[Path] = None
    out_dir: Path = Path("runs")
    ensemble: int = Field(default=11, ge=1)
    coverage_levels: List[float] = Field(default_factory=lambda: [0.75, 0.90])
    span: Literal["test", "all"] = "test"
    graph_method: Literal["diffusion", "threshold"] = "diffusion"
    sigma_dk2: float = Field(default=1000.0, gt=0)
    graph_radius: Optional[float] = Field(default=None, gt=0)
    graph_cutoff: Optional[float] = Field(default=None, ge=0)
    shore_independent: bool = False
    squared_aleatoric_variance: bool = False
    use_dense_truth: bool = False
    node: Optional[str] = None
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    seed: int = 0
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)

    def require(self, *names: str):
        """Raise unless every named path setting is given and exists."""
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise ContractError(f"The '{self.command}' command needs {name.replace('_', '-')}")
            if not Path(path).exists():
                raise FileNotFoundError(f"{name.replace('_', '-')} not found: {path}")

    def graph_options(self) -> Dict[str, Any]:
        return {
            "method": self.graph_method,
            "sigma_dk2": self.sigma_dk2,
            "radius": self.graph_radius,
            "cutoff": self.graph_cutoff,
        }


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    return value


def _known_keys() -> set:
    return set(RunConfig.model_fields) | set(TrainingConfig.model_fields) | set(SyntheticConfig.model_fields)


def _environment_values(environ: Mapping[str, str]) -> Dict[str, str]:
    """BSTNN_* variables naming a setting; other BSTNN_* variables are ignored with a warning."""
    values, known = {}, _known_keys()
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name in known and name not in ("training", "synthetic", "command"):
            values[name] = value
        else:
            logger.warning(f"Ignoring environment variable {key}: not a setting")
    return values


def load_settings(
    command: str,
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    values: Dict[str, Any] = {}
    if config_file is not None:
        config_file = Path(config_file)
        if not config_file.exists():
            raise FileNotFoundError(f"Config file not found: {config_file}")
        values.update({k.lower(): v for k, v in dotenv_values(config_file).items() if v is not None})
        logger.info(f"Loaded {len(values)} settings from {config_file}")
    values.update(_environment_values(os.environ if environ is None else environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    run: Dict[str, Any] = {"command": command}
    training: Dict[str, Any] = {}
    synthetic: Dict[str, Any] = {}
    for key, value in values.items():
        if key in LIST_KEYS:
            value = _split_list(value)
        routed = False
        for target, model in ((run, RunConfig), (training, TrainingConfig), (synthetic, SyntheticConfig)):
            if key in model.model_fields and key not in ("training", "synthetic", "command"):
                target[key] = value
                routed = True
                if key not in SHARED_KEYS:
                    break
        if not routed:
            raise ContractError(f"Unknown setting: {key}")
    return RunConfig(**run, training=TrainingConfig(**training), synthetic=SyntheticConfig(**synthetic))
