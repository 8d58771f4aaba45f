import copy
import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from src.common.errors import ContractError, DimensionError, NumericError
from src.graph.spatial_graph import SpatialGraph
from src.models.networks import BSTNNModel, BTNNModel, CompBNNModel, ProbabilisticModel
from src.synthdata.dataset_io import LakeDataset
from src.tensor.autodiff import DTYPE
from src.tensor.noise import NoiseStream
from src.training.config import SPATIAL_MODES, TrainingConfig
from src.training.objectives import (
    LossTerms,
    Objective,
    loss_bstnn,
    loss_btnn,
    loss_compbnn,
    masked_mse,
)
from src.training.optimizer import adam_step, collect_grads, make_adam
from src.training.splits import DatasetSplit, split_weekly, steps_of_weeks, window_starts
from src.variational.posterior import sharpen_sample

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

VALIDATION_SEED_OFFSET = 7919
TRAINABLE_GROUPS = {"PT": ("spatial",), "FT": ("temporal", "spatial"), "JT": ("temporal", "spatial")}


@dataclass
class TrainingResult:
    model: ProbabilisticModel
    history: pd.DataFrame
    split: DatasetSplit
    regime: str


def fit_scaling(dataset: LakeDataset, steps: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Feature and target mean/std over the given time steps (valid targets only)."""
    features = dataset.features[steps].reshape(-1, dataset.num_features)
    feature_mean = features.mean(axis=0)
    feature_std = features.std(axis=0)
    feature_std[feature_std < 1e-12] = 1.0
    observed = dataset.targets[steps][dataset.mask[steps]]
    if observed.size == 0:
        raise ContractError("Training weeks contain no valid targets")
    target_std = float(observed.std()) if observed.size > 1 else 1.0
    return feature_mean, feature_std, float(observed.mean()), target_std if target_std > 1e-12 else 1.0


class Trainer:
    """Runs one training regime on a lake dataset.

    BTNN and COMPBNN see windows of single nodes (a random valid node per
    window start); PT, FT and JT see every node of the graph at once.
    """

    def __init__(
        self,
        config: TrainingConfig,
        dataset: LakeDataset,
        graph: Optional[SpatialGraph] = None,
        init_model: Optional[ProbabilisticModel] = None,
    ):
        self.config = config
        self.dataset = dataset
        self.graph = graph
        self.init_model = init_model
        self.mode = config.mode
        self.spatial = self.mode in SPATIAL_MODES
        self._check_prerequisites()

        self.split = split_weekly(
            dataset.num_weeks(config.hours_per_week),
            config.test_year,
            config.val_fraction,
            config.seed,
            config.weeks_per_year,
        )
        self.model = self._build_model()
        self.params = self._trainable_parameters()
        self.optimizer = make_adam(self.params, config.learning_rate)
        self.noise = NoiseStream(seed=config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.sharpening = config.sharpening_config()
        self.objective = Objective(config.prior(), config.alpha_kl, mc_samples=config.mc_kl_samples)

        self.X = self.model.standardize_features(torch.as_tensor(dataset.features, dtype=DTYPE))
        self.Y = self.model.standardize_targets(torch.as_tensor(np.nan_to_num(dataset.targets), dtype=DTYPE))
        self.M = torch.as_tensor(dataset.mask)
        self.horizon_mask = torch.arange(config.window) >= config.window - config.horizon

        _, self.train_valid = self._valid_windows(self.split.train_weeks)
        self.train_pool = self._window_pool(self.split.train_weeks, self.rng)
        if len(self.train_pool) == 0:
            raise ContractError("No training window has a valid target in its horizon")
        val_rng = np.random.default_rng(config.seed + VALIDATION_SEED_OFFSET)
        validation = self._window_pool(self.split.validation_weeks, val_rng)
        if len(validation) > config.max_validation_windows:
            validation = validation[np.sort(val_rng.choice(len(validation), config.max_validation_windows, replace=False))]
        self.validation_pool = validation
        logger.info(
            f"{self.mode}: {len(self.train_pool)} training windows, {len(self.validation_pool)} validation windows"
        )

    def _check_prerequisites(self):
        config, init = self.config, self.init_model
        if self.spatial:
            if self.graph is None:
                raise ContractError(f"{self.mode} training needs a spatial graph")
            if self.graph.num_nodes != self.dataset.num_nodes:
                raise DimensionError(
                    f"Graph has {self.graph.num_nodes} nodes but the dataset has {self.dataset.num_nodes}"
                )
        if self.mode == "PT" and (init is None or init.kind != "BTNN"):
            raise ContractError("PT training needs a trained BTNN checkpoint (--from)")
        if self.mode == "FT" and (init is None or init.kind != "BSTNN"):
            raise ContractError("FT training needs a PT checkpoint (--from)")
        if init is not None and init.num_features != self.dataset.num_features:
            raise DimensionError(
                f"Checkpoint expects {init.num_features} features, dataset has {self.dataset.num_features}"
            )
        if self.mode == "FT" and init.graph.graph_hash() != self.graph.graph_hash():
            raise ContractError("FT dataset node layout differs from the PT checkpoint graph")

    def _build_model(self) -> ProbabilisticModel:
        config, dataset, init = self.config, self.dataset, self.init_model
        D = dataset.num_features
        if self.mode == "BTNN":
            model = BTNNModel(D, seed=config.seed)
        elif self.mode == "COMPBNN":
            model = CompBNNModel(D, dropout_rate=config.dropout_rate, seed=config.seed)
        elif self.mode == "PT":
            model = BSTNNModel(D, self.graph, lstm_units=init.lstm_units, seed=config.seed)
            model.load_temporal(init)
            model.temporal.requires_grad_(False)
        elif self.mode == "FT":
            model = BSTNNModel(D, self.graph, init.lstm_units, init.graph_units, seed=config.seed)
            model.load_state_dict(init.state_dict())
        else:
            model = BSTNNModel(D, self.graph, seed=config.seed)

        if init is not None:
            model.set_scaling(init.feature_mean, init.feature_std, init.target_mean, init.target_std)
        else:
            steps = steps_of_weeks(self.split.train_weeks, config.hours_per_week, dataset.num_steps)
            model.set_scaling(*fit_scaling(dataset, steps))
        return model

    def _trainable_parameters(self) -> List[torch.nn.Parameter]:
        use_eta = self.config.sharpening_config().enabled
        return [
            p for name, p in self.model.named_parameters()
            if p.requires_grad and (use_eta or not name.endswith(".eta"))
        ]

    def _valid_windows(self, weeks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Window starts with any valid horizon target, and their [start, node] validity."""
        config = self.config
        starts = window_starts(weeks, config.window, config.hours_per_week, self.dataset.num_steps)
        if len(starts) == 0:
            return starts, np.zeros((0, self.dataset.num_nodes), dtype=bool)
        horizon = starts[:, None] + np.arange(config.window - config.horizon, config.window)
        valid = self.dataset.mask[horizon].any(axis=1)
        keep = valid.any(axis=1)
        return starts[keep], valid[keep]

    @staticmethod
    def _pick_nodes(valid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        scores = np.where(valid, rng.random(valid.shape), -1.0)
        return scores.argmax(axis=1)

    def _window_pool(self, weeks: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Rows of (start, node); node is −1 for whole-graph windows."""
        starts, valid = self._valid_windows(weeks)
        nodes = np.full(len(starts), -1) if self.spatial else self._pick_nodes(valid, rng)
        return np.stack([starts, nodes], axis=1).astype(int)

    def _batch(self, rows: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        t_index = torch.as_tensor(rows[:, :1] + np.arange(self.config.window))
        if self.spatial:
            X, Y, M = self.X[t_index], self.Y[t_index], self.M[t_index]
            return X, Y, M & self.horizon_mask[:, None]
        n_index = torch.as_tensor(rows[:, 1:2])
        X, Y, M = self.X[t_index, n_index], self.Y[t_index, n_index], self.M[t_index, n_index]
        return X, Y, M & self.horizon_mask

    def _sharpened_parameters(self):
        groups = self.model.parameter_groups()
        params = groups["temporal"] + (groups["head"] if self.config.sharpen_head else [])
        return [vp for vp in params if vp.eta is not None]

    def _step_terms(self, X, Y, M) -> Optional[LossTerms]:
        model, noise = self.model, self.noise
        if self.mode == "COMPBNN":
            y_hat, s = model(X, noise)
            loss = loss_compbnn(Y, y_hat, s, M)
            if loss is None:
                return None
            zero = torch.zeros((), dtype=DTYPE)
            return LossTerms(total=loss, mse=masked_mse(y_hat.detach(), Y, M), kl=zero, ps=zero)

        sample = model.sample_weights(noise)
        if self.spatial:
            return loss_bstnn(model(X, sample), Y, M, model, self.objective, TRAINABLE_GROUPS[self.mode], noise)

        ps = None
        if self.sharpening.enabled:
            first = masked_mse(model(X, sample), Y, M)
            if first is None:
                logger.warning("Batch has no valid targets; skipped")
                return None
            targets = self._sharpened_parameters()
            grads = torch.autograd.grad(first, [sample[vp] for vp in targets], retain_graph=True, allow_unused=True)
            gradients = {
                vp: (g if g is not None else torch.zeros_like(sample[vp])).detach() for vp, g in zip(targets, grads)
            }
            sample, ps = sharpen_sample(sample, gradients, self.sharpening, noise)
        return loss_btnn(model(X, sample), Y, M, model, self.objective, ps, noise)

    def _predict(self, X: torch.Tensor, noise: NoiseStream) -> torch.Tensor:
        if self.mode == "COMPBNN":
            return self.model(X, noise)[0]
        return self.model(X, self.model.sample_weights(noise))

    def validate(self) -> Optional[float]:
        """Pure masked MSE (standardized units) of one seeded stochastic pass over the validation windows."""
        if len(self.validation_pool) == 0:
            return None
        noise = NoiseStream(seed=self.config.seed + VALIDATION_SEED_OFFSET)
        sse, count = 0.0, 0
        with torch.no_grad():
            for first in range(0, len(self.validation_pool), self.config.batch_size):
                X, Y, M = self._batch(self.validation_pool[first:first + self.config.batch_size])
                mse = masked_mse(self._predict(X, noise), Y, M)
                if mse is not None:
                    n = int(M.sum())
                    sse += float(mse) * n
                    count += n
        return sse / count if count else None

    def train_epoch(self, kl_scale: float) -> Dict[str, float]:
        config = self.config
        self.objective.kl_scale = kl_scale
        if not self.spatial:
            # a fresh random valid node per window start every epoch
            self.train_pool[:, 1] = self._pick_nodes(self.train_valid, self.rng)
        order = self.rng.permutation(len(self.train_pool))
        batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        if config.max_batches_per_epoch is not None:
            batches = batches[:config.max_batches_per_epoch]

        sums = {"loss": 0.0, "mse": 0.0, "kl": 0.0, "ps": 0.0}
        done, skipped, aborted = 0, 0, 0
        self.model.train()
        for batch in batches:
            X, Y, M = self._batch(self.train_pool[batch])
            self.optimizer.zero_grad(set_to_none=True)
            terms = self._step_terms(X, Y, M)
            if terms is None:
                skipped += 1
                continue
            terms.total.backward()
            if not adam_step(self.params, collect_grads(self.params), self.optimizer, config.learning_rate):
                aborted += 1
                continue
            for key, value in (("loss", terms.total), ("mse", terms.mse), ("kl", terms.kl), ("ps", terms.ps)):
                sums[key] += float(value.detach())
            done += 1
        if done == 0:
            raise NumericError(f"No successful optimizer step in the epoch ({aborted} aborted, {skipped} skipped)")
        result = {f"train_{key}": value / done for key, value in sums.items()}
        result.update({"batches": done, "skipped_batches": skipped, "aborted_steps": aborted})
        return result

    def fit(self) -> TrainingResult:
        config = self.config
        epochs = config.resolved_epochs()
        batches_per_epoch = int(np.ceil(len(self.train_pool) / config.batch_size))
        if config.max_batches_per_epoch is not None:
            batches_per_epoch = min(batches_per_epoch, config.max_batches_per_epoch)
        kl_scale = 1.0 / batches_per_epoch if config.kl_per_batch else 1.0
        early_stopping = config.uses_early_stopping() and len(self.validation_pool) > 0

        logger.info(f"Training {self.mode} for up to {epochs} epochs ({batches_per_epoch} batches each)")
        records = []
        best_loss, best_state, stale = np.inf, None, 0
        for epoch in range(1, epochs + 1):
            started = time.perf_counter()
            record = {"epoch": epoch, **self.train_epoch(kl_scale)}
            record["val_mse"] = self.validate()
            record["wall_time"] = time.perf_counter() - started
            records.append(record)
            logger.info(
                f"epoch {epoch:3d}  loss {record['train_loss']:.5f}  mse {record['train_mse']:.5f}  "
                f"kl {record['train_kl']:.5f}  ps {record['train_ps']:.5f}  "
                f"val_mse {record['val_mse'] if record['val_mse'] is not None else float('nan'):.5f}  "
                f"{record['wall_time']:.1f}s"
            )
            if not early_stopping:
                continue
            if record["val_mse"] < best_loss:
                best_loss, best_state, stale = record["val_mse"], copy.deepcopy(self.model.state_dict()), 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(f"Early stopping after epoch {epoch}; best val_mse {best_loss:.5f}")
                    break
        if best_state is not None:
            self.model.load_state_dict(best_state)
        self.model.eval()
        return TrainingResult(model=self.model, history=pd.DataFrame(records), split=self.split, regime=self.mode)


def train(
    config: TrainingConfig,
    dataset: LakeDataset,
    graph: Optional[SpatialGraph] = None,
    init_model: Optional[ProbabilisticModel] = None,
) -> TrainingResult:
    return Trainer(config, dataset, graph, init_model).fit()
