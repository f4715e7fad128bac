"""Mini-batch training with binary cross-entropy and RMSprop."""

import time
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyClass
from .features import EncodedDataset, FeatureConfig
from .network import (
    Gradients,
    NetworkDims,
    NetworkParams,
    clip_by_global_norm,
    init_params,
    network_backward,
    network_forward,
    predict_proba,
)

# Create logger for this module
logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-12


@dataclass
class TrainConfig:
    """Optimizer and loop settings."""

    batch_size: int = 32
    epochs: int = 100
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0
    gradient_clip_norm: Optional[float] = 5.0
    early_stop: bool = False
    patience: int = 10

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError(f"rmsprop_decay must be in [0, 1), got {self.rmsprop_decay}")
        if self.rmsprop_epsilon <= 0:
            raise ConfigError(f"rmsprop_epsilon must be > 0, got {self.rmsprop_epsilon}")
        if self.gradient_clip_norm is not None and self.gradient_clip_norm <= 0:
            raise ConfigError("gradient_clip_norm must be positive or null")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown training keys: {', '.join(unknown)}")
        return cls(**data)


@dataclass
class RmspropState:
    """Running mean of squared gradients per parameter."""

    mean_square: NetworkParams
    steps: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    """Per-epoch statistics of one training run."""

    epochs: List[EpochStats] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    @property
    def total_seconds(self) -> float:
        return float(sum(e.seconds for e in self.epochs))

    def to_frame(self, record_timing: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "epoch": [e.epoch for e in self.epochs],
                "loss": [e.loss for e in self.epochs],
                "acc": [e.accuracy for e in self.epochs],
                "val_acc": [e.val_accuracy for e in self.epochs],
            }
        )
        if record_timing:
            frame["seconds"] = [e.seconds for e in self.epochs]
        return frame


def write_history_csv(
    history: TrainHistory, path: Union[str, Path], record_timing: bool = False
) -> Path:
    """History CSV; wall-clock seconds only when record_timing is set."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.to_frame(record_timing).to_csv(path, index=False, lineterminator="\n")
    return path


def bce_loss(
    p: Union[float, np.ndarray], y: Union[float, np.ndarray]
) -> Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]:
    """Binary cross-entropy and its derivative with respect to p."""
    p_arr = np.clip(np.asarray(p, dtype=np.float64), PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    y_arr = np.asarray(y, dtype=np.float64)
    loss = -(y_arr * np.log(p_arr) + (1.0 - y_arr) * np.log1p(-p_arr))
    grad = (p_arr - y_arr) / (p_arr * (1.0 - p_arr))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def init_rmsprop_state(params: NetworkParams) -> RmspropState:
    return RmspropState(mean_square=params.zeros_like())


def rmsprop_update(
    param: np.ndarray, grad: np.ndarray, mean_square: np.ndarray, config: TrainConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """Single-array RMSprop rule."""
    rho = config.rmsprop_decay
    mean_square = rho * mean_square + (1.0 - rho) * grad * grad
    param = param - config.learning_rate * grad / (np.sqrt(mean_square) + config.rmsprop_epsilon)
    return param, mean_square


def rmsprop_step(
    params: NetworkParams, grads: Gradients, state: RmspropState, config: TrainConfig
) -> Tuple[NetworkParams, RmspropState]:
    """One optimizer update; global-norm clipping is applied to grads first when configured."""
    if config.gradient_clip_norm is not None:
        grads, norm = clip_by_global_norm(grads, config.gradient_clip_norm)
        if norm > config.gradient_clip_norm:
            logger.debug(f"Clipped gradient norm {norm:.3f} to {config.gradient_clip_norm}")

    grad_arrays = dict(grads.named_arrays())
    square_arrays = dict(state.mean_square.named_arrays())
    new_params: Dict[str, np.ndarray] = {}
    new_squares: Dict[str, np.ndarray] = {}
    for name, param in params.named_arrays():
        new_params[name], new_squares[name] = rmsprop_update(
            param, grad_arrays[name], square_arrays[name], config
        )
    return (
        NetworkParams.from_named(new_params),
        RmspropState(mean_square=NetworkParams.from_named(new_squares), steps=state.steps + 1),
    )


def _evaluate(params: NetworkParams, dataset: EncodedDataset) -> Tuple[float, float]:
    probabilities = predict_proba(params, dataset.X)
    losses, _ = bce_loss(probabilities, dataset.y)
    accuracy = float(np.mean((probabilities >= 0.5) == (dataset.y == 1)))
    return float(np.mean(losses)), accuracy


def _check_classes(dataset: EncodedDataset) -> None:
    if len(dataset) == 0:
        raise EmptyClass("Training set is empty")
    positives = int(np.sum(dataset.y == 1))
    if positives == 0 or positives == len(dataset):
        raise EmptyClass(
            f"Training set needs both classes, got {positives} LC of {len(dataset)} windows"
        )


def train(
    dataset: EncodedDataset,
    feature_config: FeatureConfig,
    dims: Optional[NetworkDims],
    config: TrainConfig,
    validation: Optional[EncodedDataset] = None,
) -> Tuple[NetworkParams, TrainHistory]:
    """Train from Glorot init; deterministic for a given config.seed.

    `dataset.X` is expected to be already normalized.
    """
    _check_classes(dataset)
    dims = dims or NetworkDims(input_size=feature_config.width)
    if dims.input_size != feature_config.width or dataset.X.shape[-1] != dims.input_size:
        raise ConfigError(
            f"Feature width {feature_config.width} / data width {dataset.X.shape[-1]} "
            f"do not match network input size {dims.input_size}"
        )

    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(int(init_seq.generate_state(1)[0]), dims)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    state = init_rmsprop_state(params)

    history = TrainHistory()
    best_score: Optional[float] = None
    best_params = params
    stale_epochs = 0
    count = len(dataset)
    logger.info(
        f"Training {params.parameter_count} parameters on {count} windows "
        f"for {config.epochs} epochs (batch {config.batch_size})"
    )

    for epoch in range(1, config.epochs + 1):
        start_time = time.perf_counter()
        order = shuffle_rng.permutation(count)
        loss_sum = 0.0
        for start in range(0, count, config.batch_size):
            batch = order[start : start + config.batch_size]
            X, y = dataset.X[batch], dataset.y[batch]
            probabilities, cache = network_forward(
                X, params, mode="train", dropout_rate=config.dropout_rate, rng=dropout_rng
            )
            losses, _ = bce_loss(probabilities, y)
            loss_sum += float(np.sum(losses))
            grads = network_backward(cache, X, params, y)
            params, state = rmsprop_step(params, grads, state, config)

        _, accuracy = _evaluate(params, dataset)
        stats = EpochStats(epoch=epoch, loss=loss_sum / count, accuracy=accuracy)
        if validation is not None and len(validation):
            stats.val_loss, stats.val_accuracy = _evaluate(params, validation)
        stats.seconds = time.perf_counter() - start_time
        history.epochs.append(stats)
        logger.info(
            f"epoch {epoch}/{config.epochs} loss={stats.loss:.4f} acc={stats.accuracy:.4f}"
            + (f" val_acc={stats.val_accuracy:.4f}" if stats.val_accuracy is not None else "")
            + f" ({stats.seconds:.2f}s)"
        )

        if config.early_stop:
            score = stats.val_accuracy if stats.val_accuracy is not None else -stats.loss
            if best_score is None or score > best_score:
                best_score, best_params, stale_epochs = score, params, 0
                history.best_epoch = epoch
            else:
                stale_epochs += 1
                if stale_epochs >= config.patience:
                    logger.info(f"Early stop at epoch {epoch}; best epoch {history.best_epoch}")
                    history.stopped_early = True
                    params = best_params
                    break

    logger.info(f"Training finished in {history.total_seconds:.2f}s")
    return params, history
