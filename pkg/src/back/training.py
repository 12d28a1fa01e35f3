"""Adam optimisation with plateau learning-rate decay and best-validation checkpointing."""

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    BATCH_SIZE,
    DEFAULT_SEED,
    EPOCHS,
    INITIAL_LR,
    LR_FACTOR,
    PLATEAU_PATIENCE,
    VALIDATION_FRACTION,
)
from .dataset import ExamDataset
from .errors import ConfigError, InputError, NumericError, ShapeError
from .logging_config import logger
from .model import ModelWeights, ResNet1d
from .tensor_core import Tensor
from .utils import Stream, derive_rng, write_jsonl


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = INITIAL_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    epochs: int = EPOCHS
    plateau_patience: int = PLATEAU_PATIENCE
    lr_factor: float = LR_FACTOR
    batch_size: int = BATCH_SIZE
    seed: int = DEFAULT_SEED
    validation_fraction: float = VALIDATION_FRACTION
    max_steps: Optional[int] = None

    def validate(self) -> "TrainConfig":
        if self.initial_lr <= 0 or self.adam_eps <= 0:
            raise ConfigError("initial_lr and adam_eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if self.plateau_patience < 1:
            raise ConfigError(f"plateau_patience must be at least 1, got {self.plateau_patience}")
        if self.lr_factor <= 1:
            raise ConfigError(f"lr_factor must exceed 1, got {self.lr_factor}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1 when set, got {self.max_steps}")
        return self


@dataclass
class AdamState:
    m: Dict[str, Tensor]
    v: Dict[str, Tensor]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> Tuple[Dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update of every parameter named in grads (in place)."""
    for name, grad in grads.items():
        if name not in params or params[name].shape != grad.shape:
            raise ShapeError(f"gradient {name} {grad.shape} does not match its parameter")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name} at step {state.t + 1}")

    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, grad in grads.items():
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * np.square(grad)
        m_hat = m / correction1
        v_hat = v / correction2
        params[name] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(params[name].dtype)
    return params, state


class PlateauScheduler:
    """Divide the learning rate by ``factor`` after ``patience`` epochs without a strictly lower loss.

    The wait counter resets after every drop; the best loss is kept.
    """

    def __init__(self, initial_lr: float, patience: int = PLATEAU_PATIENCE, factor: float = LR_FACTOR):
        self.initial_lr = initial_lr
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.wait = 0
        self.drops = 0

    @property
    def lr(self) -> float:
        return self.initial_lr / self.factor ** self.drops

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True if the learning rate was reduced."""
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.drops += 1
            self.wait = 0
            logger.info(f"Validation loss has not improved for {self.patience} epochs, lr -> {self.lr:.3g}")
            return True
        return False


def plateau_scheduler(val_loss_history: Sequence[float], current_lr: float,
                      patience: int = PLATEAU_PATIENCE, factor: float = LR_FACTOR) -> float:
    """Learning rate to use after the last epoch of the history."""
    if not val_loss_history:
        raise InputError("validation loss history is empty")
    scheduler = PlateauScheduler(current_lr, patience, factor)
    dropped = False
    for loss in val_loss_history:
        dropped = scheduler.update(loss)
    return current_lr / factor if dropped else current_lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    steps: int
    improved: bool
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        # wall time goes to the timings file; identical runs give identical logs
        data = dataclasses.asdict(self)
        data.pop("wall_time_s")
        return data


@dataclass
class TrainLog:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_loss(self) -> float:
        return self.epochs[self.best_epoch].val_loss

    def write(self, path: str) -> None:
        write_jsonl(path, (record.to_dict() for record in self.epochs))

    def write_times(self, path: str) -> None:
        write_jsonl(path, ({"epoch": r.epoch, "wall_time_s": round(r.wall_time_s, 3)} for r in self.epochs))


def iter_batches(n: int, batch_size: int, order: Optional[np.ndarray] = None):
    """Index arrays of consecutive batches; the last one may be short."""
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def predict(model: ResNet1d, signals: np.ndarray, batch_size: int = BATCH_SIZE) -> np.ndarray:
    """Inference-mode probabilities [N, n_classes]."""
    return np.concatenate([model.forward(signals[idx]) for idx in iter_batches(len(signals), batch_size)])


def evaluate_loss(model: ResNet1d, dataset: ExamDataset, batch_size: int = BATCH_SIZE) -> float:
    """Inference-mode mean cross-entropy over the whole dataset."""
    total = 0.0
    for idx in iter_batches(len(dataset), batch_size):
        total += model.loss(dataset.signals[idx], dataset.labels[idx]) * len(idx)
    return total / len(dataset)


def split_dataset(dataset: ExamDataset, fraction: float = VALIDATION_FRACTION,
                  seed: int = DEFAULT_SEED, stream: Stream = Stream.SPLIT) -> Tuple[ExamDataset, ExamDataset]:
    """Seeded train/validation split keyed by exam id (independent of dataset order)."""
    n = len(dataset)
    if n < 2:
        raise InputError(f"cannot split a dataset of {n} exams")
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    by_id = np.argsort(np.array(dataset.ids), kind="stable")
    shuffled = by_id[derive_rng(seed, stream).permutation(n)]
    n_val = min(max(int(round(n * fraction)), 1), n - 1)
    val_idx = np.sort(shuffled[:n_val])
    train_idx = np.sort(shuffled[n_val:])
    return dataset.subset(train_idx), dataset.subset(val_idx)


def _check_finite(value: float, what: str, epoch: int) -> None:
    if not math.isfinite(value):
        logger.error(f"{what} became {value} in epoch {epoch}; aborting")
        raise NumericError(f"{what} is not finite in epoch {epoch}")


def train(model: ResNet1d, train_set: ExamDataset, val_set: ExamDataset,
          config: TrainConfig) -> Tuple[ModelWeights, TrainLog]:
    """Mini-batch Adam; returns the snapshot with the lowest validation loss and the log.

    Shuffling draws from the (SHUFFLE, epoch) stream and dropout from (DROPOUT, epoch, batch).
    The checkpoint is taken before the scheduler sees the epoch's loss.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise InputError("training and validation sets must be non-empty")
    overlap = set(train_set.ids) & set(val_set.ids)
    if overlap:
        raise InputError(f"validation set shares {len(overlap)} exam ids with the training set")

    trainable = {name: model.params[name] for name in model.trainable_names()}
    state = AdamState.zeros_like(trainable)
    scheduler = PlateauScheduler(config.initial_lr, config.plateau_patience, config.lr_factor)
    log = TrainLog()
    best_weights = model.snapshot()
    best_loss = math.inf
    steps = 0
    n = len(train_set)

    logger.info(
        f"Training on {n} exams, validating on {len(val_set)}, "
        f"{config.epochs} epochs of batch {config.batch_size}"
    )
    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = scheduler.lr
        order = derive_rng(config.seed, Stream.SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        seen = 0
        batches = tqdm(
            enumerate(iter_batches(n, config.batch_size, order)),
            total=math.ceil(n / config.batch_size),
            desc=f"Epoch {epoch + 1}/{config.epochs}",
            unit="batch",
            leave=False,
        )
        for batch_index, idx in batches:
            loss, grads, _ = model.loss_and_grads(
                train_set.signals[idx], train_set.labels[idx],
                training=True, rng=derive_rng(config.seed, Stream.DROPOUT, epoch, batch_index),
            )
            _check_finite(loss, "training loss", epoch)
            # trainable parameters are updated in place inside model.params
            params = {name: model.params[name] for name in grads}
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.adam_eps)
            model.params.update(params)
            loss_sum += loss * len(idx)
            seen += len(idx)
            steps += 1
            batches.set_postfix(loss=f"{loss:.4f}")
            if config.max_steps is not None and steps >= config.max_steps:
                break

        val_loss = evaluate_loss(model, val_set, config.batch_size)
        _check_finite(val_loss, "validation loss", epoch)
        improved = val_loss < best_loss
        if improved:
            best_loss = val_loss
            best_weights = model.snapshot()
            log.best_epoch = epoch
        scheduler.update(val_loss)

        record = EpochRecord(epoch, loss_sum / seen, val_loss, lr, steps, improved,
                             time.perf_counter() - started)
        log.epochs.append(record)
        logger.info(
            f"Epoch {epoch + 1}: train {record.train_loss:.4f}, val {val_loss:.4f}, "
            f"lr {lr:.3g}{' (best)' if improved else ''} [{record.wall_time_s:.1f}s]"
        )
        if config.max_steps is not None and steps >= config.max_steps:
            logger.info(f"Reached max_steps={config.max_steps}")
            break

    logger.info(f"Best validation loss {best_loss:.4f} at epoch {log.best_epoch + 1}")
    return best_weights, log
