"""Training loop: Adam with global-norm clipping, plateau callbacks, best-weight restore."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import TrainingError, ValidationError
from .losses import LossConfig, asym_loss, squared_loss, training_loss
from .nn.model import (
    ModelParams,
    apply_moving_stats,
    model_backward,
    model_forward,
    predict,
)
from .pipeline import WindowDataset

log = logging.getLogger(__name__)

MIN_DELTA = 1e-4
MIN_LR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    clipnorm: float = 1.0
    batch_size: int = 128
    max_epochs: int = 200
    early_stop_patience: int = 20
    lr_factor: float = 0.5
    lr_patience: int = 8
    l2_lambda: float = 1e-4
    val_fraction: float = 0.2
    seed: int = 42
    split_mode: str = "engine"

    def __post_init__(self):
        for name in ("learning_rate", "clipnorm", "batch_size", "max_epochs",
                     "early_stop_patience", "lr_factor", "lr_patience"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.l2_lambda < 0:
            raise ValidationError("l2_lambda must be non-negative")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in (0, 1)")
        if self.split_mode not in ("engine", "window"):
            raise ValidationError("split_mode must be 'engine' or 'window'")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0          # 1-based
    stopped_early: bool = False

    def __len__(self):
        return len(self.val_loss)

    def rows(self):
        for i in range(len(self)):
            yield [i + 1, self.train_loss[i], self.val_loss[i], self.learning_rate[i], self.seconds[i]]

    HEADER = ("epoch", "train_loss", "val_loss", "learning_rate", "seconds")


def split_train_val(dataset: WindowDataset, config: TrainConfig):
    """Seeded 80/20-style split; engine mode keeps each engine on one side."""
    if len(dataset) == 0:
        raise ValidationError("cannot split an empty dataset")
    rng = np.random.default_rng(config.seed)
    if config.split_mode == "engine":
        units = np.unique(dataset.unit_ids)
        if len(units) < 2:
            raise ValidationError("engine split needs at least two engines")
        n_val = min(max(int(round(len(units) * config.val_fraction)), 1), len(units) - 1)
        val_units = rng.permutation(units)[:n_val]
        is_val = np.isin(dataset.unit_ids, val_units)
    else:
        n = len(dataset)
        if n < 2:
            raise ValidationError("window split needs at least two windows")
        n_val = min(max(int(round(n * config.val_fraction)), 1), n - 1)
        is_val = np.zeros(n, dtype=bool)
        is_val[rng.permutation(n)[:n_val]] = True
    return dataset.subset(np.flatnonzero(~is_val)), dataset.subset(np.flatnonzero(is_val))


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_global_norm(grads: dict, clipnorm: float) -> dict:
    norm = global_norm(grads)
    if norm <= clipnorm or norm == 0.0:
        return dict(grads)
    scale = clipnorm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7) -> None:
    """One bias-corrected Adam update; mutates ``params`` and ``state`` in place.

    ``params`` is any name -> array mapping (a ``ModelParams`` works).
    """
    state.t += 1
    t = state.t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValidationError(f"{name}: gradient shape {g.shape} != parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)


class PlateauMonitor:
    """Tracks epochs without a val-loss improvement of at least ``min_delta``."""

    def __init__(self, patience: int, min_delta: float = MIN_DELTA):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.wait = 0

    def update(self, value: float) -> bool:
        """Record one epoch; returns True if it was an improvement."""
        if value < self.best - self.min_delta:
            self.best = value
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def exhausted(self) -> bool:
        return self.wait >= self.patience


class Callbacks:
    """Early stopping, LR reduction on plateau and best-weight checkpointing.

    The two plateau counters are independent; the LR counter resets after
    each reduction.
    """

    def __init__(self, config: TrainConfig):
        self.early = PlateauMonitor(config.early_stop_patience)
        self.plateau = PlateauMonitor(config.lr_patience)
        self.lr_factor = config.lr_factor
        self.best_params: ModelParams | None = None
        self.best_epoch = 0

    def end_epoch(self, epoch: int, val_loss: float, lr: float, params=None) -> tuple[float, bool]:
        """Returns ``(lr for the next epoch, stop)``."""
        if self.early.update(val_loss):
            self.best_epoch = epoch
            if params is not None:
                self.best_params = params.copy()
        if not self.plateau.update(val_loss) and self.plateau.exhausted:
            lr = max(lr * self.lr_factor, MIN_LR)
            self.plateau.wait = 0
        return lr, self.early.exhausted


def trace_schedule(val_losses, config: TrainConfig):
    """Drive the callbacks with a fixed val-loss sequence.

    Returns ``(lrs used per epoch, epochs run, best epoch)``.
    """
    cb = Callbacks(config)
    lr = config.learning_rate
    lrs = []
    epoch = 0
    for epoch, val in enumerate(val_losses, start=1):
        lrs.append(lr)
        lr, stop = cb.end_epoch(epoch, val, lr)
        if stop:
            break
    return lrs, epoch, cb.best_epoch


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    # a lone trailing sample cannot be batch-normalised in train mode
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    return [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def evaluate_loss(params: ModelParams, data: WindowDataset, loss_config: LossConfig) -> float:
    """Mean training criterion in inference mode (no dropout, BN moving stats, no L2)."""
    yhat = predict(data.tensor, params)
    if loss_config.kind == "squared":
        return squared_loss(yhat, data.labels)[1]
    return asym_loss(yhat, data.labels, loss_config)[1]


def fit(train: WindowDataset, val: WindowDataset, params: ModelParams,
        config: TrainConfig = TrainConfig(), loss_config: LossConfig = LossConfig(),
        verbose: bool = False):
    """Train and return ``(best params, history)``; ``params`` is not modified.

    ``params.config.l2`` is replaced by ``config.l2_lambda``.
    """
    if len(train) < 2 or len(val) < 1:
        raise ValidationError("need at least two training windows and one validation window")
    params = params.copy()
    if params.config.l2 != config.l2_lambda:
        params = type(params)(replace(params.config, l2=config.l2_lambda), params.arrays)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    callbacks = Callbacks(config)
    history = TrainHistory()
    lr = config.learning_rate
    x, y = train.tensor, train.labels

    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(train), config.batch_size, rng), start=1):
            yhat, trace = model_forward(x[idx], params, "train", rng=rng)
            _, loss, dloss = training_loss(yhat[:, 0], y[idx], loss_config)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = model_backward(trace, dloss[:, None], params)
            grads = clip_global_norm(grads, config.clipnorm)
            adam_step(params, grads, state, lr)
            apply_moving_stats(params, trace)
            total += loss * len(idx)
            count += len(idx)
        val_loss = evaluate_loss(params, val, loss_config)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(total / count)
        history.val_loss.append(val_loss)
        history.learning_rate.append(lr)
        history.seconds.append(time.perf_counter() - start)
        if verbose:
            log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, total / count, val_loss, lr)
        lr, stop = callbacks.end_epoch(epoch, val_loss, lr, params)
        if stop:
            history.stopped_early = True
            break

    history.best_epoch = callbacks.best_epoch
    return callbacks.best_params, history
