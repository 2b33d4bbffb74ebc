"""Desk-scale training checks on synthetic fleets.

``overfit_check`` confirms that the training stack can drive a reduced
model to near-zero loss on a small noise-free fleet. ``asymmetry_check``
trains the same reduced model twice, once per loss, and compares the signed
error on held-out engines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .losses import LossConfig, asym_loss
from .nn.model import ModelConfig, init_params, predict
from .pipeline import make_train_windows, preprocess
from .synth import SynthConfig, generate
from .trainer import TrainConfig, fit, split_train_val

REDUCED = ModelConfig(filters1=16, filters2=32, hidden=32, attention_units=16,
                      fc1_units=32, fc2_units=16)

OVERFIT_DATA = SynthConfig(n_engines=10, min_life=150, max_life=200, n_constant_sensors=7,
                           noise_std=0.0, degradation_exponent=1.0)
# regularisers off and validation on the training windows: the point is memorisation
OVERFIT_TRAIN = TrainConfig(learning_rate=2e-3, batch_size=16, max_epochs=300,
                            early_stop_patience=300, lr_patience=20, l2_lambda=0.0)

# Lives are kept in a narrow band and sensor noise is high so that most of the
# held-out error comes from noise both halves share, not from which lives
# happened to land in the held-out half.
ASYM_DATA = SynthConfig(n_engines=40, min_life=180, max_life=220, n_constant_sensors=7,
                        noise_std=2.0, degradation_exponent=2.0)
ASYM_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=30,
                         early_stop_patience=30, lr_patience=5)


@dataclass(frozen=True)
class OverfitResult:
    seed: int
    n_windows: int
    train_loss: float     # asymmetric loss, inference mode, best weights
    train_rmse: float
    epochs: int
    seconds: float
    checksum: float       # sum of all final weights, for determinism checks


def overfit_check(seed: int = 0, data: SynthConfig = OVERFIT_DATA,
                  train: TrainConfig = OVERFIT_TRAIN, model: ModelConfig = REDUCED) -> OverfitResult:
    corpus = generate(replace(data, seed=seed))
    windows = preprocess(corpus.train).train
    cfg = replace(model, n_features=windows.tensor.shape[2], dropout_cnn=0.0,
                  dropout_lstm=0.0, dropout_fc=0.0)
    start = time.perf_counter()
    best, history = fit(windows, windows, init_params(cfg, seed), replace(train, seed=seed))
    seconds = time.perf_counter() - start
    yhat = predict(windows.tensor, best)
    return OverfitResult(
        seed=seed, n_windows=len(windows),
        train_loss=asym_loss(yhat, windows.labels)[1],
        train_rmse=float(np.sqrt(np.mean((yhat - windows.labels) ** 2))),
        epochs=len(history), seconds=seconds,
        checksum=float(sum(np.sum(a) for a in best.arrays.values())),
    )


@dataclass(frozen=True)
class AsymmetryResult:
    seed: int
    mean_error_asym: float
    mean_error_squared: float
    rmse_asym: float
    rmse_squared: float
    n_holdout_windows: int


def asymmetry_check(seed: int = 0, data: SynthConfig = ASYM_DATA,
                    train: TrainConfig = ASYM_TRAIN, model: ModelConfig = REDUCED) -> AsymmetryResult:
    """Train on the first half of a fleet, score full-life windows of the second half.

    Both runs share data, split, initial weights and batch order; only the
    loss differs. Dropout is off so epoch-to-epoch validation noise does
    not decide which weights get restored.
    """
    corpus = generate(replace(data, seed=seed))
    half = len(corpus.train) // 2
    fitted, held_out = corpus.train[:half], corpus.train[half:]
    prep = preprocess(fitted)
    holdout = make_train_windows(held_out, prep.selection, prep.scaler)
    cfg = replace(model, n_features=prep.selection.n_features, dropout_cnn=0.0,
                  dropout_lstm=0.0, dropout_fc=0.0)
    train_cfg = replace(train, seed=seed)
    tr, val = split_train_val(prep.train, train_cfg)
    errors, rmses = {}, {}
    for kind in ("asymmetric", "squared"):
        best, _ = fit(tr, val, init_params(cfg, seed), train_cfg, LossConfig(kind=kind))
        eps = predict(holdout.tensor, best) - holdout.labels
        errors[kind] = float(eps.mean())
        rmses[kind] = float(np.sqrt(np.mean(eps ** 2)))
    return AsymmetryResult(seed, errors["asymmetric"], errors["squared"],
                           rmses["asymmetric"], rmses["squared"], len(holdout))
