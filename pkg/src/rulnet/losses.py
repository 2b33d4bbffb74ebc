"""Asymmetric exponential loss, the NASA scoring function, and regression metrics.

Errors are signed as ``eps = yhat - y``: positive means the remaining life was
over-estimated, which is the dangerous direction and is penalised with the
steeper exponential.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass(frozen=True)
class LossConfig:
    h1: float = 13.0   # under-estimation (eps < 0)
    h2: float = 10.0   # over-estimation (eps >= 0)
    kind: str = "asymmetric"

    def __post_init__(self):
        if self.kind not in ("asymmetric", "squared"):
            raise ValidationError(f"unknown loss kind {self.kind!r}")
        if not self.h1 > self.h2 > 0:
            raise ValidationError("need h1 > h2 > 0 so over-estimation is penalised more")


def _pair(yhat, y):
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if yhat.shape != y.shape:
        raise ShapeError(f"length mismatch: {yhat.shape[0]} predictions, {y.shape[0]} targets")
    return yhat, y


def asym_penalty(eps, config: LossConfig = LossConfig()):
    eps = np.asarray(eps, dtype=np.float64)
    # evaluate each branch only where it applies so exp never sees the wrong sign
    return np.where(
        eps < 0,
        np.expm1(-np.minimum(eps, 0.0) / config.h1),
        np.expm1(np.maximum(eps, 0.0) / config.h2),
    )


def asym_loss(yhat, y, config: LossConfig = LossConfig()):
    """Per-sample penalty and its batch mean."""
    yhat, y = _pair(yhat, y)
    per_sample = asym_penalty(yhat - y, config)
    return per_sample, float(per_sample.mean()) if per_sample.size else 0.0


def asym_loss_grad(yhat, y, config: LossConfig = LossConfig()):
    """d(per-sample loss)/d(yhat). At eps == 0 the right-branch slope 1/h2 is used."""
    yhat, y = _pair(yhat, y)
    eps = yhat - y
    return np.where(
        eps < 0,
        -np.exp(-np.minimum(eps, 0.0) / config.h1) / config.h1,
        np.exp(np.maximum(eps, 0.0) / config.h2) / config.h2,
    )


def squared_loss(yhat, y):
    yhat, y = _pair(yhat, y)
    per_sample = (yhat - y) ** 2
    return per_sample, float(per_sample.mean()) if per_sample.size else 0.0


def squared_loss_grad(yhat, y):
    yhat, y = _pair(yhat, y)
    return 2.0 * (yhat - y)


def training_loss(yhat, y, config: LossConfig = LossConfig()):
    """``(per_sample, mean, dmean/dyhat)`` for whichever loss ``config`` selects."""
    if config.kind == "squared":
        per, mean = squared_loss(yhat, y)
        grad = squared_loss_grad(yhat, y)
    else:
        per, mean = asym_loss(yhat, y, config)
        grad = asym_loss_grad(yhat, y, config)
    return per, mean, grad / max(len(per), 1)


def nasa_s_score(yhat, y, config: LossConfig = LossConfig()) -> float:
    """Sum (not mean) of the asymmetric penalty over engines."""
    per, _ = asym_loss(yhat, y, config)
    return float(per.sum())


def accuracy_band(yhat, y, band: float = 10.0) -> float:
    yhat, y = _pair(yhat, y)
    if yhat.size == 0:
        return 0.0
    return float(np.mean(np.abs(yhat - y) <= band))


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    mape: float | None          # percent, over engines with y > 0
    r2: float | None            # None when y has zero variance
    s_score: float
    mean_error: float
    std_error: float            # population convention (1/N)
    n_engines: int
    mape_excluded: int = 0      # engines with y == 0 left out of MAPE
    negative_fraction: float = 0.0
    band_fraction: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def regression_metrics(yhat, y) -> dict:
    yhat, y = _pair(yhat, y)
    if yhat.size < 2:
        raise ValidationError("regression metrics need at least two samples")
    eps = yhat - y
    rmse = float(np.sqrt(np.mean(eps ** 2)))
    mae = float(np.mean(np.abs(eps)))
    positive = y > 0
    mape = (
        float(100.0 * np.mean(np.abs(eps[positive]) / y[positive])) if positive.any() else None
    )
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = None if sst == 0.0 else 1.0 - float(np.sum(eps ** 2)) / sst
    return {
        "rmse": rmse,
        "mae": mae,
        "mape": mape,
        "r2": r2,
        "mean_error": float(eps.mean()),
        "std_error": float(eps.std()),
        "n_engines": int(yhat.size),
        "mape_excluded": int((~positive).sum()),
        "negative_fraction": float(np.mean(eps < 0)),
    }


def metrics_report(yhat, y, config: LossConfig = LossConfig(), band: float = 10.0) -> MetricsReport:
    m = regression_metrics(yhat, y)
    return MetricsReport(
        s_score=nasa_s_score(yhat, y, config),
        band_fraction=accuracy_band(yhat, y, band),
        **m,
    )
