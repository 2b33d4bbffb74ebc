"""Plot-ready exports: attention heatmaps, feature correlations, residuals, RUL profiles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cmapss_io import EngineTrajectory, write_table
from .errors import ShapeError, ValidationError
from .losses import accuracy_band
from .nn.model import ModelParams, model_forward
from .pipeline import FeatureSelection, WindowDataset, label_rul


@dataclass(frozen=True)
class AttentionRecord:
    unit_id: int
    alpha: np.ndarray
    predicted_rul: float
    true_rul: float


def _check_compatible(dataset: WindowDataset, params: ModelParams, feature_names=None):
    if dataset.tensor.shape[2] != params.config.n_features:
        raise ShapeError(
            f"dataset has {dataset.tensor.shape[2]} features, model expects {params.config.n_features}"
        )
    if feature_names is not None and dataset.feature_names and \
            tuple(feature_names) != tuple(dataset.feature_names):
        raise ValidationError("dataset feature order differs from the checkpoint's")


def attention_export(dataset: WindowDataset, params: ModelParams, feature_names=None,
                     units: Sequence[int] | None = None) -> list[AttentionRecord]:
    """One inference pass; one record per window (per engine for test sets)."""
    _check_compatible(dataset, params, feature_names)
    if units is not None:
        dataset = dataset.subset(np.flatnonzero(np.isin(dataset.unit_ids, list(units))))
    yhat, trace = model_forward(dataset.tensor, params, "infer")
    return [
        AttentionRecord(int(u), a.copy(), float(p), float(t))
        for u, a, p, t in zip(dataset.unit_ids, trace.alpha, yhat[:, 0], dataset.labels)
    ]


def write_attention_table(path, records: Sequence[AttentionRecord]) -> None:
    t = len(records[0].alpha) if records else 0
    header = ["unit", *[f"t{i}" for i in range(1, t + 1)], "predicted", "true"]
    write_table(path, header,
                ([r.unit_id, *r.alpha.tolist(), r.predicted_rul, r.true_rul] for r in records))


def correlation_matrix(features: np.ndarray):
    """Pearson correlation of raw feature columns.

    Returns ``(matrix, degenerate)`` where ``degenerate`` marks rows/columns of
    zero-variance features; their off-diagonal entries are set to 0.0.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("correlation needs a 2-D matrix with at least two rows")
    centered = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(centered ** 2, axis=0))
    degenerate = norms == 0.0
    safe = np.where(degenerate, 1.0, norms)
    z = centered / safe
    corr = z.T @ z
    corr = 0.5 * (corr + corr.T)
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0), degenerate


@dataclass(frozen=True)
class ResidualReport:
    unit_ids: np.ndarray       # sorted by |error|
    y_true: np.ndarray
    y_pred: np.ndarray
    errors: np.ndarray         # yhat - y, sorted by |error|
    negative_fraction: float
    overestimated: int         # count of errors > 0
    band: float
    band_fraction: float
    mean_error: float
    std_error: float

    def rows(self):
        for rank, row in enumerate(zip(self.unit_ids, self.y_true, self.y_pred, self.errors), 1):
            u, y, p, e = row
            yield [rank, int(u), float(y), float(p), float(e)]

    HEADER = ("rank", "unit", "true", "predicted", "error")


def residual_report(yhat, y, unit_ids=None, band: float = 10.0) -> ResidualReport:
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if yhat.shape != y.shape:
        raise ShapeError("predictions and targets differ in length")
    units = np.arange(1, len(y) + 1) if unit_ids is None else np.asarray(unit_ids)
    eps = yhat - y
    order = np.argsort(np.abs(eps), kind="stable")
    return ResidualReport(
        unit_ids=units[order], y_true=y[order], y_pred=yhat[order], errors=eps[order],
        negative_fraction=float(np.mean(eps < 0)) if eps.size else 0.0,
        overestimated=int(np.sum(eps > 0)),
        band=band, band_fraction=accuracy_band(yhat, y, band),
        mean_error=float(eps.mean()) if eps.size else 0.0,
        std_error=float(eps.std()) if eps.size else 0.0,
    )


def rul_profile_export(trajectories: Sequence[EngineTrajectory], units: Sequence[int] | None = None,
                       max_rul: float = 130):
    """Per-engine (cycle, label) profiles for ``units`` and the global scatter of all engines.

    Returns ``(profiles, scatter)`` where ``profiles`` maps unit id to an
    (n, 2) array and ``scatter`` is (N, 3) with columns unit, cycle, label.
    """
    by_id = {t.unit_id: t for t in trajectories}
    if units is None:
        units = list(by_id)[:6]
    unknown = [u for u in units if u not in by_id]
    if unknown:
        raise ValidationError(f"unknown unit ids {unknown}; valid ids: {sorted(by_id)}")
    profiles = {
        u: np.column_stack([by_id[u].cycles, label_rul(by_id[u], max_rul)]) for u in units
    }
    scatter = np.concatenate([
        np.column_stack([np.full(len(t), t.unit_id), t.cycles, label_rul(t, max_rul)])
        for t in trajectories
    ]) if trajectories else np.zeros((0, 3))
    return profiles, scatter


def raw_feature_matrix(trajectories: Sequence[EngineTrajectory], selection: FeatureSelection):
    return np.concatenate([selection.features(t) for t in trajectories], axis=0)
