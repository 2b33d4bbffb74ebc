"""Zero-leakage preprocessing: sensor selection, RUL labels, min-max scaling, windows."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cmapss_io import (
    N_SENSORS,
    SENSOR_NAMES,
    SETTING_NAMES,
    EngineTrajectory,
    RulTruthTable,
)
from .container import load_arrays, save_arrays
from .errors import ShapeError, ValidationError

MAX_RUL = 130
WINDOW = 30
STRIDE = 3
VARIANCE_THRESHOLD = 1e-8
FD001_DROPPED = (1, 5, 6, 10, 16, 18, 19)


@dataclass(frozen=True)
class FeatureSelection:
    dropped_sensor_indices: tuple[int, ...]

    def __post_init__(self):
        dropped = tuple(sorted(set(int(i) for i in self.dropped_sensor_indices)))
        bad = [i for i in dropped if not 1 <= i <= N_SENSORS]
        if bad:
            raise ValidationError(f"invalid sensor indices {bad}; valid range is 1..{N_SENSORS}")
        object.__setattr__(self, "dropped_sensor_indices", dropped)

    @property
    def retained_sensor_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, N_SENSORS + 1) if i not in self.dropped_sensor_indices)

    @property
    def retained_feature_names(self) -> tuple[str, ...]:
        return SETTING_NAMES + tuple(SENSOR_NAMES[i - 1] for i in self.retained_sensor_indices)

    @property
    def n_features(self) -> int:
        return len(self.retained_feature_names)

    def features(self, traj: EngineTrajectory) -> np.ndarray:
        """Raw retained features of one engine, shape (n_cycles, n_features)."""
        cols = [i - 1 for i in self.retained_sensor_indices]
        return np.concatenate([traj.settings, traj.sensors[:, cols]], axis=1)

    def to_dict(self) -> dict:
        return {
            "dropped_sensor_indices": list(self.dropped_sensor_indices),
            "retained_feature_names": list(self.retained_feature_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSelection":
        return cls(tuple(d["dropped_sensor_indices"]))


@dataclass(frozen=True, eq=False)
class ScalerParams:
    minimum: np.ndarray
    maximum: np.ndarray
    constant: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ScalerParams):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in zip((self.minimum, self.maximum, self.constant),
                            (other.minimum, other.maximum, other.constant))
        )

    def to_bytes(self) -> bytes:
        return (
            self.minimum.astype("<f8").tobytes()
            + self.maximum.astype("<f8").tobytes()
            + self.constant.astype("u1").tobytes()
        )

    def to_dict(self) -> dict:
        return {
            "min": self.minimum.tolist(),
            "max": self.maximum.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(
            np.asarray(d["min"], dtype=np.float64),
            np.asarray(d["max"], dtype=np.float64),
            np.asarray(d["constant"], dtype=bool),
        )


@dataclass(frozen=True, eq=False)
class WindowDataset:
    """Fixed-length windows of scaled features.

    ``tensor`` is (N, T, F); ``labels`` (N,); ``unit_ids`` and
    ``terminal_cycles`` record where each window came from.
    """

    tensor: np.ndarray
    labels: np.ndarray
    unit_ids: np.ndarray
    terminal_cycles: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.labels)
        if self.tensor.ndim != 3 or self.tensor.shape[0] != n:
            raise ShapeError(f"tensor shape {self.tensor.shape} does not match {n} labels")
        if len(self.unit_ids) != n or len(self.terminal_cycles) != n:
            raise ShapeError("provenance arrays must have one entry per window")

    def __len__(self):
        return len(self.labels)

    @property
    def window(self) -> int:
        return self.tensor.shape[1]

    def subset(self, index) -> "WindowDataset":
        index = np.asarray(index)
        return WindowDataset(
            self.tensor[index], self.labels[index], self.unit_ids[index],
            self.terminal_cycles[index], self.feature_names,
        )

    def save(self, path) -> None:
        save_arrays(
            path,
            {"tensor": self.tensor, "labels": self.labels,
             "unit_ids": self.unit_ids, "terminal_cycles": self.terminal_cycles},
            {"feature_names": list(self.feature_names)},
        )

    @classmethod
    def load(cls, path) -> "WindowDataset":
        arrays, meta = load_arrays(path)
        return cls(arrays["tensor"], arrays["labels"], arrays["unit_ids"],
                   arrays["terminal_cycles"], tuple(meta.get("feature_names", ())))


def select_sensors(
    trajectories: Sequence[EngineTrajectory],
    variance_threshold: float = VARIANCE_THRESHOLD,
    override: Iterable[int] | None = None,
) -> FeatureSelection:
    """Drop sensors whose range over the whole corpus is at most ``variance_threshold``.

    An explicit ``override`` list is used verbatim instead of the scan.
    """
    if override is not None:
        return FeatureSelection(tuple(override))
    if not trajectories:
        raise ValidationError("cannot select sensors from an empty corpus")
    if variance_threshold < 0:
        raise ValidationError("variance_threshold must be non-negative")
    sensors = np.concatenate([t.sensors for t in trajectories], axis=0)
    spread = sensors.max(axis=0) - sensors.min(axis=0)
    dropped = tuple(int(i) + 1 for i in np.flatnonzero(spread <= variance_threshold))
    return FeatureSelection(dropped)


def label_rul(traj: EngineTrajectory, max_rul: float = MAX_RUL) -> np.ndarray:
    """Piecewise-linear RUL: ``min(max_cycle - t, max_rul)`` for every cycle."""
    return np.minimum(traj.max_cycle - traj.cycles, max_rul).astype(np.float64)


def fit_scaler(train_features: np.ndarray) -> ScalerParams:
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError("fit_scaler needs a non-empty 2-D feature matrix")
    if np.isnan(x).any():
        raise ValidationError("NaN in training features")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    return ScalerParams(lo, hi, hi == lo)


def transform(features: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    """Min-max scale with training statistics; no clipping, constant features -> 0."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != len(scaler.minimum):
        raise ShapeError(f"expected {len(scaler.minimum)} features, got {x.shape[-1]}")
    span = np.where(scaler.constant, 1.0, scaler.maximum - scaler.minimum)
    out = (x - scaler.minimum) / span
    return np.where(scaler.constant, 0.0, out)


def fit_scaler_on(trajectories: Sequence[EngineTrajectory], selection: FeatureSelection) -> ScalerParams:
    return fit_scaler(np.concatenate([selection.features(t) for t in trajectories], axis=0))


def window_starts(length: int, window: int, stride: int) -> np.ndarray:
    """0-based start offsets of all complete windows."""
    if length < window:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, length - window + 1, stride, dtype=np.int64)


def make_train_windows(
    trajectories: Sequence[EngineTrajectory],
    selection: FeatureSelection,
    scaler: ScalerParams,
    window: int = WINDOW,
    stride: int = STRIDE,
    max_rul: float = MAX_RUL,
) -> WindowDataset:
    if window < 1 or stride < 1:
        raise ValidationError("window and stride must be positive")
    tensors, labels, units, ends = [], [], [], []
    for traj in trajectories:
        starts = window_starts(len(traj), window, stride)
        if len(starts) == 0:
            continue
        scaled = transform(selection.features(traj), scaler)
        rul = label_rul(traj, max_rul)
        idx = starts[:, None] + np.arange(window)
        tensors.append(scaled[idx])
        labels.append(rul[starts + window - 1])
        units.append(np.full(len(starts), traj.unit_id, dtype=np.int64))
        ends.append(traj.cycles[starts + window - 1])
    f = selection.n_features
    if not tensors:
        return WindowDataset(np.zeros((0, window, f)), np.zeros(0), np.zeros(0, np.int64),
                             np.zeros(0, np.int64), selection.retained_feature_names)
    return WindowDataset(
        np.concatenate(tensors), np.concatenate(labels), np.concatenate(units),
        np.concatenate(ends).astype(np.int64), selection.retained_feature_names,
    )


def make_test_windows(
    trajectories: Sequence[EngineTrajectory],
    selection: FeatureSelection,
    scaler: ScalerParams,
    truth: RulTruthTable,
    window: int = WINDOW,
    max_rul: float = MAX_RUL,
) -> WindowDataset:
    """Last ``window`` cycles of each engine, left-padded with zero rows when short."""
    if len(truth) != len(trajectories):
        raise ValidationError(
            f"truth table has {len(truth)} entries for {len(trajectories)} test engines"
        )
    f = selection.n_features
    tensor = np.zeros((len(trajectories), window, f))
    for k, traj in enumerate(trajectories):
        scaled = transform(selection.features(traj), scaler)[-window:]
        tensor[k, window - len(scaled):] = scaled
    labels = np.minimum(truth.as_array(), max_rul)
    units = np.array([t.unit_id for t in trajectories], dtype=np.int64)
    ends = np.array([t.max_cycle for t in trajectories], dtype=np.int64)
    return WindowDataset(tensor, labels, units, ends, selection.retained_feature_names)


@dataclass(frozen=True)
class PreprocessResult:
    selection: FeatureSelection
    scaler: ScalerParams
    train: WindowDataset
    test: WindowDataset | None
    window: int
    stride: int
    max_rul: float

    def metadata(self) -> dict:
        meta = {
            "feature_selection": self.selection.to_dict(),
            "scaler": self.scaler.to_dict(),
            "window": self.window,
            "stride": self.stride,
            "max_rul": self.max_rul,
            "train_shape": list(self.train.tensor.shape),
        }
        if self.test is not None:
            meta["test_shape"] = list(self.test.tensor.shape)
        return meta


def preprocess(
    train_trajs: Sequence[EngineTrajectory],
    test_trajs: Sequence[EngineTrajectory] | None = None,
    truth: RulTruthTable | None = None,
    window: int = WINDOW,
    stride: int = STRIDE,
    max_rul: float = MAX_RUL,
    variance_threshold: float = VARIANCE_THRESHOLD,
    drop_override: Iterable[int] | None = None,
) -> PreprocessResult:
    """Full chain; every statistic comes from ``train_trajs`` only."""
    selection = select_sensors(train_trajs, variance_threshold, drop_override)
    scaler = fit_scaler_on(train_trajs, selection)
    train = make_train_windows(train_trajs, selection, scaler, window, stride, max_rul)
    test = None
    if test_trajs is not None:
        if truth is None:
            raise ValidationError("test trajectories need a truth table")
        test = make_test_windows(test_trajs, selection, scaler, truth, window, max_rul)
    return PreprocessResult(selection, scaler, train, test, window, stride, max_rul)


META_FILE = "preprocess_meta.json"
TRAIN_FILE = "train_windows.bin"
TEST_FILE = "test_windows.bin"


def save_preprocessed(result: PreprocessResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.train.save(out / TRAIN_FILE)
    if result.test is not None:
        result.test.save(out / TEST_FILE)
    (out / META_FILE).write_text(json.dumps(result.metadata(), indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")


def load_preprocessed(data_dir) -> PreprocessResult:
    d = Path(data_dir)
    meta = json.loads((d / META_FILE).read_text(encoding="utf-8"))
    test = WindowDataset.load(d / TEST_FILE) if (d / TEST_FILE).exists() else None
    return PreprocessResult(
        FeatureSelection.from_dict(meta["feature_selection"]),
        ScalerParams.from_dict(meta["scaler"]),
        WindowDataset.load(d / TRAIN_FILE),
        test,
        meta["window"],
        meta["stride"],
        meta["max_rul"],
    )
