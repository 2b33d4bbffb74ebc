"""Synthetic run-to-failure fleets with the same layout as C-MAPSS.

Each engine has a lifetime ``L`` and a health index ``h(t) = 1 - (t/L)**p``.
Informative sensors follow ``a_i + b_i * h(t)`` plus Gaussian noise; the
coefficients are drawn once per fleet, so train and test engines share them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmapss_io import N_SENSORS, N_SETTINGS, EngineTrajectory, RulTruthTable
from .errors import ValidationError

SETTING_LEVELS = np.array([0.0, 0.0, 100.0])
SETTING_NOISE_SCALE = 1e-3
TRUNCATION_RANGE = (0.3, 0.9)


@dataclass(frozen=True)
class SynthConfig:
    n_engines: int = 20
    min_life: int = 128
    max_life: int = 362
    n_constant_sensors: int = 7
    noise_std: float = 0.05
    degradation_exponent: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_engines < 1:
            raise ValidationError("n_engines must be positive")
        if self.min_life < 1 or self.max_life < self.min_life:
            raise ValidationError("need 1 <= min_life <= max_life")
        if not 0 <= self.n_constant_sensors <= N_SENSORS:
            raise ValidationError(f"n_constant_sensors must be in [0, {N_SENSORS}]")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        if self.degradation_exponent <= 0:
            raise ValidationError("degradation_exponent must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class SynthCorpus:
    train: list[EngineTrajectory]
    test: list[EngineTrajectory]
    truth: RulTruthTable
    constant_sensors: tuple[int, ...]   # 1-based sensor indices


@dataclass(frozen=True)
class _Fleet:
    offsets: np.ndarray
    slopes: np.ndarray
    constant: np.ndarray   # boolean mask over sensors


def _draw_fleet(config: SynthConfig, rng: np.random.Generator) -> _Fleet:
    offsets = rng.uniform(5.0, 50.0, size=N_SENSORS)
    slopes = rng.uniform(0.5, 2.0, size=N_SENSORS) * rng.choice([-1.0, 1.0], size=N_SENSORS)
    constant = np.zeros(N_SENSORS, dtype=bool)
    constant[rng.choice(N_SENSORS, size=config.n_constant_sensors, replace=False)] = True
    return _Fleet(offsets, slopes, constant)


def _simulate(unit_id: int, life: int, fleet: _Fleet, config: SynthConfig,
              rng: np.random.Generator) -> EngineTrajectory:
    t = np.arange(1, life + 1, dtype=np.float64)
    health = 1.0 - (t / life) ** config.degradation_exponent
    sensors = fleet.offsets + np.outer(health, fleet.slopes)
    noise = rng.normal(0.0, 1.0, size=sensors.shape) * config.noise_std
    sensors = sensors + noise
    sensors[:, fleet.constant] = fleet.offsets[fleet.constant]
    setting_noise = rng.normal(0.0, 1.0, size=(life, N_SETTINGS))
    settings = SETTING_LEVELS + setting_noise * (SETTING_NOISE_SCALE * config.noise_std)
    return EngineTrajectory(unit_id, np.arange(1, life + 1), settings, sensors)


def generate(config: SynthConfig) -> SynthCorpus:
    """Generate a run-to-failure training fleet plus a truncated test fleet.

    Test engines are fresh draws from the same fleet (same sensor
    coefficients), cut at a uniformly chosen 30-90% of their lifetime.
    """
    rng = np.random.default_rng(config.seed)
    fleet = _draw_fleet(config, rng)

    train = []
    for unit in range(1, config.n_engines + 1):
        life = int(rng.integers(config.min_life, config.max_life + 1))
        train.append(_simulate(unit, life, fleet, config, rng))

    test, truth = [], []
    lo, hi = TRUNCATION_RANGE
    for unit in range(1, config.n_engines + 1):
        life = int(rng.integers(config.min_life, config.max_life + 1))
        full = _simulate(unit, life, fleet, config, rng)
        first = max(1, int(np.ceil(lo * life)))
        last = max(first, int(np.floor(hi * life)))
        cut = int(rng.integers(first, last + 1))
        test.append(full.truncated(cut))
        truth.append(life - cut)

    constant = tuple(int(i) + 1 for i in np.flatnonzero(fleet.constant))
    return SynthCorpus(train, test, RulTruthTable(tuple(truth)), constant)
