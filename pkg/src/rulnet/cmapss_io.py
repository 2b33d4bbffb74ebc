"""Reading and writing C-MAPSS text files and comma-separated output tables.

The C-MAPSS format is one observation per line with 26 whitespace-separated
columns: unit id, cycle, three operational settings and sensors s1..s21.
Ground-truth RUL files hold one non-negative integer per line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IntegrityError, ParseError, ValidationError

N_SETTINGS = 3
N_SENSORS = 21
N_COLUMNS = 2 + N_SETTINGS + N_SENSORS

SETTING_NAMES = tuple(f"setting{i}" for i in range(1, N_SETTINGS + 1))
SENSOR_NAMES = tuple(f"s{i}" for i in range(1, N_SENSORS + 1))


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    settings: tuple[float, ...]
    sensors: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class EngineTrajectory:
    """One engine's per-cycle history, stored column-wise.

    ``settings`` has shape (n, 3) and ``sensors`` (n, 21); row ``k`` belongs to
    ``cycles[k]``. Arrays are made read-only on construction.
    """

    unit_id: int
    cycles: np.ndarray
    settings: np.ndarray
    sensors: np.ndarray

    def __post_init__(self):
        cycles = np.asarray(self.cycles, dtype=np.int64).reshape(-1)
        settings = np.asarray(self.settings, dtype=np.float64).reshape(-1, N_SETTINGS)
        sensors = np.asarray(self.sensors, dtype=np.float64).reshape(-1, N_SENSORS)
        if not (len(cycles) == len(settings) == len(sensors)):
            raise IntegrityError(f"unit {self.unit_id}: column lengths disagree")
        if len(cycles) == 0:
            raise IntegrityError(f"unit {self.unit_id}: empty trajectory")
        if np.any(np.diff(cycles) != 1):
            raise IntegrityError(f"unit {self.unit_id}: cycles are not contiguous")
        if not (np.all(np.isfinite(settings)) and np.all(np.isfinite(sensors))):
            raise IntegrityError(f"unit {self.unit_id}: non-finite values")
        for arr in (cycles, settings, sensors):
            arr.setflags(write=False)
        object.__setattr__(self, "cycles", cycles)
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "sensors", sensors)

    def __len__(self):
        return len(self.cycles)

    @property
    def max_cycle(self) -> int:
        return int(self.cycles[-1])

    @property
    def records(self) -> list[CycleRecord]:
        return [
            CycleRecord(int(c), tuple(st.tolist()), tuple(se.tolist()))
            for c, st, se in zip(self.cycles, self.settings, self.sensors)
        ]

    def truncated(self, n_cycles: int) -> "EngineTrajectory":
        """First ``n_cycles`` cycles of this engine."""
        return EngineTrajectory(
            self.unit_id,
            self.cycles[:n_cycles],
            self.settings[:n_cycles],
            self.sensors[:n_cycles],
        )

    def __eq__(self, other):
        if not isinstance(other, EngineTrajectory):
            return NotImplemented
        return (
            self.unit_id == other.unit_id
            and np.array_equal(self.cycles, other.cycles)
            and np.array_equal(self.settings, other.settings)
            and np.array_equal(self.sensors, other.sensors)
        )


@dataclass(frozen=True)
class RulTruthTable:
    terminal_rul: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = tuple(int(v) for v in self.terminal_rul)
        if any(v < 0 for v in values):
            raise ValidationError("terminal RUL values must be non-negative")
        object.__setattr__(self, "terminal_rul", values)

    def __len__(self):
        return len(self.terminal_rul)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.terminal_rul, dtype=np.float64)


def _as_int(token: str, path, line_no: int, what: str) -> int:
    value = float(token)
    if not value.is_integer():
        raise ParseError(path, line_no, f"{what} must be an integer, got {token!r}")
    return int(value)


def parse_trajectories(path) -> list[EngineTrajectory]:
    """Parse a C-MAPSS train or test file into trajectories ordered by unit id."""
    path = Path(path)
    rows: dict[int, list[tuple[int, list[float]]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise ParseError(
                path, line_no, f"expected {N_COLUMNS} columns, found {len(tokens)}"
            )
        try:
            unit = _as_int(tokens[0], path, line_no, "unit id")
            cycle = _as_int(tokens[1], path, line_no, "cycle")
            values = [float(t) for t in tokens[2:]]
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, line_no, f"non-numeric token ({exc})") from None
        if not all(np.isfinite(values)):
            raise ParseError(path, line_no, "non-finite value")
        rows.setdefault(unit, []).append((cycle, values))

    trajectories = []
    for unit in sorted(rows):
        entries = sorted(rows[unit], key=lambda e: e[0])
        cycles = np.array([c for c, _ in entries], dtype=np.int64)
        if np.any(np.diff(cycles) != 1):
            raise IntegrityError(f"unit {unit}: cycles are not contiguous in {path}")
        data = np.array([v for _, v in entries], dtype=np.float64)
        trajectories.append(
            EngineTrajectory(unit, cycles, data[:, :N_SETTINGS], data[:, N_SETTINGS:])
        )
    return trajectories


def parse_rul_truth(path) -> RulTruthTable:
    path = Path(path)
    values = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line_no, line in enumerate(fh.read().splitlines(), start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 1:
                raise ParseError(path, line_no, f"expected 1 value, found {len(tokens)}")
            value = _as_int(tokens[0], path, line_no, "RUL")
            if value < 0:
                raise ValidationError(f"{path}:{line_no}: negative RUL {value}")
            values.append(value)
    return RulTruthTable(tuple(values))


def _format_trajectory_value(v: float) -> str:
    return repr(float(v))


def write_trajectories(path, trajectories: Iterable[EngineTrajectory]) -> None:
    """Write trajectories in C-MAPSS text format (space separated, one row per cycle)."""
    lines = []
    for traj in trajectories:
        for cycle, st, se in zip(traj.cycles, traj.settings, traj.sensors):
            values = " ".join(_format_trajectory_value(v) for v in (*st, *se))
            lines.append(f"{traj.unit_id} {int(cycle)} {values}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_rul_truth(path, truth: RulTruthTable) -> None:
    Path(path).write_text("".join(f"{v}\n" for v in truth.terminal_rul), encoding="utf-8")


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a comma-separated table with a single header line.

    Floats are written with ``repr`` so that :func:`read_table` recovers them
    bit-exactly; integers are written without a decimal point.
    """
    header = [str(h) for h in header]
    for name in header:
        if "," in name or "\n" in name:
            raise ValidationError(f"invalid column name {name!r}")
    lines = [",".join(header)]
    for i, row in enumerate(rows):
        row = list(row)
        if len(row) != len(header):
            raise ValidationError(
                f"row {i} has {len(row)} values, header has {len(header)} columns"
            )
        lines.append(",".join(_format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_cell(token: str):
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        return float(token)


def read_table(path) -> tuple[list[str], list[list]]:
    """Inverse of :func:`write_table`."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ParseError(path, 1, "missing header")
    header = lines[0].split(",")
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(path, line_no, f"expected {len(header)} cells, found {len(cells)}")
        try:
            rows.append([_parse_cell(c) for c in cells])
        except ValueError:
            raise ParseError(path, line_no, "non-numeric cell") from None
    return header, rows
