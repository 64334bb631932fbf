"""C-MAPSS ingestion, RUL labelling, crop augmentation and batch padding.

Raw files are whitespace separated with 26 columns per row: unit id, cycle,
three operational settings and 21 sensor channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptySensorSet, PadTooShort, ParseError, RoleError, RulFileMismatch

N_COLUMNS = 26
ALL_SENSORS = tuple(range(1, 22))
DEFAULT_SENSORS = (2, 3, 4, 7, 8, 9, 11, 12, 13, 15, 17, 20, 21)
DEFAULT_RUL_CAP = 130


@dataclass(frozen=True)
class EngineUnit:
    unit_id: int
    cycles: np.ndarray
    op_settings: np.ndarray
    sensors: np.ndarray
    role: str = "train"
    final_rul: int = 0
    sensor_ids: tuple = ALL_SENSORS

    def __post_init__(self):
        n = len(self.cycles)
        if n < 1:
            raise ValueError(f"unit {self.unit_id} has no cycles")
        if self.op_settings.shape != (n, 3) or self.sensors.shape != (n, len(self.sensor_ids)):
            raise ValueError(f"unit {self.unit_id}: matrix rows do not match cycle count")
        if self.final_rul < 0:
            raise ValueError("final_rul must be >= 0")
        if self.role not in ("train", "test"):
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    def sensor(self, j: int) -> np.ndarray:
        """Column of sensor number ``j`` (1-based C-MAPSS numbering)."""
        try:
            return self.sensors[:, self.sensor_ids.index(j)]
        except ValueError:
            raise KeyError(f"sensor {j} not present in unit {self.unit_id}") from None

    def truncate(self, length: int) -> "EngineUnit":
        """First ``length`` cycles; the cut-off tail becomes extra final RUL."""
        return replace(
            self,
            cycles=self.cycles[:length],
            op_settings=self.op_settings[:length],
            sensors=self.sensors[:length],
            final_rul=self.final_rul + self.n_cycles - length,
        )


@dataclass
class Dataset:
    subset: str
    units: list
    sensor_set: tuple = ALL_SENSORS

    def __post_init__(self):
        # raw train and test files both number their units from 1
        keys = [(u.role, u.unit_id) for u in self.units]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate unit ids within a role")

    def by_role(self, role: str) -> list:
        return [u for u in self.units if u.role == role]


@dataclass
class LabeledSequence:
    features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray = None
    origin: tuple = field(default=(0, 0))

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.labels = np.asarray(self.labels, dtype=float)
        if self.mask is None:
            self.mask = np.ones(len(self.labels), dtype=bool)
        if not (len(self.features) == len(self.labels) == len(self.mask)):
            raise ValueError("features, labels and mask lengths differ")

    def __len__(self) -> int:
        return len(self.labels)


def _read_rows(path) -> list:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != N_COLUMNS:
                raise ParseError(path, lineno, f"expected {N_COLUMNS} fields, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return rows


def _group_units(rows, role: str) -> list:
    if not rows:
        return []
    data = np.array(rows)
    units = []
    for uid in np.unique(data[:, 0]).astype(int):
        block = data[data[:, 0] == uid]
        block = block[np.argsort(block[:, 1], kind="stable")]
        units.append(EngineUnit(
            unit_id=int(uid),
            cycles=block[:, 1].astype(int),
            op_settings=block[:, 2:5].copy(),
            sensors=block[:, 5:].copy(),
            role=role,
        ))
    return units


def parse_cmapss(train_path, test_path=None, rul_path=None, subset: str | None = None) -> Dataset:
    """Read one C-MAPSS subset.

    Test units get their final RUL from the r-th line of the RUL file for the
    r-th test unit in ascending id order.
    """
    train = _group_units(_read_rows(train_path), "train")
    test = []
    if test_path is not None:
        test = _group_units(_read_rows(test_path), "test")
        if rul_path is None:
            raise RulFileMismatch("test file given without a RUL file")
        ruls = [int(float(line.split()[0])) for line in Path(rul_path).read_text().splitlines()
                if line.strip()]
        if len(ruls) != len(test):
            raise RulFileMismatch(f"{len(ruls)} RUL values for {len(test)} test units")
        test = [replace(u, final_rul=r) for u, r in zip(test, ruls)]
    if subset is None:
        stem = Path(train_path).stem
        subset = stem.split("_")[-1] if "_" in stem else stem
    return Dataset(subset, train + test)


def format_unit_rows(unit: EngineUnit) -> str:
    """Serialize a full-width unit back to C-MAPSS text rows."""
    if unit.sensor_ids != ALL_SENSORS:
        raise ValueError("only units with all 21 sensors can be written back")
    uid = unit.unit_id
    lines = []
    for c, s, v in zip(unit.cycles, unit.op_settings, unit.sensors):
        lines.append(" ".join([str(uid), str(int(c))] + [repr(float(a)) for a in s]
                              + [repr(float(a)) for a in v]))
    return "\n".join(lines) + "\n"


def select_sensors(ds: Dataset, sensors: Sequence[int] = DEFAULT_SENSORS) -> Dataset:
    keep = tuple(sorted(set(int(j) for j in sensors)))
    if not keep:
        raise EmptySensorSet("sensor set is empty")
    bad = [j for j in keep if j not in ALL_SENSORS]
    if bad:
        raise ValueError(f"sensor indices out of 1..21: {bad}")
    units = []
    for u in ds.units:
        cols = np.column_stack([u.sensor(j) for j in keep])
        units.append(replace(u, sensors=cols, sensor_ids=keep))
    return Dataset(ds.subset, units, keep)


def label_rul(unit: EngineUnit, cap: int = DEFAULT_RUL_CAP) -> np.ndarray:
    """Piecewise-linear RUL target: ``min(cap, n - t + final_rul)`` for t = 1..n."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    n = unit.n_cycles
    t = np.arange(1, n + 1)
    return np.minimum(cap, n - t + unit.final_rul).astype(float)


def augment(train_units, stride: int = 1, max_crop: int = 100) -> list:
    """Truncated copies ending ``k`` cycles before failure, k = 1, 1+stride, ... <= max_crop.

    Only crops that leave at least one cycle are emitted (k < n).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = []
    for u in train_units:
        if u.role != "train":
            raise RoleError(f"unit {u.unit_id} is a {u.role} unit; only training units are cropped")
        for k in range(1, max_crop + 1, stride):
            if k < u.n_cycles:
                out.append((u.truncate(u.n_cycles - k), k))
    return out


def pad_and_mask(sequences: Sequence[LabeledSequence], target_length: int | None = None) -> list:
    """Front-pad every sequence with zero rows (mask False) up to ``target_length``."""
    if target_length is None:
        target_length = max(len(s) for s in sequences)
    out = []
    for s in sequences:
        pad = target_length - len(s)
        if pad < 0:
            raise PadTooShort(f"sequence of length {len(s)} exceeds target {target_length}")
        width = s.features.shape[1]
        out.append(LabeledSequence(
            np.vstack((np.zeros((pad, width)), s.features)),
            np.concatenate((np.zeros(pad), s.labels)),
            np.concatenate((np.zeros(pad, dtype=bool), s.mask)),
            s.origin,
        ))
    return out


def stack_batch(sequences: Sequence[LabeledSequence]):
    """Pad to the batch maximum and return ``(X, Y, M)`` with shapes (B,T,F), (B,T), (B,T)."""
    padded = pad_and_mask(sequences)
    X = np.stack([s.features for s in padded])
    Y = np.stack([s.labels for s in padded])
    M = np.stack([s.mask for s in padded])
    return X, Y, M
