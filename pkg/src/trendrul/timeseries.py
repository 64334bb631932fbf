"""Series container, min-max scaling and the sliding-mean baseline feature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidWindow, SensorDegenerate


@dataclass(frozen=True)
class Series:
    """Cycle-indexed samples of one sensor of one unit.

    Sample ``t`` belongs to cycle ``start_cycle + t``. Behaves like a 1-D
    array under ``np.asarray``.
    """

    values: np.ndarray
    start_cycle: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("Series needs a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)):
            raise ValueError("Series samples must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def cycles(self) -> np.ndarray:
        return self.start_cycle + np.arange(self.values.size)


@dataclass(frozen=True)
class NormalizationStats:
    sensor: int
    minimum: float
    maximum: float

    def __post_init__(self):
        if not self.maximum > self.minimum:
            raise SensorDegenerate(
                f"sensor {self.sensor}: max {self.maximum!r} <= min {self.minimum!r}"
            )

    def normalize(self, x):
        return min_max_normalize(x, self)

    def denormalize(self, y):
        return (np.asarray(y, dtype=float) + 1.0) / 2.0 * (self.maximum - self.minimum) + self.minimum

    def to_dict(self) -> dict:
        return {"sensor": self.sensor, "minimum": self.minimum, "maximum": self.maximum}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(int(d["sensor"]), float(d["minimum"]), float(d["maximum"]))


def fit_normalization(training_units: Iterable, sensor: int) -> NormalizationStats:
    """Global min/max of ``sensor`` over every cycle of every training unit.

    The stats are meant to be frozen and reused on test units, so test values
    may land slightly outside [-1, 1].
    """
    lo, hi = np.inf, -np.inf
    count = 0
    for unit in training_units:
        col = unit.sensor(sensor)
        lo = min(lo, float(np.min(col)))
        hi = max(hi, float(np.max(col)))
        count += 1
    if count == 0:
        raise ValueError("fit_normalization needs at least one unit")
    return NormalizationStats(sensor, lo, hi)


def min_max_normalize(x, stats: NormalizationStats):
    """Map raw values onto [-1, 1] using training extremes (no clipping)."""
    span = stats.maximum - stats.minimum
    if not span > 0:
        raise SensorDegenerate(f"sensor {stats.sensor} has zero range")
    return 2.0 * (np.asarray(x, dtype=float) - stats.minimum) / span - 1.0


def sliding_mean(series, window: int = 5) -> np.ndarray:
    """Centered moving average with an odd window.

    Near the ends the window is truncated to the valid samples and divided by
    the number of samples actually present, so a constant input stays constant.
    """
    if window < 1 or window % 2 == 0:
        raise InvalidWindow(f"window must be a positive odd integer, got {window}")
    x = np.asarray(series, dtype=float)
    if window == 1:
        return x.copy()
    half = (window - 1) // 2
    kernel = np.ones(window)
    sums = np.convolve(np.pad(x, half), kernel, mode="valid")
    counts = np.convolve(np.pad(np.ones(x.size), half), kernel, mode="valid")
    return sums / counts
