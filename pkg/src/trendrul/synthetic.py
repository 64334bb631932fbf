"""Synthetic signals and degradation fleets for tests, demos and the CLI."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from .cmapss import ALL_SENSORS, DEFAULT_SENSORS, EngineUnit, format_unit_rows


def two_tone(n: int = 512, fast_cycles: int = 8, slow_cycles: int = 1, slow_amp: float = 0.8):
    """``(x, fast, slow)`` with whole numbers of periods over ``n`` samples."""
    t = np.arange(n)
    fast = np.sin(2 * np.pi * fast_cycles * t / n)
    slow = slow_amp * np.sin(2 * np.pi * slow_cycles * t / n)
    return fast + slow, fast, slow


def trend_tone_noise(n: int = 400, seed: int = 0, tone_amp: float = 0.15,
                     tone_cycles: int = 20, noise_std: float = 0.02):
    """``(x, trend)`` with a linear trend from -1 to 1, one tone and white noise."""
    t = np.arange(n)
    trend = 2 * t / n - 1
    rng = np.random.default_rng(seed)
    x = trend + tone_amp * np.sin(2 * np.pi * tone_cycles * t / n) + rng.normal(0, noise_std, n)
    return x, trend


def random_mixture(n: int, rng: np.random.Generator) -> np.ndarray:
    """One to three tones plus a ramp plus white noise."""
    t = np.arange(n) / n
    x = rng.uniform(-1, 1) * (2 * t - 1)
    for _ in range(rng.integers(1, 4)):
        x = x + rng.uniform(0.1, 1.0) * np.sin(2 * np.pi * rng.uniform(1, 40) * t + rng.uniform(0, 2 * np.pi))
    return x + rng.normal(0, 0.05, n)


def degradation_fleet(n_units: int, seed: int = 0, lengths=(80, 160),
                      sensors=DEFAULT_SENSORS, noise_std: float = 0.02,
                      clock: str = "remaining", role: str = "train",
                      first_id: int = 1) -> list:
    """Run-to-failure units whose monitored sensors drift exponentially.

    With ``clock="remaining"`` every unit follows ``exp(-rate * RUL)``, so the
    sensor level pins down the remaining life. With ``clock="fraction"`` all
    units share one trajectory in lifetime fraction ``t / n``. Sensors outside
    ``sensors`` stay at a constant level.
    """
    if clock not in ("remaining", "fraction"):
        raise ValueError(f"unknown clock {clock!r}")
    rng = np.random.default_rng(seed)
    gains = np.linspace(1.0, -0.6, len(sensors))
    offsets = np.linspace(10.0, 40.0, len(ALL_SENSORS))
    units = []
    for u in range(n_units):
        n = int(rng.integers(lengths[0], lengths[1] + 1))
        t = np.arange(1, n + 1)
        if clock == "remaining":
            drift = np.exp(-0.03 * (n - t))
        else:
            drift = np.expm1(3.0 * t / n) / np.expm1(3.0)
        cols = np.tile(offsets, (n, 1))
        for g, j in zip(gains, sensors):
            cols[:, j - 1] += g * drift + rng.normal(0, noise_std, n)
        units.append(EngineUnit(
            unit_id=first_id + u,
            cycles=t,
            op_settings=np.zeros((n, 3)),
            sensors=cols,
            role=role,
        ))
    return units


def write_cmapss(directory, subset: str, train_units, test_units=(), test_ruls=()):
    """Write ``train_<subset>.txt`` and, if given, ``test_<subset>.txt`` with ``RUL_<subset>.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"train": directory / f"train_{subset}.txt"}
    paths["train"].write_text("".join(format_unit_rows(u) for u in train_units))
    if test_units:
        paths["test"] = directory / f"test_{subset}.txt"
        paths["rul"] = directory / f"RUL_{subset}.txt"
        paths["test"].write_text("".join(format_unit_rows(u) for u in test_units))
        paths["rul"].write_text("".join(f"{int(r)}\n" for r in test_ruls))
    return paths


def truncate_for_test(units, seed: int = 0, min_rul: int = 5, max_rul: int = 100):
    """Cut each run-to-failure unit at a random point; returns ``(units, true_ruls)``."""
    rng = np.random.default_rng(seed)
    out, ruls = [], []
    for u in units:
        k = int(rng.integers(min_rul, min(max_rul, u.n_cycles - 1) + 1))
        cut = u.truncate(u.n_cycles - k)
        cut = replace(cut, role="test", final_rul=k)
        out.append(cut)
        ruls.append(k)
    return out, ruls
