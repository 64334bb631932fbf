"""Prognostic scores and feature-quality metrics.

``mpd`` and ``mare`` score a candidate feature against a per-(unit, cycle)
Gaussian model of the measurement. ``baseline_distribution`` builds that
model from pooled training units binned by lifetime fraction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CoverageError, EmptyInput, InvalidSigma, ShapeError

BASELINE_ESTIMATOR = "binned-lifetime-fraction"


@dataclass(frozen=True)
class ScoreConfig:
    """Denominators of the asymmetric exponential score.

    The default late constant is 15; ``PHM08_SCORE`` uses the challenge's 10.
    """

    a_early: float = 13.0
    a_late: float = 15.0

    def __post_init__(self):
        if not (self.a_early > 0 and self.a_late > 0):
            raise ValueError("score denominators must be positive")


PHM08_SCORE = ScoreConfig(a_early=13.0, a_late=10.0)


def _paired(predicted, true):
    p = np.asarray(predicted, dtype=float).ravel()
    t = np.asarray(true, dtype=float).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"{p.size} predictions for {t.size} labels")
    if p.size == 0:
        raise EmptyInput("no predictions to score")
    return p, t


def phm_score(predicted, true, cfg: ScoreConfig = ScoreConfig()) -> float:
    """Sum of ``exp(-d/a_early) - 1`` for early and ``exp(d/a_late) - 1`` for late errors."""
    p, t = _paired(predicted, true)
    d = p - t
    s = np.where(d < 0, np.expm1(-d / cfg.a_early), np.expm1(d / cfg.a_late))
    return float(np.sum(s))


def rmse(predicted, true) -> float:
    p, t = _paired(predicted, true)
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class DistributionTrack:
    """Per-unit mean and standard deviation of the modelled measurement."""

    mean: dict
    std: dict
    estimator: str = BASELINE_ESTIMATOR

    def __post_init__(self):
        self.mean = {u: np.asarray(v, dtype=float) for u, v in self.mean.items()}
        self.std = {u: np.asarray(v, dtype=float) for u, v in self.std.items()}
        if self.mean.keys() != self.std.keys():
            raise CoverageError("mean and std cover different units")
        for u in self.mean:
            if self.mean[u].shape != self.std[u].shape:
                raise CoverageError(f"unit {u}: mean and std lengths differ")


def _aligned(features: Mapping, track: DistributionTrack):
    for u, x in features.items():
        if u not in track.mean:
            raise CoverageError(f"track has no entry for unit {u}")
        x = np.asarray(x, dtype=float)
        mu, sigma = track.mean[u], track.std[u]
        if x.size > mu.size:
            raise CoverageError(f"unit {u}: {x.size} cycles but track covers {mu.size}")
        yield x, mu[: x.size], sigma[: x.size]


def mpd(features: Mapping, track: DistributionTrack) -> float:
    """Mean Gaussian density of the features, averaged over cycles then units."""
    if not features:
        raise EmptyInput("no units to evaluate")
    per_unit = []
    for x, mu, sigma in _aligned(features, track):
        if np.any(sigma <= 0):
            raise InvalidSigma("standard deviation must be positive")
        z = (x - mu) / sigma
        per_unit.append(np.mean(np.exp(-0.5 * z * z) / (sigma * np.sqrt(2 * np.pi))))
    return float(np.mean(per_unit))


def mare(features: Mapping, track: DistributionTrack) -> float:
    """Mean absolute deviation from the modelled mean, averaged over cycles then units."""
    if not features:
        raise EmptyInput("no units to evaluate")
    return float(np.mean([np.mean(np.abs(x - mu)) for x, mu, _ in _aligned(features, track)]))


def lifetime_bins(length: int, bins: int) -> np.ndarray:
    """Bin index of each cycle t = 1..length by lifetime fraction t / length."""
    t = np.arange(1, length + 1)
    # integer ceil(t * bins / length) avoids float round-up at bin edges
    return np.clip((t * bins + length - 1) // length - 1, 0, bins - 1)


def baseline_distribution(training: Mapping, bins: int = 50, sigma_floor: float = 1e-3,
                          targets: Mapping | None = None) -> DistributionTrack:
    """Pooled per-bin mean and std of training values, indexed by lifetime fraction.

    ``training`` maps unit id to a 1-D array; the track covers ``targets``
    (default: the training units) through their own lifetime fractions. Bins
    with fewer than two samples borrow the nearest well-populated bin.
    """
    if len(training) < 2:
        raise ValueError("baseline distribution needs at least two training units")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    pooled = [[] for _ in range(bins)]
    for u, x in training.items():
        x = np.asarray(x, dtype=float)
        if x.size < 1:
            raise ValueError(f"unit {u} is empty")
        for b, v in zip(lifetime_bins(x.size, bins), x):
            pooled[b].append(v)
    counts = np.array([len(p) for p in pooled])
    populated = np.flatnonzero(counts >= 2)
    if populated.size == 0:
        raise ValueError("no bin holds two or more samples")
    mu = np.empty(bins)
    sd = np.empty(bins)
    for b in range(bins):
        src = populated[np.argmin(np.abs(populated - b))]
        vals = np.asarray(pooled[src])
        mu[b] = vals.mean()
        sd[b] = max(vals.std(), sigma_floor)
    targets = training if targets is None else targets
    mean, std = {}, {}
    for u, x in targets.items():
        idx = lifetime_bins(np.asarray(x).size, bins)
        mean[u], std[u] = mu[idx], sd[idx]
    return DistributionTrack(mean, std)


@dataclass
class EvaluationReport:
    unit_ids: list
    predicted: list
    true: list
    score: float
    rmse: float
    score_config: ScoreConfig = field(default_factory=ScoreConfig)
    feature_metrics: dict = field(default_factory=dict)
    estimator: str | None = None

    @classmethod
    def build(cls, unit_ids, predicted, true, cfg: ScoreConfig = ScoreConfig()) -> "EvaluationReport":
        return cls(
            [int(u) for u in unit_ids],
            [float(v) for v in predicted],
            [float(v) for v in true],
            phm_score(predicted, true, cfg),
            rmse(predicted, true),
            cfg,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units"] = [
            {"unit_id": u, "predicted": p, "true": t}
            for u, p, t in zip(self.unit_ids, self.predicted, self.true)
        ]
        for k in ("unit_ids", "predicted", "true"):
            del d[k]
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
