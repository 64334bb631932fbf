"""Glue between units, trend features and labelled training sequences."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .cmapss import DEFAULT_RUL_CAP, EngineUnit, LabeledSequence, augment, label_rul
from .emd import SiftConfig
from .ensemble import EnsembleConfig, ceemd, eemd, trend_feature
from .neural import normalize_rul
from .timeseries import NormalizationStats, fit_normalization, sliding_mean

FEATURE_METHODS = ("ceemd", "eemd", "mean", "raw")


def fit_fleet_normalization(train_units: Sequence[EngineUnit], sensors: Sequence[int]) -> list:
    return [fit_normalization(train_units, j) for j in sensors]


def normalized_signals(unit: EngineUnit, stats: Sequence[NormalizationStats]) -> np.ndarray:
    """(n, |J|) matrix of min-max scaled sensor columns."""
    return np.column_stack([s.normalize(unit.sensor(s.sensor)) for s in stats])


def signal_feature(x, method: str = "ceemd", level: int = 0,
                   ens: EnsembleConfig = EnsembleConfig(), sift_cfg: SiftConfig = SiftConfig(),
                   window: int = 5) -> np.ndarray:
    """One feature column from a normalized signal.

    ``ceemd``/``eemd`` give the level-``v`` trend, clamped to the number of
    modes found; ``mean`` is the sliding mean; ``raw`` is the signal itself.
    """
    x = np.asarray(x, dtype=float)
    if method == "raw":
        return x.copy()
    if method == "mean":
        return sliding_mean(x, window)
    if method not in ("ceemd", "eemd"):
        raise ValueError(f"unknown feature method {method!r}")
    if x.size < 3:
        return x.copy()
    d = ceemd(x, ens, sift_cfg) if method == "ceemd" else eemd(x, ens, sift_cfg)
    return trend_feature(d, min(level, d.n_imfs), method.upper()).values


def unit_features(unit: EngineUnit, stats, method: str = "ceemd", level: int = 0,
                  ens: EnsembleConfig = EnsembleConfig(), sift_cfg: SiftConfig = SiftConfig()):
    signals = normalized_signals(unit, stats)
    return np.column_stack([signal_feature(signals[:, j], method, level, ens, sift_cfg)
                            for j in range(signals.shape[1])])


def training_sequences(train_units: Sequence[EngineUnit], features: dict, cap: int = DEFAULT_RUL_CAP,
                       stride: int = 1, max_crop: int = 100, include_full: bool = True) -> list:
    """Labelled sequences from full units and their end-cropped copies.

    ``features`` maps unit id to the (n, F) feature matrix of the full unit;
    crops take its leading rows.
    """
    out = []
    for u in train_units:
        F = features[u.unit_id]
        copies = [(u, 0)] if include_full else []
        copies += augment([u], stride=stride, max_crop=max_crop)
        for cut, k in copies:
            out.append(LabeledSequence(
                F[: cut.n_cycles],
                normalize_rul(label_rul(cut, cap), cap),
                origin=(u.unit_id, k),
            ))
    return out
