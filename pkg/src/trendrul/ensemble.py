"""Noise-assisted ensemble decompositions and trend-feature reconstruction.

Realization ``i`` always draws its white noise from
``numpy.random.default_rng([base_seed, i])`` (PCG64 seeded through
SeedSequence), so each realization is independent of evaluation order and the
ensemble mean is accumulated in realization-index order.

In the complete ensemble cascade, stage 1 perturbs the signal with the raw
noise ``w_i``; stage ``k >= 2`` perturbs the running residue with the
``(k-1)``-th EMD mode of the same ``w_i``, so the added noise sits at the
scale of the mode being extracted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .emd import (
    Decomposition,
    SiftConfig,
    emd,
    find_extrema,
    is_decomposable,
    is_negligible,
    sift,
)
from .errors import LevelOutOfRange, NotDecomposable

NOISE_GENERATOR = "numpy.random.PCG64 via SeedSequence([base_seed, realization])"


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, noise level and sifting budget.

    ``noise_schedule="constant"`` uses the same noise std at every stage;
    ``"adaptive"`` scales it by the std of the residue being decomposed.
    ``max_total_sift_iterations`` is the budget of one realization across all
    its stages.
    """

    realizations: int = 100
    noise_std: float = 0.02
    noise_schedule: str = "constant"
    max_total_sift_iterations: int = 5000
    base_seed: int = 0

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.noise_schedule not in ("constant", "adaptive"):
            raise ValueError(f"unknown noise_schedule {self.noise_schedule!r}")
        if self.max_total_sift_iterations < 1:
            raise ValueError("max_total_sift_iterations must be >= 1")


@dataclass(frozen=True)
class TrendFeature:
    values: np.ndarray
    level: int
    source: str


def white_noise(n: int, base_seed: int, realization: int) -> np.ndarray:
    return np.random.default_rng([int(base_seed), int(realization)]).standard_normal(n)


@lru_cache(maxsize=1024)
def _noise_modes(n: int, base_seed: int, realization: int, sift_cfg: SiftConfig) -> np.ndarray:
    modes = emd(white_noise(n, base_seed, realization), sift_cfg).imfs
    modes.setflags(write=False)
    return modes


def noise_mode(n: int, base_seed: int, realization: int, k: int,
               sift_cfg: SiftConfig = SiftConfig()) -> np.ndarray:
    """``k``-th EMD mode (1-based) of realization noise; zeros past the last mode."""
    modes = _noise_modes(n, int(base_seed), int(realization), sift_cfg)
    return modes[k - 1] if k <= modes.shape[0] else np.zeros(n)


def _stage_scale(cfg: EnsembleConfig, signal: np.ndarray) -> float:
    if cfg.noise_schedule == "adaptive":
        return cfg.noise_std * float(np.std(signal))
    return cfg.noise_std


def eemd(x, cfg: EnsembleConfig = EnsembleConfig(), sift_cfg: SiftConfig = SiftConfig(),
         start_cycle: int = 1) -> Decomposition:
    """Average of full EMDs over noise-perturbed copies of ``x``.

    Realizations with fewer modes contribute zeros to the missing slow modes.
    The residue is ``x`` minus the averaged modes.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    run_cfg = SiftConfig(
        sd_threshold=sift_cfg.sd_threshold,
        max_sift_iterations=sift_cfg.max_sift_iterations,
        boundary_mirror_count=sift_cfg.boundary_mirror_count,
        max_total_iterations=cfg.max_total_sift_iterations,
    )
    eps = _stage_scale(cfg, x)
    total = np.zeros((0, n))
    iterations = 0
    for i in range(1, cfg.realizations + 1):
        d = emd(x + eps * white_noise(n, cfg.base_seed, i), run_cfg)
        iterations += d.sift_iterations
        if d.n_imfs > total.shape[0]:
            total = np.vstack((total, np.zeros((d.n_imfs - total.shape[0], n))))
        total[: d.n_imfs] += d.imfs
    modes = total / cfg.realizations
    residue = x - modes.sum(axis=0) if modes.shape[0] else x.copy()
    return Decomposition(modes, residue, start_cycle, sift_iterations=iterations)


def ceemd(x, cfg: EnsembleConfig = EnsembleConfig(), sift_cfg: SiftConfig = SiftConfig(),
          start_cycle: int = 1, on_extract=None) -> Decomposition:
    """Complete ensemble EMD: one averaged first-mode extraction per stage.

    The cascade stops when the running residue is no longer decomposable,
    when more than half of the perturbed residues are not decomposable, or
    when every realization has spent its sifting budget. The final residue
    is ``x`` minus all modes, so reconstruction is exact up to rounding.

    ``on_extract(stage, realization, imf)`` is called for every sifted IMF
    before averaging.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("ceemd needs at least 3 samples")
    I = cfg.realizations
    budget = np.full(I, cfg.max_total_sift_iterations, dtype=np.int64)
    modes: list[np.ndarray] = []
    residue = x.copy()
    k = 1
    while True:
        if not is_decomposable(find_extrema(residue)) or is_negligible(residue, x):
            break
        eps = _stage_scale(cfg, residue)
        acc = np.zeros(n)
        failed = 0
        for i in range(1, I + 1):
            if budget[i - 1] <= 0:
                failed += 1
                continue
            if eps == 0:
                noise = 0.0
            elif k == 1:
                noise = white_noise(n, cfg.base_seed, i)
            else:
                noise = noise_mode(n, cfg.base_seed, i, k - 1, sift_cfg)
            cap = int(min(sift_cfg.max_sift_iterations, budget[i - 1]))
            try:
                imf, used = sift(residue + eps * noise, sift_cfg, cap)
            except NotDecomposable:
                failed += 1
                continue
            budget[i - 1] -= used
            if on_extract is not None:
                on_extract(k, i, imf)
            acc += imf
        if 2 * failed > I:
            break
        mode = acc / I
        modes.append(mode)
        residue = residue - mode
        k += 1
    final = x.copy()
    for mode in modes:
        final -= mode
    used_total = int(I * cfg.max_total_sift_iterations - budget.sum())
    return Decomposition(
        np.array(modes).reshape(len(modes), n), final, start_cycle, sift_iterations=used_total
    )


def trend_feature(d: Decomposition, level: int, source: str = "CEEMD") -> TrendFeature:
    """Residue plus the ``level`` slowest modes; level 0 is the residue alone."""
    K = d.n_imfs
    if not 0 <= level <= K:
        raise LevelOutOfRange(f"level {level} outside 0..{K}")
    values = d.residue.copy()
    for k in range(K - 1, K - 1 - level, -1):
        values += d.imfs[k]
    return TrendFeature(values, level, source)


def eemd_trend_feature(x, level: int, cfg: EnsembleConfig = EnsembleConfig(),
                       sift_cfg: SiftConfig = SiftConfig()) -> TrendFeature:
    return trend_feature(eemd(x, cfg, sift_cfg), level, source="EEMD")


def write_decomposition_csv(path, d: Decomposition) -> None:
    """Columns ``cycle, imf_1..imf_K, residue``; floats written with repr."""
    header = ["cycle"] + [f"imf_{k}" for k in range(1, d.n_imfs + 1)] + ["residue"]
    cycles = d.start_cycle + np.arange(d.source_length)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(d.source_length):
            w.writerow([int(cycles[t])] + [repr(float(v)) for v in d.imfs[:, t]]
                       + [repr(float(d.residue[t]))])


def read_decomposition_csv(path) -> Decomposition:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    k = len(header) - 2
    return Decomposition(body[:, 1:1 + k].T, body[:, -1], int(body[0, 0]))
