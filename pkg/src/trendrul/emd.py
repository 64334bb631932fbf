"""Empirical mode decomposition by cubic-spline sifting.

The decomposition is driven by three pieces: extrema detection with a
deterministic plateau rule, natural cubic spline envelopes fitted after
mirroring a few extrema past each end, and the sifting loop that stops on
the Cauchy-type SD criterion once the candidate also satisfies the
extrema/zero-crossing balance of an IMF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import EnvelopeUnderdetermined, NotDecomposable


@dataclass(frozen=True)
class ExtremaSet:
    maxima: np.ndarray
    minima: np.ndarray

    @property
    def count(self) -> int:
        return self.maxima.size + self.minima.size


@dataclass(frozen=True)
class SiftConfig:
    """Stopping and boundary parameters for sifting.

    ``max_total_iterations`` caps the sifting iterations spent on one whole
    decomposition; ``max_sift_iterations`` caps a single IMF.
    """

    sd_threshold: float = 0.2
    max_sift_iterations: int = 1000
    boundary_mirror_count: int = 2
    max_total_iterations: int = 5000

    def __post_init__(self):
        if not self.sd_threshold > 0:
            raise ValueError("sd_threshold must be positive")
        if self.max_sift_iterations < 1 or self.max_total_iterations < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.boundary_mirror_count < 1:
            raise ValueError("boundary_mirror_count must be >= 1")


@dataclass
class Decomposition:
    """IMFs ordered fast to slow plus the residue; rows of ``imfs`` are modes."""

    imfs: np.ndarray
    residue: np.ndarray
    start_cycle: int = 1
    sift_iterations: int = field(default=0, compare=False)

    def __post_init__(self):
        self.residue = np.asarray(self.residue, dtype=float)
        n = self.residue.size
        self.imfs = np.asarray(self.imfs, dtype=float).reshape(-1, n)

    @property
    def n_imfs(self) -> int:
        return self.imfs.shape[0]

    @property
    def source_length(self) -> int:
        return self.residue.size

    def reconstruct(self) -> np.ndarray:
        out = self.residue.copy()
        for imf in self.imfs:
            out += imf
        return out


def find_extrema(series) -> ExtremaSet:
    """Strict interior extrema; a flat run counts once at its floor midpoint.

    Endpoints and runs touching an endpoint are never extrema.
    """
    x = np.asarray(series, dtype=float)
    empty = np.empty(0, dtype=int)
    if x.size < 3:
        return ExtremaSet(empty, empty)
    change = np.flatnonzero(np.diff(x) != 0)
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [x.size - 1]))
    if starts.size < 3:
        return ExtremaSet(empty, empty)
    vals = x[starts]
    mid, left, right = vals[1:-1], vals[:-2], vals[2:]
    centre = (starts[1:-1] + ends[1:-1]) // 2
    is_max = (mid > left) & (mid > right)
    is_min = (mid < left) & (mid < right)
    return ExtremaSet(centre[is_max], centre[is_min])


def count_zero_crossings(series) -> int:
    """Sign changes between consecutive nonzero samples; a zero run counts once."""
    s = np.sign(np.asarray(series, dtype=float))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def satisfies_imf_balance(series, extrema: ExtremaSet | None = None) -> bool:
    if extrema is None:
        extrema = find_extrema(series)
    return abs(extrema.count - count_zero_crossings(series)) <= 1


def is_decomposable(extrema: ExtremaSet) -> bool:
    return extrema.maxima.size >= 2 and extrema.minima.size >= 2


def is_negligible(residue: np.ndarray, reference: np.ndarray, rtol: float = 1e-10) -> bool:
    """True when ``residue`` is round-off relative to ``reference``.

    Stops decompositions from sifting floating-point noise into extra modes.
    """
    scale = float(np.ptp(reference))
    return float(np.ptp(residue)) <= rtol * scale if scale > 0 else True


def _last(a: np.ndarray, k: int) -> np.ndarray:
    return a[max(a.size - k, 0):] if k > 0 else a[:0]


def _mirror_left(x, imax, imin, nbsym):
    if imax[0] < imin[0]:
        if x[0] > x[imin[0]]:
            lmax, lmin, lsym = imax[1:nbsym + 1], imin[:nbsym], imax[0]
        else:
            lmax, lmin, lsym = imax[:nbsym], np.r_[0, imin[:nbsym - 1]], 0
    else:
        if x[0] < x[imax[0]]:
            lmax, lmin, lsym = imax[:nbsym], imin[1:nbsym + 1], imin[0]
        else:
            lmax, lmin, lsym = np.r_[0, imax[:nbsym - 1]], imin[:nbsym], 0
    inner = [a[-1] for a in (lmax, lmin) if a.size]
    if lsym != 0 and inner and 2 * lsym - min(inner) > 0:
        # mirrored knots would not clear the left edge; reflect about the edge
        if lsym == imax[0]:
            lmax = imax[:nbsym]
        else:
            lmin = imin[:nbsym]
        lsym = 0
    return lmax, lmin, lsym


def _mirror_right(x, imax, imin, nbsym):
    end = x.size - 1
    if imax[-1] > imin[-1]:
        if x[-1] > x[imin[-1]]:
            rmax, rmin, rsym = _last(imax[:-1], nbsym), _last(imin, nbsym), imax[-1]
        else:
            rmax, rmin, rsym = _last(imax, nbsym), np.r_[_last(imin, nbsym - 1), end], end
    else:
        if x[-1] < x[imax[-1]]:
            rmax, rmin, rsym = _last(imax, nbsym), _last(imin[:-1], nbsym), imin[-1]
        else:
            rmax, rmin, rsym = np.r_[_last(imax, nbsym - 1), end], _last(imin, nbsym), end
    inner = [a[0] for a in (rmax, rmin) if a.size]
    if rsym != end and inner and 2 * rsym - max(inner) < end:
        if rsym == imax[-1]:
            rmax = _last(imax, nbsym)
        else:
            rmin = _last(imin, nbsym)
        rsym = end
    return rmax, rmin, rsym


def _knots(x, own, left, lsym, right, rsym):
    n = x.size
    lpos = 2 * lsym - left
    rpos = 2 * rsym - right
    # only keep reflections that land outside the sampled range (or on an edge)
    lkeep = (lpos < 0) | ((lpos == 0) & (left == 0))
    rkeep = (rpos > n - 1) | ((rpos == n - 1) & (right == n - 1))
    pos = np.concatenate((lpos[lkeep], own, rpos[rkeep]))
    val = np.concatenate((x[left[lkeep]], x[own], x[right[rkeep]]))
    pos, first = np.unique(pos, return_index=True)
    return pos.astype(float), val[first]


def spline_envelope(series, extrema: ExtremaSet, side: str = "upper",
                    mirror_count: int = 2) -> np.ndarray:
    """Natural cubic spline through the maxima (``upper``) or minima (``lower``).

    ``mirror_count`` extrema are reflected past each end before fitting. The
    reflection needs both maxima and minima, so fewer than two extrema in
    total, or an empty requested side, leaves the envelope underdetermined.
    """
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    x = np.asarray(series, dtype=float)
    imax, imin = extrema.maxima, extrema.minima
    if imax.size == 0 or imin.size == 0:
        raise EnvelopeUnderdetermined(
            f"need maxima and minima for an envelope, got {imax.size} and {imin.size}"
        )
    lmax, lmin, lsym = _mirror_left(x, imax, imin, mirror_count)
    rmax, rmin, rsym = _mirror_right(x, imax, imin, mirror_count)
    if side == "upper":
        pos, val = _knots(x, imax, lmax, lsym, rmax, rsym)
    else:
        pos, val = _knots(x, imin, lmin, lsym, rmin, rsym)
    if pos.size < 2:
        raise EnvelopeUnderdetermined(f"{side} envelope has {pos.size} knot(s)")
    return CubicSpline(pos, val, bc_type="natural")(np.arange(x.size, dtype=float))


def _envelope_mean(h: np.ndarray, ext: ExtremaSet, mirror_count: int) -> np.ndarray:
    upper = spline_envelope(h, ext, "upper", mirror_count)
    lower = spline_envelope(h, ext, "lower", mirror_count)
    return 0.5 * (upper + lower)


def sift(series, cfg: SiftConfig = SiftConfig(), max_iterations: int | None = None):
    """Extract one IMF; returns ``(imf, iterations_used)``.

    Raises NotDecomposable unless the input has at least two maxima and two
    minima.
    """
    h = np.array(series, dtype=float)
    if h.size < 3:
        raise NotDecomposable("series shorter than 3 samples")
    cap = cfg.max_sift_iterations if max_iterations is None else max_iterations
    ext = find_extrema(h)
    if not is_decomposable(ext):
        raise NotDecomposable(
            f"{ext.maxima.size} maxima and {ext.minima.size} minima (need 2 of each)"
        )
    if cap < 1:
        raise NotDecomposable("sifting budget exhausted")
    used = 0
    while used < cap:
        mean = _envelope_mean(h, ext, cfg.boundary_mirror_count)
        energy = float(np.dot(h, h))
        h = h - mean
        used += 1
        ext = find_extrema(h)
        if ext.maxima.size == 0 or ext.minima.size == 0:
            break
        sd = float(np.dot(mean, mean)) / energy if energy > 0 else 0.0
        if sd < cfg.sd_threshold and satisfies_imf_balance(h, ext):
            break
    return h, used


def extract_imf(series, cfg: SiftConfig = SiftConfig()):
    """One sifting pass; returns ``(imf, series - imf)``."""
    x = np.asarray(series, dtype=float)
    imf, _ = sift(x, cfg)
    return imf, x - imf


def emd_first_mode(series, cfg: SiftConfig = SiftConfig()):
    """First-mode operator used by the complete ensemble cascade."""
    return extract_imf(series, cfg)


def emd(series, cfg: SiftConfig = SiftConfig(), start_cycle: int = 1) -> Decomposition:
    """Full decomposition; stops when the residue is no longer decomposable
    or the per-decomposition sifting budget runs out."""
    x = np.asarray(series, dtype=float)
    if x.size < 3:
        raise ValueError("emd needs at least 3 samples")
    residue = x.copy()
    imfs = []
    budget = cfg.max_total_iterations
    while budget > 0 and not is_negligible(residue, x):
        try:
            imf, used = sift(residue, cfg, min(cfg.max_sift_iterations, budget))
        except NotDecomposable:
            break
        budget -= used
        imfs.append(imf)
        residue = residue - imf
    return Decomposition(
        np.array(imfs).reshape(len(imfs), x.size), residue, start_cycle,
        sift_iterations=cfg.max_total_iterations - budget,
    )
