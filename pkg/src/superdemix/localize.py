"""Source localization from the dual vector and amplitude read-out.

Locations are the points where ``|P|`` (channel 1) or ``|Q|`` (channel 2)
touch 1. Nothing here needs the number of sources in advance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from superdemix import trigpoly
from superdemix.errors import ParameterError, ShapeError
from superdemix.signal import PointSourceModel, atom_matrix, wrap_distance

DEFAULT_THRESHOLD = 1e-4
DUAL_FEAS_SLACK = 1e-3
MERGE_RADIUS = 0.1  # in units of 1/M
CANDIDATE_FLOOR = 0.9


class RankDeficientWarning(UserWarning):
    """The amplitude design matrix is rank deficient; a minimum-norm fit was used."""


@dataclass
class LocalizationResult:
    taus1: np.ndarray
    taus2: np.ndarray
    amps1: np.ndarray
    amps2: np.ndarray
    peaks1: np.ndarray
    peaks2: np.ndarray
    residual: float

    @property
    def peak_values(self) -> tuple[np.ndarray, np.ndarray]:
        return self.peaks1, self.peaks2

    def to_dict(self) -> dict:
        pair = lambda z: [[float(v.real), float(v.imag)] for v in z]  # noqa: E731
        return {
            "taus1": [float(t) for t in self.taus1],
            "amps1": pair(self.amps1),
            "taus2": [float(t) for t in self.taus2],
            "amps2": pair(self.amps2),
            "residual": float(self.residual),
        }


def _peaks(coef, M, threshold, grid_size):
    vals = np.abs(trigpoly.evaluate_grid(coef, grid_size))
    idx = trigpoly.local_maxima(vals)
    idx = idx[vals[idx] >= CANDIDATE_FLOOR * (1.0 - threshold)]
    if idx.size == 0:
        return np.empty(0), np.empty(0)
    locs, mags = trigpoly.refine_peaks(coef, grid_size, idx, iters=30)
    keep = mags >= 1.0 - threshold
    locs, mags = locs[keep], mags[keep]
    # merge maxima closer than the merge radius, strongest first
    order = np.argsort(-mags)
    chosen: list[int] = []
    for i in order:
        if all(wrap_distance(locs[i], locs[j]) >= MERGE_RADIUS / M for j in chosen):
            chosen.append(i)
    chosen.sort(key=lambda i: locs[i])
    return locs[chosen], mags[chosen]


def locate(p, g, M: int, threshold: float = DEFAULT_THRESHOLD, grid_size: int | None = None):
    """Return ``(taus1, taus2)``: peaks of ``|P|`` and ``|Q|`` that reach ``1 - threshold``."""
    taus1, _, taus2, _ = locate_with_peaks(p, g, M, threshold, grid_size)
    return taus1, taus2


def locate_with_peaks(p, g, M, threshold=DEFAULT_THRESHOLD, grid_size=None):
    p = np.asarray(p, dtype=complex)
    g = np.asarray(g, dtype=complex)
    if p.shape != (4 * M + 1,) or g.shape != p.shape:
        raise ShapeError("p and g must have length 4M+1")
    if grid_size is None:
        grid_size = 64 * M
    if grid_size < 64 * M:
        raise ParameterError("grid_size must be at least 64 M")
    if not 0 < threshold < 1:
        raise ParameterError("threshold must lie in (0, 1)")
    t1, m1 = _peaks(p, M, threshold, grid_size)
    t2, m2 = _peaks(p * np.conj(g), M, threshold, grid_size)
    return t1, m1, t2, m2


def estimate_amplitudes(y, g, taus1, taus2):
    """Least-squares amplitudes for given locations.

    Returns ``(amps1, amps2, residual)`` with ``residual = ||y - fit|| / ||y||``.
    A rank-deficient design falls back to the minimum-norm solution and
    emits ``RankDeficientWarning``.
    """
    y = np.asarray(y, dtype=complex)
    g = np.asarray(g, dtype=complex)
    M = (len(y) - 1) // 4
    taus1 = np.atleast_1d(np.asarray(taus1, dtype=float))
    taus2 = np.atleast_1d(np.asarray(taus2, dtype=float))
    if len(taus1) + len(taus2) > len(y):
        raise ParameterError("more locations than measurements")
    A = np.hstack([atom_matrix(taus1, M), g[:, None] * atom_matrix(taus2, M)])
    ny = np.linalg.norm(y)
    if A.shape[1] == 0:
        return np.empty(0, complex), np.empty(0, complex), 1.0 if ny > 0 else 0.0
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        warnings.warn(
            f"amplitude design has rank {rank} < {A.shape[1]}; using minimum-norm fit",
            RankDeficientWarning,
            stacklevel=2,
        )
    res = np.linalg.norm(y - A @ coef)
    residual = float(res / ny) if ny > 0 else float(res)
    return coef[: len(taus1)], coef[len(taus1) :], residual


def localize(p, y, g, M: int, threshold: float = DEFAULT_THRESHOLD, grid_size=None) -> LocalizationResult:
    """Locate sources from ``p`` and fit their amplitudes to ``y``."""
    t1, m1, t2, m2 = locate_with_peaks(p, g, M, threshold, grid_size)
    a1, a2, res = estimate_amplitudes(y, g, t1, t2)
    return LocalizationResult(t1, t2, a1, a2, m1, m2, res)


@dataclass
class ChannelScore:
    detected: int
    true_count: int
    missed: int
    spurious: int
    max_loc_err: float
    amp_rel_errs: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    @property
    def max_amp_rel_err(self) -> float:
        return max(self.amp_rel_errs, default=0.0)


@dataclass
class ScoreRecord:
    channel1: ChannelScore
    channel2: ChannelScore

    @property
    def exact_counts(self) -> bool:
        return all(
            c.missed == 0 and c.spurious == 0 for c in (self.channel1, self.channel2)
        )

    @property
    def max_loc_err(self) -> float:
        return max(self.channel1.max_loc_err, self.channel2.max_loc_err)

    @property
    def max_amp_rel_err(self) -> float:
        return max(self.channel1.max_amp_rel_err, self.channel2.max_amp_rel_err)


def greedy_match(est_taus, true_taus, tol: float) -> list[tuple[int, int]]:
    """Pair estimates with truths by repeatedly taking the closest remaining pair within ``tol``."""
    est_taus = np.asarray(est_taus, dtype=float)
    true_taus = np.asarray(true_taus, dtype=float)
    if len(est_taus) == 0 or len(true_taus) == 0:
        return []
    D = wrap_distance(est_taus[:, None], true_taus[None, :])
    pairs = []
    for flat in np.argsort(D, axis=None, kind="stable"):
        i, j = divmod(int(flat), D.shape[1])
        if D[i, j] > tol:
            break
        if any(i == a or j == b for a, b in pairs):
            continue
        pairs.append((i, j))
    return sorted(pairs)


def _score_channel(taus, amps, truth: PointSourceModel, tol) -> ChannelScore:
    pairs = greedy_match(taus, truth.taus, tol)
    errs = [float(wrap_distance(taus[i], truth.taus[j])) for i, j in pairs]
    amp_errs = [
        float(abs(amps[i] - truth.amps[j]) / abs(truth.amps[j])) for i, j in pairs
    ] if len(amps) == len(taus) else []
    return ChannelScore(
        detected=len(taus),
        true_count=truth.K,
        missed=truth.K - len(pairs),
        spurious=len(taus) - len(pairs),
        max_loc_err=max(errs, default=0.0),
        amp_rel_errs=amp_errs,
        pairs=pairs,
    )


def match_and_score(
    est: LocalizationResult, truth1: PointSourceModel, truth2: PointSourceModel, tol: float
) -> ScoreRecord:
    return ScoreRecord(
        _score_channel(np.asarray(est.taus1), np.asarray(est.amps1), truth1, tol),
        _score_channel(np.asarray(est.taus2), np.asarray(est.amps2), truth2, tol),
    )
