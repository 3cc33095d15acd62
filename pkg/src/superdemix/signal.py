"""Point-source channels, atoms and the mixed frequency-domain measurement.

All length-(4M+1) vectors are stored in ascending frequency order
``n = -2M, ..., 2M``; array offset ``i`` corresponds to ``n = i - 2M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from superdemix.errors import (
    DomainError,
    IllConditionedPsfError,
    ParameterError,
    SamplingError,
    ShapeError,
)

SAMPLING_BUDGET = 100_000


def frequencies(M: int) -> np.ndarray:
    """Integer frequency grid ``-2M..2M``."""
    return np.arange(-2 * M, 2 * M + 1)


def wrap_distance(a, b):
    """Distance on the unit circle [0, 1)."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


@dataclass(frozen=True)
class PointSourceModel:
    """Locations and complex amplitudes of one channel's point sources."""

    taus: np.ndarray
    amps: np.ndarray
    channel_id: int = 1

    def __post_init__(self):
        taus = np.atleast_1d(np.asarray(self.taus, dtype=float)).copy()
        amps = np.atleast_1d(np.asarray(self.amps, dtype=complex)).copy()
        if taus.shape != amps.shape or taus.ndim != 1:
            raise ShapeError("taus and amps must be 1-D arrays of equal length")
        if np.any(taus < 0) or np.any(taus >= 1):
            raise DomainError("source locations must lie in [0, 1)")
        if len(np.unique(taus)) != len(taus):
            raise DomainError("source locations must be distinct")
        if self.channel_id not in (1, 2):
            raise ParameterError("channel_id must be 1 or 2")
        taus.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "amps", amps)

    @property
    def K(self) -> int:
        return len(self.taus)

    @property
    def signs(self) -> np.ndarray:
        """Complex signs a/|a| of the amplitudes."""
        return self.amps / np.abs(self.amps)

    @property
    def sources(self) -> list[tuple[float, complex]]:
        return list(zip(self.taus.tolist(), self.amps.tolist()))

    def shifted(self, c: float) -> "PointSourceModel":
        return PointSourceModel((self.taus + c) % 1.0, self.amps, self.channel_id)

    def with_amps(self, amps) -> "PointSourceModel":
        return PointSourceModel(self.taus, amps, self.channel_id)


@dataclass(frozen=True)
class PsfRatio:
    """Ratio ``g_n = g_{2,n} / g_{1,n}`` of the two PSF spectra."""

    g: np.ndarray
    M: int = field(default=0)

    def __post_init__(self):
        g = np.asarray(self.g, dtype=complex).copy()
        M = self.M or (len(g) - 1) // 4
        if M < 1 or g.shape != (4 * M + 1,):
            raise ShapeError(f"g must have length 4M+1, got {g.shape} for M={M}")
        if np.any(g == 0):
            raise DomainError("PSF ratio entries must be nonzero")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "M", M)

    @classmethod
    def ones(cls, M: int) -> "PsfRatio":
        return cls(np.ones(4 * M + 1, dtype=complex), M)


@dataclass(frozen=True)
class MixedMeasurement:
    y: np.ndarray
    psf: PsfRatio

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex).copy()
        if y.shape != self.psf.g.shape:
            raise ShapeError("y and g must have the same length 4M+1")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def M(self) -> int:
        return self.psf.M


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or np.any(tau >= 1):
        raise DomainError(f"tau must lie in [0, 1), got {tau}")
    return tau


def atom(tau: float, M: int) -> np.ndarray:
    """Atom ``c(tau)`` with entries ``exp(-j 2 pi n tau)``, ``n = -2M..2M``."""
    if M < 1:
        raise ParameterError("M must be a positive integer")
    tau = float(_check_tau(tau))
    return np.exp(-2j * np.pi * frequencies(M) * tau)


def atom_matrix(taus, M: int) -> np.ndarray:
    """Columns are ``atom(tau_k, M)``; shape ``(4M+1, K)``."""
    taus = _check_tau(np.atleast_1d(taus))
    return np.exp(-2j * np.pi * np.outer(frequencies(M), taus))


def synthesize_signal(model: PointSourceModel, M: int) -> np.ndarray:
    """Spectrum ``sum_k a_k c(tau_k)`` of one channel."""
    if model.K == 0:
        raise ParameterError("cannot synthesize an empty source model")
    return atom_matrix(model.taus, M) @ model.amps


def min_separation(model: PointSourceModel) -> float:
    """Minimum pairwise wrap-around distance; 1.0 when there is a single source."""
    taus = np.sort(model.taus)
    if len(taus) < 2:
        return 1.0
    gaps = np.diff(np.concatenate([taus, [taus[0] + 1.0]]))
    return float(min(gaps.min(), 1.0))


def _draw_amps(rng: np.random.Generator, K: int, amp_law: str) -> np.ndarray:
    if amp_law == "complex_gaussian":
        z = rng.standard_normal((K, 2)) / np.sqrt(2.0)
        return z[:, 0] + 1j * z[:, 1]
    if amp_law == "unit_circle":
        return np.exp(2j * np.pi * rng.random(K))
    raise ParameterError(f"unknown amplitude law {amp_law!r}")


def sample_sources(
    K: int,
    delta_min: float,
    amp_law: str = "complex_gaussian",
    seed=0,
    channel_id: int = 1,
) -> PointSourceModel:
    """Draw ``K`` sources with pairwise wrap distance at least ``delta_min``.

    Locations are placed one at a time by rejection; if a partial placement
    gets stuck the whole set is restarted. At most ``SAMPLING_BUDGET``
    uniform draws are spent in total.
    """
    if K < 1:
        raise ParameterError("K must be at least 1")
    if delta_min < 0 or (K > 1 and K * delta_min >= 1):
        raise ParameterError(f"cannot place K={K} sources with separation {delta_min}")
    rng = np.random.default_rng(seed)
    draws = 0
    taus: list[float] = []
    while len(taus) < K:
        if draws >= SAMPLING_BUDGET:
            raise SamplingError(f"no placement found within {SAMPLING_BUDGET} draws")
        cand = rng.random()
        draws += 1
        if taus and np.min(wrap_distance(cand, taus)) < delta_min:
            # restart a placement that has wasted too many draws on one point
            if draws % 1000 == 0:
                taus = []
            continue
        taus.append(cand)
    amps = _draw_amps(rng, K, amp_law)
    return PointSourceModel(np.array(taus), amps, channel_id)


def sample_psf_ratio(M: int, seed=0) -> PsfRatio:
    """Unit-modulus PSF ratio with i.i.d. uniform phases."""
    if M < 1:
        raise ParameterError("M must be a positive integer")
    rng = np.random.default_rng(seed)
    phi = rng.random(4 * M + 1)
    return PsfRatio(np.exp(2j * np.pi * phi), M)


def measure(x1, x2, psf: PsfRatio) -> MixedMeasurement:
    """Mixed measurement ``y = x1 + g * x2``."""
    x1 = np.asarray(x1, dtype=complex)
    x2 = np.asarray(x2, dtype=complex)
    if x1.shape != psf.g.shape or x2.shape != psf.g.shape:
        raise ShapeError("x1, x2 and g must all have length 4M+1")
    return MixedMeasurement(x1 + psf.g * x2, psf)


def normalize_raw_channels(y_raw, g1, g2, floor: float = 1e-8):
    """Divide the raw spectra by the first channel's PSF.

    Returns ``(y, PsfRatio)`` with ``y = y_raw / g1`` and ``g = g2 / g1``.

    Raises:
        IllConditionedPsfError: if any ``|g1_n|`` falls below ``floor``.
    """
    y_raw, g1, g2 = (np.asarray(v, dtype=complex) for v in (y_raw, g1, g2))
    if not (y_raw.shape == g1.shape == g2.shape):
        raise ShapeError("y_raw, g1 and g2 must have equal lengths")
    if floor <= 0:
        raise ParameterError("floor must be positive")
    bad = np.flatnonzero(np.abs(g1) < floor)
    if bad.size:
        raise IllConditionedPsfError(
            f"|g1| below {floor:g} at offsets {bad.tolist()}; cannot normalize"
        )
    return y_raw / g1, PsfRatio(g2 / g1)
