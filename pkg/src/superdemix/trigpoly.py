"""Evaluation and maximization of trigonometric polynomials ``sum_n c_n e^{j2pi n tau}``.

Coefficient vectors use the same ``n = -2M..2M`` layout as everything else.
"""

from __future__ import annotations

import numpy as np

INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _degree(coef) -> int:
    return (len(coef) - 1) // 2


def evaluate(coef, taus, deriv: int = 0) -> np.ndarray:
    coef = np.asarray(coef, dtype=complex)
    D = _degree(coef)
    n = np.arange(-D, D + 1)
    taus = np.asarray(taus, dtype=float)
    E = np.exp(2j * np.pi * np.multiply.outer(taus, n))
    return E @ (coef * (2j * np.pi * n) ** deriv)


def evaluate_grid(coef, grid_size: int) -> np.ndarray:
    """Values at ``k / grid_size``, ``k = 0..grid_size-1``."""
    coef = np.asarray(coef, dtype=complex)
    D = _degree(coef)
    if grid_size < len(coef):
        raise ValueError("grid_size must be at least the number of coefficients")
    buf = np.zeros(grid_size, dtype=complex)
    buf[np.arange(-D, D + 1) % grid_size] = coef
    return np.fft.ifft(buf) * grid_size


def golden_section_max(f, a: float, b: float, iters: int = 30) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[a, b]``; returns ``(argmax, max)``.

    Endpoint values are included in the final comparison, so the result is
    never worse than the bracket ends.
    """
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    val, x = max(cands)
    return x, val


def local_maxima(values: np.ndarray) -> np.ndarray:
    """Indices of circular local maxima (ties broken toward the first index)."""
    left = np.roll(values, 1)
    right = np.roll(values, -1)
    return np.flatnonzero((values > left) & (values >= right))


def refine_peaks(coef, grid_size: int, idx, iters: int = 30) -> tuple[np.ndarray, np.ndarray]:
    """Golden-section refinement of ``|P|^2`` around grid indices ``idx``.

    Returns refined locations in [0, 1) and ``|P|`` at them.
    """
    h = 1.0 / grid_size
    locs, vals = [], []
    for k in np.atleast_1d(idx):
        t0 = k * h

        def f(t):
            return float(np.abs(evaluate(coef, t)) ** 2)

        t, v = golden_section_max(f, t0 - h, t0 + h, iters)
        locs.append(t % 1.0)
        vals.append(np.sqrt(v))
    return np.array(locs, dtype=float), np.array(vals, dtype=float)


def sup_modulus(coef, grid_size: int, top: int = 3, iters: int = 30) -> float:
    """Grid maximum of ``|P|`` refined by golden-section ascent at the top peaks."""
    vals = np.abs(evaluate_grid(coef, grid_size))
    peaks = local_maxima(vals)
    if peaks.size == 0:
        return float(vals.max())
    peaks = peaks[np.argsort(vals[peaks])[::-1][:top]]
    _, refined = refine_peaks(coef, grid_size, peaks, iters)
    return float(max(vals.max(), refined.max()))
