"""Squared Fejer kernel and its PSF-modulated variants.

``K(tau) = (1/M) sum_n s_n exp(j 2 pi n tau)`` over ``n = -2M..2M``; the
modulated kernels weight each coefficient by ``g_n`` or ``conj(g_n)``.
Derivatives are analytic, via the factor ``(j 2 pi n)^l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from superdemix.errors import ParameterError, ShapeError
from superdemix.signal import PsfRatio, frequencies

THEORY_MIN_M = 4


@dataclass(frozen=True)
class FejerKernel:
    M: int
    s: np.ndarray
    kpp0: float

    @property
    def n(self) -> np.ndarray:
        return frequencies(self.M)

    @property
    def sqrt_abs_kpp0(self) -> float:
        return float(np.sqrt(abs(self.kpp0)))

    @property
    def in_theory_regime(self) -> bool:
        """False for 2 <= M < 4, where the recovery guarantees do not apply."""
        return self.M >= THEORY_MIN_M

    def weights(self, l: int, h=None) -> np.ndarray:
        """Coefficient vector ``(s_n / M) h_n (j 2 pi n)^l``."""
        if l not in (0, 1, 2, 3):
            raise ParameterError(f"derivative order must be 0..3, got {l}")
        w = self.s / self.M * (2j * np.pi * self.n) ** l
        return w if h is None else w * h

    def evaluate(self, taus, l: int = 0, h=None) -> np.ndarray:
        """Vectorized direct-sum evaluation at an array of points."""
        taus = np.asarray(taus, dtype=float)
        E = np.exp(2j * np.pi * np.multiply.outer(taus, self.n))
        return E @ self.weights(l, h)


def fejer_coefficients(M: int) -> np.ndarray:
    """``s_n`` for ``n = -2M..2M`` by direct summation of the triangle product."""
    s = np.empty(4 * M + 1)
    for idx, n in enumerate(frequencies(M)):
        i = np.arange(max(n - M, -M), min(n + M, M) + 1)
        s[idx] = np.sum((1 - np.abs(i / M)) * (1 - np.abs(n / M - i / M))) / M
    return s


def build_kernel(M: int) -> FejerKernel:
    if M < 2:
        raise ParameterError("the squared Fejer kernel requires M >= 2")
    s = fejer_coefficients(M)
    s.setflags(write=False)
    kpp0 = -4.0 * np.pi**2 * (M**2 - 1) / 3.0
    return FejerKernel(M, s, kpp0)


def kernel_eval(kern: FejerKernel, tau: float, l: int = 0) -> complex:
    """l-th derivative of ``K`` at ``tau``."""
    return complex(kern.evaluate(tau, l))


def _modulation(kern: FejerKernel, psf: PsfRatio, conjugate: bool) -> np.ndarray:
    if psf.M != kern.M:
        raise ShapeError(f"kernel has M={kern.M} but PSF ratio has M={psf.M}")
    return np.conj(psf.g) if conjugate else psf.g


def modulated_kernel_eval(
    kern: FejerKernel, psf: PsfRatio, conjugate: bool, tau: float, l: int = 0
) -> complex:
    """l-th derivative of ``K_g`` (or ``K_gbar`` when ``conjugate``) at ``tau``."""
    return complex(kern.evaluate(tau, l, _modulation(kern, psf, conjugate)))


def modulated_evaluate(kern: FejerKernel, psf: PsfRatio, conjugate: bool, taus, l=0):
    return kern.evaluate(taus, l, _modulation(kern, psf, conjugate))


def evaluate_grid_fft(kern: FejerKernel, grid_size: int, l: int = 0, h=None) -> np.ndarray:
    """Evaluate on the uniform grid ``k / grid_size`` with one inverse FFT."""
    if grid_size < 4 * kern.M + 1:
        raise ParameterError("grid_size must be at least 4M+1")
    buf = np.zeros(grid_size, dtype=complex)
    buf[kern.n % grid_size] = kern.weights(l, h)
    return np.fft.ifft(buf) * grid_size
