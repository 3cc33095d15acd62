"""Dual certificate construction and verification.

The certificate polynomials are combinations of shifted squared Fejer
kernels (and their PSF-modulated variants) whose coefficients solve a
``2(K1+K2)`` interpolation system: each polynomial must equal the complex
sign of the amplitude at its own channel's sources and be stationary there.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from superdemix import trigpoly
from superdemix.errors import InvertibilityError, ParameterError, ShapeError
from superdemix.kernel import FejerKernel
from superdemix.signal import PointSourceModel, PsfRatio, frequencies, wrap_distance

# Bounds quoted for the well-separated (Delta >= 1/M) regime.
I_MINUS_W_BOUND = 0.3623
W_NORM_BOUND = 1.3623
W_INV_BOUND = 1.568
WG_DELTA = 0.25
WG_INVERTIBLE_LIMIT = 0.6376

SINGULAR_COND = 1e12
REFINE_COND = 1e8


def operator_norm(A, method: str = "power", iters: int = 200, tol: float = 1e-10) -> float:
    """Largest singular value, by power iteration on ``A^* A`` or by SVD."""
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return 0.0
    if method == "svd":
        return float(np.linalg.svd(A, compute_uv=False)[0])
    if method != "power":
        raise ParameterError(f"unknown norm method {method!r}")
    G = A.conj().T @ A
    scale = np.linalg.norm(G)
    if scale == 0.0:
        return 0.0
    # Repeated squaring raises G to the power 2^k, so the ratio of the two
    # leading eigenvalues is squared at every step. Plain power iteration on
    # the result then converges even when that ratio is close to one.
    B = G / scale
    for _ in range(48):
        B2 = B @ B
        nb = np.linalg.norm(B2)
        if nb == 0.0 or not np.isfinite(nb):
            break
        B2 /= nb
        done = np.linalg.norm(B2 - B) <= 1e-14
        B = B2
        if done:
            break
    v = np.ones(G.shape[0], dtype=complex) + 0.5j * np.arange(G.shape[0]) / G.shape[0]
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = B @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        Gv = G @ v
        lam = float(np.real(np.vdot(v, Gv)))
        if np.linalg.norm(Gv - lam * v) <= tol * max(abs(lam), 1e-300):
            break
    return float(np.sqrt(max(lam, 0.0)))


@dataclass(frozen=True)
class DualPolynomial:
    """``P(tau) = sum p_n e^{j2pi n tau}`` and ``Q(tau) = sum p_n conj(g_n) e^{j2pi n tau}``."""

    p: np.ndarray
    psf: PsfRatio

    @property
    def q(self) -> np.ndarray:
        return self.p * np.conj(self.psf.g)

    def P(self, taus, deriv: int = 0):
        return trigpoly.evaluate(self.p, taus, deriv)

    def Q(self, taus, deriv: int = 0):
        return trigpoly.evaluate(self.q, taus, deriv)


@dataclass(frozen=True)
class CertificateSystem:
    W: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    Wg: np.ndarray
    Wgbar: np.ndarray
    kern: FejerKernel
    psf: PsfRatio
    sources1: PointSourceModel
    sources2: PointSourceModel
    alpha1: np.ndarray | None = None
    beta1: np.ndarray | None = None
    alpha2: np.ndarray | None = None
    beta2: np.ndarray | None = None
    residual: float | None = None
    cond: float | None = None

    @property
    def K1(self) -> int:
        return self.sources1.K

    @property
    def K2(self) -> int:
        return self.sources2.K

    @property
    def solved(self) -> bool:
        return self.alpha1 is not None

    def _require_solved(self):
        if not self.solved:
            raise ParameterError("coefficients have not been solved yet")

    def kernel_sum_P(self, taus, deriv: int = 0) -> np.ndarray:
        """``P`` written directly as a sum of shifted (modulated) kernels."""
        self._require_solved()
        return self._kernel_sum(taus, deriv, h1=None, h2=self.psf.g)

    def kernel_sum_Q(self, taus, deriv: int = 0) -> np.ndarray:
        """``Q`` as a kernel sum; coincides with the ``p``-form when ``|g_n| = 1``."""
        self._require_solved()
        return self._kernel_sum(taus, deriv, h1=np.conj(self.psf.g), h2=None)

    def _kernel_sum(self, taus, deriv, h1, h2):
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        k = self.kern
        out = np.zeros(taus.shape, dtype=complex)
        for tk, a, b, h in (
            (self.sources1.taus, self.alpha1, self.beta1, h1),
            (self.sources2.taus, self.alpha2, self.beta2, h2),
        ):
            if len(tk) == 0:
                continue
            lag = np.subtract.outer(taus, tk)
            out += k.evaluate(lag, deriv, h) @ a + k.evaluate(lag, deriv + 1, h) @ b
        return out


def _block(kern: FejerKernel, rows, cols, h) -> np.ndarray:
    lag = np.subtract.outer(np.asarray(rows, float), np.asarray(cols, float))
    c = 1.0 / kern.sqrt_abs_kpp0
    K0, K1, K2 = (kern.evaluate(lag, l, h) for l in range(3))
    return np.block([[K0, c * K1], [-c * K1, -(c**2) * K2]])


def build_system(
    kern: FejerKernel, psf: PsfRatio, sources1: PointSourceModel, sources2: PointSourceModel
) -> CertificateSystem:
    """Assemble the block interpolation matrix ``W = [[W1, Wg], [Wgbar, W2]]``.

    Either channel may be empty, in which case its rows and columns are omitted.
    """
    if psf.M != kern.M:
        raise ShapeError(f"kernel has M={kern.M} but PSF ratio has M={psf.M}")
    if sources1.K + sources2.K == 0:
        raise ParameterError("at least one source is required")
    g, gbar = psf.g, np.conj(psf.g)
    t1, t2 = sources1.taus, sources2.taus
    W1 = _block(kern, t1, t1, None)
    W2 = _block(kern, t2, t2, None)
    Wg = _block(kern, t1, t2, g)
    Wgbar = _block(kern, t2, t1, gbar)
    W = np.block([[W1, Wg], [Wgbar, W2]])
    return CertificateSystem(W, W1, W2, Wg, Wgbar, kern, psf, sources1, sources2)


def _check_signs(signs, K, name):
    signs = np.atleast_1d(np.asarray(signs, dtype=complex))
    if signs.shape != (K,):
        raise ShapeError(f"{name} must have length {K}")
    if K and np.max(np.abs(np.abs(signs) - 1.0)) > 1e-9:
        raise ParameterError(f"{name} must have unit modulus")
    return signs


def solve_coefficients(
    sys: CertificateSystem, signs1, signs2, allow_singular: bool = False
) -> CertificateSystem:
    """Solve the interpolation system for ``alpha_i`` and ``beta_i``.

    LU with partial pivoting, plus one refinement step when the condition
    number exceeds ``REFINE_COND``. With ``allow_singular`` a numerically
    singular system is solved in the minimum-norm least-squares sense
    instead of raising.

    Raises:
        InvertibilityError: condition number above ``SINGULAR_COND``.
    """
    K1, K2 = sys.K1, sys.K2
    u1 = _check_signs(signs1, K1, "signs1")
    u2 = _check_signs(signs2, K2, "signs2")
    rhs = np.concatenate([u1, np.zeros(K1), u2, np.zeros(K2)]).astype(complex)
    W = sys.W
    cond = float(np.linalg.cond(W))
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        if not allow_singular:
            raise InvertibilityError(
                f"certificate system is numerically singular (cond={cond:.3g}, "
                f"||Wg||={operator_norm(sys.Wg, 'svd'):.4f}; invertibility is "
                f"guaranteed only for ||Wg|| < {WG_INVERTIBLE_LIMIT})",
                cond=cond,
                wg_norm=operator_norm(sys.Wg, "svd"),
            )
        coef = np.linalg.lstsq(W, rhs, rcond=None)[0]
    else:
        lu = scipy.linalg.lu_factor(W)
        coef = scipy.linalg.lu_solve(lu, rhs)
        if cond > REFINE_COND:
            coef = coef + scipy.linalg.lu_solve(lu, rhs - W @ coef)
    residual = float(np.linalg.norm(W @ coef - rhs) / np.linalg.norm(rhs))
    s = sys.kern.sqrt_abs_kpp0
    return dataclasses.replace(
        sys,
        alpha1=coef[:K1],
        beta1=coef[K1 : 2 * K1] / s,
        alpha2=coef[2 * K1 : 2 * K1 + K2],
        beta2=coef[2 * K1 + K2 :] / s,
        residual=residual,
        cond=cond,
    )


def certificate_polynomials(sys: CertificateSystem) -> DualPolynomial:
    """Coefficient vector ``p`` realizing the kernel-sum certificate."""
    sys._require_solved()
    kern = sys.kern
    n = frequencies(kern.M)
    jw = 2j * np.pi * n

    def channel(taus, a, b):
        if len(taus) == 0:
            return np.zeros(len(n), dtype=complex)
        E = np.exp(-2j * np.pi * np.outer(n, taus))
        return (E * (a[None, :] + jw[:, None] * b[None, :])).sum(axis=1)

    p = kern.s / kern.M * (
        channel(sys.sources1.taus, sys.alpha1, sys.beta1)
        + sys.psf.g * channel(sys.sources2.taus, sys.alpha2, sys.beta2)
    )
    return DualPolynomial(p, sys.psf)


@dataclass
class CertificateReport:
    interp_err_P: float
    interp_err_Q: float
    deriv_err_P: float
    deriv_err_Q: float
    offgrid_max_P: float
    offgrid_max_Q: float
    margin: float
    exclusion_radius: float
    grid_size: int
    profile_ok: bool = True
    norms: dict = field(default_factory=dict)

    INTERP_TOL = 1e-6

    @property
    def valid(self) -> bool:
        return (
            max(self.interp_err_P, self.interp_err_Q) <= self.INTERP_TOL
            and max(self.offgrid_max_P, self.offgrid_max_Q) <= 1.0 - self.margin
            and self.profile_ok
        )

    def to_dict(self) -> dict:
        return {
            "interp_err_P": self.interp_err_P,
            "interp_err_Q": self.interp_err_Q,
            "deriv_err_P": self.deriv_err_P,
            "deriv_err_Q": self.deriv_err_Q,
            "offgrid_max_P": self.offgrid_max_P,
            "offgrid_max_Q": self.offgrid_max_Q,
            "margin": self.margin,
            "exclusion_radius": self.exclusion_radius,
            "grid_size": self.grid_size,
            "norms": dict(self.norms),
            "valid": self.valid,
        }


def _check_points(taus, grid_size: int) -> np.ndarray:
    """Uniform grid plus midpoints between circularly adjacent sources."""
    grid = np.arange(grid_size) / grid_size
    taus = np.sort(np.asarray(taus, dtype=float))
    if len(taus) >= 2:
        nxt = np.concatenate([taus[1:], [taus[0] + 1.0]])
        grid = np.concatenate([grid, ((taus + nxt) / 2.0) % 1.0])
    return grid


def _off_support(poly_vals_fn, support, grid_size, radius, M, margin, quadratic):
    pts = _check_points(support, grid_size)
    vals = np.abs(poly_vals_fn(pts))
    if len(support):
        dist = wrap_distance(pts[:, None], np.asarray(support)[None, :]).min(axis=1)
    else:
        dist = np.full(pts.shape, np.inf)
    far = dist > radius
    off_max = float(vals[far].max()) if far.any() else 0.0
    ok = True
    if quadratic and len(support):
        ann = (dist >= 0.1 / M) & (dist <= radius)
        ok = bool(np.all(vals[ann] <= 1.0 - margin * (dist[ann] * M) ** 2))
    return off_max, ok


def verify_certificate(
    dual: DualPolynomial,
    sources1: PointSourceModel,
    sources2: PointSourceModel,
    signs1,
    signs2,
    grid_size: int | None = None,
    margin: float = 1e-3,
    exclusion_radius: float | None = None,
    quadratic_profile: bool = False,
) -> CertificateReport:
    """Check the optimality conditions on a finite grid.

    VALID requires interpolation errors at most 1e-6 and ``|P|`` (resp.
    ``|Q|``) at most ``1 - margin`` at all check points farther than
    ``exclusion_radius`` from channel 1 (resp. channel 2). The optional
    quadratic profile additionally bounds the annulus
    ``[0.1/M, exclusion_radius]`` by ``1 - margin (M d)^2``.
    """
    M = dual.psf.M
    if grid_size is None:
        grid_size = 64 * M
    if grid_size < 64 * M:
        raise ParameterError("grid_size must be at least 64 M")
    if exclusion_radius is None:
        exclusion_radius = 0.5 / M
    signs1 = _check_signs(signs1, sources1.K, "signs1")
    signs2 = _check_signs(signs2, sources2.K, "signs2")
    s = np.sqrt(4.0 * np.pi**2 * (M**2 - 1) / 3.0) if M > 1 else 1.0

    def err(vals, target):
        return float(np.max(np.abs(vals - target))) if len(target) else 0.0

    iP = err(dual.P(sources1.taus), signs1)
    iQ = err(dual.Q(sources2.taus), signs2)
    dP = err(dual.P(sources1.taus, 1) / s, np.zeros(sources1.K))
    dQ = err(dual.Q(sources2.taus, 1) / s, np.zeros(sources2.K))
    offP, okP = _off_support(dual.P, sources1.taus, grid_size, exclusion_radius, M, margin, quadratic_profile)
    offQ, okQ = _off_support(dual.Q, sources2.taus, grid_size, exclusion_radius, M, margin, quadratic_profile)
    return CertificateReport(
        interp_err_P=iP,
        interp_err_Q=iQ,
        deriv_err_P=dP,
        deriv_err_Q=dQ,
        offgrid_max_P=offP,
        offgrid_max_Q=offQ,
        margin=margin,
        exclusion_radius=exclusion_radius,
        grid_size=grid_size,
        profile_ok=okP and okQ,
    )


@dataclass(frozen=True)
class DiagnosticsRecord:
    norm_I_minus_W1: float
    norm_I_minus_W2: float
    norm_W1: float
    norm_W2: float
    norm_W1_inv: float
    norm_W2_inv: float
    norm_Wg: float
    norm_W_inv: float
    in_theory_regime: bool

    @property
    def diag_blocks_ok(self) -> bool:
        return max(self.norm_I_minus_W1, self.norm_I_minus_W2) <= I_MINUS_W_BOUND

    @property
    def diag_norms_ok(self) -> bool:
        return max(self.norm_W1, self.norm_W2) <= W_NORM_BOUND

    @property
    def diag_inverse_ok(self) -> bool:
        return max(self.norm_W1_inv, self.norm_W2_inv) <= W_INV_BOUND

    @property
    def wg_within_delta(self) -> bool:
        return self.norm_Wg <= WG_DELTA

    @property
    def invertibility_guaranteed(self) -> bool:
        """``||I - W|| <= max ||I - W_i|| + ||Wg|| < 1``."""
        return (
            self.norm_Wg < WG_INVERTIBLE_LIMIT
            and max(self.norm_I_minus_W1, self.norm_I_minus_W2) + self.norm_Wg < 1.0
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.update(
            diag_blocks_ok=self.diag_blocks_ok,
            diag_norms_ok=self.diag_norms_ok,
            diag_inverse_ok=self.diag_inverse_ok,
            wg_within_delta=self.wg_within_delta,
            invertibility_guaranteed=self.invertibility_guaranteed,
        )
        return d


def _inv_norm(A) -> float:
    if A.size == 0:
        return 0.0
    smin = np.linalg.svd(A, compute_uv=False)[-1]
    return float(np.inf if smin == 0 else 1.0 / smin)


def invertibility_diagnostics(sys: CertificateSystem, method: str = "power") -> DiagnosticsRecord:
    def eye_minus(A):
        return np.eye(A.shape[0]) - A

    return DiagnosticsRecord(
        norm_I_minus_W1=operator_norm(eye_minus(sys.W1), method),
        norm_I_minus_W2=operator_norm(eye_minus(sys.W2), method),
        norm_W1=operator_norm(sys.W1, method),
        norm_W2=operator_norm(sys.W2, method),
        norm_W1_inv=_inv_norm(sys.W1),
        norm_W2_inv=_inv_norm(sys.W2),
        norm_Wg=operator_norm(sys.Wg, method),
        norm_W_inv=_inv_norm(sys.W),
        in_theory_regime=sys.kern.in_theory_regime,
    )
