"""Convex demixing via its Toeplitz semidefinite characterization, solved by ADMM.

The program is::

    minimize    sum_i  1/2 * (trace(Toep(u_i)) / (4M+1) + t_i)
    subject to  [[Toep(u_i), x_i], [x_i^*, t_i]] >= 0,   i = 1, 2
                y = x_1 + g * x_2

whose optimal value equals ``||x_1||_A + ||x_2||_A``. The splitting keeps the
structured variables ``(x_i, u_i, t_i)`` on one side and two Hermitian PSD
matrices ``Z_i`` on the other; the structured update is a closed-form
projection and the cone update is an eigenvalue clip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import lapack

from superdemix.errors import DomainError, NumericalFailure, ParameterError, ShapeError
from superdemix import trigpoly

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    max_iters: int = 50_000
    rho0: float = 1.0
    rho_min: float = 1e-3
    rho_max: float = 1e3
    alpha: float = 1.0
    adapt_every: int = 10
    balance_ratio: float = 10.0
    dual_grid_factor: int = 64

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be at least 1")
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ParameterError("tolerances must be nonnegative")
        if not 0 < self.alpha < 2:
            raise ParameterError("relaxation alpha must lie in (0, 2)")
        if not (self.rho_min <= self.rho0 <= self.rho_max):
            raise ParameterError("rho0 must lie within [rho_min, rho_max]")


@dataclass(frozen=True)
class DemixProblem:
    y: np.ndarray
    g: np.ndarray
    M: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex)
        g = np.asarray(self.g, dtype=complex)
        N = 4 * self.M + 1
        if self.M < 1 or y.shape != (N,) or g.shape != (N,):
            raise ShapeError(f"y and g must have length 4M+1 = {N}")
        if np.any(g == 0):
            raise DomainError("g must be entrywise nonzero")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "g", g)

    @classmethod
    def from_measurement(cls, meas) -> "DemixProblem":
        return cls(meas.y, meas.psf.g, meas.M)


@dataclass
class DemixSolution:
    x1: np.ndarray
    x2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    t1: float
    t2: float
    p: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    dual_reliable: bool = True
    measurement_residual: float = 0.0
    rho: float = 1.0
    history: list = field(default_factory=list, repr=False)

    @property
    def sdp_objective(self) -> float:
        """Value of the trace-normalized SDP objective without the 1/2 factor."""
        return 2.0 * self.objective

    def blocks(self):
        return (
            psd_block(self.u1, self.x1, self.t1),
            psd_block(self.u2, self.x2, self.t2),
        )


@lru_cache(maxsize=32)
def _lag_index(N: int) -> np.ndarray:
    a = np.arange(N)
    return np.subtract.outer(a, a)


def toeplitz_from_generator(u) -> np.ndarray:
    """Hermitian Toeplitz matrix with first column ``u``."""
    u = np.asarray(u, dtype=complex)
    if abs(u[0].imag) > 1e-12:
        raise DomainError("the first entry of a Toeplitz generator must be real")
    N = len(u)
    ext = np.concatenate([np.conj(u[:0:-1]), u])
    ext[N - 1] = u[0].real
    return ext[_lag_index(N) + N - 1]


def toeplitz_adjoint(H) -> np.ndarray:
    """Adjoint of ``toeplitz_from_generator`` under ``<A, B> = Re tr(A^* B)``.

    For Hermitian ``H`` entry ``d > 0`` is twice the sum of the ``d``-th
    subdiagonal and entry 0 is the trace.
    """
    H = np.asarray(H, dtype=complex)
    N = H.shape[0]
    lag = _lag_index(N).ravel() + N - 1
    flat = H.ravel()
    sums = np.bincount(lag, flat.real, 2 * N - 1) + 1j * np.bincount(lag, flat.imag, 2 * N - 1)
    below = sums[N - 1 :]
    above = sums[N - 1 :: -1]
    out = below + np.conj(above)
    out[0] = sums[N - 1]
    return out


def psd_block(u, x, t) -> np.ndarray:
    N = len(x)
    B = np.empty((N + 1, N + 1), dtype=complex)
    B[:N, :N] = toeplitz_from_generator(u)
    B[:N, N] = x
    B[N, :N] = np.conj(x)
    B[N, N] = t
    return B


def _project_psd(A: np.ndarray) -> np.ndarray:
    """Nearest Hermitian PSD matrix in Frobenius norm.

    Only the nonnegative part of the spectrum is computed; near the optimum
    it is low rank, which makes this markedly cheaper than a full eigh.
    """
    w, V, m, _, info = lapack.zheevr(A, compute_v=1, range="V", vl=0.0, vu=np.inf)
    if info != 0:
        w, V = np.linalg.eigh(A)
        keep = w > 0
        w, V = w[keep], V[:, keep]
    else:
        w, V = w[:m], V[:, :m]
    return (V * w) @ V.conj().T


def _structured_update(S1, S2, y, g, rho):
    """Minimize the augmented Lagrangian over ``(x_i, u_i, t_i)`` in closed form."""
    N = len(y)
    counts = N - np.arange(N)
    out = []
    for S in (S1, S2):
        T = S[:N, :N]
        sig = toeplitz_adjoint(T)
        u = sig / (2.0 * counts)
        u[0] = sig[0].real / N - 1.0 / (2.0 * rho * N)
        t = S[N, N].real - 1.0 / (2.0 * rho)
        sx = 0.5 * (S[:N, N] + np.conj(S[N, :N]))
        out.append((u, sx, t))
    (u1, a, t1), (u2, b, t2) = out
    lam = (y - a - g * b) / (1.0 + np.abs(g) ** 2)
    x1 = a + lam
    x2 = b + np.conj(g) * lam
    return (u1, x1, t1), (u2, x2, t2)


def _combine_dual(lam1, lam2, g):
    """Least-squares fit of ``p`` to ``p = -2 lam1`` and ``conj(g) p = -2 lam2``."""
    return -2.0 * (lam1 + g * lam2) / (1.0 + np.abs(g) ** 2)


def _repair_psd(u, x, t):
    """Shift ``u_0`` and ``t`` by the most negative eigenvalue of the block."""
    w = np.linalg.eigvalsh(psd_block(u, x, t))
    eps = max(0.0, -float(w[0]))
    if eps > 0:
        u = u.copy()
        u[0] += eps
        t += eps
    return u, t


def solve_demix(prob: DemixProblem, opts: SolverOptions | None = None) -> DemixSolution:
    """Solve the convex demixing SDP; never returns a silently wrong answer.

    If ``max_iters`` is exhausted the last iterate is returned with
    ``converged=False`` and the dual flagged unreliable.

    Raises:
        NumericalFailure: on NaN/Inf in the iterates.
    """
    opts = opts or SolverOptions()
    y, g, M = prob.y, prob.g, prob.M
    N = 4 * M + 1
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(g))):
        raise NumericalFailure("measurement or PSF ratio contains NaN/Inf")
    scale = float(np.linalg.norm(y)) / np.sqrt(N)
    if scale == 0.0:
        zero = np.zeros(N, dtype=complex)
        return DemixSolution(
            zero, zero.copy(), zero.copy(), zero.copy(), 0.0, 0.0, zero.copy(),
            0.0, 0.0, 0.0, 0, True,
        )
    yn = y / scale

    n = N + 1
    Z = [np.zeros((n, n), dtype=complex) for _ in range(2)]
    Lam = [np.zeros((n, n), dtype=complex) for _ in range(2)]
    rho = opts.rho0
    sqrt_dim = np.sqrt(2.0 * n * n)
    converged = False
    r_prim = r_dual = np.inf
    it = 0
    for it in range(1, opts.max_iters + 1):
        S = [Z[i] + Lam[i] / rho for i in range(2)]
        parts = _structured_update(S[0], S[1], yn, g, rho)
        Phi = [psd_block(*pp) for pp in parts]
        Z_prev = Z
        a = opts.alpha
        Phi_hat = [a * Phi[i] + (1.0 - a) * Z_prev[i] for i in range(2)]
        Z = [_project_psd(Phi_hat[i] - Lam[i] / rho) for i in range(2)]
        for i in range(2):
            Lam[i] = Lam[i] + rho * (Z[i] - Phi_hat[i])

        r_prim = np.sqrt(sum(np.linalg.norm(Z[i] - Phi[i]) ** 2 for i in range(2)))
        r_dual = rho * np.sqrt(sum(np.linalg.norm(Z[i] - Z_prev[i]) ** 2 for i in range(2)))
        if not (np.isfinite(r_prim) and np.isfinite(r_dual)):
            raise NumericalFailure(f"non-finite residual at iteration {it}")
        nrm_primal = max(
            np.sqrt(sum(np.linalg.norm(A) ** 2 for A in Phi)),
            np.sqrt(sum(np.linalg.norm(A) ** 2 for A in Z)),
        )
        nrm_dual = np.sqrt(sum(np.linalg.norm(A) ** 2 for A in Lam))
        eps_prim = opts.eps_abs * sqrt_dim + opts.eps_rel * nrm_primal
        eps_dual = opts.eps_abs * sqrt_dim + opts.eps_rel * nrm_dual
        if r_prim <= eps_prim and r_dual <= eps_dual:
            converged = True
            break
        if it % opts.adapt_every == 0:
            if r_prim > opts.balance_ratio * r_dual and rho < opts.rho_max:
                rho = min(2.0 * rho, opts.rho_max)
            elif r_dual > opts.balance_ratio * r_prim and rho > opts.rho_min:
                rho = max(rho / 2.0, opts.rho_min)

    (u1, x1, t1), (u2, x2, t2) = parts
    u1, t1 = _repair_psd(u1, x1, t1)
    u2, t2 = _repair_psd(u2, x2, t2)
    p = _combine_dual(Lam[0][:N, N], Lam[1][:N, N], g)
    objective = 0.5 * (u1[0].real + t1 + u2[0].real + t2) * scale
    sol = DemixSolution(
        x1=x1 * scale,
        x2=x2 * scale,
        u1=u1 * scale,
        u2=u2 * scale,
        t1=float(t1 * scale),
        t2=float(t2 * scale),
        p=p,
        objective=float(objective),
        primal_residual=float(r_prim * scale),
        dual_residual=float(r_dual),
        iterations=it,
        converged=converged,
        dual_reliable=converged,
        rho=rho,
    )
    sol.measurement_residual = float(np.linalg.norm(y - sol.x1 - g * sol.x2))
    if not converged:
        log.warning("ADMM stopped after %d iterations without converging", it)
    return sol


def extract_dual(sol: DemixSolution) -> np.ndarray:
    """Dual vector ``p`` maximizing ``Re <p, y>`` under both dual-norm constraints.

    The solver stores it already scaled; this returns a copy and raises if the
    run did not converge.
    """
    if not sol.dual_reliable:
        raise NumericalFailure("dual vector is unreliable: solver did not converge")
    return sol.p.copy()


def dual_norm(p, grid_size: int | None = None) -> float:
    """``sup_tau |sum_n p_n exp(j 2 pi n tau)|`` by grid search and golden-section refinement.

    The returned value is a lower bound on the true supremum.
    """
    p = np.asarray(p, dtype=complex)
    M = (len(p) - 1) // 4
    if grid_size is None:
        grid_size = 64 * max(M, 1)
    if grid_size < 16 * M:
        raise ParameterError("grid_size must be at least 16 M")
    return trigpoly.sup_modulus(p, grid_size)
