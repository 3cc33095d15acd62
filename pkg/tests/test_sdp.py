import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superdemix.errors import DomainError, NumericalFailure, ParameterError, ShapeError
from superdemix.sdp import (
    DemixProblem,
    SolverOptions,
    dual_norm,
    extract_dual,
    psd_block,
    solve_demix,
    toeplitz_adjoint,
    toeplitz_from_generator,
)
from superdemix.signal import (
    PointSourceModel,
    PsfRatio,
    atom,
    measure,
    sample_psf_ratio,
    synthesize_signal,
)


def problem(M, src1, src2, psf_seed=0):
    psf = sample_psf_ratio(M, psf_seed)
    x1 = synthesize_signal(src1, M) if src1.K else np.zeros(4 * M + 1, complex)
    x2 = synthesize_signal(src2, M) if src2.K else np.zeros(4 * M + 1, complex)
    return DemixProblem.from_measurement(measure(x1, x2, psf)), x1, x2


@pytest.fixture(scope="module")
def single_atom():
    M = 8
    src1 = PointSourceModel([0.3], [1.0])
    prob, x1, x2 = problem(M, src1, PointSourceModel([], [], 2))
    return prob, x1, solve_demix(prob)


@pytest.fixture(scope="module")
def two_by_two():
    M = 8
    src1 = PointSourceModel([0.1, 0.55], [1.2, -0.7j])
    src2 = PointSourceModel([0.3, 0.8], [0.8 + 0.3j, 1.0], 2)
    prob, x1, x2 = problem(M, src1, src2, 3)
    return prob, src1, src2, x1, x2, solve_demix(prob)


class TestToeplitz:
    def test_first_unit_vector_gives_identity(self):
        e0 = np.zeros(7, complex)
        e0[0] = 1
        np.testing.assert_array_equal(toeplitz_from_generator(e0), np.eye(7))

    def test_entries_follow_lag(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        u[0] = u[0].real
        T = toeplitz_from_generator(u)
        for i in range(5):
            for k in range(5):
                expected = u[i - k] if i >= k else np.conj(u[k - i])
                assert T[i, k] == pytest.approx(expected)

    def test_single_atom_generator_is_psd_rank_one(self):
        M, tau = 4, 0.37
        c = atom(tau, M)
        u = np.exp(-2j * np.pi * np.arange(4 * M + 1) * tau)
        T = toeplitz_from_generator(u)
        np.testing.assert_allclose(T, np.outer(c, c.conj()), atol=1e-12)
        w = np.linalg.eigvalsh(T)
        assert w[0] >= -1e-10
        assert w[-1] == pytest.approx(4 * M + 1)

    def test_complex_first_entry_rejected(self):
        with pytest.raises(DomainError):
            toeplitz_from_generator(np.array([1j, 0, 0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**31))
    def test_adjoint_identity(self, N, seed):
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        u[0] = u[0].real
        A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        H = A + A.conj().T
        lhs = np.real(np.vdot(toeplitz_from_generator(u), H))
        rhs = np.real(np.vdot(u, toeplitz_adjoint(H)))
        assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(lhs)))

    def test_adjoint_diagonal_sums(self):
        H = np.arange(16, dtype=complex).reshape(4, 4)
        H = H + H.T
        adj = toeplitz_adjoint(H)
        assert adj[0] == pytest.approx(np.trace(H))
        assert adj[1] == pytest.approx(2 * np.sum(np.diag(H, -1)))

    def test_psd_block_layout(self):
        u = np.array([2.0, 0.5, 0.1], dtype=complex)
        x = np.array([1, 2j, 3])
        B = psd_block(u, x, 4.0)
        assert B.shape == (4, 4)
        np.testing.assert_array_equal(B[:3, 3], x)
        np.testing.assert_array_equal(B[3, :3], np.conj(x))
        assert B[3, 3] == 4.0


class TestOptions:
    @pytest.mark.parametrize(
        "kw", [{"max_iters": 0}, {"eps_abs": -1.0}, {"alpha": 2.0}, {"rho0": 1e4}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            SolverOptions(**kw)

    def test_problem_shape(self):
        with pytest.raises(ShapeError):
            DemixProblem(np.zeros(10), np.ones(17), 4)

    def test_problem_zero_psf(self):
        g = np.ones(17, complex)
        g[0] = 0
        with pytest.raises(DomainError):
            DemixProblem(np.ones(17), g, 4)


class TestSingleAtom:
    def test_recovers_signal(self, single_atom):
        prob, x1, sol = single_atom
        assert sol.converged
        assert np.linalg.norm(sol.x1 - x1) <= 1e-4 * np.linalg.norm(x1)
        assert np.linalg.norm(sol.x2) <= 1e-4 * np.linalg.norm(prob.y)

    def test_objective_is_atomic_norm(self, single_atom):
        _, _, sol = single_atom
        assert sol.objective == pytest.approx(1.0, abs=1e-3)
        assert sol.sdp_objective == pytest.approx(2 * sol.objective)

    def test_strong_duality(self, single_atom):
        prob, _, sol = single_atom
        dual_value = np.real(np.vdot(sol.p, prob.y))
        assert dual_value == pytest.approx(sol.objective, abs=1e-3)

    def test_dual_feasibility(self, single_atom):
        prob, _, sol = single_atom
        assert dual_norm(sol.p, 4096) <= 1 + 1e-3
        assert dual_norm(np.conj(prob.g) * sol.p, 4096) <= 1 + 1e-3

    def test_dual_interpolates_sign(self, single_atom):
        _, _, sol = single_atom
        n = np.arange(-16, 17)
        P = np.sum(sol.p * np.exp(2j * np.pi * n * 0.3))
        assert P == pytest.approx(1.0, abs=1e-3)

    def test_psd_blocks(self, single_atom):
        _, _, sol = single_atom
        for B in sol.blocks():
            np.testing.assert_allclose(B, B.conj().T, atol=1e-12)
            assert np.linalg.eigvalsh(B)[0] >= -1e-8 * np.linalg.norm(B)


class TestTwoChannels:
    def test_recovery(self, two_by_two):
        prob, src1, src2, x1, x2, sol = two_by_two
        assert sol.converged
        nmse = (np.linalg.norm(sol.x1 - x1) ** 2 + np.linalg.norm(sol.x2 - x2) ** 2) / (
            np.linalg.norm(x1) ** 2 + np.linalg.norm(x2) ** 2
        )
        assert nmse <= 1e-4

    def test_objective_is_sum_of_magnitudes(self, two_by_two):
        _, src1, src2, *_, sol = two_by_two
        total = np.sum(np.abs(src1.amps)) + np.sum(np.abs(src2.amps))
        assert sol.objective == pytest.approx(total, rel=1e-3)

    def test_measurement_consistency(self, two_by_two):
        prob, *_, sol = two_by_two
        assert sol.measurement_residual <= 1e-8 * np.linalg.norm(prob.y)

    def test_psd_invariant(self, two_by_two):
        *_, sol = two_by_two
        for B in sol.blocks():
            w = np.linalg.eigvalsh(B)
            assert w[0] >= -1e-8 * max(1.0, w[-1])

    def test_extract_dual(self, two_by_two):
        *_, sol = two_by_two
        p = extract_dual(sol)
        np.testing.assert_array_equal(p, sol.p)
        assert p is not sol.p


class TestEdgeCases:
    def test_zero_measurement(self):
        M = 4
        sol = solve_demix(DemixProblem(np.zeros(17), sample_psf_ratio(M, 0).g, M))
        assert sol.converged and sol.iterations == 0
        assert sol.objective == 0.0
        assert not np.any(sol.x1) and not np.any(sol.x2)

    def test_scale_equivariance(self):
        M = 6
        src1 = PointSourceModel([0.2], [1.0 + 0.5j])
        src2 = PointSourceModel([0.7], [-0.8], 2)
        prob, *_ = problem(M, src1, src2, 1)
        a = solve_demix(prob)
        b = solve_demix(DemixProblem(2 * prob.y, prob.g, M))
        assert b.objective == pytest.approx(2 * a.objective, rel=1e-6)
        np.testing.assert_allclose(b.x1, 2 * a.x1, atol=1e-6 * np.linalg.norm(prob.y))
        np.testing.assert_allclose(b.x2, 2 * a.x2, atol=1e-6 * np.linalg.norm(prob.y))
        np.testing.assert_allclose(b.p, a.p, atol=1e-6)

    def test_iteration_cap_flags_unreliable_dual(self):
        prob, *_ = problem(4, PointSourceModel([0.3], [1.0]), PointSourceModel([0.8], [1.0], 2))
        sol = solve_demix(prob, SolverOptions(max_iters=1))
        assert not sol.converged and not sol.dual_reliable
        assert sol.iterations == 1
        with pytest.raises(NumericalFailure):
            extract_dual(sol)

    def test_nan_input(self):
        y = np.ones(17, complex)
        y[3] = np.nan
        with pytest.raises(NumericalFailure):
            solve_demix(DemixProblem(y, np.ones(17), 4))

    def test_unit_psf_is_symmetric_in_channels(self):
        M = 4
        x = synthesize_signal(PointSourceModel([0.4], [1.0]), M)
        sol = solve_demix(DemixProblem(x, PsfRatio.ones(M).g, M))
        np.testing.assert_allclose(sol.x1, sol.x2, atol=1e-4)
        assert sol.objective == pytest.approx(1.0, abs=1e-3)


class TestDualNorm:
    def test_impulse(self):
        p = np.zeros(33, complex)
        p[16] = 1
        assert dual_norm(p) == pytest.approx(1.0, abs=1e-12)

    def test_scaled_atom(self):
        M = 8
        assert dual_norm(atom(0.5, M) / (4 * M + 1)) == pytest.approx(1.0, abs=1e-9)

    def test_off_grid_atom(self):
        M = 8
        assert dual_norm(atom(0.123456, M) / (4 * M + 1)) == pytest.approx(1.0, abs=1e-9)

    @given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.integers(0, 1000))
    def test_homogeneity(self, c, seed):
        rng = np.random.default_rng(seed)
        p = rng.standard_normal(17) + 1j * rng.standard_normal(17)
        assert dual_norm(c * p) == pytest.approx(abs(c) * dual_norm(p), rel=1e-12)

    def test_bounded_by_l1(self):
        rng = np.random.default_rng(4)
        p = rng.standard_normal(33) + 1j * rng.standard_normal(33)
        grid = np.arange(8192) / 8192
        n = np.arange(-16, 17)
        brute = np.max(np.abs(np.exp(2j * np.pi * np.outer(grid, n)) @ p))
        val = dual_norm(p)
        assert brute - 1e-6 <= val <= np.sum(np.abs(p)) + 1e-12

    def test_coarse_grid_rejected(self):
        with pytest.raises(ParameterError):
            dual_norm(np.ones(33), grid_size=64)


def interior_point_reference(y, g, M):
    """The same SDP written directly for a generic conic solver."""
    cp = pytest.importorskip("cvxpy")
    N = 4 * M + 1
    Z = [cp.Variable((N + 1, N + 1), hermitian=True) for _ in range(2)]
    cons = [z >> 0 for z in Z]
    for z in Z:
        cons += [z[i, j] == z[i + 1, j + 1] for i in range(N - 1) for j in range(N - 1)]
    cons.append(y == Z[0][:N, N] + cp.multiply(g, Z[1][:N, N]))
    obj = sum(0.5 * (cp.real(z[0, 0]) + cp.real(z[N, N])) for z in Z)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver="CLARABEL")
    return prob.value, Z[0].value[:N, N], Z[1].value[:N, N]


@pytest.mark.slow
class TestAgainstConicSolver:
    M = 4

    def test_recoverable_instance(self):
        src1 = PointSourceModel([0.1, 0.6], [1 + 0.5j, -0.7])
        src2 = PointSourceModel([0.35], [0.9j], 2)
        prob, *_ = problem(self.M, src1, src2, 2)
        ref, x1, x2 = interior_point_reference(prob.y, prob.g, self.M)
        sol = solve_demix(prob)
        assert sol.objective == pytest.approx(ref, rel=1e-5)
        assert np.linalg.norm(sol.x1 - x1) <= 1e-4 * np.linalg.norm(x1)
        assert np.linalg.norm(sol.x2 - x2) <= 1e-4 * np.linalg.norm(x2)

    def test_generic_measurement(self):
        rng = np.random.default_rng(0)
        N = 4 * self.M + 1
        y = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        g = sample_psf_ratio(self.M, 2).g
        ref, *_ = interior_point_reference(y, g, self.M)
        assert solve_demix(DemixProblem(y, g, self.M)).objective == pytest.approx(ref, rel=1e-5)
