import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superdemix.errors import (
    DomainError,
    IllConditionedPsfError,
    ParameterError,
    ShapeError,
)
from superdemix.signal import (
    PointSourceModel,
    PsfRatio,
    atom,
    measure,
    min_separation,
    normalize_raw_channels,
    sample_psf_ratio,
    sample_sources,
    synthesize_signal,
    wrap_distance,
)


def unit_random(rng, n):
    return np.exp(2j * np.pi * rng.random(n))


class TestAtom:
    def test_zero_location_is_all_ones(self):
        np.testing.assert_array_equal(atom(0.0, 2), np.ones(9, dtype=complex))

    def test_half_alternates(self):
        np.testing.assert_allclose(atom(0.5, 1), [1, -1, 1, -1, 1], atol=1e-15)

    def test_conjugate_is_reflection(self):
        c = atom(0.3, 4)
        n = np.arange(-8, 9)
        oracle = np.array([np.exp(-2j * np.pi * k * 0.3) for k in n])
        np.testing.assert_allclose(c, oracle, atol=1e-14)
        np.testing.assert_allclose(np.conj(c), c[::-1], atol=1e-14)

    def test_norm(self):
        assert np.linalg.norm(atom(0.77, 5)) == pytest.approx(np.sqrt(21), rel=1e-14)

    @pytest.mark.parametrize("tau", [-0.1, 1.0, 1.5])
    def test_domain(self, tau):
        with pytest.raises(DomainError):
            atom(tau, 3)

    @given(st.floats(0, 1, exclude_max=True), st.integers(1, 12))
    def test_conjugate_symmetry_property(self, tau, M):
        c = atom(tau, M)
        np.testing.assert_allclose(np.conj(c), c[::-1], atol=1e-12)


class TestSynthesize:
    def test_single_source(self):
        model = PointSourceModel([0.3], [1.0])
        np.testing.assert_allclose(synthesize_signal(model, 4), atom(0.3, 4))

    def test_cancellation_at_dc(self):
        model = PointSourceModel([0.2, 0.7], [1.0, -1.0])
        x = synthesize_signal(model, 2)
        assert abs(x[4]) < 1e-15

    def test_matches_double_loop(self):
        rng = np.random.default_rng(3)
        M = 8
        taus = rng.random(3)
        amps = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        x = synthesize_signal(PointSourceModel(taus, amps), M)
        oracle = np.zeros(4 * M + 1, dtype=complex)
        for i, n in enumerate(range(-2 * M, 2 * M + 1)):
            for k in range(3):
                oracle[i] += amps[k] * np.exp(-2j * np.pi * n * taus[k])
        np.testing.assert_allclose(x, oracle, rtol=1e-12, atol=1e-12)

    def test_linear(self):
        rng = np.random.default_rng(5)
        taus, amps = rng.random(4), rng.standard_normal(4) + 1j
        a = synthesize_signal(PointSourceModel(taus, amps), 6)
        b = synthesize_signal(PointSourceModel(taus, 2 * amps), 6)
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12)

    def test_empty_model_rejected(self):
        with pytest.raises(ParameterError):
            synthesize_signal(PointSourceModel([], []), 4)


class TestModelValidation:
    def test_duplicate_locations(self):
        with pytest.raises(DomainError):
            PointSourceModel([0.1, 0.1], [1, 1])

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            PointSourceModel([1.0], [1])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            PointSourceModel([0.1, 0.2], [1])


class TestMinSeparation:
    def test_wraparound(self):
        assert min_separation(PointSourceModel([0.1, 0.9], [1, 1])) == pytest.approx(0.2)

    def test_antipodal(self):
        assert min_separation(PointSourceModel([0.0, 0.5], [1, 1])) == pytest.approx(0.5)

    def test_single_source_convention(self):
        assert min_separation(PointSourceModel([0.4], [1])) == 1.0

    def test_matches_pairwise_oracle(self):
        taus = np.random.default_rng(11).random(5)
        oracle = min(
            min(abs(a - b), 1 - abs(a - b)) for a, b in itertools.combinations(taus, 2)
        )
        assert min_separation(PointSourceModel(taus, np.ones(5))) == pytest.approx(oracle, abs=1e-15)

    @given(
        st.lists(st.floats(0, 1, exclude_max=True), min_size=2, max_size=8, unique=True),
        st.floats(0, 1, exclude_max=True),
        st.randoms(use_true_random=False),
    )
    def test_shift_and_permutation_invariance(self, taus, c, rnd):
        taus = np.array(taus)
        base = min_separation(PointSourceModel(taus, np.ones(len(taus))))
        perm = taus.copy()
        rnd.shuffle(perm)
        shifted = (taus + c) % 1.0
        if len(np.unique(shifted)) < len(shifted):
            return
        assert min_separation(PointSourceModel(perm, np.ones(len(taus)))) == base
        assert min_separation(PointSourceModel(shifted, np.ones(len(taus)))) == pytest.approx(base, abs=1e-12)


class TestSampleSources:
    def test_single_source(self):
        m = sample_sources(1, 0.9, seed=1)
        assert m.K == 1 and min_separation(m) == 1.0

    def test_deterministic(self):
        a = sample_sources(3, 0.1, seed=42)
        b = sample_sources(3, 0.1, seed=42)
        np.testing.assert_array_equal(a.taus, b.taus)
        np.testing.assert_array_equal(a.amps, b.amps)

    def test_separation_holds_over_many_seeds(self):
        for seed in range(1000):
            assert min_separation(sample_sources(4, 1 / 16, seed=seed)) >= 1 / 16

    def test_infeasible(self):
        with pytest.raises(ParameterError):
            sample_sources(10, 0.1, seed=0)

    def test_unit_circle_amplitudes(self):
        m = sample_sources(6, 0.05, "unit_circle", seed=2)
        np.testing.assert_allclose(np.abs(m.amps), 1.0, atol=1e-15)

    def test_complex_gaussian_has_unit_power(self):
        m = sample_sources(1, 0.0, seed=0)
        amps = np.concatenate([sample_sources(50, 0.001, seed=s).amps for s in range(100)])
        assert np.mean(np.abs(amps) ** 2) == pytest.approx(1.0, abs=0.05)
        assert m.K == 1

    def test_unknown_law(self):
        with pytest.raises(ParameterError):
            sample_sources(2, 0.1, "laplace", seed=0)


class TestPsfRatio:
    def test_unit_modulus(self):
        g = sample_psf_ratio(8, seed=9).g
        assert np.max(np.abs(np.abs(g) - 1)) < 1e-15

    def test_zero_mean(self):
        g0 = np.array([sample_psf_ratio(8, seed=s).g[16] for s in range(10_000)])
        assert abs(g0.mean()) <= 0.05

    def test_reproducible(self):
        np.testing.assert_array_equal(sample_psf_ratio(4, 7).g, sample_psf_ratio(4, 7).g)

    def test_rejects_zero_entry(self):
        g = np.ones(9, dtype=complex)
        g[3] = 0
        with pytest.raises(DomainError):
            PsfRatio(g)

    def test_length_check(self):
        with pytest.raises(ShapeError):
            PsfRatio(np.ones(8), 2)


class TestMeasure:
    def test_no_second_channel(self):
        rng = np.random.default_rng(0)
        x1 = rng.standard_normal(17) + 0j
        np.testing.assert_array_equal(measure(x1, np.zeros(17), sample_psf_ratio(4, 1)).y, x1)

    def test_unit_psf(self):
        x2 = np.arange(17) + 1j
        np.testing.assert_array_equal(measure(np.zeros(17), x2, PsfRatio.ones(4)).y, x2)

    def test_entrywise_oracle(self):
        rng = np.random.default_rng(1)
        x1, x2 = (rng.standard_normal(17) + 1j * rng.standard_normal(17) for _ in range(2))
        psf = sample_psf_ratio(4, 2)
        y = measure(x1, x2, psf).y
        for i in range(17):
            assert y[i] == pytest.approx(x1[i] + psf.g[i] * x2[i], abs=1e-15)
        np.testing.assert_allclose(np.abs(y - x1), np.abs(x2), rtol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            measure(np.zeros(9), np.zeros(17), PsfRatio.ones(4))


class TestNormalize:
    def test_identity(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal(9) + 0j
        g2 = unit_random(rng, 9)
        yn, psf = normalize_raw_channels(y, np.ones(9), g2)
        np.testing.assert_allclose(yn, y)
        np.testing.assert_allclose(psf.g, g2)

    def test_equal_psfs(self):
        g = unit_random(np.random.default_rng(3), 9)
        _, psf = normalize_raw_channels(np.ones(9), g, g)
        np.testing.assert_allclose(psf.g, 1.0)

    def test_unit_modulus_preserved(self):
        rng = np.random.default_rng(4)
        _, psf = normalize_raw_channels(np.ones(17), unit_random(rng, 17), unit_random(rng, 17))
        np.testing.assert_allclose(np.abs(psf.g), 1.0, atol=1e-14)

    def test_floor(self):
        g1 = np.ones(9, dtype=complex)
        g1[2] = 1e-10
        with pytest.raises(IllConditionedPsfError):
            normalize_raw_channels(np.ones(9), g1, np.ones(9))

    def test_raw_mixture_normalizes_to_model(self):
        rng = np.random.default_rng(6)
        M = 4
        g1, g2 = unit_random(rng, 17), unit_random(rng, 17)
        x1 = synthesize_signal(PointSourceModel([0.1], [2.0]), M)
        x2 = synthesize_signal(PointSourceModel([0.6], [1j]), M)
        y, psf = normalize_raw_channels(g1 * x1 + g2 * x2, g1, g2)
        np.testing.assert_allclose(y, measure(x1, x2, psf).y, atol=1e-13)


def test_wrap_distance_symmetric():
    assert wrap_distance(0.95, 0.05) == pytest.approx(0.1)
    assert wrap_distance(0.05, 0.95) == pytest.approx(0.1)
