import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermofield.quasifree import (WeylWord, charged_nonpositivity_witness, euclid_cov_C, euclid_greens_weyl,
                                   greens_weyl, kms_residual, periodic_kernel, time_reversal_check,
                                   two_point_R, weyl_expectation)
from thermofield.spectral import DiagonalSystem, ModeGrid, TestVector, build_charged

from conftest import random_real_vector, unit

# Frozen values, recomputed from the defining formulas (see the decisions ledger
# for the three decimals that differ from the hand-written examples).
WEYL_A1_B1 = 0.5821725756700977      # exp(-(1 + 2/(e-1))/4)
C1_A1_B2 = 0.4254590641196608        # e^-1 / (1 - e^-2)
HALF_COTH_HALF = 1.0819767068693265
RHO_MINUS = 0.2872169167888683       # 1/(e^1.5 - 1)
RHO_PLUS = 1.5414940825367982        # 1/(e^0.5 - 1)


def single(a, beta):
    return DiagonalSystem.from_frequencies([a], beta)


def test_weyl_expectation_oracles():
    s = single(1.0, 1.0)
    assert weyl_expectation(unit(s, 0)) == pytest.approx(WEYL_A1_B1, rel=1e-14)
    assert weyl_expectation(unit(s, 0, 0.0)) == 1.0
    cold = single(1.0, 800.0)
    assert weyl_expectation(unit(cold, 0, np.sqrt(2))) == pytest.approx(np.exp(-0.5), rel=1e-14)


def test_weyl_expectation_independent_formula():
    # thermal weight via coth, written independently of bose_factor
    s = single(1.0, 1.0)
    assert weyl_expectation(unit(s, 0)) == pytest.approx(np.exp(-0.25 / np.tanh(0.5)), rel=1e-14)


def test_euclidean_covariance_oracles():
    s = single(1.0, 1.0)
    assert euclid_cov_C(0.0, unit(s, 0), unit(s, 0)) == pytest.approx(HALF_COTH_HALF, rel=1e-14)
    s2 = single(1.0, 2.0)
    assert euclid_cov_C(1.0, unit(s2, 0), unit(s2, 0)) == pytest.approx(C1_A1_B2, rel=1e-14)


def test_two_mode_euclidean_word_oracle():
    s2 = single(1.0, 2.0)
    x = unit(s2, 0)
    word = WeylWord.euclidean_word([0.0, 1.0], [x, x])
    c0 = 0.5 / np.tanh(1.0)
    expected = np.exp(-0.5 * (2 * c0 + 2 * C1_A1_B2))
    assert euclid_greens_weyl(word) == pytest.approx(expected, rel=1e-14)


def test_charged_occupations():
    grid = ModeGrid(1.0, 0, 1.0)
    system = build_charged(grid, 1.0, 0.5)
    rho = system.rho
    assert rho[0] == pytest.approx(RHO_PLUS, rel=1e-14)
    assert rho[1] == pytest.approx(RHO_MINUS, rel=1e-14)


def test_two_point_edges(rng):
    s = DiagonalSystem.from_frequencies([0.7, 1.3, 2.2], 1.5)
    x = TestVector(rng.normal(size=3) + 1j * rng.normal(size=3), s)
    y = TestVector(rng.normal(size=3) + 1j * rng.normal(size=3), s)
    assert two_point_R(1j * s.beta, x, y) == pytest.approx(two_point_R(0.0, y, x), abs=1e-13)
    assert two_point_R(0.4, x, unit(s, 0, 0.0)) == 0
    r0 = two_point_R(0.0, x, x)
    assert r0.real == pytest.approx(float(np.sum(np.abs(x.coeffs) ** 2 * s.thermal_weight)), rel=1e-13)
    with pytest.raises(ValueError):
        two_point_R(2j * s.beta, x, y)


def test_kms_residual_and_wrong_shift(rng):
    s = DiagonalSystem.from_frequencies([1.0], 1.0)
    x, y = unit(s, 0, 0.8), unit(s, 0, 1.1)
    assert kms_residual(x, y, 0.3) <= 1e-10
    assert kms_residual(x, y, 0.3, shift=0.5) > 1e-3
    assert kms_residual(unit(s, 0, 0.0), y, 0.3) == pytest.approx(0.0, abs=1e-15)


def test_n1_greens_equals_weyl(rng):
    s = DiagonalSystem.from_frequencies([0.5, 2.0], 1.0)
    x = random_real_vector(rng, s)
    assert greens_weyl(WeylWord((0.37,), (x,))) == pytest.approx(weyl_expectation(x), rel=1e-14)


def test_greens_two_point_against_gaussian_monte_carlo(rng):
    # at t = 0 the word is E[exp(i phi(x)) exp(i phi(y))] for the thermal Gaussian
    s = DiagonalSystem.from_frequencies([1.0], 1.0)
    x, y = unit(s, 0, 0.6), unit(s, 0, -0.3)
    exact = greens_weyl(WeylWord((0.0, 0.0), (x, y)))
    var = 0.5 * s.thermal_weight[0]
    z = rng.normal(scale=np.sqrt(var), size=400_000)
    vals = np.cos((0.6 - 0.3) * z)
    assert abs(vals.mean() - exact.real) < 5 * vals.std() / np.sqrt(z.size)
    assert abs(exact.imag) < 1e-14


def test_euclidean_rejects_non_kappa_real():
    s = single(1.0, 1.0)
    with pytest.raises(ValueError):
        euclid_cov_C(0.1, TestVector([1j], s), unit(s, 0))


def test_euclidean_word_ordering_validated():
    s = single(1.0, 1.0)
    with pytest.raises(ValueError):
        WeylWord.euclidean_word([0.5, 0.1], [unit(s, 0), unit(s, 0)])
    with pytest.raises(ValueError):
        WeylWord.euclidean_word([0.0, 1.5], [unit(s, 0), unit(s, 0)])


def test_charged_witness_behaviour():
    grid = ModeGrid(1.0, 0, 1.0)
    sym = build_charged(grid, 1.0, 0.0)
    assert abs(charged_nonpositivity_witness(sym, [1.0], [1.0], 0.25).imag) <= 1e-12
    asym = build_charged(grid, 1.0, 0.1)
    assert abs(charged_nonpositivity_witness(asym, [1.0], [1.0], 0.0).imag) <= 1e-12
    # complex u, v on a three-mode grid give a genuinely complex value
    grid3 = ModeGrid(1.0, 1, 1.0)
    u, v = [1.0, 0.5j, 0.3], [0.2, 1.0, -0.7j]
    w0 = charged_nonpositivity_witness(build_charged(grid3, 1.0, 0.0), u, v, 0.25)
    w1 = charged_nonpositivity_witness(build_charged(grid3, 1.0, 0.1), u, v, 0.25)
    assert abs(w0.imag) <= 1e-12
    assert abs(w1.imag) > 1e-6


betas = st.sampled_from([0.5, 1.0, 2 * np.pi])
freqs = st.lists(st.floats(0.3, 6.0), min_size=1, max_size=4)


@given(freqs, betas, st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_covariance_reflection_symmetry(a, beta, frac, seed):
    s = DiagonalSystem.from_frequencies(a, beta)
    r = np.random.default_rng(seed)
    x, y = random_real_vector(r, s), random_real_vector(r, s)
    t = frac * beta
    assert euclid_cov_C(t, x, y) == pytest.approx(euclid_cov_C(beta - t, x, y), abs=1e-12)
    assert euclid_cov_C(t, x, y) == pytest.approx(euclid_cov_C(t, y, x), abs=1e-12)


@given(freqs, betas, st.integers(0, 10_000))
def test_covariance_decreases_on_half_period(a, beta, seed):
    s = DiagonalSystem.from_frequencies(a, beta)
    x = random_real_vector(np.random.default_rng(seed), s)
    vals = [euclid_cov_C(t, x, x) for t in np.linspace(0, beta / 2, 12)]
    assert np.all(np.diff(vals) <= 1e-13)
    assert vals[0] == pytest.approx(0.5 * np.sum(x.coeffs.real ** 2 * s.thermal_weight), rel=1e-12)


@given(freqs, betas, st.floats(-3, 3), st.integers(0, 10_000))
def test_kms_identity_property(a, beta, t, seed):
    s = DiagonalSystem.from_frequencies(a, beta)
    r = np.random.default_rng(seed)
    x = TestVector(r.normal(size=s.d) + 1j * r.normal(size=s.d), s)
    y = TestVector(r.normal(size=s.d) + 1j * r.normal(size=s.d), s)
    assert kms_residual(x, y, t) <= 1e-10


@given(freqs, betas, st.floats(-3, 3), st.integers(0, 10_000))
def test_time_reversal_property(a, beta, t, seed):
    s = DiagonalSystem.from_frequencies(a, beta)
    r = np.random.default_rng(seed)
    assert time_reversal_check(random_real_vector(r, s), random_real_vector(r, s), t) <= 1e-10


@given(freqs, betas, st.integers(1, 4), st.integers(0, 10_000))
def test_euclidean_matches_continued_real_time(a, beta, n, seed):
    s = DiagonalSystem.from_frequencies(a, beta)
    r = np.random.default_rng(seed)
    times = np.sort(r.uniform(0, beta, size=n))
    args = [random_real_vector(r, s, 0.7) for _ in range(n)]
    eu = euclid_greens_weyl(WeylWord.euclidean_word(times, args))
    rt = greens_weyl(WeylWord(tuple(1j * times), tuple(args)))
    assert eu > 0
    assert abs(rt - eu) <= 1e-10 * eu


@given(st.floats(0.1, 8.0), st.floats(0.1, 8.0))
def test_periodic_kernel_period(a, beta):
    s = np.linspace(0, beta, 7)
    assert np.allclose(periodic_kernel(s, a, beta), periodic_kernel(s + beta, a, beta), rtol=1e-10)
