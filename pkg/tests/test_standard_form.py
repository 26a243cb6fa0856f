import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermofield.standard_form import (FiniteKmsSystem, OscillatorSpec, feynman_kac_crosscheck,
                                       gauge_sector_check, gibbs_expectation, gns_build, kms_verify,
                                       liouvillean_verify, operator_correlation, perturb, random_kms_system,
                                       shifted_frequency_correlation, structure_residuals, trotter_correlation,
                                       truncation_budget)
from thermofield.quasifree import periodic_kernel

X = (lambda x: x)


def test_two_level_vector_oracle():
    objs = gns_build(FiniteKmsSystem(np.diag([0.0, 1.0]), 1.0))
    expected = np.array([1.0, 0.0, 0.0, np.exp(-0.5)]) / np.sqrt(1 + np.exp(-1.0))
    assert np.allclose(objs.omega, expected, atol=1e-15)
    assert np.linalg.norm(objs.L @ objs.omega) <= 1e-15
    assert objs.state(np.eye(2)) == pytest.approx(1.0, abs=1e-15)


def test_structure_identities(rng):
    objs = gns_build(random_kms_system(5, 1.3, rng))
    res = structure_residuals(objs)
    assert all(v <= 1e-12 for v in res.values()), res
    psi = rng.normal(size=25) + 1j * rng.normal(size=25)
    assert np.allclose(objs.J(objs.J(psi)), psi, atol=0)


def test_state_matches_trace_formula(rng):
    system = random_kms_system(4, 0.7, rng)
    objs = gns_build(system)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert objs.state(a) == pytest.approx(gibbs_expectation(system.H, 0.7, a), abs=1e-12)


def test_kms_identity_and_wrong_beta(rng):
    objs = gns_build(random_kms_system(4, 1.0, rng))
    ts = np.linspace(-2, 2, 9)
    eye = np.eye(4)
    assert kms_verify(objs, eye, eye, ts) == pytest.approx(0.0, abs=1e-14)
    a = rng.normal(size=(4, 4)); a = a + a.T
    b = rng.normal(size=(4, 4)); b = b + b.T
    assert kms_verify(objs, a, b, ts) <= 1e-8
    assert kms_verify(objs, a, b, ts, beta_shift=0.5) > 1e-3


def test_perturbation_trivial_cases(rng):
    system = random_kms_system(3, 1.0, rng)
    objs = gns_build(system)
    assert np.allclose(perturb(objs, np.zeros(3)).omega_V, objs.omega, atol=1e-13)
    assert np.allclose(perturb(objs, np.full(3, 2.7)).omega_V, objs.omega, atol=1e-13)
    assert perturb(objs).gibbs_residual <= 1e-10


def test_constant_perturbation_leaves_liouvillean_unchanged(rng):
    system = random_kms_system(3, 1.0, rng)
    objs = gns_build(system)
    rep = liouvillean_verify(objs, np.full(3, 1.9))
    assert rep.L_V_formula <= 1e-12
    pert = perturb(objs, np.full(3, 1.9))
    jvj = objs.J_matrix_conjugate(np.kron(np.diag(np.full(3, 1.9)), np.eye(3)).astype(complex))
    assert np.abs(pert.H_V - jvj - objs.L).max() <= 1e-12


def test_liouvillean_report_for_four_levels(rng):
    rep = liouvillean_verify(gns_build(random_kms_system(4, 1.0, rng)))
    assert rep.passed, rep.as_dict()
    assert rep.J_V_minus_J <= 1e-10


def test_system_validation():
    with pytest.raises(ValueError):
        FiniteKmsSystem(np.array([[0, 1], [0, 0]]), 1.0)
    with pytest.raises(ValueError):
        FiniteKmsSystem(np.eye(2), 1.0, V=np.ones((2, 2)))
    with pytest.raises(ValueError):
        FiniteKmsSystem(np.eye(2), 1.0, Q=[0.5, 1])
    with pytest.raises(ValueError):
        FiniteKmsSystem(np.array([[0, 1], [1, 0]]), 1.0, Q=[1, -1])
    with pytest.raises(ValueError):
        FiniteKmsSystem(np.eye(70), 1.0)
    with pytest.raises(ValueError):
        FiniteKmsSystem(np.eye(2), 0.0)


def test_gauge_sector_examples(rng):
    zero = gauge_sector_check(gns_build(FiniteKmsSystem(np.diag([0.2, 0.9]), 1.0, Q=[0, 0])))
    assert zero.passed() and zero.kernel_dim == 4
    pair = gauge_sector_check(gns_build(FiniteKmsSystem(np.diag([0.2, 0.9]), 1.0, Q=[1, -1])))
    assert pair.passed() and pair.kernel_dim == 2
    rich = gauge_sector_check(gns_build(random_kms_system(5, 1.0, rng, charges=[2, 0, -1, 0, 2])))
    assert rich.passed() and rich.Q_omega <= 1e-12
    with pytest.raises(ValueError):
        gauge_sector_check(gns_build(FiniteKmsSystem(np.eye(2), 1.0)))


def test_free_oscillator_against_periodic_kernel():
    values, budget = truncation_budget(1.0, [(0.0, X), (0.5, X)])
    exact = 0.5 * periodic_kernel(0.5, 1.0, 1.0)
    assert budget <= 1e-6
    assert abs(values[-1] - exact) <= 1e-6
    assert exact == pytest.approx(0.9595173756674719, rel=1e-14)


def test_finite_difference_kinetic_is_coarser():
    dvr = operator_correlation(OscillatorSpec(kinetic="dvr"), 1.0, [(0.0, X), (0.5, X)])
    fd = operator_correlation(OscillatorSpec(kinetic="fd"), 1.0, [(0.0, X), (0.5, X)])
    exact = 0.5 * periodic_kernel(0.5, 1.0, 1.0)
    assert abs(dvr - exact) < 1e-9 < abs(fd - exact)


def test_trivial_observables():
    one = lambda x: np.ones_like(x)
    assert operator_correlation(OscillatorSpec(), 1.0, [(0.0, one)], lambda x: 0.1 * x ** 4) == pytest.approx(1.0)
    assert trotter_correlation(OscillatorSpec(), 1.0, 16, [(0, one)], lambda x: 0.1 * x ** 4) == pytest.approx(1.0)


@pytest.mark.parametrize("lam, s", [(0.0, 0.3), (0.2, 0.0), (0.5, 0.5)])
def test_shifted_frequency_closed_form(lam, s):
    op = operator_correlation(OscillatorSpec(), 1.0, [(0.0, X), (s, X)], lambda x: lam * x * x)
    assert op == pytest.approx(shifted_frequency_correlation(1.0, 1.0, lam, s), abs=1e-11)


def test_feynman_kac_quartic():
    rep = feynman_kac_crosscheck(coefficients=(0, 0, 0, 0, 0.1), n_samples=100_000, seed=0)
    assert rep.passed, rep.as_dict()
    assert rep.truncation_budget <= 1e-6
    assert rep.ess > 1000


def test_feynman_kac_rejects_unbounded_potential():
    with pytest.raises(ValueError):
        feynman_kac_crosscheck(coefficients=(0, 0, 0, 1.0), n_samples=100)


@given(st.integers(2, 6), st.sampled_from([0.3, 1.0, 2.5]), st.integers(0, 10_000))
def test_random_systems_pass_all_identities(d, beta, seed):
    rng = np.random.default_rng(seed)
    objs = gns_build(random_kms_system(d, beta, rng))
    rep = liouvillean_verify(objs, seed=seed)
    assert rep.passed, rep.as_dict()


@given(st.lists(st.integers(-2, 2), min_size=2, max_size=5), st.integers(0, 10_000))
def test_gauge_sectors_property(charges, seed):
    objs = gns_build(random_kms_system(len(charges), 1.0, np.random.default_rng(seed), charges=charges))
    rep = gauge_sector_check(objs)
    assert rep.passed()
    expected = sum(c1 == c2 for c1 in charges for c2 in charges)
    assert rep.kernel_dim == expected
