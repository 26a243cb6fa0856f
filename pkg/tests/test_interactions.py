from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermofield.interactions import (ALPHA_MAX, CHARGED_POLYNOMIAL, EXPONENTIAL, POLYNOMIAL, THERMAL,
                                      ZERO_TEMPERATURE, CutoffSpec, InteractionSpec, InteractionTransformer,
                                      chi_hat, convergence_study, cutoff_momentum, cutoff_testfunction,
                                      direct_l2_inner, evaluate_V, exact_l2_inner, exp_series, field_variances,
                                      g_profile, kbeta_kernel, kbeta_log_sweep, kernel_wp, l2_distance,
                                      lower_bound_probe, reorder_interaction, thermal_shift, v_norm2_mc)
from thermofield.pathspace import TimeGrid, sample_paths
from thermofield.spectral import ModeGrid, build_neutral

GRID = ModeGrid(1.0, 16, 1.0)
SYSTEM = build_neutral(GRID, 1.0)
G = g_profile(GRID, "bump", 2.0)
CUT = CutoffSpec(4.0, G)


def poly(coeffs, cutoff=CUT, ordering=THERMAL, bounded=True):
    return InteractionSpec(POLYNOMIAL, cutoff, tuple(coeffs), ordering=ordering, require_bounded_below=bounded)


@pytest.fixture(scope="module")
def fields():
    """Time-zero thermal field samples, 10^5 draws."""
    paths = sample_paths(SYSTEM, TimeGrid(1.0, 4), 100_000, seed=21)
    return paths.samples[:, 0, :]


def test_cutoff_testfunction_at_origin():
    small = build_neutral(ModeGrid(1.0, 0, 1.0), 1.0)
    f = cutoff_testfunction(CutoffSpec(4.0, [1.0]), 0.0, small)
    assert f.coeffs[0].real == pytest.approx(0.28209479177387814, rel=1e-14)


@pytest.mark.parametrize("x", [0.0, 0.7, -2.3])
def test_cutoff_testfunction_is_kappa_real(x):
    assert cutoff_testfunction(CUT, x, SYSTEM).is_kappa_real(atol=1e-14)


def test_cutoff_testfunction_approaches_limit_monotonically():
    limit = cutoff_momentum(CUT.at(np.inf), 0.3, GRID)
    gaps = [np.abs(cutoff_momentum(CUT.at(c), 0.3, GRID) - limit) for c in (2, 4, 8, 16, 32)]
    for lo, hi in zip(gaps, gaps[1:]):
        assert np.all(hi <= lo + 1e-15)


def test_chi_hat_normalised_and_continuous_at_removable_point():
    assert chi_hat(0.0) == 1.0
    p = 2 * np.pi
    assert chi_hat(p) == pytest.approx(chi_hat(p * (1 + 1e-6)), abs=1e-5)


def test_spec_validation():
    with pytest.raises(ValueError):
        CutoffSpec(0.5, G)
    with pytest.raises(ValueError):
        CutoffSpec(2.0, -G)
    with pytest.raises(ValueError):
        poly((0, 0, 0, 1.0))
    with pytest.raises(ValueError):
        InteractionSpec(EXPONENTIAL, CUT, alpha=ALPHA_MAX)
    assert poly((0, 0, 0, 1.0), bounded=False).coefficients[3] == 1.0


@pytest.mark.parametrize("p", [1, 2, 3])
def test_kernel_norm_matches_pairing_formula(p):
    # E[V^2] for V = int g :phi_L^p: equals p! (4 pi)^-p ||w_p||^2
    small = build_neutral(ModeGrid(1.0, 4, 1.0), 1.0)
    cut = CutoffSpec(3.0, g_profile(small.grid, "bump", 2.0))
    spec = poly([0] * p + [1.0], cut, bounded=False)
    kw = kernel_wp(p, cut, small)
    assert kw.norm2() == pytest.approx(kw.norm2_bruteforce(), rel=1e-12)
    assert kw.norm2() == pytest.approx(exact_l2_inner(spec, spec, small) * (4 * np.pi) ** p / factorial(p), rel=1e-10)


def test_kernel_p1_direct_sum():
    kw = kernel_wp(1, CUT, SYSTEM)
    k = GRID.momenta
    eps = np.hypot(k, 1.0)
    ghat = kw.ghat(k)
    direct = np.sum(np.abs(ghat) ** 2 * CUT.chi_values(k) ** 2 / np.tanh(0.5 * eps) / eps)
    assert kw.norm2() == pytest.approx(direct, rel=1e-12)


def test_kernel_monte_carlo_and_limits():
    kw = kernel_wp(4, CUT, SYSTEM)
    est, err = kw.norm2_mc(200_000, seed=1)
    assert abs(est - kw.norm2()) <= 5 * err
    assert kernel_wp(2, CutoffSpec(4.0, np.zeros(GRID.n_modes)), SYSTEM).norm2() == 0.0
    with pytest.raises(ValueError):
        kernel_wp(9, CUT, SYSTEM)
    norms = [kernel_wp(2, CUT.at(c), SYSTEM).norm2() for c in (2, 4, 8, 16, 32)]
    assert np.all(np.diff(norms) > 0)


def test_constant_interaction_inner_product():
    spec = poly((1.7,))
    assert exact_l2_inner(spec, spec, SYSTEM) == pytest.approx((1.7 * G.sum() * GRID.delta_x) ** 2, rel=1e-14)


def test_zero_temperature_reorder_shift_is_twice_thermal_shift():
    spec = poly((0, 0, 1.0), ordering=ZERO_TEMPERATURE)
    shifted = reorder_interaction(spec, SYSTEM)
    assert shifted.ordering == THERMAL
    assert shifted.coefficients[2] == 1.0
    assert shifted.coefficients[0] == pytest.approx(2 * thermal_shift(CUT, SYSTEM), rel=1e-12)
    v0, vb = field_variances(CUT, SYSTEM)
    assert vb - v0 == pytest.approx(2 * thermal_shift(CUT, SYSTEM), rel=1e-12)


def test_thermal_shift_converges_like_inverse_square():
    r_inf = thermal_shift(CUT.at(np.inf), SYSTEM)
    gaps = np.array([abs(thermal_shift(CUT.at(c), SYSTEM) - r_inf) for c in (4, 8, 16, 32, 64)])
    ratios = gaps[1:] / gaps[:-1]
    assert np.all(np.abs(ratios - 0.25) < 0.02)


def test_reordered_values_agree_per_sample(fields):
    spec = poly((0.3, -0.2, 0.5, 0.1, 0.2), ordering=ZERO_TEMPERATURE)
    a = evaluate_V(fields[:2000], spec, SYSTEM)
    b = evaluate_V(fields[:2000], reorder_interaction(spec, SYSTEM), SYSTEM)
    assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


def test_trivial_interactions(fields):
    zero_g = CutoffSpec(4.0, np.zeros(GRID.n_modes))
    assert np.all(evaluate_V(fields[:100], poly((0, 0, 0, 0, 1.0), zero_g), SYSTEM) == 0)
    flat = evaluate_V(fields[:100], InteractionSpec(EXPONENTIAL, CUT, alpha=0.0), SYSTEM)
    # every sample carries the same value, the lattice norm of g (summation order aside)
    assert np.all(flat == flat[0])
    assert flat[0] == pytest.approx(np.sum(G * GRID.delta_x), rel=1e-15)


def test_linear_thermal_interaction_is_centred(fields):
    v = evaluate_V(fields, poly((0, 1.0), bounded=False), SYSTEM)
    assert abs(v.mean()) <= 5 * v.std(ddof=1) / np.sqrt(v.size)


def test_exponential_interaction_is_positive(fields):
    v = evaluate_V(fields, InteractionSpec(EXPONENTIAL, CUT, alpha=1.0), SYSTEM)
    assert np.all(v > 0)


def test_different_degrees_are_uncorrelated(fields):
    v2 = evaluate_V(fields, poly((0, 0, 1.0)), SYSTEM)
    v4 = evaluate_V(fields, poly((0, 0, 0, 0, 1.0)), SYSTEM)
    prod = v2 * v4
    assert abs(prod.mean()) <= 5 * prod.std(ddof=1) / np.sqrt(prod.size)


def test_monte_carlo_norm_matches_exact(fields):
    spec = poly((0, 0, 0, 0, 1.0))
    est, err = v_norm2_mc(spec, SYSTEM, fields)
    assert abs(est - exact_l2_inner(spec, spec, SYSTEM)) <= 5 * err


def test_charged_gauge_invariance(rng):
    spec = InteractionSpec(CHARGED_POLYNOMIAL, CUT, (0.0, 0.5, 1.0))
    t = InteractionTransformer(spec, SYSTEM).fit()
    x = rng.normal(size=(200, 2 * SYSTEM.d))
    p1, p2 = x[:, :SYSTEM.d], x[:, SYSTEM.d:]
    base = t.transform(x)
    for rotated in (np.hstack([-p1, -p2]), np.hstack([-p2, p1]), np.hstack([p2, -p1])):
        assert np.array_equal(t.transform(rotated), base)
    th = 0.83
    generic = np.hstack([np.cos(th) * p1 - np.sin(th) * p2, np.sin(th) * p1 + np.cos(th) * p2])
    assert np.allclose(t.transform(generic), base, rtol=1e-12, atol=1e-12)


def test_transformer_validates_input():
    t = InteractionTransformer(poly((0, 0, 1.0)), SYSTEM).fit()
    with pytest.raises(ValueError):
        t.transform(np.zeros((3, SYSTEM.d + 1)))
    with pytest.raises(ValueError):
        t.transform(np.full((3, SYSTEM.d), np.nan))
    paths = np.zeros((2, 4, SYSTEM.d))
    assert t.transform(paths).shape == (2, 4)


def test_gram_of_two_cutoffs_is_psd():
    a, b = poly((0, 0, 0, 0, 1.0), CUT.at(2.0)), poly((0, 0, 0, 0, 1.0), CUT.at(16.0))
    m = np.array([[exact_l2_inner(a, a, SYSTEM), exact_l2_inner(a, b, SYSTEM)],
                  [exact_l2_inner(b, a, SYSTEM), exact_l2_inner(b, b, SYSTEM)]])
    assert m[0, 1] == pytest.approx(m[1, 0], rel=1e-12)
    assert np.linalg.eigvalsh(m).min() >= -1e-10


def test_convergence_ladder():
    spec = poly((0, 0, 0, 0, 1.0))
    table = convergence_study(spec, (2, 4, 8, 16, 32), SYSTEM)
    assert np.all(np.diff(table.distances) < 0)
    assert table.rate > 0
    assert convergence_study(spec, (4,), SYSTEM).rows == []
    with pytest.raises(ValueError):
        convergence_study(spec, (4, 2), SYSTEM)


def test_two_routes_agree_for_zero_temperature_ordering():
    spec = poly((0.1, 0, -0.4, 0, 1.0), ordering=ZERO_TEMPERATURE)
    a, b = spec.with_cutoff(2.0), spec.with_cutoff(8.0)
    assert l2_distance(a, b, SYSTEM) == pytest.approx(l2_distance(a, b, SYSTEM, route="direct"), abs=1e-10)
    assert exact_l2_inner(a, b, SYSTEM) == pytest.approx(direct_l2_inner(a, b, SYSTEM), rel=1e-10)


def test_lower_bounds(fields):
    spec = poly((0, 0, 1.0))
    mins, _ = lower_bound_probe(spec, fields[:5000], SYSTEM, (2, 4, 8))
    for cut, m in zip((2, 4, 8), mins):
        _, vb = field_variances(CUT.at(cut), SYSTEM)
        assert m >= -np.sum(G) * GRID.delta_x * vb - 1e-12
    quartic = poly((0, 0, 0, 0, 1.0))
    mins4, const = lower_bound_probe(quartic, fields[:5000], SYSTEM, (2, 4, 8, 16, 32))
    assert const > 0
    assert np.all(mins4 >= -const * np.log([2, 4, 8, 16, 32]) ** 2 - 1e-12)
    zero = poly((0, 0, 1.0), CutoffSpec(4.0, np.zeros(GRID.n_modes)))
    assert np.all(lower_bound_probe(zero, fields[:100], SYSTEM, (2, 4))[0] == 0)


def test_kbeta_symmetry_and_series():
    x = np.linspace(0.1, 3, 7)
    assert np.array_equal(kbeta_kernel(x, SYSTEM), kbeta_kernel(-x, SYSTEM))
    eps0, _ = exp_series(0.0, G, SYSTEM)
    assert eps0[0] == np.sum(np.outer(G, G) * GRID.delta_x ** 2)
    assert eps0[0] == pytest.approx((G.sum() * GRID.delta_x) ** 2, rel=1e-14)
    assert np.all(eps0[1:] == 0)
    eps, ratios = exp_series(1.0, G, SYSTEM, 30)
    assert np.all(eps >= 0)
    assert np.all(np.diff(ratios[1:]) < 0)
    assert np.isfinite(eps.sum())


def test_kbeta_log_singularity_bounded_under_refinement():
    sweep = kbeta_log_sweep(ModeGrid(1.0, 16, 1.0), 1.0, levels=4)
    lows = [s[:, 1].min() for s in sweep]
    highs = [s[:, 1].max() for s in sweep]
    assert all(np.all(np.isfinite(s)) for s in sweep)
    assert max(highs) - min(highs) <= 0.05 and max(lows) - min(lows) <= 0.05
    assert sweep[-1][:, 0].min() < sweep[0][:, 0].min()


@given(st.floats(1.0, 40.0), st.floats(1.0, 40.0))
def test_inner_product_symmetric(c1, c2):
    a = poly((0.2, 0, 0, 0, 1.0), CUT.at(c1))
    b = poly((0, 0, 1.0), CUT.at(c2))
    assert exact_l2_inner(a, b, SYSTEM) == pytest.approx(exact_l2_inner(b, a, SYSTEM), rel=1e-12, abs=1e-14)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=7))
def test_reorder_preserves_leading_coefficient(coeffs):
    spec = poly(coeffs, ordering=ZERO_TEMPERATURE, bounded=False)
    out = reorder_interaction(spec, SYSTEM)
    assert out.coefficients[-1] == spec.coefficients[-1]
