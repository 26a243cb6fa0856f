import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermofield.pathspace import (TFPE_MAGIC, CholeskySampler, PathEnsemble, PeriodicGaussianSampler, TimeGrid,
                                   cholesky_oracle_sample, folded_spectrum, gram_positivity_check,
                                   markov_residual, matsubara_coefficients, os_positivity_check, path_covariance,
                                   periodic_cov, psd_factor, sample_paths, write_covariance_csv)
from thermofield.spectral import DiagonalSystem, TestVector

from conftest import random_real_vector


def test_kernel_and_matsubara_oracles():
    assert periodic_cov(0.0, 1.0, 1.0) == pytest.approx(2.163953413738653, rel=1e-14)
    n, r = matsubara_coefficients(1.0, 2 * np.pi, 3)
    assert r[n == 1][0] == pytest.approx(1.0, rel=1e-15)
    assert r[n == 0][0] == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("a, beta", [(1.0, 1.0), (5.0, 0.5), (0.3, 2 * np.pi)])
def test_matsubara_series_sums_to_kernel(a, beta):
    # r(s) = (1/beta) sum_n r_n e^{i w_n s}; the tail decays like 1/n, so sum many terms
    n, r = matsubara_coefficients(a, beta, 200_000)
    s = 0.3 * beta
    series = np.sum(r * np.cos(2 * np.pi * n * s / beta)) / beta
    assert series == pytest.approx(periodic_cov(s, a, beta), rel=1e-5)


def test_folded_spectrum_reproduces_grid_covariance():
    a, beta, n_t = 1.7, 1.0, 16
    spec = folded_spectrum(a, beta, n_t, n_mats=64)
    s = np.arange(n_t) * beta / n_t
    back = np.fft.ifft(spec).real * n_t / beta
    assert np.allclose(back, periodic_cov(s, a, beta), rtol=1e-12)


def test_time_grid_validation():
    grid = TimeGrid(1.0, 8)
    assert grid.index_of(0.25) == 2 and grid.index_of(-0.125) == 7
    with pytest.raises(ValueError):
        grid.index_of(0.1)
    for bad in (7, 2, 0):
        with pytest.raises(ValueError):
            TimeGrid(1.0, bad)


@pytest.fixture(scope="module")
def ensemble():
    system = DiagonalSystem.from_frequencies([1.0, 2.5, 7.0], 1.0)
    return sample_paths(system, TimeGrid(1.0, 32), 100_000, seed=3)


def test_sampler_covariance_within_five_sigma(ensemble):
    x0 = ensemble.samples[:, 0, :]
    for i, s in enumerate(ensemble.grid.times):
        prod = x0 * ensemble.samples[:, i, :]
        err = prod.std(axis=0, ddof=1) / np.sqrt(ensemble.n_samples)
        exact = 0.5 * periodic_cov(s, ensemble.system.frequencies, 1.0)
        assert np.all(np.abs(prod.mean(axis=0) - exact) <= 5 * err)


def test_spectral_against_cholesky_cross_oracle(ensemble):
    system = ensemble.system
    grid = ensemble.grid
    chol = cholesky_oracle_sample(path_covariance(system, grid), 100_000, 11, system, grid)
    a, b = ensemble.covariance_table(), chol.covariance_table()
    # per-entry standard errors of each empirical covariance
    def se(e):
        x0 = e.samples[:, :1, :]
        return (x0 * e.samples).std(axis=0, ddof=1) / np.sqrt(e.n_samples)
    assert np.all(np.abs(a - b) <= 5 * np.hypot(se(ensemble), se(chol)))


def test_block_layout_does_not_change_samples():
    system = DiagonalSystem.from_frequencies([1.0, 3.0], 2.0)
    base = PeriodicGaussianSampler(n_t=8, block_size=100, random_state=5).fit(system).sample(450)
    threaded = PeriodicGaussianSampler(n_t=8, block_size=100, random_state=5, n_jobs=3).fit(system).sample(450)
    assert np.array_equal(base.samples, threaded.samples)
    other = PeriodicGaussianSampler(n_t=8, block_size=100, random_state=6).fit(system).sample(450)
    assert not np.array_equal(base.samples, other.samples)


def test_sampler_needs_fit_and_beta():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        PeriodicGaussianSampler().sample(3)
    with pytest.raises(ValueError):
        PeriodicGaussianSampler().fit(np.array([1.0]))
    ens = PeriodicGaussianSampler(n_t=4, beta=1.0).fit(np.array([1.0])).sample(2)
    assert ens.samples.shape == (2, 4, 1)


def test_tfpe_roundtrip(tmp_path, ensemble):
    path = tmp_path / "paths.tfpe"
    small = PathEnsemble(ensemble.samples[:50], ensemble.beta, 3, ensemble.system)
    small.save(path)
    raw = path.read_bytes()
    assert raw[:4] == TFPE_MAGIC
    back = PathEnsemble.load(path)
    assert np.array_equal(back.samples, small.samples) and back.beta == 1.0 and back.seed == 3


@pytest.mark.parametrize("corrupt", ["magic", "version", "truncate", "short"])
def test_tfpe_rejects_malformed(tmp_path, corrupt):
    path = tmp_path / "bad.tfpe"
    PathEnsemble(np.zeros((2, 4, 1)), 1.0).save(path)
    raw = bytearray(path.read_bytes())
    if corrupt == "magic":
        raw[:4] = b"XXXX"
    elif corrupt == "version":
        raw[4:8] = struct.pack("<I", 99)
    elif corrupt == "truncate":
        raw = raw[:-8]
    else:
        raw = raw[:10]
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        PathEnsemble.load(path)


def test_covariance_csv_has_versioned_header(tmp_path, ensemble):
    path = tmp_path / "cov.csv"
    write_covariance_csv(path, PathEnsemble(ensemble.samples[:100], 1.0, 0, ensemble.system))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# thermofield")
    assert lines[1] == "mode,s,empirical,exact,stderr"
    assert len(lines) == 2 + 3 * 32


def test_reflection_and_translation_are_index_maps(ensemble):
    e = PathEnsemble(ensemble.samples[:10], 1.0)
    assert np.array_equal(e.reflect().reflect().samples, e.samples)
    assert np.array_equal(e.translate(32).samples, e.samples)
    assert np.array_equal(e.translate(5).translate(-5).samples, e.samples)
    assert np.array_equal(e.reflect().samples[:, 3], e.samples[:, 29])


def test_field_rejects_complex_coefficients(ensemble):
    with pytest.raises(ValueError):
        ensemble.field(0, np.array([1j, 0, 0]))


def test_psd_factor_controls():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    f = psd_factor(cov)
    assert np.allclose(f @ f.T, cov)
    with pytest.raises(ValueError):
        psd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        psd_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))
    s = CholeskySampler(random_state=1).fit(np.eye(3)).sample(4)
    assert s.shape == (4, 3)


def test_markov_and_non_markov_control():
    system = DiagonalSystem.from_frequencies([0.5, 1.0, 4.0], 2.0)
    assert markov_residual(system, 0.4, -0.7) <= 1e-10
    squared = lambda lag, a, beta: (0.5 * periodic_cov(lag, a, beta)) ** 2
    assert markov_residual(system, 0.4, -0.7, covariance=squared) >= 1e-3
    gaussian = lambda lag, a, beta: np.exp(-np.sin(np.pi * lag / beta) ** 2 * a)
    assert markov_residual(system, 0.4, -0.7, covariance=gaussian) >= 1e-3
    with pytest.raises(ValueError):
        markov_residual(system, 1.5, -0.7)


def test_os_positivity_rejects_times_outside_half_period():
    system = DiagonalSystem.from_frequencies([1.0], 1.0)
    with pytest.raises(ValueError):
        os_positivity_check(system, [(0.8, [1.0], 1.0)])


def test_os_gram_mixed_family_is_psd():
    system = DiagonalSystem.from_frequencies([1.0, 2.0], 1.0)
    fam = [[(0.1, [1.0, 0.0], 1.0)], [(0.4, [0.0, 1.0], -1.5)], [(0.25, [1.0, 1.0], 0.7)]]
    assert os_positivity_check(system, fam) >= -1e-10


betas = st.sampled_from([0.5, 1.0, 2 * np.pi])


@given(st.lists(st.floats(1.0, 10.0), min_size=1, max_size=5), betas, st.integers(1, 8), st.integers(0, 99_999))
def test_gram_positivity_property(a, beta, n, seed):
    system = DiagonalSystem.from_frequencies(a, beta)
    r = np.random.default_rng(seed)
    s = r.uniform(0, beta, size=n)
    xs = [random_real_vector(r, system) for _ in range(n)]
    assert gram_positivity_check(system, s, xs) >= -1e-10


@given(st.lists(st.floats(0.3, 6.0), min_size=1, max_size=3), betas, st.integers(1, 5), st.integers(0, 99_999))
def test_os_positivity_property(a, beta, size, seed):
    system = DiagonalSystem.from_frequencies(a, beta)
    r = np.random.default_rng(seed)
    fam = [[(float(r.uniform(0, beta / 2)), r.normal(size=system.d), float(r.normal())) for _ in range(2)]
           for _ in range(size)]
    assert os_positivity_check(system, fam) >= -1e-10


@given(st.lists(st.floats(0.3, 6.0), min_size=1, max_size=4), betas, st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_markov_property(a, beta, u, v):
    system = DiagonalSystem.from_frequencies(a, beta)
    assert markov_residual(system, u * beta / 2, -v * beta / 2) <= 1e-10
