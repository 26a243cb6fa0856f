"""Periodic Gaussian path space of the free thermal field.

Each real mode of frequency ``a`` is a stationary Gaussian process on the
circle of circumference ``beta`` with covariance ``r(s)/2``.  Two samplers
are provided: spectral synthesis from the Matsubara coefficients (folded
onto the time grid) and a brute-force factorization of the full
covariance matrix, used as an independent oracle.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .quasifree import euclid_cov_C, periodic_kernel
from .spectral import NEUTRAL, DiagonalSystem, TestVector

logger = logging.getLogger(__name__)

PSD_FLOOR = 1e-10
TFPE_MAGIC = b"TFPE"
TFPE_VERSION = 1
_HEADER = struct.Struct("<4sIQIIdQ")


@dataclass(frozen=True)
class TimeGrid:
    """``n_t`` equally spaced times ``s_i = i beta / n_t`` on the circle."""

    beta: float
    n_t: int

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if int(self.n_t) != self.n_t or self.n_t < 4 or self.n_t % 2:
            raise ValueError(f"n_t must be an even integer >= 4, got {self.n_t}")
        object.__setattr__(self, "n_t", int(self.n_t))

    @property
    def step(self) -> float:
        return self.beta / self.n_t

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_t) * self.step

    @property
    def half(self) -> int:
        """Index of ``beta / 2``."""
        return self.n_t // 2

    def index_of(self, s: float, atol: float = 1e-12) -> int:
        """Grid index of a time given modulo ``beta``; off-grid times are rejected."""
        q = float(s) / self.step
        k = int(round(q))
        if abs(q - k) > atol * max(1.0, abs(q)):
            raise ValueError(f"time {s} is not on the grid")
        return k % self.n_t


def matsubara_coefficients(a: float, beta: float, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices ``n = -N..N`` and coefficients ``r_n = 2a / (a^2 + (2 pi n / beta)^2)``."""
    if a <= 0 or beta <= 0:
        raise ValueError("a and beta must be positive")
    n = np.arange(-int(n_max), int(n_max) + 1)
    omega = 2.0 * np.pi * n / beta
    return n, 2.0 * a / (a * a + omega * omega)


def periodic_cov(s, a, beta: float) -> np.ndarray:
    """The periodic kernel ``r(s)``, with ``s`` reduced modulo ``beta``."""
    return periodic_kernel(s, a, beta)


def folded_spectrum(a: float, beta: float, n_t: int, n_mats: int = 512,
                    tail_correction: bool = True) -> np.ndarray:
    """Matsubara coefficients summed over each residue class ``n mod n_t``.

    Frequencies that differ by a multiple of ``n_t`` coincide on the grid, so
    the grid process only sees these sums.  With ``tail_correction`` the
    part beyond ``|n| <= n_mats`` is added from the exact grid transform
    ``(beta/n_t) * DFT(r)``, which makes the grid covariance exact.
    """
    n, r_n = matsubara_coefficients(a, beta, n_mats)
    truncated = np.bincount(np.mod(n, n_t), weights=r_n, minlength=n_t)
    if not tail_correction:
        return truncated
    s = np.arange(n_t) * beta / n_t
    exact = (beta / n_t) * np.fft.fft(periodic_kernel(s, a, beta)).real
    tail = exact - truncated
    missing = float(np.sum(tail)) / (2.0 * beta)
    logger.debug("Matsubara truncation n_mats=%d, a=%.4g: variance tail %.3e restored", n_mats, a, missing)
    return truncated + np.clip(tail, 0.0, None)


def _synthesis_matrix(n_t: int) -> np.ndarray:
    """Real Fourier synthesis: row ``k`` of standard-normal noise to ``n_t`` times."""
    i = np.arange(n_t)
    rows = [np.ones(n_t)]
    for k in range(1, n_t // 2):
        rows.append(np.sqrt(2.0) * np.cos(2 * np.pi * k * i / n_t))
    rows.append(np.cos(np.pi * i))
    for k in range(1, n_t // 2):
        rows.append(-np.sqrt(2.0) * np.sin(2 * np.pi * k * i / n_t))
    return np.array(rows)


def _synthesis_variances(spectrum: np.ndarray) -> np.ndarray:
    """Noise variances matched to the row order of :func:`_synthesis_matrix`."""
    n_t = spectrum.shape[-1]
    half = n_t // 2
    ks = np.concatenate([[0], np.arange(1, half), [half], np.arange(1, half)])
    return spectrum[..., ks]


@dataclass(eq=False)
class PathEnsemble:
    """Samples ``samples[n, i, j] = phi(s_i, e_j)`` of the periodic field."""

    samples: np.ndarray
    beta: float
    seed: int = 0
    system: DiagonalSystem | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3:
            raise ValueError("samples must have shape (n_samples, n_t, d)")
        if self.samples.shape[0] == 0:
            raise ValueError("empty ensemble")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_t(self) -> int:
        return self.samples.shape[1]

    @property
    def d(self) -> int:
        return self.samples.shape[2]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.beta, self.n_t)

    def _like(self, samples: np.ndarray) -> "PathEnsemble":
        return PathEnsemble(samples, self.beta, self.seed, self.system, self.weights)

    def reflect(self) -> "PathEnsemble":
        """``s_i -> -s_i`` modulo ``beta``."""
        idx = (-np.arange(self.n_t)) % self.n_t
        return self._like(self.samples[:, idx, :])

    def translate(self, k: int) -> "PathEnsemble":
        """Shifted path ``phi(s_i + k * step)``."""
        idx = (np.arange(self.n_t) + int(k)) % self.n_t
        return self._like(self.samples[:, idx, :])

    def field(self, time_index: int, x) -> np.ndarray:
        """``phi(s, x) = sum_j x_j phi(s, e_j)`` for real coefficients ``x``."""
        coeffs = x.coeffs if isinstance(x, TestVector) else np.asarray(x)
        if np.iscomplexobj(coeffs):
            if np.max(np.abs(coeffs.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(coeffs))):
                raise ValueError("field evaluation needs kappa-real (real) coefficients")
            coeffs = coeffs.real
        return self.samples[:, int(time_index) % self.n_t, :] @ coeffs

    def covariance_table(self) -> np.ndarray:
        """Empirical ``Cov(phi(0, e_j), phi(s_i, e_j))`` with shape ``(n_t, d)``."""
        x0 = self.samples[:, 0, :]
        centred = self.samples - self.samples.mean(axis=0)
        return np.einsum("nj,nij->ij", x0 - x0.mean(axis=0), centred) / (self.n_samples - 1)

    def save(self, path) -> None:
        header = _HEADER.pack(TFPE_MAGIC, TFPE_VERSION, self.n_samples, self.n_t, self.d,
                              float(self.beta), int(self.seed))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.samples, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, system: DiagonalSystem | None = None) -> "PathEnsemble":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError("file too short for a TFPE header")
        magic, version, n, n_t, d, beta, seed = _HEADER.unpack_from(raw)
        if magic != TFPE_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != TFPE_VERSION:
            raise ValueError(f"unsupported TFPE version {version}")
        body = raw[_HEADER.size:]
        if len(body) != 8 * n * n_t * d:
            raise ValueError("payload size does not match the header")
        samples = np.frombuffer(body, dtype="<f8").reshape(n, n_t, d).astype(float)
        return cls(samples, beta, seed, system)


def write_covariance_csv(path, ensemble: PathEnsemble, system: DiagonalSystem | None = None) -> None:
    """CSV of empirical vs exact ``Cov(phi(0), phi(s))`` per mode."""
    table = ensemble.covariance_table()
    system = system or ensemble.system
    times = ensemble.grid.times
    with open(path, "w", newline="") as fh:
        fh.write("# thermofield covariance-table v1: mode,s,empirical,exact,stderr\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "s", "empirical", "exact", "stderr"])
        x0 = ensemble.samples[:, 0, :]
        for j in range(ensemble.d):
            for i, s in enumerate(times):
                prod = (x0[:, j] - x0[:, j].mean()) * (ensemble.samples[:, i, j] - ensemble.samples[:, i, j].mean())
                err = prod.std(ddof=1) / np.sqrt(ensemble.n_samples)
                exact = "" if system is None else repr(float(0.5 * periodic_kernel(s, system.frequencies[j], ensemble.beta)))
                w.writerow([j, repr(float(s)), repr(float(table[i, j])), exact, repr(float(err))])


def _as_frequencies(system) -> tuple[np.ndarray, float | None, DiagonalSystem | None]:
    if isinstance(system, DiagonalSystem):
        if not system.kappa_commutes:
            raise ValueError("only systems whose conjugation commutes with a have a real path space")
        if system.sector != NEUTRAL:
            raise ValueError("sample charged fields as two independent neutral ensembles")
        return system.frequencies, system.beta, system
    return np.asarray(system, dtype=float).reshape(-1), None, None


class PeriodicGaussianSampler(BaseEstimator):
    """Spectral sampler of the free periodic field.

    Parameters
    ----------
    n_t : int
        Number of grid times (even, >= 4).
    n_mats : int
        Number of explicitly summed Matsubara frequencies per mode.
    tail_correction : bool
        Restore the truncated Matsubara tail from the exact grid transform.
    block_size : int
        Samples per RNG block.  Every block has its own counter-based
        stream keyed by ``(random_state, block)``, so results do not depend
        on how blocks are distributed over workers.
    n_jobs : int or None
        Number of joblib workers (threads) used to fill blocks.
    random_state : int
        Seed.
    beta : float or None
        Inverse temperature when ``fit`` receives a bare frequency array.
    """

    def __init__(self, n_t=32, n_mats=512, tail_correction=True, block_size=4096,
                 n_jobs=None, random_state=0, beta=None):
        self.n_t = n_t
        self.n_mats = n_mats
        self.tail_correction = tail_correction
        self.block_size = block_size
        self.n_jobs = n_jobs
        self.random_state = random_state
        self.beta = beta

    def fit(self, system, y=None):
        freqs, beta, sys_obj = _as_frequencies(system)
        beta = beta if beta is not None else self.beta
        if beta is None:
            raise ValueError("beta is required when fitting on a frequency array")
        grid = TimeGrid(beta, self.n_t)
        if np.any(freqs <= 0):
            raise ValueError("frequencies must be positive")
        spectrum = np.array([folded_spectrum(a, beta, grid.n_t, self.n_mats, self.tail_correction)
                             for a in freqs])
        self.spectrum_ = spectrum / (2.0 * beta)
        self.scales_ = np.sqrt(_synthesis_variances(self.spectrum_))
        self.synthesis_ = _synthesis_matrix(grid.n_t)
        self.frequencies_ = freqs
        self.beta_ = beta
        self.grid_ = grid
        self.system_ = sys_obj if sys_obj is not None else DiagonalSystem.from_frequencies(freqs, beta)
        return self

    def _block(self, block: int, count: int) -> np.ndarray:
        seq = np.random.SeedSequence([int(self.random_state), int(block)])
        rng = np.random.Generator(np.random.Philox(seq))
        noise = rng.standard_normal((count, self.frequencies_.size, self.grid_.n_t))
        paths = np.einsum("ndk,dk,kt->ntd", noise, self.scales_, self.synthesis_, optimize=True)
        return paths

    def sample(self, n_samples: int) -> PathEnsemble:
        check_is_fitted(self, "spectrum_")
        n_samples = int(n_samples)
        if n_samples <= 0:
            raise ValueError("n_samples must be positive")
        bs = int(self.block_size)
        counts = [min(bs, n_samples - b * bs) for b in range(-(-n_samples // bs))]
        if self.n_jobs in (None, 1):
            parts = [self._block(b, c) for b, c in enumerate(counts)]
        else:
            parts = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(self._block)(b, c) for b, c in enumerate(counts))
        return PathEnsemble(np.concatenate(parts, axis=0), self.beta_, int(self.random_state), self.system_)


def sample_paths(system: DiagonalSystem, grid: TimeGrid, n_samples: int, seed: int,
                 n_mats: int = 512, n_jobs=None, block_size: int = 4096) -> PathEnsemble:
    if abs(grid.beta - system.beta) > 1e-14 * system.beta:
        raise ValueError("time grid and system disagree on beta")
    sampler = PeriodicGaussianSampler(n_t=grid.n_t, n_mats=n_mats, n_jobs=n_jobs,
                                      block_size=block_size, random_state=seed)
    return sampler.fit(system).sample(n_samples)


def path_covariance(system: DiagonalSystem, grid: TimeGrid) -> np.ndarray:
    """Covariance of the flattened (time-major) path built from ``euclid_cov_C``."""
    d = system.d
    basis = [TestVector(np.eye(d)[j], system) for j in range(d)]
    per_lag = np.array([[euclid_cov_C(grid.times[k], basis[j], basis[j]) for j in range(d)]
                        for k in range(grid.n_t)])
    n = grid.n_t
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    cov = np.zeros((n, d, n, d))
    for j in range(d):
        cov[:, j, :, j] = per_lag[lag, j]
    return cov.reshape(n * d, n * d)


def psd_factor(cov: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """Square-root factor of a covariance, clipping eigenvalues down to ``-floor``."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(cov)
    if w.min() < -floor:
        raise ValueError(f"covariance has eigenvalue {w.min():.3e} below -{floor:g}")
    clipped = w < 0
    if clipped.any():
        logger.warning("clipped %d negative eigenvalues, largest magnitude %.3e",
                       int(clipped.sum()), float(-w[clipped].min()))
    return v * np.sqrt(np.clip(w, 0.0, None))


class CholeskySampler(BaseEstimator):
    """Brute-force Gaussian sampler from an explicit covariance matrix."""

    def __init__(self, random_state=0, floor=PSD_FLOOR):
        self.random_state = random_state
        self.floor = floor

    def fit(self, cov, y=None):
        self.factor_ = psd_factor(cov, self.floor)
        return self

    def sample(self, n_samples: int) -> np.ndarray:
        if not hasattr(self, "factor_"):
            raise NotFittedError("CholeskySampler is not fitted")
        if n_samples <= 0:
            raise ValueError("n_samples must be positive")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(self.random_state), 7])))
        z = rng.standard_normal((int(n_samples), self.factor_.shape[1]))
        return z @ self.factor_.T


def cholesky_oracle_sample(cov: np.ndarray, n_samples: int, seed: int,
                           system: DiagonalSystem | None = None,
                           grid: TimeGrid | None = None):
    """Joint Gaussian samples; reshaped into a :class:`PathEnsemble` when a grid is given."""
    flat = CholeskySampler(random_state=seed).fit(cov).sample(n_samples)
    if grid is None:
        return flat
    d = flat.shape[1] // grid.n_t
    return PathEnsemble(flat.reshape(n_samples, grid.n_t, d), grid.beta, seed, system)


def reflect(ensemble: PathEnsemble) -> PathEnsemble:
    return ensemble.reflect()


def translate(ensemble: PathEnsemble, k: int) -> PathEnsemble:
    return ensemble.translate(k)


def _real_coeffs(x) -> np.ndarray:
    c = x.coeffs if isinstance(x, TestVector) else np.asarray(x, dtype=complex)
    return np.asarray(c)


def _covariance_between(system: DiagonalSystem, s1: float, x1, s2: float, x2) -> float:
    """``C(|s1 - s2| mod beta)(x1, x2)`` via the closed form."""
    gap = abs(float(s1) - float(s2)) % system.beta
    return euclid_cov_C(gap, x1, x2)


def os_positivity_check(system: DiagonalSystem, family: Sequence, grid: TimeGrid | None = None,
                        return_matrix: bool = False):
    """Smallest eigenvalue of ``M_kl = E[conj(R F_k) F_l]`` for exponential functionals.

    Each member of ``family`` is a list of ``(s, x, alpha)`` triples and stands
    for ``F = exp(i sum alpha phi(s, x))``; a single triple is also accepted.
    Times must lie in ``[0, beta/2]`` (and on ``grid`` when one is given).
    """
    beta = system.beta
    funcs = []
    for member in family:
        if len(member) == 3 and not isinstance(member[0], (tuple, list)):
            member = [member]
        terms = []
        for s, x, alpha in member:
            if not -1e-12 <= s <= beta / 2 + 1e-12:
                raise ValueError(f"time {s} outside [0, beta/2]")
            if grid is not None:
                grid.index_of(s)
            if not isinstance(x, TestVector):
                x = TestVector(x, system)
            terms.append((float(s), x, float(alpha)))
        funcs.append(terms)
    n = len(funcs)
    m = np.empty((n, n), dtype=complex)
    for k in range(n):
        for l in range(n):
            # conj(R F_k) F_l = exp(i (sum_l alpha phi(s, x) - sum_k alpha phi(-s, x)))
            pts = [(-s, x, -alpha) for s, x, alpha in funcs[k]] + list(funcs[l])
            var = 0.0
            for s1, x1, a1 in pts:
                for s2, x2, a2 in pts:
                    var += a1 * a2 * _covariance_between(system, s1, x1, s2, x2)
            m[k, l] = np.exp(-0.5 * var)
    m = 0.5 * (m + m.conj().T)
    min_eig = float(np.linalg.eigvalsh(m).min())
    return (min_eig, m) if return_matrix else min_eig


def gram_positivity_check(system: DiagonalSystem, s: Sequence[float], xs: Sequence) -> float:
    """Smallest eigenvalue of ``[(x_i, r(s_j - s_i) x_j)]`` for arbitrary vectors."""
    s = np.asarray(s, dtype=float)
    coeffs = np.array([_real_coeffs(x) for x in xs], dtype=complex)
    if coeffs.shape != (s.size, system.d):
        raise ValueError("need one vector of system dimension per time")
    lag = np.subtract.outer(s, s).T  # lag[i, j] = s_j - s_i
    kern = periodic_kernel(lag[..., None], system.frequencies, system.beta)
    m = np.einsum("im,ijm,jm->ij", coeffs.conj(), kern, coeffs)
    m = 0.5 * (m + m.conj().T)
    return float(np.linalg.eigvalsh(m).min())


def markov_residual(system: DiagonalSystem, s: float, s_prime: float,
                    covariance: Callable | None = None) -> float:
    """Largest per-mode gap between ``Cov(phi(s), phi(s'))`` and the covariance of
    the conditional expectations given ``(phi(0), phi(beta/2))``.

    ``covariance(lag, a, beta)`` defaults to the free ``r/2``; pass another
    stationary kernel to test a process that is not Markov.
    """
    beta = system.beta
    if not 0.0 < s < beta / 2:
        raise ValueError("s must lie in (0, beta/2)")
    if not -beta / 2 < s_prime < 0.0:
        raise ValueError("s' must lie in (-beta/2, 0)")
    cov = covariance or (lambda lag, a, b: 0.5 * periodic_kernel(lag, a, b))
    worst = 0.0
    boundary = np.array([0.0, beta / 2])
    for a in system.frequencies:
        k = lambda t1, t2: cov(np.subtract.outer(np.atleast_1d(t1), np.atleast_1d(t2)), a, beta)
        bb = k(boundary, boundary)
        sb = k(s, boundary)
        pb = k(s_prime, boundary)
        direct = float(k(s, s_prime)[0, 0])
        via = float((sb @ np.linalg.solve(bb, pb.T))[0, 0])
        worst = max(worst, abs(direct - via))
    return worst
