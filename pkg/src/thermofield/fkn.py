"""Feynman-Kac-Nelson kernels and reweighting of the free periodic measure.

The time integral of ``V`` along a path is discretised cell by cell with the
trapezoid rule: cell ``i`` (between grid times ``s_i`` and ``s_{i+1}``)
contributes ``(V_i + V_{i+1}) step / 2``.  Because each cell value is a
symmetric function of its two endpoints, interval sums are additive
(cocycle), shift covariant and reflection covariant.  The axiom checks
compare exact rational sums of these cell values, so they are bit-exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_is_fitted

from .pathspace import PathEnsemble, TimeGrid

logger = logging.getLogger(__name__)

DEFAULT_ESS_FLOOR = 50.0
DEFAULT_BLOCKS = 20


def _interaction_values(ensemble: PathEnsemble, V) -> np.ndarray:
    """``V`` evaluated at every grid time, shape ``(n_samples, n_t)``.

    ``V`` is a fitted transformer, a callable on ``(n, n_t, d)`` paths, or
    a precomputed array.
    """
    if isinstance(V, np.ndarray):
        vals = V
    elif hasattr(V, "transform"):
        vals = V.transform(ensemble.samples)
    else:
        vals = V(ensemble.samples)
    vals = np.asarray(vals, dtype=float)
    if vals.shape != (ensemble.n_samples, ensemble.n_t):
        raise ValueError(f"V values must have shape {(ensemble.n_samples, ensemble.n_t)}, got {vals.shape}")
    return vals


def cell_integrals(v_values: np.ndarray, step: float) -> np.ndarray:
    """Trapezoid cell integrals; column ``i`` covers ``[s_i, s_{i+1}]``."""
    v = np.asarray(v_values, dtype=float)
    return 0.5 * (v + np.roll(v, -1, axis=-1)) * step


def _ordered_sum(cells: np.ndarray) -> np.ndarray:
    # summing in sorted order makes the float result depend only on the multiset of cells
    return np.ascontiguousarray(np.sort(cells, axis=-1)).sum(axis=-1)


class FknKernel:
    """Kernels ``F_[a, b] = exp(-int_a^b V)`` for grid-index endpoints."""

    def __init__(self, v_values: np.ndarray, grid: TimeGrid):
        self.grid = grid
        self.v_values = np.asarray(v_values, dtype=float)
        if self.v_values.shape[-1] != grid.n_t:
            raise ValueError("V values do not match the time grid")
        self.cells = cell_integrals(self.v_values, grid.step)

    def _indices(self, a: int, b: int) -> np.ndarray:
        if int(a) != a or int(b) != b:
            raise ValueError("kernel endpoints must be grid indices")
        if b < a or b - a > self.grid.n_t:
            raise ValueError("need a <= b <= a + n_t")
        return np.arange(int(a), int(b)) % self.grid.n_t

    def log_kernel(self, a: int, b: int) -> np.ndarray:
        return -_ordered_sum(self.cells[..., self._indices(a, b)])

    def kernel(self, a: int, b: int) -> np.ndarray:
        return np.exp(self.log_kernel(a, b))

    def exact_cells(self, path: int) -> tuple[list, int]:
        """Cell values of one path as integers over a common power-of-two denominator."""
        ratios = [float(c).as_integer_ratio() for c in self.cells[path]]
        den = max(d for _, d in ratios)
        return [n * (den // d) for n, d in ratios], den

    def exact_log_kernel(self, a: int, b: int, path: int, cells=None) -> Fraction:
        """Exact rational value of the (float) cell sum for one path."""
        ints, den = cells if cells is not None else self.exact_cells(path)
        return Fraction(-sum(ints[i] for i in self._indices(a, b)), den)

    def time_index(self, s: float) -> int:
        return int(round(float(s) / self.grid.step))


def fkn_kernel(ensemble: PathEnsemble, V, a: float, b: float) -> np.ndarray:
    """``F_[a, b]`` per path for grid times ``a <= b <= a + beta``."""
    grid = ensemble.grid
    ia, ib = (_on_grid(grid, t) for t in (a, b))
    return FknKernel(_interaction_values(ensemble, V), grid).kernel(ia, ib)


def _on_grid(grid: TimeGrid, s: float) -> int:
    q = float(s) / grid.step
    k = int(round(q))
    if abs(q - k) > 1e-9 * max(1.0, abs(q)):
        raise ValueError(f"endpoint {s} is not on the time grid")
    return k


@dataclass
class AxiomReport:
    n_paths: int
    n_intervals: int
    positive: bool
    cocycle: bool
    shift: bool
    reflection: bool
    failures: list

    @property
    def passed(self) -> bool:
        return self.positive and self.cocycle and self.shift and self.reflection


def axioms_check(ensemble: PathEnsemble, V, n_intervals: int = 8, seed: int = 0) -> AxiomReport:
    """Positivity, cocycle, shift covariance and reflection covariance per path."""
    grid = ensemble.grid
    n_t = grid.n_t
    values = _interaction_values(ensemble, V)
    base = FknKernel(values, grid)
    rng = np.random.default_rng(seed)
    failures = []
    positive = bool(np.all(np.isfinite(base.log_kernel(-n_t // 2, n_t // 2))))
    cocycle = shift = reflection = True
    for _ in range(n_intervals):
        a = int(rng.integers(-n_t, n_t))
        b = a + int(rng.integers(0, n_t + 1))
        c = b + int(rng.integers(0, a + n_t - b + 1))
        k = int(rng.integers(-n_t, n_t + 1))
        shifted = FknKernel(values[:, (np.arange(n_t) + k) % n_t], grid)
        mirrored = FknKernel(values[:, (-np.arange(n_t)) % n_t], grid)
        for p in range(ensemble.n_samples):
            own, sh, mi = base.exact_cells(p), shifted.exact_cells(p), mirrored.exact_cells(p)
            if (base.exact_log_kernel(a, b, p, own) + base.exact_log_kernel(b, c, p, own)
                    != base.exact_log_kernel(a, c, p, own)):
                cocycle = False
                failures.append(("cocycle", p, a, b, c))
            if shifted.exact_log_kernel(a, b, p, sh) != base.exact_log_kernel(a + k, b + k, p, own):
                shift = False
                failures.append(("shift", p, a, b, k))
            if mirrored.exact_log_kernel(a, b, p, mi) != base.exact_log_kernel(-b, -a, p, own):
                reflection = False
                failures.append(("reflection", p, a, b))
    return AxiomReport(ensemble.n_samples, n_intervals, positive, cocycle, shift, reflection, failures[:20])


def _block_slices(n: int, n_blocks: int) -> list[slice]:
    n_blocks = max(2, min(int(n_blocks), n))
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    return [slice(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]


def jackknife(statistic: Callable[[np.ndarray], np.ndarray], n: int, n_blocks: int = DEFAULT_BLOCKS):
    """Leave-one-block-out jackknife of ``statistic(mask)``; returns (full, stderr)."""
    full = np.asarray(statistic(np.ones(n, dtype=bool)))
    blocks = _block_slices(n, n_blocks)
    reps = []
    for sl in blocks:
        mask = np.ones(n, dtype=bool)
        mask[sl] = False
        reps.append(np.asarray(statistic(mask)))
    reps = np.array(reps)
    b = len(blocks)
    var = (b - 1) / b * np.sum(np.abs(reps - reps.mean(axis=0)) ** 2, axis=0)
    return full, np.sqrt(var)


@dataclass(eq=False)
class FknWeights:
    """Full-circle FKN weights, normalised so that the largest weight is 1."""

    log_weights: np.ndarray
    n_blocks: int = DEFAULT_BLOCKS
    ess_floor: float = DEFAULT_ESS_FLOOR

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if not np.all(np.isfinite(self.log_weights)):
            raise ValueError("non-finite log weights")
        self.shift = float(self.log_weights.max())
        self.weights = np.exp(self.log_weights - self.shift)
        if self.ess < self.ess_floor:
            logger.warning("effective sample size %.1f below floor %.1f", self.ess, self.ess_floor)

    @property
    def n_samples(self) -> int:
        return self.weights.size

    @property
    def log_z(self) -> float:
        """Log of the mean (unnormalised) weight."""
        return self.shift + float(np.log(np.mean(self.weights)))

    @property
    def ess(self) -> float:
        w = self.weights
        return float(w.sum() ** 2 / np.sum(w * w))

    @property
    def status(self) -> str:
        return "ok" if self.ess >= self.ess_floor else "low-ess"

    def mean(self, values, mask=None):
        values = np.asarray(values)
        w = self.weights if mask is None else self.weights[mask]
        v = values if mask is None else values[mask]
        return np.tensordot(w, v, axes=(0, 0)) / w.sum()

    def expectation(self, values):
        """Weighted mean with a leave-one-block-out jackknife error."""
        values = np.asarray(values)
        if values.shape[0] != self.n_samples:
            raise ValueError("values must have one entry per sample")
        est, err = jackknife(lambda m: self.mean(values, m), self.n_samples, self.n_blocks)
        return est, err


def perturb_measure(ensemble: PathEnsemble, V, ess_floor: float = DEFAULT_ESS_FLOOR,
                    n_blocks: int = DEFAULT_BLOCKS) -> FknWeights:
    """Weights ``F_[-beta/2, beta/2]`` of the perturbed measure."""
    values = _interaction_values(ensemble, V)
    logw = -_ordered_sum(cell_integrals(values, ensemble.grid.step))
    return FknWeights(logw, n_blocks, ess_floor)


class FknReweighter(BaseEstimator):
    """Estimator wrapper: ``fit`` on paths computes FKN weights.

    ``interaction`` is a fitted transformer (or a callable) mapping
    ``(n, n_t, d)`` paths to ``(n, n_t)`` interaction values.
    """

    def __init__(self, interaction=None, beta=None, ess_floor=DEFAULT_ESS_FLOOR, n_blocks=DEFAULT_BLOCKS):
        self.interaction = interaction
        self.beta = beta
        self.ess_floor = ess_floor
        self.n_blocks = n_blocks

    def fit(self, X, y=None):
        if isinstance(X, PathEnsemble):
            ens = X
        else:
            if self.beta is None:
                raise ValueError("beta is required when fitting on a bare array")
            ens = PathEnsemble(np.asarray(X, dtype=float), self.beta)
        self.weights_ = perturb_measure(ens, self.interaction, self.ess_floor, self.n_blocks)
        self.ess_ = self.weights_.ess
        self.log_z_ = self.weights_.log_z
        return self

    def expectation(self, values):
        check_is_fitted(self, "weights_")
        return self.weights_.expectation(values)


def perturbed_greens(ensemble: PathEnsemble, weights: FknWeights, observables: Sequence):
    """Weighted estimate of ``prod_j F_j(phi(s_j, f_j))``.

    ``observables`` holds ``(time_index, function, coefficients)`` triples.
    Returns ``(value, stderr)``.
    """
    prod = np.ones(ensemble.n_samples, dtype=complex)
    for idx, func, coeffs in observables:
        prod = prod * func(ensemble.field(idx, coeffs))
    if np.all(prod.imag == 0):
        prod = prod.real
    return weights.expectation(prod)


@dataclass
class LpReport:
    p: float
    lhs: float
    lhs_err: float
    rhs: float
    rhs_err: float

    @property
    def sigma(self) -> float:
        return float(np.hypot(self.lhs_err, self.rhs_err))

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 3.0 * self.sigma


def lp_bound_check(ensemble: PathEnsemble, V, p: float, a: float, b: float,
                   n_blocks: int = DEFAULT_BLOCKS) -> LpReport:
    """Monte Carlo check of ``||exp(-int_a^b V)||_p <= ||exp(-(b-a) V)||_p``.

    The right side uses the stationarity of the free measure and averages
    ``exp(-p (b-a) V(s))`` over all grid times.
    """
    grid = ensemble.grid
    ia, ib = _on_grid(grid, a), _on_grid(grid, b)
    values = _interaction_values(ensemble, V)
    kern = FknKernel(values, grid)
    log_lhs = p * kern.log_kernel(ia, ib)
    log_rhs = -p * (ib - ia) * grid.step * values
    shift = max(log_lhs.max(), log_rhs.max())
    lhs_terms = np.exp(log_lhs - shift)
    rhs_terms = np.exp(log_rhs - shift).mean(axis=1)
    n = ensemble.n_samples

    def norm(terms):
        return lambda m: np.exp((np.log(np.mean(terms[m])) + shift) / p)

    lhs, lhs_err = jackknife(norm(lhs_terms), n, n_blocks)
    rhs, rhs_err = jackknife(norm(rhs_terms), n, n_blocks)
    return LpReport(p, float(lhs), float(lhs_err), float(rhs), float(rhs_err))


def _exp_functional(ensemble: PathEnsemble, member) -> np.ndarray:
    """``exp(i sum alpha phi(s, x))`` with ``member`` a list of (time_index, x, alpha)."""
    phase = np.zeros(ensemble.n_samples)
    for idx, x, alpha in member:
        phase = phase + alpha * ensemble.field(idx, x)
    return np.exp(1j * phase)


@dataclass
class OsMarkovReport:
    min_eig: float
    min_eig_err: float
    markov_residual: float
    markov_err: float
    ess: float

    @property
    def os_passed(self) -> bool:
        return self.min_eig >= -3.0 * self.min_eig_err

    @property
    def markov_passed(self) -> bool:
        return abs(self.markov_residual) <= 3.0 * self.markov_err

    @property
    def passed(self) -> bool:
        return self.os_passed and self.markov_passed


def _block_jackknife(block_sums: np.ndarray, finish: Callable[[np.ndarray], float]):
    """Jackknife from per-block additive sums: leaving a block out is a subtraction."""
    total = block_sums.sum(axis=0)
    full = finish(total)
    reps = np.array([finish(total - b) for b in block_sums])
    nb = len(block_sums)
    var = (nb - 1) / nb * np.sum((reps - reps.mean()) ** 2)
    return float(full), float(np.sqrt(var))


def weighted_gram(ensemble: PathEnsemble, weights: FknWeights, family: Sequence):
    """Weighted ``M_kl = E_V[conj(R F_k) F_l]`` and the jackknife error of its smallest eigenvalue."""
    mirrored = ensemble.reflect()
    fwd = np.array([_exp_functional(ensemble, m) for m in family])
    back = np.array([_exp_functional(mirrored, m) for m in family])
    w = weights.weights
    k = len(family)
    sums = []
    for sl in _block_slices(ensemble.n_samples, weights.n_blocks):
        gram = np.einsum("n,kn,ln->kl", w[sl], back[:, sl].conj(), fwd[:, sl])
        sums.append(np.concatenate([gram.ravel(), [w[sl].sum()]]))
    sums = np.array(sums)

    def finish(total):
        m = total[:-1].reshape(k, k) / total[-1].real
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()

    return _block_jackknife(sums, finish)


def weighted_markov_residual(ensemble: PathEnsemble, weights: FknWeights, s_index: int,
                             s_prime_index: int, mode: int = 0, degree: int = 3):
    """Weighted covariance of the residuals of ``phi(s)`` and ``phi(s')`` after
    regression on polynomial features of the boundary values at ``0`` and ``beta/2``.

    Conditional independence given the boundary makes this vanish up to the
    regression error of the finite feature basis.
    """
    half = ensemble.n_t // 2
    if not 0 < s_index < half or not half < s_prime_index < ensemble.n_t:
        raise ValueError("need 0 < s < beta/2 and beta/2 < s' < beta (i.e. s' in (-beta/2, 0))")
    boundary = np.concatenate([ensemble.samples[:, 0, :], ensemble.samples[:, half, :]], axis=1)
    feats = PolynomialFeatures(degree=degree, include_bias=True).fit_transform(boundary)
    y = np.stack([ensemble.samples[:, s_index, mode], ensemble.samples[:, s_prime_index, mode]], axis=1)
    w = weights.weights
    nf = feats.shape[1]
    sums = []
    for sl in _block_slices(ensemble.n_samples, weights.n_blocks):
        fw = feats[sl] * w[sl, None]
        gram = fw.T @ feats[sl]
        cross = fw.T @ y[sl]
        yy = (y[sl] * w[sl, None]).T @ y[sl]
        sums.append(np.concatenate([gram.ravel(), cross.ravel(), yy.ravel(), [w[sl].sum()]]))
    sums = np.array(sums)

    def finish(total):
        gram = total[: nf * nf].reshape(nf, nf)
        cross = total[nf * nf: nf * nf + 2 * nf].reshape(nf, 2)
        yy = total[nf * nf + 2 * nf: nf * nf + 2 * nf + 4].reshape(2, 2)
        coef = np.linalg.lstsq(gram, cross, rcond=None)[0]
        resid = yy - coef.T @ cross - cross.T @ coef + coef.T @ gram @ coef
        return resid[0, 1] / total[-1]

    return _block_jackknife(sums, finish)


def perturbed_os_markov_check(ensemble: PathEnsemble, weights: FknWeights, family: Sequence,
                              s_index: int | None = None, s_prime_index: int | None = None,
                              mode: int = 0, degree: int = 3) -> OsMarkovReport:
    """Weighted OS Gram and Markov residual of the perturbed measure.

    ``family`` members are lists of ``(time_index, x, alpha)`` with time
    indices in ``[0, n_t/2]``.
    """
    half = ensemble.n_t // 2
    for member in family:
        for idx, _, _ in member:
            if not 0 <= idx <= half:
                raise ValueError("functionals must live on [0, beta/2]")
    min_eig, min_err = weighted_gram(ensemble, weights, family)
    s_index = half // 2 if s_index is None else s_index
    s_prime_index = ensemble.n_t - half // 2 if s_prime_index is None else s_prime_index
    res, res_err = weighted_markov_residual(ensemble, weights, s_index, s_prime_index, mode, degree)
    return OsMarkovReport(float(min_eig), float(min_err), float(res), float(res_err), weights.ess)
