"""Spatially cutoff interactions of the thermal field.

The cutoff field at lattice site ``x`` is ``phi_L(x) = sqrt 2 * phi(f_{L,x})``
with ``f_{L,x}(k) = (4 pi)^{-1/2} exp(-ikx) chi_hat(k/L) eps(k)^{-1/2}``.
Its variance is ``(f, (1 + 2 rho) f)`` in the thermal state and ``(f, f)``
at zero temperature; these are the covariances used for Wick ordering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from math import factorial

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .spectral import (NEUTRAL, DiagonalSystem, ModeGrid, TestVector, build_neutral, dispersion,
                       lattice_fourier, momentum_to_real_modes)
from .wick import (WickPolynomial, complex_wick_coefficients, mixed_pair_expectation,
                   reorder, wick_coefficients)

logger = logging.getLogger(__name__)

POLYNOMIAL = "polynomial"
EXPONENTIAL = "exponential"
CHARGED_POLYNOMIAL = "charged"
THERMAL = "thermal"
ZERO_TEMPERATURE = "zero_temperature"
ALPHA_MAX = np.sqrt(2.0 * np.pi)
MAX_KERNEL_DEGREE = 8


def chi_hat(p, profile: str = "cos2", width: float = 1.0) -> np.ndarray:
    """Fourier transform of the normalized bump ``chi`` (so ``chi_hat(0) = 1``).

    ``cos2``: ``chi(x) = (2/w) cos^2(pi x / w)`` on ``|x| <= w/2``, whose
    transform is ``sinc(p w / 2) / (1 - (p w / 2 pi)^2)``.
    ``gauss``: ``chi`` a centred Gaussian of standard deviation ``w``.
    """
    p = np.asarray(p, dtype=float)
    if profile == "cos2":
        u = 0.5 * p * width
        ratio = p * width / (2.0 * np.pi)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sinc(u / np.pi) / (1.0 - ratio * ratio)
        near = np.isclose(np.abs(ratio), 1.0, rtol=0, atol=1e-9)
        return np.where(near, 0.5, val)
    if profile == "gauss":
        return np.exp(-0.5 * (p * width) ** 2)
    raise ValueError(f"unknown chi profile {profile!r}")


def g_profile(grid: ModeGrid, kind: str = "bump", width: float = 2.0, height: float = 1.0) -> np.ndarray:
    """Nonnegative spatial cutoff on the real-space lattice."""
    x = grid.positions
    if kind == "bump":
        g = np.where(np.abs(x) <= width / 2, np.cos(np.pi * x / width) ** 2, 0.0)
    elif kind == "box":
        g = (np.abs(x) <= width / 2).astype(float)
    elif kind == "gauss":
        g = np.exp(-0.5 * (x / width) ** 2)
    elif kind == "const":
        g = np.ones_like(x)
    elif kind == "zero":
        g = np.zeros_like(x)
    else:
        raise ValueError(f"unknown g profile {kind!r}")
    return height * g


@dataclass(frozen=True, eq=False)
class CutoffSpec:
    """UV cutoff ``Lambda``, bump profile for ``chi`` and spatial cutoff ``g``."""

    cutoff: float
    g: np.ndarray
    chi: str = "cos2"
    chi_width: float = 1.0

    def __post_init__(self):
        if not (self.cutoff >= 1.0):
            raise ValueError(f"cutoff must be >= 1 (inf allowed), got {self.cutoff}")
        g = np.array(self.g, dtype=float).reshape(-1)
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ValueError("g must be finite and nonnegative")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        if abs(float(chi_hat(0.0, self.chi, self.chi_width)) - 1.0) > 1e-12:
            raise ValueError("chi is not normalized")

    def chi_values(self, k) -> np.ndarray:
        if np.isinf(self.cutoff):
            return np.ones_like(np.asarray(k, dtype=float))
        return chi_hat(np.asarray(k, dtype=float) / self.cutoff, self.chi, self.chi_width)

    def at(self, cutoff: float) -> "CutoffSpec":
        return replace(self, cutoff=cutoff)


@dataclass(frozen=True, eq=False)
class InteractionSpec:
    """``kind`` in {polynomial, exponential, charged}; ``coefficients`` are the
    Wick coefficients ``a_j`` of ``sum_j a_j :phi^j:`` (or of ``:|psi|^{2j}:``)."""

    kind: str
    cutoff: CutoffSpec
    coefficients: tuple = (0.0, 0.0, 0.0, 0.0, 1.0)
    alpha: float = 0.0
    ordering: str = THERMAL
    require_bounded_below: bool = True

    def __post_init__(self):
        if self.kind not in (POLYNOMIAL, EXPONENTIAL, CHARGED_POLYNOMIAL):
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        if self.ordering not in (THERMAL, ZERO_TEMPERATURE):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        coeffs = tuple(float(a) for a in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if self.kind == EXPONENTIAL:
            if not abs(self.alpha) < ALPHA_MAX:
                raise ValueError(f"|alpha| must stay below sqrt(2 pi), got {self.alpha}")
        elif self.require_bounded_below:
            if self.kind == POLYNOMIAL and not WickPolynomial(coeffs, 0.0).bounded_below:
                raise ValueError("polynomial interaction must be of even degree with positive leading term")
            if self.kind == CHARGED_POLYNOMIAL:
                nz = [j for j, a in enumerate(coeffs) if a]
                if nz and nz[-1] > 0 and coeffs[nz[-1]] <= 0:
                    raise ValueError("charged polynomial needs a positive leading coefficient")

    def with_cutoff(self, cutoff: float) -> "InteractionSpec":
        return replace(self, cutoff=self.cutoff.at(cutoff))


def _check_grid(system: DiagonalSystem) -> ModeGrid:
    if system.grid is None or system.sector != NEUTRAL:
        raise ValueError("interactions need a neutral system built on a ModeGrid")
    return system.grid


def cutoff_momentum(spec: CutoffSpec, x: float, grid: ModeGrid) -> np.ndarray:
    """``f_{L,x}(k)`` on the momentum grid."""
    k = grid.momenta
    return np.exp(-1j * k * x) * spec.chi_values(k) / np.sqrt(dispersion(grid, k)) / np.sqrt(4 * np.pi)


def cutoff_testfunction(spec: CutoffSpec, x: float, system: DiagonalSystem) -> TestVector:
    grid = _check_grid(system)
    return TestVector(momentum_to_real_modes(grid, cutoff_momentum(spec, x, grid)), system)


def cutoff_matrix(spec: CutoffSpec, system: DiagonalSystem) -> np.ndarray:
    """Real-mode coefficients of ``f_{L,x}`` for every lattice site, shape ``(n_x, d)``."""
    grid = _check_grid(system)
    rows = np.array([momentum_to_real_modes(grid, cutoff_momentum(spec, x, grid)) for x in grid.positions])
    return rows.real


def field_variances(spec: CutoffSpec, system: DiagonalSystem) -> tuple[float, float]:
    """Zero-temperature and thermal variances ``(f, f)`` and ``(f, (1+2rho) f)``.

    Both are site independent on the symmetric grid; the first row is used.
    """
    f = cutoff_matrix(spec, system)[0]
    return float(np.sum(f * f)), float(np.sum(f * f * system.thermal_weight))


def thermal_shift(spec: CutoffSpec, system: DiagonalSystem) -> float:
    """``r_L = (c_beta - c_0)(f, f) = (f, rho f)``."""
    f = cutoff_matrix(spec, system)[0]
    return float(np.sum(f * f * system.rho))


def reorder_interaction(spec: InteractionSpec, system: DiagonalSystem) -> InteractionSpec:
    """Zero-temperature ordered polynomial rewritten in thermal Wick powers.

    The variances of ``phi_L`` differ by ``2 r_L``, which is the shift fed to
    :func:`wick.reorder`.
    """
    if spec.kind == EXPONENTIAL:
        raise ValueError("exponential interactions are reordered by a constant factor; not supported here")
    if spec.ordering == THERMAL:
        return spec
    v0, vb = field_variances(spec.cutoff, system)
    if spec.kind == POLYNOMIAL:
        p = reorder(WickPolynomial(spec.coefficients, v0), v0, vb)
        coeffs = p.coeffs
    else:
        coeffs = tuple(_complex_reorder_matrix(len(spec.coefficients) - 1, v0, vb) @ np.asarray(spec.coefficients))
    return replace(spec, coefficients=coeffs, ordering=THERMAL, require_bounded_below=False)


def _complex_reorder_matrix(degree: int, c_from: float, c_to: float) -> np.ndarray:
    """Change of basis ``:|z|^{2j}:_{c_from} = sum_i T[i, j] :|z|^{2i}:_{c_to}``."""
    to_mono_from = np.zeros((degree + 1, degree + 1))
    to_mono_to = np.zeros((degree + 1, degree + 1))
    for j in range(degree + 1):
        to_mono_from[: j + 1, j] = complex_wick_coefficients(j, c_from)
        to_mono_to[: j + 1, j] = complex_wick_coefficients(j, c_to)
    return np.linalg.solve(to_mono_to, to_mono_from)


class InteractionTransformer(BaseEstimator, TransformerMixin):
    """Maps field samples at one Euclidean time to interaction values ``V``.

    ``transform`` accepts ``(n_samples, d)`` mode values, or
    ``(n_samples, n_t, d)`` whole paths (returning ``(n_samples, n_t)``).
    For the charged kind the last axis holds ``2d`` entries: the two
    independent neutral components ``phi_1, phi_2`` of
    ``psi = (phi_1 + i phi_2)/sqrt 2``.
    """

    def __init__(self, spec: InteractionSpec | None = None, system: DiagonalSystem | None = None):
        self.spec = spec
        self.system = system

    def fit(self, X=None, y=None):
        if self.spec is None or self.system is None:
            raise ValueError("InteractionTransformer needs a spec and a system")
        _check_grid(self.system)
        if self.spec.cutoff.g.size != self.system.grid.n_modes:
            raise ValueError("g must be sampled on the real-space lattice of the system grid")
        self.test_functions_ = cutoff_matrix(self.spec.cutoff, self.system)
        self.var_zero_, self.var_thermal_ = field_variances(self.spec.cutoff, self.system)
        self.ordering_var_ = self.var_thermal_ if self.spec.ordering == THERMAL else self.var_zero_
        self.site_weights_ = self.spec.cutoff.g * self.system.grid.delta_x
        self.n_modes_in_ = self.system.d * (2 if self.spec.kind == CHARGED_POLYNOMIAL else 1)
        if X is not None:
            self._validate(X)
        return self

    def _validate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim not in (2, 3) or X.shape[-1] != self.n_modes_in_:
            raise ValueError(f"expected field samples with last axis {self.n_modes_in_}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("field samples contain non-finite values")
        return X

    def cutoff_field(self, X) -> np.ndarray:
        """``phi_L(x)`` for every lattice site, last axis = sites."""
        check_is_fitted(self, "test_functions_")
        X = self._validate(X)
        return np.sqrt(2.0) * X @ self.test_functions_.T

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "test_functions_")
        X = self._validate(X)
        spec, c = self.spec, self.ordering_var_
        if spec.kind == CHARGED_POLYNOMIAL:
            d = self.system.d
            p1 = np.sqrt(2.0) * X[..., :d] @ self.test_functions_.T
            p2 = np.sqrt(2.0) * X[..., d:] @ self.test_functions_.T
            modsq = 0.5 * (p1 * p1 + p2 * p2)
            mono = np.zeros(len(spec.coefficients))
            for j, a in enumerate(spec.coefficients):
                if a:
                    mono[: j + 1] += a * complex_wick_coefficients(j, c)
            local = np.polynomial.polynomial.polyval(modsq, mono)
        else:
            phi = np.sqrt(2.0) * X @ self.test_functions_.T
            if spec.kind == EXPONENTIAL:
                local = np.exp(spec.alpha * phi - 0.5 * spec.alpha ** 2 * c)
            else:
                local = np.polynomial.polynomial.polyval(phi, WickPolynomial(spec.coefficients, c).monomial_coefficients())
        return local @ self.site_weights_


def evaluate_V(X, spec: InteractionSpec, system: DiagonalSystem) -> np.ndarray:
    return InteractionTransformer(spec, system).fit().transform(X)


def _thermal_coefficients(spec: InteractionSpec, system: DiagonalSystem):
    if spec.kind == EXPONENTIAL:
        if spec.ordering != THERMAL:
            raise ValueError("exact inner products need thermally ordered exponentials")
        return None
    return np.asarray(reorder_interaction(spec, system).coefficients)


def _cross_covariance(s1: CutoffSpec, s2: CutoffSpec, system: DiagonalSystem) -> np.ndarray:
    """``Cov(phi_L1(x), phi_L2(y)) = 2 c_beta(f_{L1,x}, f_{L2,y})`` on the lattice."""
    f1 = cutoff_matrix(s1, system)
    f2 = cutoff_matrix(s2, system)
    return (f1 * system.thermal_weight) @ f2.T


def exact_l2_inner(spec1: InteractionSpec, spec2: InteractionSpec, system: DiagonalSystem) -> float:
    """``E[V1 V2]`` in the thermal state, from degree-orthogonal Wick pairings.

    Polynomials ordered at zero temperature are first reordered to the
    thermal basis at their own cutoff.
    """
    if (spec1.kind == CHARGED_POLYNOMIAL) != (spec2.kind == CHARGED_POLYNOMIAL):
        raise ValueError("cannot pair charged and neutral interactions")
    grid = _check_grid(system)
    cov = _cross_covariance(spec1.cutoff, spec2.cutoff, system)
    gg = np.outer(spec1.cutoff.g, spec2.cutoff.g) * grid.delta_x ** 2
    a = _thermal_coefficients(spec1, system)
    b = _thermal_coefficients(spec2, system)
    if spec1.kind == CHARGED_POLYNOMIAL:
        total = 0.0
        for n in range(min(len(a), len(b))):
            if a[n] and b[n]:
                total += a[n] * b[n] * factorial(n) ** 2 * np.sum(gg * cov ** (2 * n))
        return float(total)
    if a is None and b is None:
        return float(np.sum(gg * np.exp(spec1.alpha * spec2.alpha * cov)))
    if a is None or b is None:
        poly, alpha = (b, spec1.alpha) if a is None else (a, spec2.alpha)
        return float(sum(poly[n] * alpha ** n * np.sum(gg * cov ** n) for n in range(len(poly)) if poly[n]))
    total = 0.0
    for n in range(min(len(a), len(b))):
        if a[n] and b[n]:
            total += a[n] * b[n] * factorial(n) * np.sum(gg * cov ** n)
    return float(total)


def direct_l2_inner(spec1: InteractionSpec, spec2: InteractionSpec, system: DiagonalSystem) -> float:
    """Second route to ``E[V1 V2]`` for real polynomials with any ordering.

    Uses the mixed-ordering pairing formula directly, without reordering.
    """
    if spec1.kind != POLYNOMIAL or spec2.kind != POLYNOMIAL:
        raise ValueError("direct route supports neutral polynomials only")
    grid = _check_grid(system)
    cov = _cross_covariance(spec1.cutoff, spec2.cutoff, system)
    gg = np.outer(spec1.cutoff.g, spec2.cutoff.g) * grid.delta_x ** 2
    v0a, vba = field_variances(spec1.cutoff, system)
    v0b, vbb = field_variances(spec2.cutoff, system)
    ca = vba if spec1.ordering == THERMAL else v0a
    cb = vbb if spec2.ordering == THERMAL else v0b
    total = 0.0
    for n, a in enumerate(spec1.coefficients):
        for m, b in enumerate(spec2.coefficients):
            if a and b:
                total += a * b * np.sum(gg * mixed_pair_expectation(n, m, ca, cb, vba, vbb, cov))
    return float(total)


def l2_distance(spec1: InteractionSpec, spec2: InteractionSpec, system: DiagonalSystem, route: str = "reorder") -> float:
    inner = exact_l2_inner if route == "reorder" else direct_l2_inner
    d2 = inner(spec1, spec1, system) + inner(spec2, spec2, system) - 2.0 * inner(spec1, spec2, system)
    return float(np.sqrt(max(d2, 0.0)))


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # (cutoff_1, cutoff_2, distance)
    rate: float = float("nan")
    prefactor: float = float("nan")

    @property
    def distances(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])


def convergence_study(spec: InteractionSpec, ladder, system: DiagonalSystem, route: str = "reorder") -> ConvergenceTable:
    """Exact distances between consecutive cutoffs and the fitted power-law rate."""
    ladder = [float(c) for c in ladder]
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("cutoff ladder must be strictly increasing")
    table = ConvergenceTable()
    for lo, hi in zip(ladder, ladder[1:]):
        dist = l2_distance(spec.with_cutoff(lo), spec.with_cutoff(hi), system, route)
        table.rows.append((lo, hi, dist))
    if len(table.rows) >= 2:
        lam = np.array([r[0] for r in table.rows])
        dist = table.distances
        if np.all(dist > 0):
            slope, intercept = np.polyfit(np.log(lam), np.log(dist), 1)
            table.rate = float(-slope)
            table.prefactor = float(np.exp(intercept))
    return table


class KernelWp:
    """``w_p(k_1..k_p) = g_hat(sum k) prod chi_hat(k_i / L) eps(k_i)^{-1/2}``."""

    def __init__(self, p: int, spec: CutoffSpec, system: DiagonalSystem):
        if int(p) != p or p < 1:
            raise ValueError("degree p must be a positive integer")
        if p > MAX_KERNEL_DEGREE:
            raise ValueError(f"degree {p} exceeds the configured maximum {MAX_KERNEL_DEGREE}")
        self.p = int(p)
        self.spec = spec
        self.system = system
        self.grid = _check_grid(system)
        k = self.grid.momenta
        eps = dispersion(self.grid, k)
        self._one = spec.chi_values(k) / np.sqrt(eps)
        self._measure = self.grid.delta_k / np.tanh(0.5 * system.beta * eps)
        self._weight = np.abs(self._one) ** 2 * self._measure

    def ghat(self, q) -> np.ndarray:
        return lattice_fourier(self.grid, self.spec.g, np.atleast_1d(q))

    def __call__(self, indices) -> np.ndarray:
        """Evaluate on index tuples (``0..2M``), shape ``(..., p)``."""
        idx = np.asarray(indices, dtype=int)
        if idx.shape[-1] != self.p:
            raise ValueError(f"expected tuples of length {self.p}")
        q = np.sum(self.grid.momenta[idx], axis=-1)
        return self.ghat(q.reshape(-1)).reshape(q.shape) * np.prod(self._one[idx], axis=-1)

    def norm2(self) -> float:
        """Weighted norm ``sum Dk^p prod (1+2rho) |w_p|^2`` by repeated convolution.

        The weights only depend on the individual momenta and ``g_hat`` on
        their sum, so the tuple sum collapses to a sum over total momentum.
        """
        conv = self._weight.copy()
        for _ in range(self.p - 1):
            conv = np.convolve(conv, self._weight)
        n = self.grid.half_count
        q = np.arange(-self.p * n, self.p * n + 1) * self.grid.delta_k
        return float(np.sum(conv * np.abs(self.ghat(q)) ** 2))

    def norm2_bruteforce(self) -> float:
        """Direct enumeration of all tuples; only for small ``p`` and grids."""
        n = self.grid.n_modes
        if n ** self.p > 5_000_000:
            raise ValueError("tuple enumeration too large")
        idx = np.stack(np.meshgrid(*[np.arange(n)] * self.p, indexing="ij"), axis=-1).reshape(-1, self.p)
        w = self(idx)
        return float(np.sum(np.abs(w) ** 2 * np.prod(self._measure[idx], axis=-1)))

    def norm2_mc(self, n_tuples: int, seed: int = 0) -> tuple[float, float]:
        """Monte Carlo over uniformly drawn tuples; returns (estimate, standard error)."""
        rng = np.random.default_rng(seed)
        n = self.grid.n_modes
        idx = rng.integers(0, n, size=(int(n_tuples), self.p))
        vals = np.abs(self(idx)) ** 2 * np.prod(self._measure[idx], axis=-1) * n ** self.p
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))


def kernel_wp(p: int, spec: CutoffSpec, system: DiagonalSystem) -> KernelWp:
    return KernelWp(p, spec, system)


def kbeta_kernel(x, system: DiagonalSystem) -> np.ndarray:
    """``K_beta(x) = 1/2 sum_k Dk cos(kx) (1 + 2 rho(k)) / eps(k)``."""
    grid = _check_grid(system)
    k = grid.momenta
    eps = dispersion(grid, k)
    w = 0.5 * grid.delta_k / np.tanh(0.5 * system.beta * eps) / eps
    x = np.asarray(x, dtype=float)
    return np.cos(np.multiply.outer(np.abs(x), k)) @ w


def exp_series(alpha: float, g: np.ndarray, system: DiagonalSystem, n_max: int = 30) -> tuple[np.ndarray, np.ndarray]:
    """Terms ``eps_n = (1/n!) (alpha^2 / 2pi)^n sum_xy Dx^2 g(x) g(y) K_beta(x-y)^n`` and their ratios."""
    grid = _check_grid(system)
    g = np.asarray(g, dtype=float)
    pos = grid.positions
    kmat = kbeta_kernel(np.subtract.outer(pos, pos), system)
    gg = np.outer(g, g) * grid.delta_x ** 2
    c = alpha * alpha / (2.0 * np.pi)
    eps = np.zeros(n_max + 1)
    power = np.ones_like(kmat)
    for n in range(n_max + 1):
        eps[n] = c ** n / factorial(n) * np.sum(gg * power)
        power = power * kmat
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(eps[:-1] > 0, eps[1:] / eps[:-1], np.nan)
    return eps, ratios


def lower_bound_probe(spec: InteractionSpec, X, system: DiagonalSystem, ladder, degree: int | None = None):
    """Empirical minimum of ``V_L`` over samples for each cutoff and the fitted
    constant ``C`` in ``V_L >= -C ln(L)^n`` (``n`` = half the degree)."""
    if spec.kind != POLYNOMIAL or spec.ordering != THERMAL:
        raise ValueError("lower-bound probe expects a thermally ordered polynomial")
    n = degree if degree is not None else WickPolynomial(spec.coefficients, 0.0).degree // 2
    mins = []
    for cut in ladder:
        v = evaluate_V(X, spec.with_cutoff(cut), system)
        mins.append(float(v.min()))
    mins = np.array(mins)
    logs = np.log(np.asarray(ladder, dtype=float)) ** n
    with np.errstate(divide="ignore", invalid="ignore"):
        consts = np.where(logs > 0, -mins / logs, 0.0)
    return mins, float(max(consts.max(), 0.0))


def kbeta_log_sweep(grid: ModeGrid, beta: float, levels: int = 4, x_max: float = 1.0) -> list[np.ndarray]:
    """``K_beta(x) + ln|x|`` on lattice points ``0 < x <= x_max`` for ``levels`` grids
    whose momentum range doubles each step (lattice spacing halves)."""
    out = []
    for level in range(levels):
        g = ModeGrid(grid.delta_k, grid.half_count * 2 ** level, grid.mass)
        system = build_neutral(g, beta)
        x = g.positions
        x = x[(x > 0) & (x <= x_max + 1e-12)]
        out.append(np.column_stack([x, kbeta_kernel(x, system) + np.log(x)]))
    return out


def v_norm2_mc(spec: InteractionSpec, system: DiagonalSystem, samples: np.ndarray, n_blocks: int = 20):
    """Monte Carlo ``E[V^2]`` from time-zero field samples with a block-jackknife error."""
    v = evaluate_V(samples, spec, system)
    sq = v * v
    blocks = np.array_split(sq, n_blocks)
    sums = np.array([b.sum() for b in blocks])
    counts = np.array([b.size for b in blocks])
    est = sums.sum() / counts.sum()
    loo = (sums.sum() - sums) / (counts.sum() - counts)
    err = np.sqrt((n_blocks - 1) / n_blocks * np.sum((loo - loo.mean()) ** 2))
    return float(est), float(err)
