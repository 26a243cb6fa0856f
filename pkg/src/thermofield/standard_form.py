"""Finite-dimensional standard form of a Gibbs state and its perturbations.

Matrices on ``C^d`` act on the doubled space ``C^d (x) C^d`` through
row-major vectorisation, so ``(A (x) 1) vec X = vec(A X)`` and
``(1 (x) B^T) vec X = vec(X B)``.  The KMS vector is ``vec(e^{-beta H/2})``
normalised, the Liouvillean is ``H (x) 1 - 1 (x) H^T`` and the modular
conjugation is entrywise conjugation followed by the tensor swap.

The last part of the module compares operator-level Euclidean correlations
of a single truncated oscillator with weighted path-space averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import null_space, orth, polar, subspace_angles

DEFAULT_MAX_DIM = 64
HERMITIAN_TOL = 1e-12


def _herm_fn(h: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``fn(h)`` for Hermitian ``h`` through its eigendecomposition."""
    e, u = np.linalg.eigh(h)
    return (u * fn(e)) @ u.conj().T


def _swap_permutation(d: int) -> np.ndarray:
    """Index map with ``vec(X^T)[k] = vec(X)[perm[k]]``."""
    return np.arange(d * d).reshape(d, d).T.reshape(-1)


@dataclass(eq=False)
class FiniteKmsSystem:
    """Hamiltonian ``H``, inverse temperature, and an optional diagonal perturbation and charge."""

    H: np.ndarray
    beta: float
    V: np.ndarray | None = None
    Q: np.ndarray | None = None
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        h = np.asarray(self.H, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("H must be a square matrix")
        if h.shape[0] > self.max_dim:
            raise ValueError(f"dimension {h.shape[0]} exceeds the maximum {self.max_dim}")
        scale = max(1.0, float(np.abs(h).max(initial=0.0)))
        if np.abs(h - h.conj().T).max(initial=0.0) > HERMITIAN_TOL * scale:
            raise ValueError("H is not Hermitian")
        self.H = 0.5 * (h + h.conj().T)
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        self.V = None if self.V is None else _diagonal(self.V, self.d, "V")
        if self.Q is not None:
            q = _diagonal(self.Q, self.d, "Q")
            if not np.array_equal(q, np.round(q)):
                raise ValueError("the charge must have integer eigenvalues")
            if np.abs(self.H * (q[:, None] - q[None, :])).max() > HERMITIAN_TOL * scale:
                raise ValueError("H does not commute with the charge")
            self.Q = q

    @property
    def d(self) -> int:
        return self.H.shape[0]


def _diagonal(m, d: int, name: str) -> np.ndarray:
    """Accept a length-``d`` vector or a diagonal matrix; return the real diagonal."""
    m = np.asarray(m)
    if m.ndim == 2:
        if m.shape != (d, d):
            raise ValueError(f"{name} has shape {m.shape}, expected {(d, d)}")
        if np.abs(m - np.diag(np.diag(m))).max() > 0:
            raise ValueError(f"{name} must be diagonal in the distinguished basis")
        m = np.diag(m)
    m = np.asarray(m).reshape(-1)
    if m.size != d:
        raise ValueError(f"{name} needs {d} diagonal entries")
    if np.iscomplexobj(m) and np.abs(m.imag).max() > 0:
        raise ValueError(f"{name} must be real")
    return np.asarray(m.real, dtype=float)


def random_kms_system(d: int, beta: float, rng: np.random.Generator, charges=None) -> FiniteKmsSystem:
    """Random Hermitian ``H`` (block diagonal in the charge sectors if ``charges`` is given)."""
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = 0.5 * (a + a.conj().T) / np.sqrt(d)
    if charges is not None:
        q = np.asarray(charges)
        h = h * (q[:, None] == q[None, :])
    return FiniteKmsSystem(h, beta, V=rng.normal(size=d), Q=charges)


@dataclass(eq=False)
class StandardFormObjects:
    system: FiniteKmsSystem
    omega: np.ndarray
    L: np.ndarray
    Q: np.ndarray | None
    perm: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.omega.size

    def J(self, psi: np.ndarray) -> np.ndarray:
        """Modular conjugation: conjugate, then swap the tensor factors."""
        return np.conj(np.asarray(psi))[..., self.perm]

    def J_matrix_conjugate(self, op: np.ndarray) -> np.ndarray:
        """``J op J`` as a linear matrix."""
        return np.conj(op)[np.ix_(self.perm, self.perm)]

    def left(self, a: np.ndarray) -> np.ndarray:
        return np.kron(a, np.eye(self.system.d))

    def state(self, a: np.ndarray, vector: np.ndarray | None = None) -> complex:
        """``<vector, (A (x) 1) vector>``, the KMS vector by default."""
        psi = self.omega if vector is None else vector
        d = self.system.d
        return complex(np.vdot(psi, (a @ psi.reshape(d, d)).reshape(-1)))


def _gibbs_root(h: np.ndarray, beta: float) -> np.ndarray:
    e0 = np.linalg.eigvalsh(h).min()
    return _herm_fn(h, lambda e: np.exp(-0.5 * beta * (e - e0)))


def gns_build(system: FiniteKmsSystem) -> StandardFormObjects:
    """Standard-form objects of the Gibbs state of ``system``."""
    d = system.d
    root = _gibbs_root(system.H, system.beta)
    omega = root.reshape(-1)
    omega = omega / np.linalg.norm(omega)
    eye = np.eye(d)
    L = np.kron(system.H, eye) - np.kron(eye, system.H.T)
    Q = None
    if system.Q is not None:
        Q = np.kron(np.diag(system.Q), eye) - np.kron(eye, np.diag(system.Q))
    return StandardFormObjects(system, omega, L, Q, _swap_permutation(d))


def gibbs_expectation(h: np.ndarray, beta: float, a: np.ndarray) -> complex:
    """``Tr(e^{-beta h} A) / Tr(e^{-beta h})``."""
    e0 = np.linalg.eigvalsh(h).min()
    rho = _herm_fn(h, lambda e: np.exp(-beta * (e - e0)))
    return complex(np.trace(rho @ a) / np.trace(rho).real)


def structure_residuals(objs: StandardFormObjects) -> dict:
    """``|L Omega|``, ``|J^2 - 1|`` on a basis, ``|J L J + L|``, ``|J Omega - Omega|``."""
    basis = np.eye(objs.dim, dtype=complex)
    return {
        "L_omega": float(np.linalg.norm(objs.L @ objs.omega)),
        "J_squared": float(np.abs(objs.J(objs.J(basis)) - basis).max()),
        "JLJ_plus_L": float(np.abs(objs.J_matrix_conjugate(objs.L) + objs.L).max()),
        "J_omega": float(np.linalg.norm(objs.J(objs.omega) - objs.omega)),
    }


def _evolve(h: np.ndarray, z: complex, b: np.ndarray) -> np.ndarray:
    """``e^{i z h} b e^{-i z h}`` for complex ``z``; ``h`` is shifted to keep exponents small."""
    e, u = np.linalg.eigh(h)
    e = e - e.min()
    fwd = (u * np.exp(1j * z * e)) @ u.conj().T
    bwd = (u * np.exp(-1j * z * e)) @ u.conj().T
    return fwd @ b @ bwd


def kms_verify(objs: StandardFormObjects, A: np.ndarray, B: np.ndarray, ts: Sequence[float],
               beta_shift: float | None = None, vector: np.ndarray | None = None,
               h_dyn: np.ndarray | None = None) -> float:
    """Max over ``ts`` of ``|omega(A tau_{t + i beta}(B)) - omega(tau_t(B) A)|``.

    The state is read from the GNS vector (``vector`` overrides it) and the
    dynamics from ``h_dyn`` (the system Hamiltonian by default).
    ``beta_shift`` sets the imaginary shift; anything other than the state's
    inverse temperature is a negative control.
    """
    h = objs.system.H if h_dyn is None else h_dyn
    shift = objs.system.beta if beta_shift is None else float(beta_shift)
    worst = 0.0
    for t in ts:
        lhs = objs.state(A @ _evolve(h, t + 1j * shift, B), vector)
        rhs = objs.state(_evolve(h, t, B) @ A, vector)
        worst = max(worst, abs(lhs - rhs))
    return float(worst)


@dataclass(eq=False)
class PerturbedObjects:
    H_V: np.ndarray
    omega_V: np.ndarray
    v: np.ndarray
    base: StandardFormObjects
    gibbs_residual: float

    def state(self, a: np.ndarray) -> complex:
        return self.base.state(a, self.omega_V)


def perturb(objs: StandardFormObjects, V=None) -> PerturbedObjects:
    """``H_V = L + V (x) 1`` and ``Omega_V = e^{-beta H_V / 2} Omega`` normalised.

    ``gibbs_residual`` compares ``Omega_V`` with the vectorised Gibbs root of
    ``H + v``, computed independently.
    """
    system = objs.system
    v = system.V if V is None else _diagonal(V, system.d, "V")
    if v is None:
        v = np.zeros(system.d)
    h_v = objs.L + np.kron(np.diag(v).astype(complex), np.eye(system.d))
    e, u = np.linalg.eigh(h_v)
    weights = np.exp(-0.5 * system.beta * (e - e.min()))
    omega_v = u @ (weights * (u.conj().T @ objs.omega))
    omega_v = omega_v / np.linalg.norm(omega_v)
    direct = _gibbs_root(system.H + np.diag(v), system.beta).reshape(-1)
    direct = direct / np.linalg.norm(direct)
    resid = float(np.linalg.norm(omega_v - direct))
    return PerturbedObjects(h_v, omega_v, v, objs, resid)


def tomita_conjugation(objs: StandardFormObjects, omega_v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear parts of ``J_V`` and ``Delta_V`` from the Tomita operator of ``omega_v``.

    ``S (A (x) 1) Omega_V = (A^* (x) 1) Omega_V``.  Writing ``Omega_V = vec X``,
    ``S = M o conj`` with ``M = (X^{-1} (x) X^T) P`` and ``P`` the swap; then
    ``Delta = M^T conj(M)`` and the linear part of ``J`` is the unitary polar
    factor of ``M`` (taken from an SVD, which avoids squaring the condition
    number of ``X``).
    """
    d = objs.system.d
    x = omega_v.reshape(d, d)
    swap = np.eye(d * d)[objs.perm]
    m = np.kron(np.linalg.inv(x), x.T) @ swap
    delta = m.T @ np.conj(m)
    delta = 0.5 * (delta + delta.conj().T)
    unitary, _ = polar(m)
    return unitary, delta


@dataclass
class LiouvilleanReport:
    L_V_omega_V: float
    L_V_formula: float
    gibbs_vectorization: float
    dynamics: float
    kms: float
    J_V_minus_J: float
    modular_operator: float
    state_probes: float
    additivity: float
    tolerances: dict

    @property
    def passed(self) -> bool:
        t = self.tolerances
        return (self.L_V_omega_V <= t["closed_form"] and self.L_V_formula <= t["closed_form"]
                and self.gibbs_vectorization <= t["closed_form"] and self.dynamics <= t["kms"]
                and self.kms <= t["kms"] and self.J_V_minus_J <= t["closed_form"]
                and self.modular_operator <= t["kms"] and self.state_probes <= t["closed_form"]
                and self.additivity <= t["closed_form"])

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "tolerances"}
        out["tolerances"] = dict(self.tolerances)
        out["passed"] = self.passed
        return out


def _random_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def liouvillean_verify(objs: StandardFormObjects, V=None, seed: int = 0, n_probes: int = 10,
                       ts: Sequence[float] = (-1.0, -0.3, 0.0, 0.4, 1.3),
                       closed_form_tol: float = 1e-10, kms_tol: float = 1e-8) -> LiouvilleanReport:
    """Check the perturbed standard form against dense-matrix oracles."""
    system = objs.system
    rng = np.random.default_rng(seed)
    pert = perturb(objs, V)
    v = pert.v
    d = system.d
    h_tot = system.H + np.diag(v)
    eye = np.eye(d)
    vv = np.kron(np.diag(v).astype(complex), eye)
    l_v = pert.H_V - objs.J_matrix_conjugate(vv)
    formula = np.kron(h_tot, eye) - np.kron(eye, h_tot.T)

    # e^{i t L_V} (A (x) 1) e^{-i t L_V} against the perturbed dynamics on the left factor
    a = _random_matrix(d, rng)
    dyn = 0.0
    for t in ts:
        lhs = _evolve(l_v, t, objs.left(a))
        dyn = max(dyn, float(np.abs(lhs - objs.left(_evolve(h_tot, t, a))).max()))

    a, b = _random_matrix(d, rng), _random_matrix(d, rng)
    kms = kms_verify(objs, a, b, ts, vector=pert.omega_V, h_dyn=h_tot)

    j_lin, delta = tomita_conjugation(objs, pert.omega_V)
    swap = np.eye(d * d)[objs.perm]
    modular = _herm_fn(l_v, lambda e: np.exp(-system.beta * e))
    mod_err = float(np.abs(delta - modular).max() / max(1.0, np.abs(modular).max()))

    probes = 0.0
    for _ in range(n_probes):
        p = _random_matrix(d, rng)
        probes = max(probes, abs(pert.state(p) - gibbs_expectation(h_tot, system.beta, p)))

    # perturb by v1 then v2 versus by v1 + v2 at once
    split = rng.uniform(0.0, 1.0, size=d)
    v1, v2 = v * split, v * (1 - split)
    stepped = perturb(gns_build(FiniteKmsSystem(system.H + np.diag(v1), system.beta)), v2).omega_V
    additivity = float(np.linalg.norm(stepped - pert.omega_V))

    return LiouvilleanReport(
        L_V_omega_V=float(np.linalg.norm(l_v @ pert.omega_V)),
        L_V_formula=float(np.abs(l_v - formula).max()),
        gibbs_vectorization=pert.gibbs_residual,
        dynamics=dyn,
        kms=kms,
        J_V_minus_J=float(np.abs(j_lin - swap).max()),
        modular_operator=mod_err,
        state_probes=float(probes),
        additivity=additivity,
        tolerances={"closed_form": closed_form_tol, "kms": kms_tol},
    )


@dataclass
class GaugeReport:
    kernel_dim: int
    orbit_dim: int
    max_angle: float
    Q_omega: float
    orbit_size: int

    def passed(self, tol: float = 1e-10) -> bool:
        return self.kernel_dim == self.orbit_dim and self.max_angle <= tol and self.Q_omega <= tol


def gauge_sector_check(objs: StandardFormObjects, rank_tol: float = 1e-9) -> GaugeReport:
    """Compare ``Ker Q`` with the span of ``A Omega`` over gauge-invariant ``A``.

    Gauge-invariant matrices are produced by averaging ``e^{i theta Q} A e^{-i theta Q}``
    over ``N`` equally spaced angles; ``N`` exceeds the largest charge gap, so
    the discrete average is the exact projection.
    """
    system = objs.system
    if system.Q is None:
        raise ValueError("the system has no charge")
    d = system.d
    q = system.Q
    gap = int(np.max(np.abs(q[:, None] - q[None, :]), initial=0))
    n_angles = gap + 1
    avg = np.zeros((d * d, d * d), dtype=complex)
    for k in range(n_angles):
        u = np.exp(2j * np.pi * k / n_angles * q)
        avg += np.kron(np.diag(u), np.diag(np.conj(u)))
    avg /= n_angles
    # column k: (A_k (x) 1) Omega with A_k the averaged k-th matrix unit
    vecs = np.stack([objs.left(avg[:, k].reshape(d, d)) @ objs.omega for k in range(d * d)], axis=1)
    orbit = orth(vecs, rcond=rank_tol)
    kernel = null_space(objs.Q, rcond=rank_tol)
    if orbit.shape[1] != kernel.shape[1]:
        angle = float(np.pi / 2)
    elif kernel.shape[1] == 0:
        angle = 0.0
    else:
        angle = float(np.max(subspace_angles(orbit, kernel)))
    return GaugeReport(kernel.shape[1], orbit.shape[1], angle,
                       float(np.linalg.norm(objs.Q @ objs.omega)), n_angles)


# Truncated oscillator ---------------------------------------------------------

@dataclass(frozen=True)
class OscillatorSpec:
    """``H0 = -(a/2) d^2/dx^2 + (a/2) x^2`` on ``n_points`` equally spaced points in ``[-half_width, half_width]``.

    ``kinetic="dvr"`` uses the sinc-basis second derivative (spectrally
    accurate); ``"fd"`` uses the three-point stencil.
    """

    frequency: float = 1.0
    half_width: float = 8.0
    n_points: int = 81
    kinetic: str = "dvr"

    def __post_init__(self):
        if self.frequency <= 0 or self.half_width <= 0 or self.n_points < 3:
            raise ValueError("invalid oscillator grid")
        if self.kinetic not in ("dvr", "fd"):
            raise ValueError(f"unknown kinetic discretisation {self.kinetic!r}")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / (self.n_points - 1)

    def hamiltonian(self, potential: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
        n, h, a = self.n_points, self.spacing, self.frequency
        if self.kinetic == "dvr":
            i = np.arange(n)
            diff = i[:, None] - i[None, :]
            safe = np.where(diff == 0, 1, diff)
            kin = np.where(diff == 0, np.pi ** 2 / 3, 2.0 * (-1.0) ** np.abs(diff) / safe ** 2)
            kin = 0.5 * a / h ** 2 * kin
        else:
            kin = 0.5 * a / h ** 2 * (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1))
        x = self.x
        pot = 0.5 * a * x ** 2
        if potential is not None:
            pot = pot + potential(x)
        return kin + np.diag(pot)


def _check_insertions(insertions, beta):
    times = np.array([s for s, _ in insertions], dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and (times[0] < 0 or times[-1] > beta)):
        raise ValueError("insertion times must be ordered in [0, beta]")
    return times


def operator_correlation(spec: OscillatorSpec, beta: float, insertions: Sequence,
                         potential: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """``Tr(f_1 e^{-(s_2-s_1)H} f_2 ... f_n e^{-(beta - s_n + s_1)H}) / Tr e^{-beta H}``.

    ``insertions`` is a list of ``(s, f)`` with ``f`` a function of position.
    """
    times = _check_insertions(insertions, beta)
    e, u = np.linalg.eigh(spec.hamiltonian(potential))
    e = e - e[0]
    x = spec.x

    def propagator(tau):
        return (u * np.exp(-tau * e)) @ u.T

    if not insertions:
        return 1.0
    gaps = np.append(np.diff(times), beta - times[-1] + times[0])
    prod = np.eye(spec.n_points)
    for (_, f), gap in zip(insertions, gaps):
        prod = prod @ (np.asarray(f(x), dtype=float)[:, None] * propagator(gap))
    return float(np.trace(prod) / np.exp(-beta * e).sum())


def trotter_correlation(spec: OscillatorSpec, beta: float, n_t: int, insertions: Sequence,
                        potential: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Correlation of the time-discretised perturbed measure.

    Uses the symmetric transfer matrix ``e^{-step V/2} e^{-step H0} e^{-step V/2}``,
    which reproduces the trapezoid FKN weight on an ``n_t``-point grid.
    ``insertions`` is a list of ``(time_index, f)``.
    """
    step = beta / n_t
    e, u = np.linalg.eigh(spec.hamiltonian())
    e = e - e[0]
    x = spec.x
    free = (u * np.exp(-step * e)) @ u.T
    half = np.ones_like(x) if potential is None else np.exp(-0.5 * step * potential(x))
    transfer = half[:, None] * free * half[None, :]
    at = {}
    for idx, f in insertions:
        if not 0 <= idx < n_t:
            raise ValueError("insertion index outside the grid")
        at[idx] = at.get(idx, np.ones_like(x)) * np.asarray(f(x), dtype=float)
    num = np.eye(spec.n_points)
    den = np.eye(spec.n_points)
    for k in range(n_t):
        weight = at.get(k)
        num = num @ (transfer if weight is None else weight[:, None] * transfer)
        den = den @ transfer
        scale = np.abs(den).max()
        num, den = num / scale, den / scale
    return float(np.trace(num) / np.trace(den))


def shifted_frequency_correlation(a: float, beta: float, lam: float, s: float) -> float:
    """``<x x(s)>`` for ``H0 + lam x^2``: a Gaussian oscillator with ``a c = a (a + 2 lam)``."""
    c = a + 2.0 * lam
    w = np.sqrt(a * c)
    return float(0.5 * np.sqrt(a / c) * np.cosh((0.5 * beta - s) * w) / np.sinh(0.5 * beta * w))


def truncation_budget(beta: float, insertions: Sequence, potential=None, frequency: float = 1.0,
                      kinetic: str = "dvr", sweep: Sequence[tuple[float, int]] | None = None):
    """Operator values along a position-grid refinement sweep.

    Returns ``(values, budget)``; the budget is the change between the last
    two sweep entries.
    """
    if sweep is None:
        sweep = ((6.0, 41), (7.0, 61), (8.0, 81), (9.0, 101))
    values = [operator_correlation(OscillatorSpec(frequency, hw, n, kinetic), beta, insertions, potential)
              for hw, n in sweep]
    return values, float(abs(values[-1] - values[-2]))


@dataclass
class FeynmanKacReport:
    coefficients: tuple
    lag_index: int
    mc_value: float
    mc_error: float
    trotter_value: float
    operator_value: float
    truncation_budget: float
    free_mc_value: float
    free_mc_error: float
    free_exact: float
    ess: float
    sigma: float = 5.0

    @property
    def discrepancy(self) -> float:
        return abs(self.mc_value - self.trotter_value)

    @property
    def passed(self) -> bool:
        return (self.discrepancy <= self.sigma * self.mc_error + self.truncation_budget
                and self.truncation_budget <= 1e-6
                and abs(self.free_mc_value - self.free_exact) <= self.sigma * self.free_mc_error)

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out.update(discrepancy=self.discrepancy, passed=self.passed)
        return out


def feynman_kac_crosscheck(frequency: float = 1.0, beta: float = 1.0, coefficients=(0, 0, 0, 0, 0.1), n_t: int = 16,
                           lag_index: int | None = None, n_samples: int = 100_000, seed: int = 0,
                           sigma: float = 5.0, n_mats: int = 512) -> FeynmanKacReport:
    """Weighted path-space ``<phi(0) phi(s)>`` against the operator value.

    ``coefficients`` are the monomial coefficients (ascending) of the
    single-mode potential, e.g. ``(0, 0, 0, 0, lam)`` for ``lam phi^4``.

    The Monte Carlo side reweights the free single-mode periodic ensemble; the
    operator side evaluates the same time-discretised measure by transfer
    matrices on a position grid.  The continuum operator value is reported
    alongside so the time-discretisation effect is visible.
    """
    from .fkn import perturb_measure, perturbed_greens
    from .pathspace import TimeGrid, sample_paths
    from .quasifree import periodic_kernel
    from .spectral import DiagonalSystem

    lag = n_t // 2 if lag_index is None else int(lag_index)
    system = DiagonalSystem.from_frequencies([frequency], beta)
    grid = TimeGrid(beta, n_t)
    ens = sample_paths(system, grid, n_samples, seed, n_mats=n_mats)
    coefficients = tuple(float(c) for c in coefficients)
    nz = [j for j, c in enumerate(coefficients) if c]
    if nz and (nz[-1] % 2 or coefficients[nz[-1]] < 0):
        raise ValueError("the potential must be bounded below")
    potential = (lambda x: np.polynomial.polynomial.polyval(x, coefficients))
    weights = perturb_measure(ens, lambda paths: potential(paths[..., 0]))
    ident = (lambda y: y)
    obs = [(0, ident, [1.0]), (lag, ident, [1.0])]
    mc, mc_err = perturbed_greens(ens, weights, obs)
    free = perturb_measure(ens, np.zeros((n_samples, n_t)))
    free_mc, free_err = perturbed_greens(ens, free, obs)

    pos = (lambda x: x)
    insertions_idx = [(0, pos), (lag, pos)]
    sweep = ((6.0, 41), (7.0, 61), (8.0, 81), (9.0, 101))
    trotter = [trotter_correlation(OscillatorSpec(frequency, hw, n), beta, n_t, insertions_idx, potential)
               for hw, n in sweep]
    s = lag * grid.step
    cont, budget_cont = truncation_budget(beta, [(0.0, pos), (s, pos)], potential, frequency, sweep=sweep)
    budget = max(abs(trotter[-1] - trotter[-2]), budget_cont)
    return FeynmanKacReport(
        coefficients=coefficients, lag_index=lag, mc_value=float(np.real(mc)), mc_error=float(mc_err),
        trotter_value=trotter[-1], operator_value=cont[-1], truncation_budget=budget,
        free_mc_value=float(np.real(free_mc)), free_mc_error=float(free_err),
        free_exact=float(0.5 * periodic_kernel(s, frequency, beta)), ess=weights.ess, sigma=sigma,
    )
