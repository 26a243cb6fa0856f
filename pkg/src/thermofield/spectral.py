"""Finite-mode one-particle spaces for the free Klein-Gordon field.

Momenta live on a symmetric grid ``k_j = j * delta_k`` (``j = -M..M``) in a
periodic box of length ``2 pi / delta_k``.  Every continuum integral over
``k`` becomes a ``delta_k``-weighted sum.

Test vectors are stored in the *real-mode* basis: the pair ``(k, -k)`` is
rotated into a cosine and a sine combination, so the conjugation of the
real field becomes componentwise complex conjugation and the frequency
operator stays diagonal.  The factor ``sqrt(delta_k)`` is absorbed into the
coefficients, so the Hilbert-space inner product is the plain ``vdot``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEUTRAL = "neutral"
CHARGED = "charged"


@dataclass(frozen=True)
class ModeGrid:
    """Symmetric momentum grid with ``2 * half_count + 1`` modes."""

    delta_k: float
    half_count: int
    mass: float

    def __post_init__(self):
        if not np.isfinite(self.delta_k) or self.delta_k <= 0:
            raise ValueError(f"delta_k must be positive, got {self.delta_k}")
        if int(self.half_count) != self.half_count or self.half_count < 0:
            raise ValueError(f"half_count must be a nonnegative integer, got {self.half_count}")
        if not np.isfinite(self.mass) or self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        object.__setattr__(self, "half_count", int(self.half_count))

    @property
    def n_modes(self) -> int:
        return 2 * self.half_count + 1

    @property
    def box_length(self) -> float:
        return 2.0 * np.pi / self.delta_k

    @property
    def momenta(self) -> np.ndarray:
        """Momenta ordered ``-M..M``."""
        return np.arange(-self.half_count, self.half_count + 1) * self.delta_k

    @property
    def delta_x(self) -> float:
        return self.box_length / self.n_modes

    @property
    def positions(self) -> np.ndarray:
        """Real-space lattice ``x_j = j * delta_x`` sharing the momentum box."""
        return np.arange(-self.half_count, self.half_count + 1) * self.delta_x


def dispersion(grid: ModeGrid, k: np.ndarray | None = None) -> np.ndarray:
    """Relativistic dispersion ``sqrt(k^2 + m^2)`` on the grid momenta."""
    if k is None:
        k = grid.momenta
    return np.hypot(np.asarray(k, dtype=float), grid.mass)


def bose_factor(a, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Bose occupation ``1/(exp(beta a) - 1)`` and ``1 + 2 rho = coth(beta a / 2)``.

    Written in terms of ``exp(-beta a)`` so that large ``beta a`` underflows
    to zero instead of overflowing.
    """
    a = np.asarray(a, dtype=float)
    if beta <= 0 or not np.isfinite(beta):
        raise ValueError(f"beta must be positive and finite, got {beta}")
    if np.any(a <= 0):
        raise ValueError("frequencies must be strictly positive")
    x = beta * a
    rho = np.exp(-x) / -np.expm1(-x)
    thermal = 1.0 / np.tanh(0.5 * x)
    return rho, thermal


def real_mode_matrix(half_count: int) -> np.ndarray:
    """Unitary map from momentum coefficients (``k = -M..M``) to real modes.

    Row order: ``k = 0``, then ``cos_1, sin_1, cos_2, sin_2, ...``.  The cosine
    row picks ``(f(k) + f(-k))/sqrt 2`` and the sine row
    ``-i (f(k) - f(-k))/sqrt 2``; both are real when ``f(-k) = conj f(k)``.
    """
    n = 2 * half_count + 1
    out = np.zeros((n, n), dtype=complex)
    centre = half_count
    out[0, centre] = 1.0
    s = 1.0 / np.sqrt(2.0)
    for j in range(1, half_count + 1):
        row = 2 * j - 1
        out[row, centre + j] = s
        out[row, centre - j] = s
        out[row + 1, centre + j] = -1j * s
        out[row + 1, centre - j] = 1j * s
    return out


def real_mode_momenta(half_count: int, delta_k: float) -> np.ndarray:
    """``|k|`` attached to each real mode, in real-mode order."""
    idx = np.concatenate([[0], np.repeat(np.arange(1, half_count + 1), 2)])
    return idx * delta_k


@dataclass(frozen=True, eq=False)
class DiagonalSystem:
    """Finite one-particle space with a diagonal frequency operator.

    For the charged sector the coefficient vector is ``[x_plus, x_minus]``,
    each block living in the real-mode basis of the spatial modes, with
    frequencies ``eps - mu`` and ``eps + mu``.
    """

    frequencies: np.ndarray
    beta: float
    sector: str = NEUTRAL
    mu: float = 0.0
    charges: np.ndarray | None = None
    energies: np.ndarray | None = None
    grid: ModeGrid | None = None

    def __post_init__(self):
        a = np.array(self.frequencies, dtype=float).reshape(-1)
        if a.size == 0:
            raise ValueError("a system needs at least one mode")
        if np.any(~np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("frequencies must be finite and strictly positive")
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.sector not in (NEUTRAL, CHARGED):
            raise ValueError(f"unknown sector {self.sector!r}")
        if self.sector == CHARGED and a.size % 2:
            raise ValueError("charged systems carry an even number of modes")
        a.setflags(write=False)
        object.__setattr__(self, "frequencies", a)
        eps = a if self.energies is None else np.array(self.energies, dtype=float).reshape(-1)
        eps.setflags(write=False)
        object.__setattr__(self, "energies", eps)
        if self.charges is not None:
            q = np.array(self.charges, dtype=float).reshape(-1)
            q.setflags(write=False)
            object.__setattr__(self, "charges", q)

    @classmethod
    def from_frequencies(cls, frequencies, beta: float) -> "DiagonalSystem":
        return cls(frequencies=frequencies, beta=beta)

    @property
    def d(self) -> int:
        return self.frequencies.size

    @property
    def n_spatial(self) -> int:
        return self.d // 2 if self.sector == CHARGED else self.d

    @property
    def rho(self) -> np.ndarray:
        return bose_factor(self.frequencies, self.beta)[0]

    @property
    def thermal_weight(self) -> np.ndarray:
        """``1 + 2 rho`` per mode."""
        return bose_factor(self.frequencies, self.beta)[1]

    @property
    def kappa_commutes(self) -> bool:
        """Whether the conjugation commutes with the frequency operator."""
        if self.sector == NEUTRAL:
            return True
        h = self.n_spatial
        return bool(np.array_equal(self.frequencies[:h], self.frequencies[h:]))

    def kappa(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs)
        if self.sector == NEUTRAL:
            return np.conj(c)
        h = self.n_spatial
        return np.concatenate([np.conj(c[..., h:]), np.conj(c[..., :h])], axis=-1)

    def with_beta(self, beta: float) -> "DiagonalSystem":
        return DiagonalSystem(self.frequencies, beta, self.sector, self.mu,
                              self.charges, self.energies, self.grid)


@dataclass(frozen=True, eq=False)
class TestVector:
    """Element of the one-particle space of a :class:`DiagonalSystem`."""

    __test__ = False  # keep pytest from collecting this class

    coeffs: np.ndarray
    system: DiagonalSystem

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if c.size != self.system.d:
            raise ValueError(f"vector has {c.size} coefficients, system has {self.system.d} modes")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def kappa(self) -> "TestVector":
        return TestVector(self.system.kappa(self.coeffs), self.system)

    def is_kappa_real(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.system.kappa(self.coeffs) - self.coeffs) <= atol))

    def inner(self, other: "TestVector") -> complex:
        return complex(np.vdot(self.coeffs, other.coeffs))

    def norm2(self) -> float:
        return float(np.vdot(self.coeffs, self.coeffs).real)

    def __add__(self, other: "TestVector") -> "TestVector":
        return TestVector(self.coeffs + other.coeffs, self.system)

    def __mul__(self, scalar) -> "TestVector":
        return TestVector(self.coeffs * scalar, self.system)

    __rmul__ = __mul__

    def momentum(self) -> np.ndarray:
        """Momentum-space values ``f(k)`` (``k = -M..M``); needs a grid."""
        grid = self.system.grid
        if grid is None:
            raise ValueError("system has no momentum grid")
        u = real_mode_matrix(grid.half_count)
        back = lambda block: u.conj().T @ block / np.sqrt(grid.delta_k)
        if self.system.sector == NEUTRAL:
            return back(self.coeffs)
        h = self.system.n_spatial
        return np.stack([back(self.coeffs[:h]), back(self.coeffs[h:])])


def build_neutral(grid: ModeGrid, beta: float) -> DiagonalSystem:
    """Neutral field: one real mode per (cos, sin) combination, ``a = eps``."""
    eps = dispersion(grid, real_mode_momenta(grid.half_count, grid.delta_k))
    return DiagonalSystem(eps, beta, NEUTRAL, grid=grid)


def build_charged(grid: ModeGrid, beta: float, mu: float) -> DiagonalSystem:
    """Charged field with chemical potential; sectors carry ``a = eps -/+ mu``."""
    if abs(mu) >= grid.mass:
        raise ValueError(f"|mu| = {abs(mu)} must stay below the mass {grid.mass} (condensation)")
    eps = dispersion(grid, real_mode_momenta(grid.half_count, grid.delta_k))
    freqs = np.concatenate([eps - mu, eps + mu])
    charges = np.concatenate([np.ones_like(eps), -np.ones_like(eps)])
    return DiagonalSystem(freqs, beta, CHARGED, mu=mu, charges=charges,
                          energies=np.concatenate([eps, eps]), grid=grid)


def lattice_fourier(grid: ModeGrid, values: np.ndarray, p: np.ndarray | None = None) -> np.ndarray:
    """``h_hat(p) = sum_x h(x) exp(-i p x) delta_x`` on the real-space lattice."""
    values = np.asarray(values)
    if values.shape[-1] != grid.n_modes:
        raise ValueError(f"expected {grid.n_modes} lattice samples, got {values.shape[-1]}")
    p = grid.momenta if p is None else np.asarray(p, dtype=float)
    phase = np.exp(-1j * np.multiply.outer(p, grid.positions))
    return values @ phase.T * grid.delta_x


def momentum_to_real_modes(grid: ModeGrid, f_k: np.ndarray) -> np.ndarray:
    """Real-mode coefficients (``sqrt(delta_k)`` absorbed) of momentum values."""
    f_k = np.asarray(f_k, dtype=complex)
    if f_k.shape[-1] != grid.n_modes:
        raise ValueError(f"expected {grid.n_modes} momentum values, got {f_k.shape[-1]}")
    return np.sqrt(grid.delta_k) * (f_k @ real_mode_matrix(grid.half_count).T)


def kg_time_zero_embedding(system: DiagonalSystem, u_hat=None, u_x=None) -> TestVector:
    """Time-zero Klein-Gordon field test vector ``(sqrt2 * 2pi)^-1 eps^-1/2 u``.

    ``u`` is given either as momentum coefficients ``u_hat`` or as real
    lattice samples ``u_x``.  For the charged system the result is the
    doubled vector ``(h, conj h)``.
    """
    grid = system.grid
    if grid is None:
        raise ValueError("embedding needs a system built from a ModeGrid")
    if (u_hat is None) == (u_x is None):
        raise ValueError("give exactly one of u_hat, u_x")
    if u_x is not None:
        u_x = np.asarray(u_x)
        if u_x.shape != (grid.n_modes,):
            raise ValueError(f"u_x must have shape ({grid.n_modes},)")
        u_hat = lattice_fourier(grid, u_x)
    u_hat = np.asarray(u_hat, dtype=complex)
    if u_hat.shape != (grid.n_modes,):
        raise ValueError(f"u_hat must have shape ({grid.n_modes},)")
    h_k = u_hat / np.sqrt(dispersion(grid)) / (np.sqrt(2.0) * 2.0 * np.pi)
    h = momentum_to_real_modes(grid, h_k)
    if system.sector == NEUTRAL:
        return TestVector(h, system)
    return TestVector(np.concatenate([h, np.conj(h)]), system)
