"""Closed-form quasi-free KMS functionals and their Green's functions.

Everything is evaluated from explicit mode sums.  Analytic continuation in
time is done by substituting complex times into the formulas, never
numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectral import CHARGED, DiagonalSystem, TestVector, bose_factor

STRIP_TOL = 1e-12


def _check_same_system(*vectors: TestVector) -> DiagonalSystem:
    system = vectors[0].system
    for v in vectors[1:]:
        if v.system is not system:
            raise ValueError("test vectors belong to different systems")
    return system


def _require_kappa_real(*vectors: TestVector, atol: float = 1e-12) -> None:
    for v in vectors:
        scale = max(1.0, float(np.max(np.abs(v.coeffs), initial=0.0)))
        if not v.is_kappa_real(atol * scale):
            raise ValueError("argument is not kappa-real")


def weyl_expectation(x: TestVector) -> float:
    """Quasi-free KMS expectation ``exp(-1/4 (x, (1+2 rho) x))``."""
    c = x.coeffs
    return float(np.exp(-0.25 * np.sum(np.abs(c) ** 2 * x.system.thermal_weight)))


def two_point_R(t: complex, x: TestVector, y: TestVector) -> complex:
    """Real-time two-point function, holomorphic in ``0 <= Im t <= beta``.

    ``R(t)(x,y) = (x, e^{ita} y / (1 - e^{-beta a}))
    + (y, e^{-beta a} e^{-ita} x / (1 - e^{-beta a}))``.
    The second exponent carries ``-ita``; this is what makes
    ``R(t + i beta)(x, y) = R(-t)(y, x)``.
    """
    system = _check_same_system(x, y)
    t = complex(t)
    if not -STRIP_TOL <= t.imag <= system.beta + STRIP_TOL:
        raise ValueError(f"Im t = {t.imag} outside the strip [0, {system.beta}]")
    a = system.frequencies
    denom = -np.expm1(-system.beta * a)
    xc, yc = x.coeffs, y.coeffs
    first = np.sum(np.conj(xc) * yc * np.exp(1j * t * a) / denom)
    second = np.sum(np.conj(yc) * xc * np.exp(-system.beta * a - 1j * t * a) / denom)
    return complex(first + second)


def periodic_kernel(s, a, beta: float) -> np.ndarray:
    """``(e^{-s a} + e^{(s-beta) a}) / (1 - e^{-beta a})`` for ``s`` reduced mod beta."""
    s = np.mod(np.asarray(s, dtype=float), beta)
    a = np.asarray(a, dtype=float)
    return (np.exp(-s * a) + np.exp((s - beta) * a)) / -np.expm1(-beta * a)


def euclid_cov_C(s: float, x: TestVector, y: TestVector):
    """Euclidean covariance ``C(s)(x, y)`` for kappa-real arguments, ``0 <= s <= beta``."""
    system = _check_same_system(x, y)
    _require_kappa_real(x, y)
    if not -STRIP_TOL <= s <= system.beta + STRIP_TOL:
        raise ValueError(f"s = {s} outside [0, beta]")
    s = min(max(float(s), 0.0), system.beta)
    a = system.frequencies
    xc, yc = x.coeffs, y.coeffs
    if system.kappa_commutes:
        val = 0.5 * np.sum(np.conj(xc) * yc * (np.exp(-s * a) + np.exp((s - system.beta) * a))
                           / -np.expm1(-system.beta * a))
        return float(val.real)
    denom = -np.expm1(-system.beta * a)
    val = 0.5 * np.sum(np.conj(xc) * yc * np.exp(-s * a) / denom) \
        + 0.5 * np.sum(np.conj(yc) * xc * np.exp((s - system.beta) * a) / denom)
    return complex(val)


@dataclass(frozen=True, eq=False)
class WeylWord:
    """Ordered product ``W(x_1) ... W(x_n)`` at (possibly complex) times."""

    times: tuple
    args: tuple
    euclidean: bool = False

    def __post_init__(self):
        times = tuple(complex(t) for t in self.times)
        args = tuple(self.args)
        if len(times) != len(args) or not args:
            raise ValueError("a word needs matching, nonempty times and arguments")
        _check_same_system(*args)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "args", args)
        if self.euclidean:
            s = np.array([t.imag for t in times])
            if any(abs(t.real) > 0 for t in times):
                raise ValueError("Euclidean words have purely imaginary times")
            beta = args[0].system.beta
            if np.any(np.diff(s) < 0) or s[0] < -STRIP_TOL or s[-1] - s[0] > beta + STRIP_TOL:
                raise ValueError("Euclidean times must satisfy 0 <= s_1 <= ... <= s_n <= s_1 + beta")

    @classmethod
    def euclidean_word(cls, s: Sequence[float], args: Sequence[TestVector]) -> "WeylWord":
        return cls(tuple(1j * float(v) for v in s), tuple(args), euclidean=True)

    @property
    def system(self) -> DiagonalSystem:
        return self.args[0].system

    @property
    def euclidean_times(self) -> np.ndarray:
        return np.array([t.imag for t in self.times])


def greens_weyl(word: WeylWord) -> complex:
    """``prod_i exp(-1/4 (x_i,(1+2rho)x_i)) prod_{i<j} exp(-1/2 R(t_j - t_i)(x_i, x_j))``."""
    beta = word.system.beta
    t = np.array(word.times)
    gaps = t[None, :] - t[:, None]
    iu = np.triu_indices(len(t), 1)
    if np.any(gaps[iu].imag < -STRIP_TOL) or np.any(gaps[iu].imag > beta + STRIP_TOL):
        raise ValueError("times violate the strip ordering Im t_1 <= ... <= Im t_n <= Im t_1 + beta")
    log_val = 0.0 + 0.0j
    for x in word.args:
        log_val -= 0.25 * np.sum(np.abs(x.coeffs) ** 2 * x.system.thermal_weight)
    for i, j in zip(*iu):
        log_val -= 0.5 * two_point_R(t[j] - t[i], word.args[i], word.args[j])
    return complex(np.exp(log_val))


def euclid_greens_weyl(word: WeylWord) -> float:
    """Euclidean Green's function ``prod_{i,j} exp(-1/2 C(|s_i - s_j|)(x_i, x_j))``."""
    if not word.euclidean:
        raise ValueError("expected a Euclidean word")
    system = word.system
    if not system.kappa_commutes:
        raise ValueError("the Euclidean product formula needs the conjugation to commute with a")
    s = word.euclidean_times
    exponent = 0.0
    for i, xi in enumerate(word.args):
        for j, xj in enumerate(word.args):
            exponent += euclid_cov_C(abs(s[i] - s[j]), xi, xj)
    return float(np.exp(-0.5 * exponent))


def kms_residual(x: TestVector, y: TestVector, t: float, shift: float | None = None) -> float:
    """``|G(0, t + i shift; W(x), W(y)) - G(t, 0; W(y), W(x))|``.

    With ``shift = beta`` (the default) this vanishes for a KMS state; any
    other shift serves as a negative control.
    """
    system = _check_same_system(x, y)
    shift = system.beta if shift is None else float(shift)
    lhs = greens_weyl(WeylWord((0.0, t + 1j * shift), (x, y)))
    rhs = greens_weyl(WeylWord((t, 0.0), (y, x)))
    return float(abs(lhs - rhs))


def time_reversal_check(x: TestVector, y: TestVector, t: float) -> float:
    """``|w(W(x) tau_t W(y)) - conj(w(W(x) tau_{-t} W(y)))|`` for kappa-real ``x, y``."""
    _check_same_system(x, y)
    _require_kappa_real(x, y)
    forward = greens_weyl(WeylWord((0.0, t), (x, y)))
    backward = greens_weyl(WeylWord((0.0, -t), (x, y)))
    return float(abs(forward - np.conj(backward)))


def charged_nonpositivity_witness(system: DiagonalSystem, u, v, s: float) -> complex:
    """Two-point function of the gauge-invariant quadratics ``phi* phi`` at Euclidean time ``s``.

    ``(v, (e^{-s eps}(1+rho+) + e^{s eps} rho-) u) (u, (e^{-s eps}(1+rho-) + e^{s eps} rho+) v)
    + (u, (1+rho+ + rho-) u) (v, (1+rho+ + rho-) v)`` with ``rho(+/-)`` the occupations at
    ``eps -/+ mu``.  A nonzero imaginary part rules out a positive path-space measure.
    """
    if system.sector != CHARGED:
        raise ValueError("witness needs a charged system")
    if not 0.0 <= s <= system.beta:
        raise ValueError(f"s = {s} outside [0, beta]")
    h = system.n_spatial
    u = np.asarray(u, dtype=complex).reshape(-1)
    v = np.asarray(v, dtype=complex).reshape(-1)
    if u.size != h or v.size != h:
        raise ValueError(f"u and v need {h} spatial-mode coefficients")
    eps = system.energies[:h]
    rho_p, _ = bose_factor(eps - system.mu, system.beta)
    rho_m, _ = bose_factor(eps + system.mu, system.beta)
    up, dn = np.exp(-s * eps), np.exp(s * eps)
    first = np.vdot(v, (up * (1 + rho_p) + dn * rho_m) * u)
    second = np.vdot(u, (up * (1 + rho_m) + dn * rho_p) * v)
    static = 1 + rho_p + rho_m
    return complex(first * second + np.vdot(u, static * u) * np.vdot(v, static * v))
