"""Wick ordering of scalar Gaussian variables.

A Wick power ``:y^n:_c`` subtracts all self-contractions of ``y`` computed
with the covariance value ``c``; it is the scaled Hermite polynomial
``sum_m n!/(m!(n-2m)!) y^{n-2m} (-c/2)^m``.  Note that ``c`` here is the
variance of ``y`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

MAX_DEGREE = 40
_FACT = np.array([float(factorial(n)) for n in range(2 * MAX_DEGREE + 1)])


def _check_degree(n: int) -> int:
    if int(n) != n or n < 0:
        raise ValueError(f"degree must be a nonnegative integer, got {n}")
    if n > MAX_DEGREE:
        raise ValueError(f"degree {n} exceeds the supported maximum {MAX_DEGREE}")
    return int(n)


def wick_coefficients(n: int, c: float) -> np.ndarray:
    """Monomial coefficients (ascending powers of ``y``) of ``:y^n:_c``."""
    n = _check_degree(n)
    out = np.zeros(n + 1)
    for m in range(n // 2 + 1):
        out[n - 2 * m] = _FACT[n] / (_FACT[m] * _FACT[n - 2 * m]) * (-0.5 * c) ** m
    return out


def wick_power(y, n: int, c: float):
    """``:y^n:_c`` evaluated elementwise."""
    coeffs = wick_coefficients(n, c)
    return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), coeffs)


def wick_exp(y, alpha: float, c: float):
    """``:exp(alpha y):_c = exp(alpha y - alpha^2 c / 2)``."""
    return np.exp(alpha * np.asarray(y, dtype=float) - 0.5 * alpha * alpha * c)


@dataclass(frozen=True)
class WickPolynomial:
    """``sum_j coeffs[j] :y^j:_c``."""

    coeffs: tuple
    c: float

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coeffs)
        if not coeffs:
            raise ValueError("empty coefficient list")
        _check_degree(len(coeffs) - 1)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "c", float(self.c))

    @property
    def degree(self) -> int:
        nz = [j for j, a in enumerate(self.coeffs) if a != 0.0]
        return nz[-1] if nz else 0

    @property
    def bounded_below(self) -> bool:
        deg = self.degree
        return deg == 0 or (deg % 2 == 0 and self.coeffs[deg] > 0)

    def monomial_coefficients(self) -> np.ndarray:
        out = np.zeros(len(self.coeffs))
        for j, a in enumerate(self.coeffs):
            if a:
                out[: j + 1] += a * wick_coefficients(j, self.c)
        return out

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), self.monomial_coefficients())


def reorder_matrix(degree: int, c_from: float, c_to: float) -> np.ndarray:
    """``T`` with ``:y^j:_{c_from} = sum_i T[i, j] :y^i:_{c_to}``.

    ``T[j - 2m, j] = j!/(m!(j-2m)!) ((c_to - c_from)/2)^m``; upper triangular.
    """
    degree = _check_degree(degree)
    half = 0.5 * (c_to - c_from)
    t = np.zeros((degree + 1, degree + 1))
    for j in range(degree + 1):
        for m in range(j // 2 + 1):
            t[j - 2 * m, j] = _FACT[j] / (_FACT[m] * _FACT[j - 2 * m]) * half ** m
    return t


def reorder(p: WickPolynomial, c_from: float, c_to: float) -> WickPolynomial:
    """Re-express ``p`` (ordered at ``c_from``) in Wick powers at ``c_to``."""
    if abs(p.c - c_from) > 1e-14 * max(1.0, abs(c_from)):
        raise ValueError(f"polynomial is ordered at {p.c}, not {c_from}")
    t = reorder_matrix(len(p.coeffs) - 1, c_from, c_to)
    return WickPolynomial(tuple(t @ np.asarray(p.coeffs)), c_to)


def pair_inner(n: int, v_ff: float, v_gg: float, v_fg: float, m: int | None = None) -> float:
    """``E[:y^n: :z^m:]`` for jointly Gaussian ``y, z`` ordered at their own variances.

    Only equal degrees pair: the result is ``n! v_fg^n`` and zero otherwise.
    ``v_ff`` and ``v_gg`` are checked for validity of the Gaussian pair.
    """
    n = _check_degree(n)
    m = n if m is None else _check_degree(m)
    if v_ff < 0 or v_gg < 0 or v_fg * v_fg > v_ff * v_gg * (1 + 1e-12) + 1e-300:
        raise ValueError("covariances do not describe a Gaussian pair")
    if m != n:
        return 0.0
    return float(_FACT[n] * v_fg ** n)


def mixed_pair_expectation(n: int, m: int, c_y: float, c_z: float,
                           var_y: float, var_z: float, cov):
    """``E[:y^n:_{c_y} :z^m:_{c_z}]`` for arbitrary ordering covariances.

    Read off from the generating function
    ``E[:e^{a y}:_{c_y} :e^{b z}:_{c_z}] = exp(a^2 (var_y - c_y)/2 + b^2 (var_z - c_z)/2 + a b cov)``.
    ``cov`` may be an array; the result then has its shape.
    """
    n, m = _check_degree(n), _check_degree(m)
    dy, dz = 0.5 * (var_y - c_y), 0.5 * (var_z - c_z)
    cov = np.asarray(cov, dtype=float)
    total = np.zeros_like(cov)
    for k in range(min(n, m) + 1):
        if (n - k) % 2 or (m - k) % 2:
            continue
        i, j = (n - k) // 2, (m - k) // 2
        total += cov ** k / _FACT[k] * dy ** i / _FACT[i] * dz ** j / _FACT[j]
    out = _FACT[n] * _FACT[m] * total
    return float(out) if out.ndim == 0 else out


def complex_wick_coefficients(n: int, c: float) -> np.ndarray:
    """Coefficients in powers of ``|z|^2`` of ``:(z* z)^n:_c`` for a complex Gaussian with ``E|z|^2 = c``.

    ``:(z* z)^n: = sum_k k! C(n,k)^2 (-c)^k |z|^{2(n-k)}``.
    """
    n = _check_degree(n)
    out = np.zeros(n + 1)
    for k in range(n + 1):
        binom = _FACT[n] / (_FACT[k] * _FACT[n - k])
        out[n - k] = _FACT[k] * binom * binom * (-c) ** k
    return out


def complex_wick_power(modsq, n: int, c: float):
    """``:(z* z)^n:_c`` as a polynomial in ``|z|^2``."""
    return np.polynomial.polynomial.polyval(np.asarray(modsq, dtype=float), complex_wick_coefficients(n, c))
