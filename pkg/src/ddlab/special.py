"""Bessel functions J0 and J1 of real argument, plus the inverse of J0 on its first lobe.

Power series below ``SERIES_LIMIT``, Hankel asymptotic expansion above.  With
the split at 12 both branches stay below ~1e-11 absolute error; the series
loses digits to cancellation as the argument grows, the asymptotic form
loses them as it shrinks.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = ["J0_FIRST_ZERO", "SERIES_LIMIT", "j0", "j1", "j1_over_x", "inverse_j0"]

SERIES_LIMIT = 12.0
J0_FIRST_ZERO = 2.404825557695773

_N_SERIES = 45
_N_ASYM = 12


def _series(x, order):
    q = -(0.5 * x) ** 2
    term = np.ones_like(x) if order == 0 else 0.5 * x
    total = term.copy()
    for k in range(1, _N_SERIES):
        term = term * q / (k * (k + order))
        total = total + term
        # terms alternate and shrink monotonically once k exceeds x/2
        if k > 0.5 * float(np.max(x, initial=0.0)) and float(np.max(np.abs(term), initial=0.0)) < 1e-17:
            break
    return total


def _asymptotic(x, order):
    mu = 4.0 * order * order
    p = np.ones_like(x)
    q = np.zeros_like(x)
    a = 1.0
    inv = 1.0 / x
    power = np.ones_like(x)
    for k in range(1, 2 * _N_ASYM):
        a *= (mu - (2 * k - 1) ** 2) / (8.0 * k)
        power = power * inv
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            q = q + sign * a * power
        else:
            p = p + sign * a * power
    chi = x - (0.5 * order + 0.25) * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def _bessel(x, order):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.empty_like(ax)
    low = ax < SERIES_LIMIT
    if np.any(low):
        out[low] = _series(ax[low], order)
    if np.any(~low):
        out[~low] = _asymptotic(ax[~low], order)
    if order == 1:
        out = np.where(x < 0, -out, out)
    return out if out.ndim else float(out)


def j0(x):
    """Bessel function of the first kind, order 0."""
    return _bessel(x, 0)


def j1(x):
    """Bessel function of the first kind, order 1."""
    return _bessel(x, 1)


def j1_over_x(x):
    """``J1(x) / x`` with the limit 1/2 at the origin."""
    x = np.asarray(x, dtype=float)
    safe = np.where(np.abs(x) < 1e-8, 1.0, x)
    out = np.where(np.abs(x) < 1e-8, 0.5 - x * x / 16.0, j1(safe) / safe)
    return out if out.ndim else float(out)


def inverse_j0(value: float, tol: float = 1e-13) -> float:
    """Smallest ``x >= 0`` with ``J0(x) = value`` for value in [0, 1] (bisection)."""
    if value >= 1.0:
        return 0.0
    if value <= 0.0:
        return J0_FIRST_ZERO
    lo, hi = 0.0, J0_FIRST_ZERO
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if j0(mid) > value:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
