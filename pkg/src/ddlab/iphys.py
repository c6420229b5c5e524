"""Ion-physics formulas: clock-qubit splitting, field sensitivity and Raman scattering.

Field inputs are in Gauss and frequencies in Hz unless a function says
otherwise; conversion to angular units happens in :func:`beta_sensitivity`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "HYPERFINE_HZ",
    "K_HZ_PER_G2",
    "FieldConfig",
    "ScatteringParams",
    "ScatteringRate",
    "Sensitivity",
    "beta_sensitivity",
    "field_to_beta",
    "intensity_from_beam",
    "qubit_splitting",
    "scattering_rate",
]

K_HZ_PER_G2 = 310.8
HYPERFINE_HZ = 12_642_812_118.0

_CONVENTIONS = ("hz", "angular")


@dataclass(frozen=True)
class FieldConfig:
    """Mean bias field in Gauss."""

    bx: float = 0.0
    by: float = 0.0
    bz: float = 0.0
    K: float = K_HZ_PER_G2
    omega_hf: float = HYPERFINE_HZ

    def __post_init__(self):
        for name in ("bx", "by", "bz"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"field component {name} must be finite")
        if self.K != K_HZ_PER_G2 or self.omega_hf != HYPERFINE_HZ:
            raise ValueError("K and the hyperfine splitting are fixed constants")

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.bx ** 2 + self.by ** 2 + self.bz ** 2)


def qubit_splitting(b_gauss: float) -> float:
    """Clock transition frequency in Hz at field magnitude ``b_gauss``."""
    if not math.isfinite(b_gauss):
        raise ValueError("field must be finite")
    return HYPERFINE_HZ + K_HZ_PER_G2 * b_gauss * b_gauss


@dataclass(frozen=True)
class Sensitivity:
    """``beta = sum_a linear[a] b_a + quadratic |b|^2`` in rad/s with ``b`` in Gauss."""

    linear: tuple
    quadratic: float


def beta_sensitivity(cfg: FieldConfig) -> Sensitivity:
    """Linear (2 pi 2 K B_a) and quadratic (2 pi K) coefficients of the frequency noise."""
    two_pi_k = 2 * math.pi * cfg.K
    return Sensitivity(tuple(2 * two_pi_k * b for b in (cfg.bx, cfg.by, cfg.bz)), two_pi_k)


def field_to_beta(cfg: FieldConfig, amplitude_gauss: float, axis: str = "x") -> float:
    """Line amplitude in rad/s produced by a small field modulation along ``axis``.

    Only the term linear in the modulation is kept.
    """
    idx = "xyz".index(axis)
    return abs(beta_sensitivity(cfg).linear[idx] * amplitude_gauss)


def intensity_from_beam(power_w: float, waist_m: float) -> float:
    """Peak intensity ``2P / (pi w^2)`` of a Gaussian beam, W/m^2."""
    if power_w <= 0 or waist_m <= 0:
        raise ValueError("power and waist must be positive")
    return 2 * power_w / (math.pi * waist_m ** 2)


@dataclass(frozen=True)
class ScatteringParams:
    """Inputs of the off-resonant Raman scattering estimate.

    ``gamma``, ``delta_d1`` and ``delta_fs`` share one frequency
    ``convention``: ``'hz'`` (cycles/s) or ``'angular'`` (rad/s).  The
    saturation parameter is ``intensity_ratio`` = I/I_sat; when it is absent
    it is derived from ``power_w``, ``waist_m`` and ``i_sat`` (W/m^2).  A
    supplied ratio always wins.
    """

    gamma: float
    delta_d1: float
    delta_fs: float
    convention: str | None = None
    intensity_ratio: float | None = None
    power_w: float | None = None
    waist_m: float | None = None
    i_sat: float | None = None

    def __post_init__(self):
        if self.convention is None:
            raise ValueError("scattering parameters need an explicit frequency convention "
                             "('hz' or 'angular')")
        if self.convention not in _CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}; use 'hz' or 'angular'")
        for name in ("gamma", "delta_d1", "delta_fs"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.intensity_ratio is None:
            if None in (self.power_w, self.waist_m, self.i_sat):
                raise ValueError("give intensity_ratio or all of power_w, waist_m, i_sat")
            if not self.i_sat > 0:
                raise ValueError("i_sat must be positive")
        elif not self.intensity_ratio > 0:
            raise ValueError("intensity_ratio must be positive")

    @property
    def saturation(self) -> float:
        if self.intensity_ratio is not None:
            return self.intensity_ratio
        return intensity_from_beam(self.power_w, self.waist_m) / self.i_sat


@dataclass(frozen=True)
class ScatteringRate:
    rate_hz: float
    convention: str

    def __float__(self):
        return self.rate_hz


def scattering_rate(p: ScatteringParams) -> ScatteringRate:
    """Raman scattering rate in Hz.

    ``g = (Gamma/2) sqrt(s/2)`` and
    ``rate = (g^2 Gamma / 6) (1/D1^2 + 2/(D1 + Dfs)^2)`` evaluated in the
    declared units; an angular result is divided by 2 pi to give Hz.
    """
    g2 = (p.gamma / 2) ** 2 * p.saturation / 2
    rate = g2 * p.gamma / 6 * (1 / p.delta_d1 ** 2 + 2 / (p.delta_d1 + p.delta_fs) ** 2)
    if p.convention == "angular":
        rate /= 2 * math.pi
    return ScatteringRate(rate, p.convention)
