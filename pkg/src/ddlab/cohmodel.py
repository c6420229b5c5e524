"""
Analytic coherence of a dynamically decoupled qubit.

Two noise models are combined multiplicatively:

* discrete lines ``beta_k cos(omega_k t + theta)`` with uniformly random
  phase, giving a contrast ``prod_k J0(|beta_k y(omega_k, T)|)``;
* a Gaussian continuum with one-sided spectral density ``S(omega)`` in
  (rad/s)^2 per rad/s, giving ``exp(-chi)`` with
  ``chi = (2/pi) * integral_0^inf S(omega) |y(omega, T)|^2 d omega``.

A line and a spectral spike ``(pi / 8) beta^2 delta(omega - omega_k)`` give
the same ``chi`` to leading order, since ``J0(x) ~ exp(-x^2 / 4)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .quad import QuadratureError, integrate_panels
from .seqkit import PulseSequence, filter_abs_sq
from .special import j0

__all__ = [
    "ChiResult",
    "ContinuousSpectrum",
    "DiscreteLine",
    "NoiseModel",
    "QuadratureError",
    "chi_integral",
    "contrast_discrete",
    "contrast_total",
    "default_omega_max",
    "read_lines_csv",
    "read_spectrum_csv",
    "spike_weight",
    "write_lines_csv",
    "write_spectrum_csv",
]


@dataclass(frozen=True)
class DiscreteLine:
    """Sinusoidal modulation of the qubit frequency.

    ``omega`` is the line's angular frequency (rad/s) and ``beta`` its peak
    amplitude (rad/s).  The phase is uniform on [0, 2 pi) per realization.
    """

    omega: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError(f"line frequency must be positive, got {self.omega!r}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"line amplitude must be >= 0, got {self.beta!r}")

    @classmethod
    def from_hz(cls, freq_hz: float, beta: float) -> "DiscreteLine":
        return cls(2 * math.pi * freq_hz, beta)

    @property
    def freq_hz(self) -> float:
        return self.omega / (2 * math.pi)


def spike_weight(beta: float) -> float:
    """Weight of the spectral delta spike equivalent to a line of amplitude ``beta``."""
    return math.pi / 8 * beta * beta


@dataclass(frozen=True)
class _Segment:
    lo: float
    hi: float
    amp: float
    exponent: float
    ref: float

    def value(self, w):
        inside = (w >= self.lo) & (w < self.hi)
        if self.exponent == 0:
            return np.where(inside, self.amp, 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            v = self.amp * (w / self.ref) ** self.exponent
        return np.where(inside, v, 0.0)

    def inverse_square_moment(self, a):
        """integral_{max(a, lo)}^{hi} S(w) / w^2 dw."""
        lo = max(a, self.lo)
        if lo >= self.hi or self.amp == 0:
            return 0.0
        p = self.exponent - 2.0
        c = self.amp / self.ref ** self.exponent
        if abs(p + 1.0) < 1e-12:
            if math.isinf(self.hi):
                return math.inf
            return c * math.log(self.hi / lo)
        if math.isinf(self.hi):
            if p >= -1:
                return math.inf
            return -c * lo ** (p + 1) / (p + 1)
        return c * (self.hi ** (p + 1) - lo ** (p + 1)) / (p + 1)


@dataclass(frozen=True)
class ContinuousSpectrum:
    """One-sided PSD of the qubit angular-frequency noise, built from power-law pieces.

    Each piece contributes ``amp * (omega / ref)**exponent`` on
    ``[lo, hi)``; overlapping pieces add.  A log-log-linear table is exactly a
    chain of such pieces.  Outside all pieces the density is zero.
    """

    segments: tuple = ()

    def __post_init__(self):
        for s in self.segments:
            if not (s.lo >= 0 and s.hi > s.lo):
                raise ValueError("spectrum segment needs 0 <= lo < hi")
            if not (math.isfinite(s.amp) and s.amp >= 0):
                raise ValueError("spectral density must be non-negative")
            if s.lo == 0 and s.exponent < 0 and s.amp > 0:
                raise ValueError("a falling power law cannot extend down to omega = 0")

    @classmethod
    def empty(cls) -> "ContinuousSpectrum":
        return cls(())

    @classmethod
    def white(cls, s0: float, lo: float = 0.0, hi: float = math.inf) -> "ContinuousSpectrum":
        return cls((_Segment(float(lo), float(hi), float(s0), 0.0, 1.0),))

    @classmethod
    def power_law(cls, amp: float, exponent: float, ref: float,
                  lo: float = 0.0, hi: float = math.inf) -> "ContinuousSpectrum":
        """``amp * (omega / ref)**exponent`` on ``[lo, hi)``."""
        return cls((_Segment(float(lo), float(hi), float(amp), float(exponent), float(ref)),))

    @classmethod
    def from_table(cls, omega: Sequence[float], values: Sequence[float]) -> "ContinuousSpectrum":
        """Log-log-linear interpolation of a positive table; zero outside it.

        Intervals with a zero endpoint are taken as constant zero when both
        ends vanish and rejected otherwise (no log-log form exists).
        """
        w = np.asarray(omega, dtype=float)
        s = np.asarray(values, dtype=float)
        if w.ndim != 1 or w.shape != s.shape or w.size < 2:
            raise ValueError("spectrum table needs two equal-length columns with >= 2 rows")
        if np.any(np.diff(w) <= 0) or w[0] <= 0:
            raise ValueError("table frequencies must be positive and strictly increasing")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("spectral density must be finite and non-negative")
        segs = []
        for i in range(w.size - 1):
            if s[i] == 0 and s[i + 1] == 0:
                continue
            if s[i] == 0 or s[i + 1] == 0:
                raise ValueError(
                    f"rows {i}-{i + 1}: log-log interpolation undefined next to a zero density")
            k = math.log(s[i + 1] / s[i]) / math.log(w[i + 1] / w[i])
            segs.append(_Segment(float(w[i]), float(w[i + 1]), float(s[i]), k, float(w[i])))
        hi_last = segs[-1] if segs else None
        if hi_last is not None:
            # include the closing table point
            segs[-1] = _Segment(hi_last.lo, float(np.nextafter(w[-1], np.inf)),
                                hi_last.amp, hi_last.exponent, hi_last.ref)
        return cls(tuple(segs))

    @property
    def is_empty(self) -> bool:
        return all(s.amp == 0 for s in self.segments)

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        out = np.zeros(w.shape)
        for s in self.segments:
            out = out + s.value(w)
        return out if out.ndim else float(out)

    def __add__(self, other: "ContinuousSpectrum") -> "ContinuousSpectrum":
        return ContinuousSpectrum(self.segments + other.segments)

    def scaled(self, factor: float) -> "ContinuousSpectrum":
        if factor < 0:
            raise ValueError("scale factor must be >= 0")
        return ContinuousSpectrum(tuple(
            _Segment(s.lo, s.hi, s.amp * factor, s.exponent, s.ref) for s in self.segments))

    def breakpoints(self) -> np.ndarray:
        pts = [p for s in self.segments for p in (s.lo, s.hi) if math.isfinite(p)]
        return np.unique(np.asarray(pts, dtype=float))

    def inverse_square_moment(self, a: float) -> float:
        """``integral_a^inf S(w) / w^2 dw``, used for the filter's high-frequency tail."""
        return math.fsum(s.inverse_square_moment(a) for s in self.segments)


@dataclass(frozen=True)
class NoiseModel:
    """Discrete lines plus an optional continuum."""

    lines: tuple = ()
    continuum: ContinuousSpectrum = field(default_factory=ContinuousSpectrum.empty)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        for ln in self.lines:
            if not isinstance(ln, DiscreteLine):
                raise TypeError("lines must be DiscreteLine instances")


def _abs_y(seq, omegas):
    return np.sqrt(np.atleast_1d(filter_abs_sq(seq, np.asarray(omegas, dtype=float))))


def contrast_discrete(seq: PulseSequence, lines: Iterable[DiscreteLine]) -> float:
    """Ramsey contrast ``prod_k J0(|beta_k y(omega_k, T)|)`` for random-phase lines."""
    lines = list(lines)
    if not lines:
        return 1.0
    omegas = np.array([ln.omega for ln in lines])
    betas = np.array([ln.beta for ln in lines])
    x = betas * _abs_y(seq, omegas)
    return float(np.prod(j0(x)))


def default_omega_max(seq: PulseSequence, harmonics: float = 200.0) -> float:
    """Upper quadrature limit ``harmonics * (N + 1) * pi / T``."""
    return harmonics * (seq.n_pulses + 1) * math.pi / seq.total_time


@dataclass(frozen=True)
class ChiResult:
    """Decay exponent with its numerical error estimate.

    ``tail`` is the analytic contribution above ``omega_max`` (already in
    ``chi``), computed from the mean of ``|omega y|^2``, which is ``4N + 2``.
    """

    chi: float
    error: float
    tail: float
    omega_max: float

    def __float__(self):
        return self.chi

    @property
    def contrast(self) -> float:
        return math.exp(-self.chi)


def _filter_breakpoints(seq, spectrum, omega_max, extra=()):
    T = seq.total_time
    step = 2 * math.pi / T
    n_uniform = int(math.ceil(omega_max / step))
    grid = np.linspace(0.0, n_uniform * step, n_uniform + 1)
    # log-spaced refinement of the first panel for steep low-frequency densities
    low = step * np.logspace(-12, 0, 25)
    pts = [grid, low, spectrum.breakpoints(), np.asarray(extra, dtype=float)]
    pts = np.unique(np.concatenate(pts))
    return pts[(pts >= 0) & (pts <= omega_max)]


def _tail(seq, spectrum, omega_max):
    n = seq.n_pulses
    mean_sq = 4.0 * n + 2.0
    tail = 2.0 / math.pi * mean_sq * spectrum.inverse_square_moment(omega_max)
    # oscillating remainder: |integral_a^inf S cos(w d) / w^2| <= 2 S_max / (a^2 d)
    gaps = np.diff(seq.boundaries)
    d_min = float(np.min(gaps)) if gaps.size else seq.total_time
    s_max = max(float(spectrum(omega_max)), float(spectrum(10 * omega_max)))
    cross = 2.0 / math.pi * (2.0 + 4.0 * n) ** 2 * 2.0 * s_max / (omega_max ** 2 * d_min)
    return tail, min(cross, abs(tail)) if math.isfinite(tail) else math.inf


def chi_integral(seq: PulseSequence, spectrum: ContinuousSpectrum, rtol: float = 1e-7,
                 atol: float = 1e-14, omega_max: float | None = None,
                 max_rounds: int = 30) -> ChiResult:
    """Decay exponent ``chi = (2/pi) integral_0^inf S(w) |y(w, T)|^2 dw``.

    Adaptive Gauss-Kronrod panels run up to ``omega_max`` (default
    ``200 (N+1) pi / T``); beyond it the filter is replaced by its mean
    envelope ``(4N + 2) / w^2``.  Panels are one oscillation period ``2 pi / T``
    wide, with log-spaced refinement below the first period.

    Raises
    ------
    QuadratureError
        If the panels do not converge; the message names the worst region.
    """
    if not (rtol > 0 or atol > 0):
        raise ValueError("quadrature tolerance must be positive")
    if spectrum.is_empty:
        return ChiResult(0.0, 0.0, 0.0, 0.0)
    wmax = default_omega_max(seq) if omega_max is None else float(omega_max)
    if not math.isfinite(spectrum.inverse_square_moment(wmax)):
        raise ValueError("chi diverges: the density must fall faster than omega^1 at high frequency")
    pts = _filter_breakpoints(seq, spectrum, wmax)

    def integrand(w):
        return spectrum(w) * filter_abs_sq(seq, w)

    try:
        res = integrate_panels(integrand, pts, rtol=rtol, atol=atol, max_rounds=max_rounds)
    except QuadratureError as exc:
        lo, hi = exc.region
        raise QuadratureError(
            f"chi integral did not converge near omega in [{lo:.6g}, {hi:.6g}] rad/s "
            f"({lo / (2 * math.pi):.6g}-{hi / (2 * math.pi):.6g} Hz): {exc}",
            region=exc.region, value=exc.value, error=exc.error) from None
    tail, tail_err = _tail(seq, spectrum, wmax)
    chi = 2.0 / math.pi * res.value + tail
    return ChiResult(chi, 2.0 / math.pi * res.error + tail_err, tail, wmax)


def contrast_total(seq: PulseSequence, model: NoiseModel, **quad) -> float:
    """``contrast_discrete * exp(-chi)`` for a combined noise model."""
    c = contrast_discrete(seq, model.lines)
    if model.continuum.is_empty:
        return c
    return c * math.exp(-chi_integral(seq, model.continuum, **quad).chi)


# --- file formats ---------------------------------------------------------

def write_spectrum_csv(omega, values, path=None) -> str:
    buf = io.StringIO()
    buf.write("# normalization=one-sided, chi=(2/pi)*integral\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["omega_rad_s", "S_beta"])
    for a, b in zip(omega, values):
        w.writerow([repr(float(a)), repr(float(b))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _read_table(source, header):
    text = Path(source).read_text() if not (isinstance(source, str) and "\n" in source) else source
    rows = []
    seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        cells = [c.strip() for c in s.split(",")]
        if not seen:
            if cells != header:
                raise ValueError(f"line {lineno}: expected header {','.join(header)!r}")
            seen = True
            continue
        if len(cells) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value in {s!r}") from None
    if not seen:
        raise ValueError(f"missing header {','.join(header)!r}")
    return np.array(rows, dtype=float).reshape(-1, len(header))


def read_spectrum_csv(source) -> ContinuousSpectrum:
    """Read an ``omega_rad_s,S_beta`` table into a log-log-linear spectrum."""
    t = _read_table(source, ["omega_rad_s", "S_beta"])
    return ContinuousSpectrum.from_table(t[:, 0], t[:, 1])


def write_lines_csv(lines: Iterable[DiscreteLine], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["freq_hz", "beta_rad_s"])
    for ln in lines:
        w.writerow([repr(ln.freq_hz), repr(ln.beta)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_lines_csv(source) -> list[DiscreteLine]:
    t = _read_table(source, ["freq_hz", "beta_rad_s"])
    return [DiscreteLine.from_hz(f, b) for f, b in t]
