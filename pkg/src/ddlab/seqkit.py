"""
Dynamical-decoupling pulse sequences and their filter functions.

Pulse times are stored as integer multiples of half a nanosecond so that
sequences with tens of thousands of pulses keep an exact timing grid.  All
public values are exposed in seconds.

The filter function used throughout the package is

.. math::

    \\tilde y(\\omega, T) = \\frac{1}{\\omega}\\sum_{j=0}^{N} (-1)^j
        \\left[e^{i\\omega\\tau_j} - e^{i\\omega\\tau_{j+1}}\\right],
    \\qquad \\tau_0 = 0,\\ \\tau_{N+1} = T.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "HALF_TICK",
    "KDD_XY_PHASES",
    "FilterValue",
    "PulseErrorModel",
    "PulseSequence",
    "filter_abs_sq",
    "filter_y",
    "free_evolution",
    "grid_filter_y",
    "grid_notch_envelope",
    "make_cpmg",
    "make_hahn",
    "make_kdd_xy",
    "notch_report",
    "read_sequence_csv",
    "write_sequence_csv",
]

#: Timing resolution of stored sequences (seconds). Pulse times live on a
#: 1 ns tick; the half tick lets CPMG place its first pulse at tau/2 exactly.
HALF_TICK = 0.5e-9
_TICKS_PER_S = 2_000_000_000

#: Ten-phase cycle of the KDD_xy sequence (two Knill blocks).
KDD_XY_PHASES = (
    math.pi / 6, 0.0, math.pi / 2, 0.0, math.pi / 6,
    2 * math.pi / 3, math.pi / 2, math.pi, math.pi / 2, 2 * math.pi / 3,
)

_SMALL_PHASE = 1e-2


def _to_half_ticks(t: float) -> int:
    return int(round(float(t) / HALF_TICK))


def _tick_interval(tau: float) -> int:
    """Interval in half ticks, rounded to a whole nanosecond."""
    ns = int(round(float(tau) / (2 * HALF_TICK)))
    if ns < 1:
        raise ValueError(f"pulse interval {tau!r} s is below the 1 ns timing resolution")
    return 2 * ns


@dataclass(frozen=True)
class PulseErrorModel:
    """Pulse imperfections applied by the simulators.

    Attributes
    ----------
    flip_angle_error : float
        Radians added to the nominal rotation angle of every pulse.
    detuning : float
        Off-resonance (rad/s) acting as a z field while a pulse is on.
    pulse_duration : float
        Square-pulse length in seconds; 0 means instantaneous pulses.
    p_dep : float
        Depolarizing probability per gate, used by benchmarking.
    """

    flip_angle_error: float = 0.0
    detuning: float = 0.0
    pulse_duration: float = 0.0
    p_dep: float = 0.0

    def __post_init__(self):
        if not self.pulse_duration >= 0:
            raise ValueError("pulse_duration must be >= 0")
        if not 0.0 <= self.p_dep <= 1.0:
            raise ValueError("p_dep must lie in [0, 1]")
        for name in ("flip_angle_error", "detuning", "pulse_duration", "p_dep"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def is_ideal(self) -> bool:
        return (self.flip_angle_error == 0.0 and self.detuning == 0.0
                and self.pulse_duration == 0.0 and self.p_dep == 0.0)


@dataclass(frozen=True, eq=False)
class PulseSequence:
    """Ordered pi pulses over a total evolution time.

    Parameters
    ----------
    total_time : float
        Total evolution time T in seconds.
    pulse_times : array_like
        Pulse centres in seconds, strictly increasing inside (0, T).
    pulse_phases : array_like
        Rotation-axis angle of each pulse measured from x (radians).
    label : str
        Free-text family name such as ``"cpmg"`` or ``"kdd_xy"``.
    """

    total_time: float
    pulse_times: np.ndarray
    pulse_phases: np.ndarray
    label: str = "custom"
    _ticks: np.ndarray = field(init=False, repr=False)
    _total_ticks: int = field(init=False, repr=False)

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.pulse_times, dtype=float))
        phases = np.atleast_1d(np.asarray(self.pulse_phases, dtype=float))
        if times.ndim != 1 or phases.shape != times.shape:
            raise ValueError("pulse_times and pulse_phases must be 1-d arrays of equal length")
        if not np.all(np.isfinite(phases)):
            raise ValueError("pulse phases must be finite")
        if not (math.isfinite(self.total_time) and self.total_time > 0):
            raise ValueError(f"total time must be positive, got {self.total_time!r}")
        total = _to_half_ticks(self.total_time)
        ticks = np.rint(times / HALF_TICK).astype(np.int64)
        self._set_grid(ticks, total, phases)

    @classmethod
    def _from_ticks(cls, ticks: np.ndarray, total_ticks: int, phases: np.ndarray,
                    label: str) -> "PulseSequence":
        obj = cls.__new__(cls)
        object.__setattr__(obj, "label", label)
        obj._set_grid(np.asarray(ticks, dtype=np.int64), int(total_ticks),
                      np.asarray(phases, dtype=float))
        return obj

    def _set_grid(self, ticks, total, phases):
        if total <= 0:
            raise ValueError("total time is below the timing resolution")
        if ticks.size:
            if ticks[0] <= 0 or ticks[-1] >= total:
                raise ValueError("pulse times must lie strictly inside (0, T)")
            if np.any(np.diff(ticks) <= 0):
                raise ValueError("pulse times must be strictly increasing")
        ticks = ticks.copy()
        ticks.setflags(write=False)
        times = ticks / _TICKS_PER_S
        times.setflags(write=False)
        phases = phases.copy()
        phases.setflags(write=False)
        object.__setattr__(self, "_ticks", ticks)
        object.__setattr__(self, "_total_ticks", total)
        object.__setattr__(self, "total_time", total / _TICKS_PER_S)
        object.__setattr__(self, "pulse_times", times)
        object.__setattr__(self, "pulse_phases", phases)

    @property
    def n_pulses(self) -> int:
        return int(self._ticks.size)

    @property
    def boundaries(self) -> np.ndarray:
        """Times ``0, tau_1, ..., tau_N, T`` in seconds."""
        return np.concatenate(([0.0], self.pulse_times, [self.total_time]))

    @property
    def grid_interval(self) -> float | None:
        """Pulse spacing tau if the pulses sit at (i - 1/2) tau with T = N tau, else None."""
        n = self.n_pulses
        if n == 0:
            return None
        step = self._total_ticks // n
        if step * n != self._total_ticks or step % 2:
            return None
        expected = (2 * np.arange(1, n + 1, dtype=np.int64) - 1) * (step // 2)
        if not np.array_equal(self._ticks, expected):
            return None
        return step / _TICKS_PER_S

    def phase_sum(self) -> float:
        """Alternating pulse-phase sum, sum_i (-1)^(i+1) phi_i."""
        signs = np.where(np.arange(self.n_pulses) % 2 == 0, 1.0, -1.0)
        return float(math.fsum(signs * self.pulse_phases))

    def scaled(self, factor: float) -> "PulseSequence":
        """Copy with every time multiplied by ``factor``."""
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return PulseSequence(self.total_time * factor, self.pulse_times * factor,
                             self.pulse_phases, self.label)

    def __len__(self):
        return self.n_pulses

    def __eq__(self, other):
        if not isinstance(other, PulseSequence):
            return NotImplemented
        return (self._total_ticks == other._total_ticks
                and np.array_equal(self._ticks, other._ticks)
                and np.array_equal(self.pulse_phases, other.pulse_phases)
                and self.label == other.label)

    __hash__ = None


def _grid_sequence(n_pulses: int, tau: float, phases: np.ndarray, label: str) -> PulseSequence:
    step = _tick_interval(tau)
    ticks = (2 * np.arange(1, n_pulses + 1, dtype=np.int64) - 1) * (step // 2)
    return PulseSequence._from_ticks(ticks, n_pulses * step, phases, label)


def _check_count(n_pulses, what):
    if isinstance(n_pulses, bool) or int(n_pulses) != n_pulses:
        raise ValueError(f"{what}: pulse count must be an integer, got {n_pulses!r}")
    return int(n_pulses)


def _check_interval(tau):
    if not (math.isfinite(tau) and tau > 0):
        raise ValueError(f"pulse interval must be positive, got {tau!r}")


def make_cpmg(n_pulses: int, tau: float, allow_odd: bool = False) -> PulseSequence:
    """CPMG sequence: N equally spaced pi pulses, all with phase pi/2.

    Pulses sit at ``(i - 1/2) * tau`` so every pair of neighbouring pulses is
    ``tau`` apart, the free gaps at either end are ``tau / 2`` and
    ``T = N * tau``.  Storage sequences need an even count; ``allow_odd``
    admits odd counts for line-spectroscopy probes, which leave the qubit
    flipped.

    Raises
    ------
    ValueError
        If ``tau`` is not positive or ``n_pulses`` is zero or odd.
    """
    n = _check_count(n_pulses, "cpmg")
    _check_interval(tau)
    if n <= 0 or (n % 2 and not allow_odd):
        raise ValueError(
            f"cpmg needs a positive even number of pulses so the echo closes, got {n}")
    return _grid_sequence(n, tau, np.full(n, math.pi / 2), "cpmg")


def make_kdd_xy(n_pulses: int, tau: float) -> PulseSequence:
    """KDD_xy sequence on the CPMG timing grid.

    Phases cycle through :data:`KDD_XY_PHASES`; ``n_pulses`` must be a
    positive multiple of 20 so that the blocks compose to the identity.
    """
    n = _check_count(n_pulses, "kdd_xy")
    _check_interval(tau)
    if n <= 0 or n % 20:
        raise ValueError(f"kdd_xy needs a positive multiple of 20 pulses, got {n}")
    phases = np.resize(np.asarray(KDD_XY_PHASES), n)
    return _grid_sequence(n, tau, phases, "kdd_xy")


def make_hahn(total_time: float) -> PulseSequence:
    """Spin echo: a single pi pulse (phase pi/2) at T/2."""
    if not (math.isfinite(total_time) and total_time > 0):
        raise ValueError(f"total time must be positive, got {total_time!r}")
    total = 2 * int(round(total_time / (2 * HALF_TICK)))
    if total <= 0:
        raise ValueError("total time is below the timing resolution")
    return PulseSequence._from_ticks(np.array([total // 2]), total,
                                     np.array([math.pi / 2]), "hahn")


@dataclass(frozen=True)
class FilterValue:
    """Filter-function value(s): ``y`` is complex (s), ``y_abs_sq`` is ``|y|**2`` (s^2)."""

    omega: np.ndarray | float
    y: np.ndarray | complex
    y_abs_sq: np.ndarray | float


def _edge_weights(n: int) -> np.ndarray:
    c = np.empty(n + 2)
    c[0] = 1.0
    c[1:-1] = np.where(np.arange(1, n + 1) % 2 == 0, 2.0, -2.0)
    c[-1] = -1.0 if n % 2 == 0 else 1.0
    return c


def _general_filter(times: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Direct evaluation; ``times`` includes 0 and T."""
    c = _edge_weights(times.size - 2)
    out = np.empty(omega.shape, dtype=complex)
    T = times[-1]
    small = np.abs(omega) * T < _SMALL_PHASE
    big = ~small
    if np.any(big):
        w = omega[big]
        chunk = max(1, 2_000_000 // times.size)
        vals = np.empty(w.shape, dtype=complex)
        for s in range(0, w.size, chunk):
            ws = w[s:s + chunk]
            vals[s:s + chunk] = np.exp(1j * np.multiply.outer(ws, times)) @ c / ws
        out[big] = vals
    if np.any(small):
        # series: (1/w) sum_k c_k e^{i w t_k} = sum_{n>=1} (i^n w^(n-1) / n!) M_n
        w = omega[small]
        acc = np.zeros(w.shape, dtype=complex)
        tn = np.ones_like(times)
        fact = 1.0
        for n in range(1, 12):
            tn = tn * times
            fact *= n
            moment = math.fsum(c * tn)
            acc += (1j ** n) * w ** (n - 1) * moment / fact
        out[small] = acc
    return out


def grid_filter_y(n_pulses: int, tau, omega) -> np.ndarray:
    """Closed-form ``y(omega)`` for pulses at ``(i - 1/2) tau`` with ``T = N tau``.

    Broadcasts over ``tau`` and ``omega``.  The pulse sum is a geometric
    series, evaluated through the Dirichlet kernel so band centres (where the
    ratio form is 0/0) stay exact.
    """
    tau = np.asarray(tau, dtype=float)
    omega = np.asarray(omega, dtype=float)
    n = int(n_pulses)
    wt = omega * tau
    T = n * tau
    if n == 0:
        return _free_filter(omega, T)
    eps = np.remainder(wt + math.pi + math.pi, 2 * math.pi) - math.pi
    half = 0.5 * eps
    s_half = np.sin(half)
    tiny = np.abs(s_half) < 1e-12
    ratio = np.where(tiny, float(n) * np.cos(n * half) / np.where(tiny, np.cos(half), 1.0),
                     np.sin(n * half) / np.where(tiny, 1.0, s_half))
    kernel = np.exp(1j * (n + 1) * half) * ratio
    end = -1.0 if n % 2 == 0 else 1.0
    num = 1.0 + 2.0 * np.exp(-0.5j * wt) * kernel + end * np.exp(1j * omega * T)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = num / omega
    small = np.abs(omega * T) < _SMALL_PHASE
    if np.any(small):
        y = np.array(y, dtype=complex)
        b = np.broadcast_arrays(tau, omega)
        for idx in zip(*np.nonzero(np.broadcast_to(small, y.shape))):
            t = float(b[0][idx])
            times = np.concatenate(([0.0], (np.arange(1, n + 1) - 0.5) * t, [n * t]))
            y[idx] = _general_filter(times, np.array([float(b[1][idx])]))[0]
    return y


def grid_notch_envelope(tau, omega) -> np.ndarray:
    """Largest ``|y|^2`` over all even pulse counts on the ``tau`` grid.

    For even N the grid filter factorises as
    ``|w y| = |1 - e^{i w T}| * |1 - e^{i w tau/2}|^2 / |1 + e^{i w tau}|``.
    The first factor only says whether ``T`` holds a whole number of periods;
    the rest is the spacing's own response, so ``(2 * rest / w)^2`` bounds
    ``|y|^2`` for every total time.  It vanishes when ``f tau`` is an even
    integer and is infinite at band centres.
    """
    tau = np.asarray(tau, dtype=float)
    omega = np.asarray(omega, dtype=float)
    h = 0.5 * omega * tau
    num = 4.0 * np.sin(0.5 * h) ** 2
    den = 2.0 * np.abs(np.cos(h))
    with np.errstate(divide="ignore", invalid="ignore"):
        env = (2.0 * num / (den * omega)) ** 2
    return np.where(den == 0, np.inf, env)


def _free_filter(omega, T):
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = -np.expm1(1j * omega * T) / omega
    return np.where(np.abs(omega * T) < 1e-8, -1j * T + 0.5 * omega * T * T, y)


def filter_y(seq: PulseSequence, omega) -> FilterValue:
    """Evaluate the filter function of ``seq`` at angular frequency ``omega``.

    ``omega`` may be a scalar or an array (rad/s, non-negative). At and near
    ``omega = 0`` a moment expansion replaces the 1/omega form; the limit is
    ``-i * sum_j (-1)^j (tau_{j+1} - tau_j)``.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("omega must be finite and non-negative")
    flat = w.ravel()
    tau = seq.grid_interval
    if tau is not None:
        y = grid_filter_y(seq.n_pulses, tau, flat)
    elif seq.n_pulses == 0:
        y = _free_filter(flat, seq.total_time)
    else:
        y = _general_filter(seq.boundaries, flat)
    y = np.asarray(y, dtype=complex).reshape(w.shape)
    sq = y.real ** 2 + y.imag ** 2
    if w.ndim == 0:
        return FilterValue(float(w), complex(y), float(sq))
    return FilterValue(w, y, sq)


def filter_abs_sq(seq: PulseSequence, omega) -> np.ndarray:
    """Shorthand for ``filter_y(seq, omega).y_abs_sq``."""
    return filter_y(seq, omega).y_abs_sq


def free_evolution(total_time: float) -> PulseSequence:
    """Pulse-free (Ramsey) sequence of duration ``total_time``."""
    return PulseSequence(total_time, [], [], "free")


def notch_report(seq: PulseSequence, freqs: Iterable[float]) -> list[tuple[float, float]]:
    """``|y|^2`` at each frequency given in Hz."""
    freqs = [float(f) for f in freqs]
    vals = filter_abs_sq(seq, 2 * math.pi * np.asarray(freqs, dtype=float))
    return [(f, float(v)) for f, v in zip(freqs, np.atleast_1d(vals))]


def write_sequence_csv(seq: PulseSequence, path=None) -> str:
    """Write ``index,time_s,phase_rad`` rows; returns the text as well."""
    buf = io.StringIO()
    buf.write(f"# total_time_s={seq.total_time!r}\n")
    buf.write(f"# label={seq.label}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "time_s", "phase_rad"])
    for i, (t, p) in enumerate(zip(seq.pulse_times, seq.pulse_phases), start=1):
        w.writerow([i, repr(float(t)), repr(float(p))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_sequence_csv(source) -> PulseSequence:
    """Parse the CSV written by :func:`write_sequence_csv` (path or text)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    total = None
    label = "custom"
    rows: list[Sequence[str]] = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, val = s[1:].strip().partition("=")
            if key.strip() == "total_time_s":
                total = float(val)
            elif key.strip() == "label":
                label = val.strip()
            continue
        if not header_seen:
            if [c.strip() for c in s.split(",")] != ["index", "time_s", "phase_rad"]:
                raise ValueError(f"line {lineno}: expected header 'index,time_s,phase_rad'")
            header_seen = True
            continue
        parts = [c.strip() for c in s.split(",")]
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 columns, got {len(parts)}")
        rows.append((lineno, parts))
    if total is None:
        raise ValueError("missing '# total_time_s=<T>' comment line")
    times, phases = [], []
    for lineno, (idx, t, p) in rows:
        try:
            times.append(float(t))
            phases.append(float(p))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return PulseSequence(total, times, phases, label)
