"""
Monte-Carlo dephasing oracle.

Each trajectory draws a realization of the frequency noise beta(t) as a sum
of sinusoids, integrates it in closed form between pulses, and rotates a
Bloch vector through the sequence.  Nothing here uses the filter function,
so agreement with :mod:`ddlab.cohmodel` is a genuine cross-check.

Conventions
-----------
The basis is (|down>, |up>) with |down> at Bloch ``+z``; the free evolution
over ``[a, b]`` is ``exp(-i sigma_z Phi / 2)`` with ``Phi = integral_a^b beta``,
i.e. a right-handed z rotation of the Bloch vector by ``Phi``.  The initial
state (|down> + i|up>)/sqrt(2) sits at ``+y`` and the contrast is ``<sigma_y>``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .cohmodel import NoiseModel
from .seqkit import PulseErrorModel, PulseSequence

__all__ = [
    "BetaRealization",
    "MCResult",
    "QubitState",
    "evolve",
    "mc_contrast",
    "rotation",
    "rotation_unitary",
    "synthesize_beta",
    "trajectory_rng",
]

_MASK64 = (1 << 64) - 1

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class QubitState:
    """Bloch vector ``(r_x, r_y, r_z)``; ``|down>`` is ``+z``."""

    r: tuple

    def __post_init__(self):
        r = tuple(float(v) for v in self.r)
        if len(r) != 3:
            raise ValueError("Bloch vector needs three components")
        if math.fsum(v * v for v in r) > 1 + 1e-9:
            raise ValueError("Bloch vector norm exceeds 1")
        object.__setattr__(self, "r", r)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.r)

    @property
    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.r))

    @property
    def p_up(self) -> float:
        """Population of |up> (Bloch ``-z``)."""
        return 0.5 * (1.0 - self.r[2])

    @classmethod
    def down(cls):
        return cls((0.0, 0.0, 1.0))

    @classmethod
    def up(cls):
        return cls((0.0, 0.0, -1.0))

    @classmethod
    def ramsey(cls):
        """(|down> + i|up>)/sqrt(2): the storage-experiment initial state."""
        return cls((0.0, 1.0, 0.0))


def rotation(phi: float, gamma: float) -> np.ndarray:
    """Bloch-vector matrix of ``D_phi(gamma) = Rz(phi) Rx(gamma) Rz(-phi)``.

    The rotation is by ``gamma`` about the in-plane axis at angle ``phi`` from x.
    """
    return _axis_rotation(np.array([math.cos(phi), math.sin(phi), 0.0]), gamma)


def rotation_unitary(phi: float, gamma: float) -> np.ndarray:
    """2x2 unitary ``exp(-i sz phi/2) exp(-i sx gamma/2) exp(i sz phi/2)``."""
    rz = np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])
    rx = math.cos(gamma / 2) * np.eye(2) - 1j * math.sin(gamma / 2) * SIGMA_X
    return rz @ rx @ rz.conj().T


def _axis_rotation(axis, angle):
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def _rotate_z(states, angle):
    c, s = np.cos(angle), np.sin(angle)
    x = states[:, 0] * c - states[:, 1] * s
    y = states[:, 0] * s + states[:, 1] * c
    states[:, 0] = x
    states[:, 1] = y


def _rotate_batch(states, field, duration):
    """Rotate each row about its own field vector (rad/s) for ``duration``."""
    mag = np.linalg.norm(field, axis=1)
    angle = mag * duration
    n = field / np.where(mag > 0, mag, 1.0)[:, None]
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    dot = np.sum(n * states, axis=1)[:, None]
    out = states * c + np.cross(n, states) * s + n * dot * (1 - c)
    states[:] = out


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index``: Philox keyed by ``seed``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, int(index) & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class BetaRealization:
    """``beta(t) = sum_m a_m cos(w_m t + theta_m)`` (rad/s)."""

    amplitudes: np.ndarray
    omegas: np.ndarray
    phases: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self.omegas) + self.phases
        return np.cos(arg) @ self.amplitudes

    def integral(self, a, b):
        """Closed-form ``integral_a^b beta(t) dt``."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        sa = np.sin(np.multiply.outer(a, self.omegas) + self.phases)
        sb = np.sin(np.multiply.outer(b, self.omegas) + self.phases)
        return (sb - sa) @ (self.amplitudes / self.omegas)


class _Synth:
    """Frequency layout shared by every trajectory of one run."""

    def __init__(self, model: NoiseModel, duration: float, n_pulses: int,
                 omega_max, resolution, harmonics):
        self.line_w = np.array([ln.omega for ln in model.lines], dtype=float)
        self.line_a = np.array([ln.beta for ln in model.lines], dtype=float)
        self.spectrum = model.continuum
        self.n_bins = 0
        if not model.continuum.is_empty:
            if resolution <= 0:
                raise ValueError("resolution must be positive")
            wmax = (harmonics * (n_pulses + 1) * math.pi / duration
                    if omega_max is None else float(omega_max))
            dw = 2 * math.pi / (duration * resolution)
            segs = [s for s in model.continuum.segments if s.amp > 0]
            lo = min(s.lo for s in segs)
            hi = min(max(s.hi for s in segs), wmax)
            first = int(math.floor(lo / dw))
            last = int(math.ceil(hi / dw))
            self.bin_lo = np.arange(first, last) * dw
            self.dw = dw
            self.n_bins = self.bin_lo.size
        self.size = self.line_w.size + self.n_bins

    def draw(self, rng):
        """One trajectory: amplitudes, frequencies and phases of all components."""
        k = self.line_w.size
        theta = rng.uniform(0.0, 2 * math.pi, size=k + self.n_bins)
        if not self.n_bins:
            return self.line_a, self.line_w, theta
        w = self.bin_lo + self.dw * rng.random(self.n_bins)
        a = np.sqrt(8.0 / math.pi * self.spectrum(w) * self.dw)
        return (np.concatenate((self.line_a, a)), np.concatenate((self.line_w, w)), theta)


def synthesize_beta(model: NoiseModel, duration: float, seed: int, index: int = 0,
                    n_pulses: int = 0, omega_max: float | None = None,
                    resolution: int = 8, harmonics: float = 100.0) -> BetaRealization:
    """Draw one noise realization, identical to trajectory ``index`` of :func:`mc_contrast`.

    Lines keep their amplitude and get a uniform random phase.  The continuum
    is a sum of sinusoids, one per frequency bin of width
    ``2 pi / (resolution * duration)`` up to ``omega_max`` (default
    ``harmonics (n_pulses + 1) pi / duration``); each frequency is jittered
    uniformly inside its bin and gets amplitude ``sqrt((8/pi) S(w) dw)``, so
    the mean accumulated phase variance is exactly ``2 chi`` restricted to
    ``w < omega_max``, whatever the bin width.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    synth = _Synth(model, duration, n_pulses, omega_max, resolution, harmonics)
    a, w, th = synth.draw(trajectory_rng(seed, index))
    return BetaRealization(np.array(a), np.array(w), np.array(th))


def _interval_edges(seq: PulseSequence, err: PulseErrorModel):
    times = seq.boundaries
    d = err.pulse_duration
    if d == 0 or seq.n_pulses == 0:
        return times[:-1], times[1:]
    gaps = np.diff(times)
    if np.any(gaps[1:-1] < d) or gaps[0] < d / 2 or gaps[-1] < d / 2:
        raise ValueError("pulse duration exceeds the free time between pulses")
    start = times[:-1].copy()
    stop = times[1:].copy()
    start[1:] += d / 2
    stop[:-1] -= d / 2
    return start, stop


def _run_pulses(seq, err, phase, beta_at_pulses, states):
    """Alternate z rotations ``phase[:, j]`` with the sequence's pulses (in place)."""
    n = seq.n_pulses
    gamma = math.pi + err.flip_angle_error
    d = err.pulse_duration
    mats = {}
    for j in range(n + 1):
        col = phase[:, j]
        if np.any(col != 0):
            _rotate_z(states, col)
        if j == n:
            break
        phi = float(seq.pulse_phases[j])
        if d == 0:
            m = mats.get(phi)
            if m is None:
                m = mats[phi] = rotation(phi, gamma)
            states[:] = states @ m.T
        else:
            omega_r = gamma / d
            field = np.empty_like(states)
            field[:, 0] = omega_r * math.cos(phi)
            field[:, 1] = omega_r * math.sin(phi)
            field[:, 2] = err.detuning + (beta_at_pulses[:, j] if beta_at_pulses is not None else 0.0)
            _rotate_batch(states, field, d)
    return states


def evolve(seq: PulseSequence, err: PulseErrorModel | None, beta, initial: QubitState) -> QubitState:
    """Propagate ``initial`` through ``seq`` for one noise realization.

    ``beta`` is a :class:`BetaRealization`, ``None`` or ``0`` for no noise.
    Pulses are ``D_phi(pi + eps)``; with a finite ``pulse_duration`` they are
    square pulses whose z field is ``detuning + beta(tau_i)``.
    """
    err = err or PulseErrorModel()
    states = initial.vector[None, :].copy()
    start, stop = _interval_edges(seq, err)
    if beta is None or (np.isscalar(beta) and beta == 0):
        phase = np.zeros((1, seq.n_pulses + 1))
        bp = None
    else:
        phase = np.atleast_1d(beta.integral(start, stop))[None, :]
        bp = np.atleast_1d(beta(seq.pulse_times))[None, :] if seq.n_pulses else None
    _run_pulses(seq, err, phase, bp, states)
    r = states[0]
    nrm = float(np.linalg.norm(r))
    if nrm > 1.0:
        r = r / nrm
    return QubitState(tuple(r))


class MCResult(NamedTuple):
    contrast: float
    stderr: float


def _chunk_values(seq, err, synth, seed, lo, hi, start, stop, want_phase, r0, axis):
    n = hi - lo
    amps = np.empty((n, synth.size))
    ws = np.empty((n, synth.size))
    ths = np.empty((n, synth.size))
    for i in range(n):
        amps[i], ws[i], ths[i] = synth.draw(trajectory_rng(seed, lo + i))
    ratio = amps / ws
    k = start.size
    phase = np.empty((n, k))
    s_prev = np.sin(ws * start[0] + ths)
    for j in range(k):
        s_next = np.sin(ws * stop[j] + ths)
        if j > 0 and start[j] != stop[j - 1]:
            s_prev = np.sin(ws * start[j] + ths)
        phase[:, j] = np.sum(ratio * (s_next - s_prev), axis=1)
        s_prev = s_next
    bp = None
    if err.pulse_duration > 0 and seq.n_pulses:
        bp = np.empty((n, seq.n_pulses))
        for j, t in enumerate(seq.pulse_times):
            bp[:, j] = np.sum(amps * np.cos(ws * t + ths), axis=1)
    states = np.tile(r0, (n, 1))
    _run_pulses(seq, err, phase, bp, states)
    toggled = None
    if want_phase:
        signs = np.where(np.arange(k) % 2 == 0, -1.0, 1.0)
        toggled = 0.5 * phase @ signs
    return states @ axis, toggled


def mc_contrast(seq: PulseSequence, model: NoiseModel, err: PulseErrorModel | None = None,
                n_traj: int = 10_000, seed: int = 0, threads: int = 1,
                chunk: int = 256, dump_path=None, initial: QubitState | None = None,
                axis=(0.0, 1.0, 0.0), **synth_opts) -> MCResult:
    """Monte-Carlo estimate of ``<sigma_y>`` after ``seq`` for the Ramsey initial state.

    ``initial`` and ``axis`` select another input state and measured Pauli
    direction (Bloch coordinates); the defaults give the Ramsey contrast.

    Trajectory ``i`` draws from :func:`trajectory_rng` ``(seed, i)`` and the
    mean and standard error are exactly rounded sums, so the result is
    bit-identical for any ``threads`` or ``chunk`` setting.

    ``dump_path`` writes ``traj_index,F_rad`` where ``F`` is half the
    sign-toggled noise phase (the contrast is ``<cos 2F>`` for ideal pulses).
    """
    if n_traj < 100:
        raise ValueError(f"n_traj must be >= 100 for a usable standard error, got {n_traj}")
    err = err or PulseErrorModel()
    synth = _Synth(model, seq.total_time, seq.n_pulses, synth_opts.get("omega_max"),
                   synth_opts.get("resolution", 8), synth_opts.get("harmonics", 100.0))
    start, stop = _interval_edges(seq, err)
    if synth.size:
        # keep the (chunk, components) work arrays near 2e6 elements
        chunk = max(1, min(chunk, 2_000_000 // synth.size))
    bounds = [(lo, min(lo + chunk, n_traj)) for lo in range(0, n_traj, chunk)]
    want = dump_path is not None
    r0 = (initial or QubitState.ramsey()).vector
    ax = np.asarray(axis, dtype=float)

    def work(b):
        return _chunk_values(seq, err, synth, seed, b[0], b[1], start, stop, want, r0, ax)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    values = np.concatenate([p[0] for p in parts])
    mean = math.fsum(values) / n_traj
    var = math.fsum((values - mean) ** 2) / (n_traj - 1)
    if want:
        F = np.concatenate([p[1] for p in parts])
        lines = ["traj_index,F_rad"] + [f"{i},{float(f)!r}" for i, f in enumerate(F)]
        Path(dump_path).write_text("\n".join(lines) + "\n")
    return MCResult(mean, math.sqrt(var / n_traj))
