"""Benchmarking and tomography: randomized benchmarking, DD robustness, storage protocols, QPT."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .cohmodel import NoiseModel, contrast_total
from .dephsim import (SIGMA_X, SIGMA_Y, SIGMA_Z, QubitState, _axis_rotation, mc_contrast,
                      rotation, trajectory_rng)
from .seqkit import KDD_XY_PHASES, PulseErrorModel, make_kdd_xy

__all__ = [
    "CLIFFORDS",
    "ProcessMatrix",
    "ProjectionWarning",
    "RBFit",
    "RBRun",
    "RobustnessResult",
    "StorageChannel",
    "calibrate_flip_error",
    "dd_robustness",
    "dephasing_chi",
    "qpt",
    "rb_fit",
    "rb_simulate",
    "read_rb_csv",
    "six_state_protocol",
    "write_chi_csv",
    "write_rb_csv",
]

PAULIS = (np.eye(2, dtype=complex), SIGMA_X, SIGMA_Y, SIGMA_Z)


# --- Clifford group ----------------------------------------------------------

def _clifford_group():
    gens = [_axis_rotation((1, 0, 0), math.pi / 2), _axis_rotation((0, 1, 0), math.pi / 2)]
    found = [np.eye(3)]
    frontier = [np.eye(3)]
    while frontier:
        nxt = []
        for m in frontier:
            for g in gens:
                c = np.rint(g @ m)
                if not any(np.array_equal(c, f) for f in found):
                    found.append(c)
                    nxt.append(c)
        frontier = nxt
    return np.array(found)


def _axis_angle(m):
    angle = math.acos(max(-1.0, min(1.0, (np.trace(m) - 1) / 2)))
    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), 0.0
    if abs(angle - math.pi) < 1e-9:
        # symmetric part (m + I)/2 = n n^T
        b = (m + np.eye(3)) / 2
        i = int(np.argmax(np.diag(b)))
        n = b[:, i] / math.sqrt(b[i, i])
        return n, math.pi
    n = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / (2 * math.sin(angle))
    return n, angle


CLIFFORDS = _clifford_group()
_N_CLIFF = len(CLIFFORDS)
_KEY = {tuple(c.astype(int).ravel()): i for i, c in enumerate(CLIFFORDS)}
_MUL = np.array([[_KEY[tuple(np.rint(a @ b).astype(int).ravel())] for b in CLIFFORDS]
                 for a in CLIFFORDS])
_INV = np.array([_KEY[tuple(np.rint(c.T).astype(int).ravel())] for c in CLIFFORDS])
_AXES = [_axis_angle(c) for c in CLIFFORDS]


def _noisy_cliffords(err: PulseErrorModel) -> np.ndarray:
    """Bloch matrices of the 24 gates with systematic errors folded in.

    A gate rotating by ``theta`` about ``n`` over-rotates by ``theta eps / pi``
    and, for finite pulses, runs ``theta / pi`` pulse durations with the
    detuning added to the z field.
    """
    out = np.empty((_N_CLIFF, 3, 3))
    for i, (n, theta) in enumerate(_AXES):
        if theta == 0:
            out[i] = np.eye(3)
            continue
        angle = theta * (1 + err.flip_angle_error / math.pi)
        if err.pulse_duration > 0 and err.detuning != 0:
            t = err.pulse_duration * theta / math.pi
            h = n * angle / t + np.array([0.0, 0.0, err.detuning])
            out[i] = _axis_rotation(h, float(np.linalg.norm(h)) * t)
        else:
            out[i] = _axis_rotation(n, angle)
    return out


# --- randomized benchmarking -------------------------------------------------

@dataclass(frozen=True)
class RBRun:
    """Survival per length; ``per_setting`` has shape (lengths, settings)."""

    lengths: np.ndarray
    survival_mean: np.ndarray
    survival_stderr: np.ndarray
    n_settings: int
    n_reps: int
    per_setting: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        L = np.asarray(self.lengths)
        if np.any(np.diff(L) <= 0):
            raise ValueError("lengths must be strictly increasing")
        m = np.asarray(self.survival_mean)
        if np.any((m < 0) | (m > 1)):
            raise ValueError("survival probabilities must lie in [0, 1]")

    def subsample(self, settings: Sequence[int]) -> "RBRun":
        """Run restricted to the given setting indices."""
        if self.per_setting is None:
            raise ValueError("per-setting survivals were not stored")
        ps = self.per_setting[:, list(settings)]
        k = ps.shape[1]
        se = ps.std(axis=1, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(ps.shape[0])
        return RBRun(self.lengths, ps.mean(axis=1), se, k, self.n_reps, ps)


def rb_simulate(lengths: Sequence[int], err: PulseErrorModel | None = None, n_settings: int = 32,
                n_reps: int = 500, seed: int = 0) -> RBRun:
    """Simulate single-qubit Clifford randomized benchmarking.

    Each setting is a random Clifford string of the given length followed by
    the inverting gate.  Every gate carries the systematic errors of ``err``
    and then shrinks the Bloch vector by ``1 - p_dep``.  The qubit starts
    in ``|down>`` and the survival of each setting is drawn from
    ``n_reps`` shots.  Setting ``j`` draws from stream ``(seed, j)``, so
    results do not depend on evaluation order.
    """
    err = err or PulseErrorModel()
    lengths = np.array([int(v) for v in lengths])
    if lengths.size == 0 or np.any(lengths < 1):
        raise ValueError("lengths must be >= 1")
    if n_settings < 1 or n_reps < 1:
        raise ValueError("n_settings and n_reps must be >= 1")
    gates = _noisy_cliffords(err)
    shrink = 1.0 - err.p_dep
    per = np.empty((lengths.size, n_settings))
    rngs = [trajectory_rng(seed, j) for j in range(n_settings)]
    for li, L in enumerate(lengths):
        seqs = np.stack([g.integers(0, _N_CLIFF, size=L) for g in rngs])
        r = np.zeros((n_settings, 3))
        r[:, 2] = 1.0
        total = np.zeros(n_settings, dtype=int)
        for pos in range(L):
            col = seqs[:, pos]
            r = np.einsum("sij,sj->si", gates[col], r)
            total = _MUL[col, total]
        r = np.einsum("sij,sj->si", gates[_INV[total]], r) * shrink ** (L + 1)
        p = np.clip(0.5 * (1 + r[:, 2]), 0.0, 1.0)
        per[li] = [g.binomial(n_reps, pj) / n_reps for g, pj in zip(rngs, p)]
    mean = per.mean(axis=1)
    se = per.std(axis=1, ddof=1) / math.sqrt(n_settings) if n_settings > 1 else np.zeros(lengths.size)
    return RBRun(lengths, mean, se, n_settings, n_reps, per)


@dataclass(frozen=True)
class RBFit:
    fidelity: float
    uncertainty: float
    p: float
    A: float
    B: float
    informative: bool
    message: str = ""

    def report(self) -> str:
        out = [f"fidelity={self.fidelity!r}", f"uncertainty={self.uncertainty!r}",
               f"p={self.p!r}", f"A={self.A!r}", f"B={self.B!r}",
               f"informative={str(self.informative).lower()}"]
        if self.message:
            out.append(f"message={self.message}")
        return "\n".join(out) + "\n"


def rb_fit(run: RBRun) -> RBFit:
    """Fit ``A p^L + B`` and return the average gate fidelity ``1 - (1 - p)/2``.

    Perfect survival at every length returns fidelity 1 exactly.  When the
    decay amplitude is not significant the fit is flagged uninformative.
    """
    L = np.asarray(run.lengths, dtype=float)
    y = np.asarray(run.survival_mean, dtype=float)
    if L.size < 3:
        raise ValueError("need at least 3 lengths")
    if np.all(y == 1.0):
        return RBFit(1.0, 0.0, 1.0, 0.5, 0.5, True, "all survivals equal 1")
    se = np.asarray(run.survival_stderr, dtype=float)
    pos = se > 0
    if np.any(pos):
        floor = float(np.median(se[pos]))
        w = 1.0 / np.where(pos, se, floor)
    else:
        w = np.ones_like(y)
    span = float(np.ptp(y))
    if span <= 0 or (np.any(pos) and span < 2 * float(np.max(se))):
        return RBFit(math.nan, math.inf, math.nan, 0.0, float(y.mean()), False,
                     "survival is flat; decay amplitude not resolved")
    scale = L.max()
    x = L / scale

    def resid(q):
        A, k, B = q
        return (A * np.exp(-k * x) + B - y) * w

    def jac(q):
        A, k, _ = q
        e = np.exp(-k * x)
        return np.column_stack((e, -A * x * e, np.ones_like(x))) * w[:, None]

    # start from the depolarizing shape: B = 1/2
    k0 = 1.0
    if y[0] > 0.5 and y[-1] > 0.5:
        k0 = max(math.log((y[0] - 0.5) / (y[-1] - 0.5)) / max(x[-1] - x[0], 1e-12), 1e-6)
    res = least_squares(resid, [0.5, k0, 0.5], jac=jac,
                        bounds=([-1.0, 0.0, 0.0], [1.0, np.inf, 1.0]),
                        method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    if res.status == 0:
        raise RuntimeError(f"RB fit did not converge: A, k, B = {res.x}, cost {res.cost:.3g}")
    A, k, B = res.x
    J = res.jac
    dof = max(L.size - 3, 1)
    chi2 = 2 * res.cost / dof
    # stated errors are inflated when the scatter exceeds them
    s2 = max(1.0, chi2) if np.any(pos) else chi2
    cov = np.linalg.pinv(J.T @ J) * s2
    sA, sk, _ = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    p = math.exp(-k / scale)
    sp = p * sk / scale
    informative = abs(A) > 2 * sA
    msg = "" if informative else "decay amplitude not significant"
    return RBFit(1 - (1 - p) / 2, float(sp / 2), p, float(A), float(B), bool(informative), msg)


def write_rb_csv(run: RBRun, path=None, header_lines=()) -> str:
    buf = io.StringIO()
    for h in header_lines:
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["length", "survival_mean", "survival_stderr"])
    for L, m, s in zip(run.lengths, run.survival_mean, run.survival_stderr):
        w.writerow([int(L), repr(float(m)), repr(float(s))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_rb_csv(source, n_settings: int = 0, n_reps: int = 0) -> RBRun:
    text = Path(source).read_text() if not (isinstance(source, str) and "\n" in source) else source
    rows, seen = [], False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        cells = [c.strip() for c in s.split(",")]
        if not seen:
            if cells != ["length", "survival_mean", "survival_stderr"]:
                raise ValueError(f"line {lineno}: expected header length,survival_mean,survival_stderr")
            seen = True
            continue
        if len(cells) != 3:
            raise ValueError(f"line {lineno}: expected 3 columns, got {len(cells)}")
        try:
            rows.append((int(cells[0]), float(cells[1]), float(cells[2])))
        except ValueError:
            raise ValueError(f"line {lineno}: could not parse {s!r}") from None
    if not seen:
        raise ValueError("missing RB header")
    a = np.array(rows, dtype=float).reshape(-1, 3)
    return RBRun(a[:, 0].astype(int), a[:, 1], a[:, 2], n_settings, n_reps)


# --- DD robustness -------------------------------------------------------------

_FAMILIES = {
    "kdd_xy": tuple(KDD_XY_PHASES) * 2,
    "cpmg": (math.pi / 2, math.pi / 2),
}


@dataclass(frozen=True)
class RobustnessResult:
    family: str
    n_pulses: np.ndarray
    population_up: np.ndarray


def _block_matrix(family, err):
    try:
        phases = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown sequence family {family!r}; use 'kdd_xy' or 'cpmg'") from None
    gamma = math.pi + err.flip_angle_error
    m = np.eye(3)
    for phi in phases:
        if err.pulse_duration > 0 and err.detuning != 0:
            d = err.pulse_duration
            h = np.array([gamma / d * math.cos(phi), gamma / d * math.sin(phi), err.detuning])
            r = _axis_rotation(h, float(np.linalg.norm(h)) * d)
        else:
            r = rotation(phi, gamma)
        m = r @ m
    return m, len(phases)


def dd_robustness(family: str, checkpoints: Sequence[int], err: PulseErrorModel,
                  initial: QubitState | None = None) -> RobustnessResult:
    """Population of ``|up>`` after each checkpoint pulse count, without noise.

    Only systematic pulse errors act; the qubit starts in ``|up>`` unless
    ``initial`` says otherwise.  Checkpoints must be multiples of the
    family's block (20 for KDD_xy, 2 for CPMG).
    """
    block, size = _block_matrix(family, err)
    cps = np.array(sorted(int(c) for c in checkpoints))
    if cps.size == 0 or np.any(cps <= 0) or np.any(cps % size):
        raise ValueError(f"checkpoints must be positive multiples of {size} for {family}")
    r = (initial or QubitState.up()).vector.copy()
    pops = np.empty(cps.size)
    done = 0
    for i, c in enumerate(cps):
        r = np.linalg.matrix_power(block, (c - done) // size) @ r
        done = c
        pops[i] = 0.5 * (1.0 - r[2])
    return RobustnessResult(family, cps, pops)


def calibrate_flip_error(target: float = 0.85, n_pulses: int = 20_000, family: str = "kdd_xy",
                         step: float = 5e-4 * math.pi, eps_max: float = math.pi / 2,
                         tol: float = 1e-13) -> float:
    """Smallest flip error whose final ``|up>`` population falls to ``target``.

    Scans upward in ``step`` until the population drops below ``target``,
    then bisects inside the bracketing step.
    """
    def pop(eps):
        return dd_robustness(family, [n_pulses], PulseErrorModel(flip_angle_error=eps)).population_up[0]

    lo = 0.0
    while lo < eps_max:
        hi = lo + step
        if pop(hi) < target:
            break
        lo = hi
    else:
        raise ValueError(f"population stays above {target} for flip errors up to {eps_max}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pop(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- storage channel, six-state protocol, QPT --------------------------------

def _bloch(rho):
    return np.real([np.trace(rho @ P) for P in PAULIS[1:]])


def _rho(r):
    return 0.5 * (PAULIS[0] + r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z)


@dataclass(frozen=True)
class StorageChannel:
    """Storage under KDD_xy for ``duration`` as a Bloch-affine map.

    Dephasing scales the equatorial components by the coherence, taken from
    the filter-function model (``mode='analytic'``) or from Monte-Carlo
    trajectories (``mode='mc'``).  Systematic pulse errors add the
    noiseless pulse-train rotation.  ``prep_error`` and ``meas_error`` are
    SPAM depolarizing probabilities (default 0).
    """

    model: NoiseModel = field(default_factory=NoiseModel)
    tau: float = 0.2
    err: PulseErrorModel = field(default_factory=PulseErrorModel)
    mode: str = "analytic"
    n_traj: int = 2000
    seed: int = 0
    prep_error: float = 0.0
    meas_error: float = 0.0

    def __post_init__(self):
        if self.mode not in ("analytic", "mc"):
            raise ValueError("mode must be 'analytic' or 'mc'")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "_coherence_cache", {})

    def sequence(self, duration: float):
        n = 20 * max(1, round(duration / (20 * self.tau)))
        return make_kdd_xy(n, self.tau)

    def coherence(self, duration: float) -> float:
        if duration == 0:
            return 1.0
        cache = self._coherence_cache
        if duration not in cache:
            cache[duration] = self._coherence(duration)
        return cache[duration]

    def _coherence(self, duration: float) -> float:
        seq = self.sequence(duration)
        if self.mode == "analytic":
            return contrast_total(seq, self.model)
        return mc_contrast(seq, self.model, PulseErrorModel(), n_traj=self.n_traj,
                           seed=self.seed).contrast

    def affine(self, duration: float) -> tuple[np.ndarray, np.ndarray]:
        """``(M, t)`` such that the channel maps Bloch ``r`` to ``M r + t``."""
        c = self.coherence(duration)
        M = np.diag([c, c, 1.0])
        if duration > 0 and not self.err.is_ideal:
            n = self.sequence(duration).n_pulses
            block, size = _block_matrix("kdd_xy", self.err)
            M = np.linalg.matrix_power(block, n // size) @ M
        M = M * (1 - self.prep_error) * (1 - self.meas_error)
        return M, np.zeros(3)

    def apply(self, rho: np.ndarray, duration: float) -> np.ndarray:
        M, t = self.affine(duration)
        return _rho(M @ _bloch(rho) + t)


SIX_STATES = {
    "up": (0.0, 0.0, -1.0),
    "down": (0.0, 0.0, 1.0),
    "+x": (1.0, 0.0, 0.0),
    "-x": (-1.0, 0.0, 0.0),
    "+y": (0.0, 1.0, 0.0),
    "-y": (0.0, -1.0, 0.0),
}


def six_state_protocol(channel: StorageChannel, durations: Sequence[float]) -> dict:
    """Contrast along the preparation axis for the six cardinal states.

    Returns ``{state: [(T, contrast), ...]}`` ready for
    :func:`~ddlab.spectro.fit_coherence_time`; ``T`` is the realized storage
    time (a whole number of KDD_xy blocks).
    """
    out = {k: [] for k in SIX_STATES}
    for T in durations:
        real_T = channel.sequence(T).total_time if T > 0 else 0.0
        M, t = channel.affine(T)
        for name, r0 in SIX_STATES.items():
            r0 = np.array(r0)
            out[name].append((real_T, float(r0 @ (M @ r0 + t))))
    return out


class ProjectionWarning(UserWarning):
    """Raw tomography data were unphysical beyond tolerance."""


@dataclass(frozen=True)
class ProcessMatrix:
    """Single-qubit chi matrix in the Pauli basis (I, X, Y, Z), trace 1."""

    chi: np.ndarray
    projection_distance: float = 0.0

    @property
    def chi_II(self) -> float:
        return float(self.chi[0, 0].real)

    def is_physical(self, tol: float = 1e-6) -> bool:
        c = self.chi
        herm = np.allclose(c, c.conj().T, atol=tol)
        tr = abs(np.trace(c) - 1) <= tol
        psd = float(np.min(np.linalg.eigvalsh(0.5 * (c + c.conj().T)))) >= -tol
        return bool(herm and tr and psd)


def dephasing_chi(coherence: float) -> np.ndarray:
    """Analytic chi of a pure-dephasing channel with equatorial coherence ``c``."""
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = (1 + coherence) / 2
    chi[3, 3] = (1 - coherence) / 2
    return chi


def _simplex_projection(v):
    """Euclidean projection of ``v`` onto {x >= 0, sum x = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1)[0][-1]
    theta = (css[rho] - 1) / (rho + 1)
    return np.maximum(v - theta, 0.0)


_TOMO_INPUTS = (
    np.array([0, 1], dtype=complex),                  # |up>
    np.array([1, 0], dtype=complex),                  # |down>
    np.array([1, 1], dtype=complex) / math.sqrt(2),   # (|up> + |down>)/sqrt2
    np.array([1j, 1], dtype=complex) / math.sqrt(2),  # (|up> + i|down>)/sqrt2
)
_SUPER_BASIS = np.array([np.kron(PAULIS[n].conj(), PAULIS[m]) for m in range(4) for n in range(4)])


def _vec(rho):
    return rho.reshape(-1, order="F")


def qpt(channel: Callable[[np.ndarray], np.ndarray], seed: int = 0, shots: int | None = None,
        tol: float = 1e-6) -> ProcessMatrix:
    """Process tomography from four inputs and three Pauli measurements.

    ``channel`` maps a 2x2 density matrix to its image.  With ``shots`` each
    Pauli expectation is estimated from that many binomial samples drawn
    from stream ``(seed, k)``; otherwise exact expectations are used.  The
    linear-inversion chi is projected onto Hermitian, trace-1, PSD matrices
    (Frobenius-nearest); a :class:`ProjectionWarning` reports moves above
    ``tol``.
    """
    vin, vout = [], []
    for k, psi in enumerate(_TOMO_INPUTS):
        rho = np.outer(psi, psi.conj())
        out = np.asarray(channel(rho), dtype=complex)
        r = _bloch(out)
        if shots is not None:
            rng = trajectory_rng(seed, k)
            p = np.clip(0.5 * (1 + r), 0.0, 1.0)
            r = 2 * rng.binomial(shots, p) / shots - 1
        vin.append(_vec(rho))
        vout.append(_vec(_rho(r)))
    S = np.array(vout).T @ np.linalg.inv(np.array(vin).T)
    B = _SUPER_BASIS.reshape(16, 16).T
    coeffs = np.linalg.solve(B, S.reshape(-1))
    raw = coeffs.reshape(4, 4)
    herm = 0.5 * (raw + raw.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    proj = (vecs * _simplex_projection(vals)) @ vecs.conj().T
    dist = float(np.linalg.norm(proj - raw))
    if dist > tol:
        warnings.warn(f"tomography data unphysical: projection moved chi by {dist:.3g} "
                      f"(Frobenius)", ProjectionWarning, stacklevel=2)
    return ProcessMatrix(proj, dist)


def write_chi_csv(pm: ProcessMatrix, path=None, header_lines=()) -> str:
    buf = io.StringIO()
    for h in header_lines:
        buf.write(f"# {h}\n")
    buf.write("# basis=I,X,Y,Z\n")
    w = csv.writer(buf, lineterminator="\n")
    for part, fn in (("real", np.real), ("imag", np.imag)):
        buf.write(f"# {part}\n")
        w.writerow(["row", "I", "X", "Y", "Z"])
        for name, row in zip("IXYZ", fn(pm.chi)):
            w.writerow([name] + [repr(float(v) + 0.0) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
