"""Inversions on top of the filter-function model.

* :func:`fit_discrete_lines` recovers line amplitudes from a tau scan.
* :func:`reconstruct_spectrum` turns decay curves into a band-resolved PSD.
* :func:`optimize_interval` picks the pulse spacing for a storage run.
* :func:`fit_coherence_time` fits a single exponential.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares, nnls

from .cohmodel import ContinuousSpectrum, DiscreteLine, NoiseModel, chi_integral, contrast_discrete
from .quad import integrate_panels
from .seqkit import grid_filter_y, grid_notch_envelope, make_cpmg, make_kdd_xy
from .special import inverse_j0, j0, j1_over_x

__all__ = [
    "CoherenceFit",
    "ContrastRecord",
    "DegenerateDesignWarning",
    "FitError",
    "InfeasibleError",
    "IntervalChoice",
    "LineFit",
    "SkippedRecordWarning",
    "SpectrumEstimate",
    "fit_coherence_time",
    "fit_discrete_lines",
    "normalize_contrast",
    "optimize_interval",
    "read_records_csv",
    "reconstruct_spectrum",
    "write_records_csv",
    "write_spectrum_estimate_csv",
]

_GRID_RTOL = 1e-9
_OVERSHOOT = 6.0


class FitError(RuntimeError):
    """A fit did not converge; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleError(ValueError):
    """No interval on the grid satisfies the constraints."""


class DegenerateDesignWarning(UserWarning):
    pass


class SkippedRecordWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ContrastRecord:
    """One measured (or simulated) contrast on the pulse grid ``T = N tau``.

    ``|contrast|`` may exceed 1 by at most six standard errors, so unbiased
    noisy estimates near full contrast are accepted as they are.
    """

    n_pulses: int
    tau: float
    total_time: float
    contrast: float
    stderr: float = 0.0

    def __post_init__(self):
        if self.n_pulses < 0 or int(self.n_pulses) != self.n_pulses:
            raise ValueError("n_pulses must be a non-negative integer")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        if not self.total_time > 0:
            raise ValueError("total_time must be positive")
        if self.n_pulses > 0:
            if not self.tau > 0:
                raise ValueError("tau must be positive")
            if abs(self.n_pulses * self.tau - self.total_time) > _GRID_RTOL * self.total_time:
                raise ValueError(
                    f"total_time {self.total_time!r} != n_pulses * tau "
                    f"({self.n_pulses} * {self.tau!r}); records must sit on the pulse grid")
        if not self.stderr >= 0:
            raise ValueError("stderr must be >= 0")
        # the bound holds for the true contrast; a noisy estimate may overshoot
        if not abs(self.contrast) <= 1.0 + _OVERSHOOT * self.stderr:
            raise ValueError(f"|contrast| must be <= 1 (+{_OVERSHOOT:g} stderr), "
                             f"got {self.contrast!r}")

    @classmethod
    def on_grid(cls, n_pulses, tau, contrast, stderr=0.0):
        return cls(n_pulses, tau, n_pulses * tau, contrast, stderr)


def normalize_contrast(raw: ContrastRecord, gate_reference: float,
                       reference_stderr: float = 0.0) -> ContrastRecord:
    """Divide out the contrast of the same pulse train applied back to back."""
    if not gate_reference > 0:
        raise ValueError("gate reference contrast must be positive")
    c = raw.contrast / gate_reference
    rel = math.hypot(raw.stderr / gate_reference, raw.contrast * reference_stderr / gate_reference ** 2)
    return replace(raw, contrast=c, stderr=rel)


def _weights(stderr: np.ndarray) -> tuple[np.ndarray, bool]:
    """1/stderr^2 with the median weight for zero entries; flag whether weights are absolute."""
    pos = stderr > 0
    if not np.any(pos):
        return np.ones_like(stderr), False
    w = np.empty_like(stderr)
    w[pos] = 1.0 / stderr[pos] ** 2
    w[~pos] = np.median(w[pos])
    return w, True


def _abs_y_records(records, omegas) -> np.ndarray:
    """Matrix ``|y(omega_k; N_i, tau_i)|`` of shape (records, candidates)."""
    out = np.empty((len(records), len(omegas)))
    by_n: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        by_n.setdefault(r.n_pulses, []).append(i)
    om = np.asarray(omegas, dtype=float)
    for n, idx in by_n.items():
        taus = np.array([records[i].tau if n else records[i].total_time for i in idx])
        y = grid_filter_y(n, taus[:, None], om[None, :])
        out[idx] = np.abs(y)
    return out


# --- discrete lines --------------------------------------------------------

@dataclass(frozen=True)
class LineFit:
    lines: tuple
    uncertainties: tuple
    residual_norm: float
    n_records: int
    degenerate: tuple = ()

    def report(self) -> str:
        out = [f"n_records={self.n_records}", f"residual_norm={self.residual_norm!r}"]
        for ln, u in zip(self.lines, self.uncertainties):
            f = f"{ln.freq_hz:g}"
            out.append(f"line_{f}Hz_beta_rad_s={ln.beta!r}")
            out.append(f"line_{f}Hz_uncertainty_rad_s={u!r}")
        for f in self.degenerate:
            out.append(f"degenerate_{f:g}Hz=true")
        return "\n".join(out) + "\n"


def fit_discrete_lines(records: Sequence[ContrastRecord], candidate_freqs: Sequence[float],
                       max_nfev: int = 200) -> LineFit:
    """Weighted least-squares amplitudes of random-phase lines at given frequencies.

    The model is ``prod_k J0(beta_k |y(omega_k)|)``, fitted in
    ``u_k = beta_k^2 >= 0`` (smooth at zero amplitude).  Uncertainties come
    from the Jacobian at the optimum and are mapped back to ``beta``.

    Raises
    ------
    ValueError
        Too few records or a non-positive candidate.
    FitError
        The optimizer ran out of evaluations.
    """
    records = list(records)
    freqs = [float(f) for f in candidate_freqs]
    if not freqs:
        raise ValueError("need at least one candidate frequency")
    if any(not f > 0 for f in freqs):
        raise ValueError("candidate frequencies must be positive")
    if len(records) < 3 * len(freqs):
        raise ValueError(f"need >= {3 * len(freqs)} records for {len(freqs)} candidates, "
                         f"got {len(records)}")
    omegas = 2 * math.pi * np.array(freqs)
    g = _abs_y_records(records, omegas)
    c = np.array([r.contrast for r in records])
    w, absolute = _weights(np.array([r.stderr for r in records]))
    sw = np.sqrt(w)

    scale = g.max(axis=0)
    blind = scale <= 1e-9 * max(r.total_time for r in records)
    for f in np.array(freqs)[blind]:
        warnings.warn(f"no record is sensitive to the {f:g} Hz candidate; amplitude fixed at 0",
                      DegenerateDesignWarning, stacklevel=2)
    active = np.flatnonzero(~blind)
    ga = g[:, active]

    # initial guess: invert J0 at each candidate's most sensitive record
    u0 = np.empty(active.size)
    for j, k in enumerate(active):
        i = int(np.argmax(g[:, k]))
        x = inverse_j0(min(max(c[i], 0.0), 1.0))
        u0[j] = max((x / g[i, k]) ** 2, 1e-6 / scale[k] ** 2)
    # work in units where the most sensitive record sees x^2 ~ u
    unit = scale[active] ** 2

    def model(v):
        x = np.sqrt(v / unit) * ga
        return np.prod(j0(x), axis=1) if active.size else np.ones(len(records))

    def resid(v):
        return (model(v) - c) * sw

    def jac(v):
        x = np.sqrt(v / unit) * ga
        jx = j0(x)
        out = np.empty((len(records), active.size))
        for j in range(active.size):
            others = np.prod(np.delete(jx, j, axis=1), axis=1)
            out[:, j] = others * (-0.5 * ga[:, j] ** 2 / unit[j]) * j1_over_x(x[:, j])
        return out * sw[:, None]

    beta = np.zeros(len(freqs))
    sigma = np.full(len(freqs), math.inf)
    if active.size:
        res = least_squares(resid, u0 * unit, jac=jac, bounds=(0.0, np.inf), method="trf",
                            x_scale="jac", max_nfev=max_nfev, xtol=1e-14, ftol=1e-14, gtol=1e-14)
        u = res.x / unit
        if res.status == 0:
            raise FitError(f"line fit did not converge in {max_nfev} evaluations",
                           best=np.sqrt(u))
        J = res.jac * unit
        dof = max(len(records) - active.size, 1)
        s2 = 1.0 if absolute else 2 * res.cost / dof
        cov = np.linalg.pinv(J.T @ J) * s2
        su = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        b = np.sqrt(u)
        beta[active] = b
        sigma[active] = su / (b + np.sqrt(b * b + su))
        rnorm = float(np.linalg.norm(res.fun))
    else:
        rnorm = float(np.linalg.norm((1.0 - c) * sw))
    lines = tuple(DiscreteLine.from_hz(f, float(bv)) for f, bv in zip(freqs, beta))
    return LineFit(lines, tuple(float(s) for s in sigma), rnorm, len(records),
                   tuple(np.array(freqs)[blind].tolist()))


# --- spectrum reconstruction ------------------------------------------------

@dataclass(frozen=True)
class SpectrumEstimate:
    """Band-resolved noise PSD.

    ``omega_c`` are band centres ``pi / tau``; ``bandwidth`` the width of the
    band each value represents.  ``single_band`` holds the per-curve
    main-lobe estimate and ``contamination`` the fraction of each curve's
    filter weight outside its main lobe, for diagnostics.
    """

    omega_c: np.ndarray
    bandwidth: np.ndarray
    values: np.ndarray
    uncertainty: np.ndarray
    edges: np.ndarray = field(default=None, repr=False)
    single_band: np.ndarray = field(default=None, repr=False)
    contamination: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(np.asarray(self.values) < 0):
            raise ValueError("spectral estimates must be non-negative")
        oc = np.asarray(self.omega_c)
        if np.unique(oc).size != oc.size:
            raise ValueError("band centres must be distinct")

    def __len__(self):
        return len(self.omega_c)

    def as_spectrum(self) -> ContinuousSpectrum:
        """Piecewise-constant density over the reconstruction bands."""
        e = self.edges if self.edges is not None else _band_edges(np.asarray(self.omega_c))
        segs = ContinuousSpectrum.empty()
        for lo, hi, v in zip(e[:-1], e[1:], self.values):
            if v > 0:
                segs = segs + ContinuousSpectrum.white(float(v), float(lo), float(hi))
        return segs


def _band_edges(centres: np.ndarray) -> np.ndarray:
    mids = np.sqrt(centres[:-1] * centres[1:])
    return np.concatenate(([0.0], mids, [math.inf]))


def _nominal_widths(centres, edges):
    w = np.diff(edges)
    if np.isinf(w[-1]):
        w[-1] = 2 * (centres[-1] - edges[-2]) if centres.size > 1 else 2 * centres[-1]
    return w


def _band_kernel(n, tau, edges, harmonics=200.0, rtol=1e-9):
    """``(2/pi) integral_band |y|^2`` for every band, tail included in the last."""
    T = n * tau
    finite = edges[np.isfinite(edges)]
    wmax = max(harmonics * (n + 1) * math.pi / T, 2.0 * finite[-1])
    step = 2 * math.pi / T
    k = int(math.ceil(wmax / step))
    grid = np.linspace(0.0, k * step, k + 1)
    pts = np.unique(np.concatenate((grid, step * np.logspace(-12, 0, 25),
                                    finite[finite < k * step])))

    def f(w):
        y = grid_filter_y(n, tau, w)
        return y.real ** 2 + y.imag ** 2

    res = integrate_panels(f, pts, rtol=rtol, atol=1e-15 * T)
    out = res.between(np.concatenate((finite, [k * step])))
    # the last band reaches infinity: add the mean-envelope tail (4N+2)/w
    out[-1] += (4.0 * n + 2.0) / (k * step)
    return 2.0 / math.pi * out


def _main_lobe_weight(n, tau):
    """``integral |y|^2`` over the main lobe around ``pi / tau`` and the total ``pi T``."""
    T = n * tau
    wc = math.pi / tau
    lo, hi = max(wc - 2 * math.pi / T, 0.0), wc + 2 * math.pi / T

    def f(w):
        y = grid_filter_y(n, tau, w)
        return y.real ** 2 + y.imag ** 2

    return integrate_panels(f, np.linspace(lo, hi, 9), rtol=1e-10).value, math.pi * T


def reconstruct_spectrum(curves, harmonics: float = 200.0) -> SpectrumEstimate:
    """Reconstruct ``S_beta`` from contrast decay curves.

    ``curves`` maps a label to records that share one pulse interval (or is
    a flat iterable of records, grouped here by ``tau``).  Every record
    gives ``chi = -ln c``.  The density is modelled as constant on bands
    centred at the distinct ``pi / tau`` with geometric-mean edges (the first
    band reaches 0, the last infinity) and solved jointly by weighted
    non-negative least squares against the exact filter weight of each
    record in each band.  It is therefore exact for densities constant on
    those bands, harmonics included.  ``single_band`` keeps the classic
    main-lobe reading ``pi chi / (2 integral_lobe |y|^2)`` of each curve's
    longest record.

    Records with contrast <= 0 are skipped with a warning; contrast is clipped
    to ``[1e-3, 1]`` before the log.

    Raises
    ------
    ValueError
        A curve mixes pulse intervals, has fewer than 4 usable points, or a
        record is not on its pulse grid.
    """
    if isinstance(curves, Mapping):
        groups = [list(v) for v in curves.values()]
        for recs in groups:
            taus = {r.tau for r in recs}
            if len(taus) > 1:
                raise ValueError(f"curve mixes pulse intervals {sorted(taus)}")
    else:
        by_tau: dict[float, list] = {}
        for r in curves:
            by_tau.setdefault(r.tau, []).append(r)
        groups = list(by_tau.values())
    rows = []
    for recs in groups:
        kept = []
        for r in recs:
            if r.n_pulses <= 0:
                raise ValueError("spectrum reconstruction needs pulsed records (n_pulses > 0)")
            if r.contrast <= 0:
                warnings.warn(f"skipping record N={r.n_pulses} tau={r.tau!r}: contrast "
                              f"{r.contrast!r} <= 0", SkippedRecordWarning, stacklevel=2)
                continue
            kept.append(r)
        if len(kept) < 4:
            raise ValueError(f"curve at tau={recs[0].tau!r} has {len(kept)} usable points; need >= 4")
        rows.extend(kept)

    taus = np.array(sorted({r.tau for r in rows}, reverse=True))
    centres = math.pi / taus
    edges = _band_edges(centres)
    c = np.clip(np.array([r.contrast for r in rows]), 1e-3, 1.0)
    chi = -np.log(c)
    sig = np.array([r.stderr for r in rows]) / c
    w, _ = _weights(sig)
    sw = np.sqrt(w)

    cache = {}
    A = np.empty((len(rows), centres.size))
    for i, r in enumerate(rows):
        key = (r.n_pulses, r.tau)
        if key not in cache:
            cache[key] = _band_kernel(r.n_pulses, r.tau, edges, harmonics)
        A[i] = cache[key]
    Aw = A * sw[:, None]
    norms = np.linalg.norm(Aw, axis=0)
    norms[norms == 0] = 1.0
    x, _ = nnls(Aw / norms, chi * sw, maxiter=50 * centres.size)
    values = x / norms
    cov = np.linalg.pinv(Aw.T @ Aw)
    unc = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    single = np.empty(centres.size)
    contam = np.empty(centres.size)
    for j, tau in enumerate(taus):
        recs = [r for r in rows if r.tau == tau]
        r = max(recs, key=lambda q: q.total_time)
        lobe, total = _main_lobe_weight(r.n_pulses, r.tau)
        cr = min(max(r.contrast, 1e-3), 1.0)
        single[j] = math.pi * (-math.log(cr)) / (2 * lobe)
        contam[j] = 1.0 - lobe / total
    return SpectrumEstimate(centres, _nominal_widths(centres, edges), values, unc,
                            edges, single, contam)


# --- interval optimization ---------------------------------------------------

@dataclass(frozen=True)
class IntervalChoice:
    tau: float
    n_pulses: int
    score: float
    table: tuple      # (tau, n_pulses, feasible, contrast, score) per grid point
    notches: tuple    # (tau, freq_hz, |y|^2 at T, notch envelope) per grid point and line

    def report(self) -> str:
        out = [f"tau_opt_s={self.tau!r}", f"n_pulses={self.n_pulses}", f"score={self.score!r}"]
        return "\n".join(out) + "\n"


def _pulse_count(tau, target_T, sequence):
    block = 20 if sequence == "kdd_xy" else 2
    return block * max(1, math.ceil(target_T / (block * tau) - 1e-9))


def optimize_interval(spectrum, lines: Iterable, tau_range: tuple[float, float],
                      per_pulse_error: float, target_T: float, step: float = 1e-3,
                      notch_threshold: float = 1e-10, sequence: str = "kdd_xy",
                      harmonics: float = 20.0, taus: Sequence[float] | None = None) -> IntervalChoice:
    """Grid search for the pulse interval minimizing predicted storage infidelity.

    The score at each ``tau`` is ``(1 - contrast) + per_pulse_error * N`` with
    ``N`` the smallest whole number of blocks (20 pulses for KDD_xy, 2 for
    CPMG) reaching ``target_T``; the contrast includes every line given as a
    :class:`DiscreteLine` and the continuum.  Ties go to the larger ``tau``.

    A ``tau`` is feasible when the notch envelope
    (:func:`~ddlab.seqkit.grid_notch_envelope`, the largest ``|y(2 pi f)|^2``
    over all total times) is at most ``notch_threshold`` (s^2) for every
    line.  Testing ``|y|^2`` at the actual ``T`` alone would accept almost
    any spacing, because ``f T`` is usually a whole number on a millisecond
    grid and such zeros vanish as soon as the line frequency drifts.

    ``spectrum`` may be a :class:`ContinuousSpectrum`, a
    :class:`SpectrumEstimate` or ``None``.  ``lines`` holds frequencies in Hz
    or :class:`DiscreteLine` objects.

    Raises
    ------
    InfeasibleError
        No grid point passes the notch constraint; the message lists the
        line that rejected the most grid points.
    """
    lo, hi = (float(v) for v in tau_range)
    if not 0 < lo <= hi:
        raise ValueError("tau_range must satisfy 0 < lo <= hi")
    if not target_T > hi:
        raise ValueError("target_T must exceed the largest interval")
    if sequence not in ("kdd_xy", "cpmg"):
        raise ValueError("sequence must be 'kdd_xy' or 'cpmg'")
    if isinstance(spectrum, SpectrumEstimate):
        spectrum = spectrum.as_spectrum()
    if spectrum is None:
        spectrum = ContinuousSpectrum.empty()
    line_objs, freqs = [], []
    for ln in lines:
        if isinstance(ln, DiscreteLine):
            line_objs.append(ln)
            freqs.append(ln.freq_hz)
        else:
            freqs.append(float(ln))
    freqs = sorted(set(freqs))
    line_objs.sort(key=lambda l: (l.omega, l.beta))

    if taus is None:
        k0, k1 = math.ceil(lo / step - 1e-9), math.floor(hi / step + 1e-9)
        taus = [round(k * step, 12) for k in range(k0, k1 + 1)]
    else:
        taus = sorted(float(t) for t in taus if lo <= t <= hi)
    if not taus:
        raise InfeasibleError("tau grid is empty")

    table, notches = [], []
    rejections = {f: 0 for f in freqs}
    best = None
    build = make_kdd_xy if sequence == "kdd_xy" else make_cpmg
    for tau in taus:
        n = _pulse_count(tau, target_T, sequence)
        om = 2 * math.pi * np.array(freqs)
        ysq = np.abs(grid_filter_y(n, tau, om)) ** 2 if freqs else np.zeros(0)
        env = grid_notch_envelope(tau, om) if freqs else np.zeros(0)
        ok = True
        for f, v, e in zip(freqs, ysq, env):
            notches.append((tau, f, float(v), float(e)))
            if e > notch_threshold:
                rejections[f] += 1
                ok = False
        if not ok:
            table.append((tau, n, False, math.nan, math.inf))
            continue
        seq = build(n, tau)
        contrast = contrast_discrete(seq, line_objs)
        if not spectrum.is_empty:
            wmax = harmonics * (n + 1) * math.pi / seq.total_time
            contrast *= math.exp(-chi_integral(seq, spectrum, omega_max=wmax, rtol=1e-6).chi)
        score = (1.0 - contrast) + per_pulse_error * n
        table.append((tau, n, True, contrast, score))
        if best is None or score <= best[2]:
            best = (tau, n, score)
    if best is None:
        worst = max(rejections, key=rejections.get) if rejections else None
        detail = ", ".join(f"{f:g} Hz rejected {k}/{len(taus)}" for f, k in rejections.items())
        raise InfeasibleError(
            f"no interval in [{lo:g}, {hi:g}] s meets the notch threshold "
            f"{notch_threshold:g} s^2 ({detail}); most restrictive line: {worst:g} Hz")
    return IntervalChoice(best[0], best[1], best[2], tuple(table), tuple(notches))


# --- coherence time ----------------------------------------------------------

@dataclass(frozen=True)
class CoherenceFit:
    """Exponential fit ``A exp(-T / T2)``.

    When the decay rate is not significant (below twice its uncertainty)
    ``decaying`` is False, ``t2`` is ``inf`` and ``t2_lower_bound`` is the
    95% one-sided bound ``1 / (rate + 2 sigma_rate)``.
    """

    t2: float
    t2_uncertainty: float
    amplitude: float
    amplitude_uncertainty: float
    rate: float
    rate_uncertainty: float
    reduced_chi2: float
    decaying: bool
    t2_lower_bound: float

    def report(self) -> str:
        keys = ["t2", "t2_uncertainty", "amplitude", "amplitude_uncertainty", "rate",
                "rate_uncertainty", "reduced_chi2", "decaying", "t2_lower_bound"]
        out = []
        for k in keys:
            v = getattr(self, k)
            out.append(f"{k}={str(v).lower() if isinstance(v, bool) else repr(float(v))}")
        if not self.decaying:
            out.append("status=no measurable decay")
        return "\n".join(out) + "\n"


def fit_coherence_time(data, stderr: Sequence[float] | None = None,
                       amplitude_max: float | None = 1.0) -> CoherenceFit:
    """Fit ``c(T) = A exp(-T / T2)`` by (weighted) least squares.

    ``data`` is a sequence of ``(T, contrast)`` pairs with strictly
    increasing ``T``.  With ``stderr`` the weights are absolute and the
    covariance is inflated by ``sqrt(max(1, reduced chi^2))`` when the
    scatter exceeds the stated errors; without it the covariance is scaled
    by the residual variance.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("data must be (T, contrast) pairs")
    if arr.shape[0] < 3:
        raise ValueError("need at least 3 points")
    t, c = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("T must be strictly increasing")
    if stderr is not None:
        w, absolute = _weights(np.asarray(stderr, dtype=float))
    else:
        w, absolute = np.ones_like(t), False
    sw = np.sqrt(w)
    tscale = t[-1] if t[-1] > 0 else 1.0
    x = t / tscale
    amax = math.inf if amplitude_max is None else float(amplitude_max)

    # log-linear start on the positive points
    pos = c > 0
    if np.count_nonzero(pos) >= 2:
        slope, icpt = np.polyfit(x[pos], np.log(c[pos]), 1)
        k0, a0 = max(-slope, 0.0), math.exp(icpt)
    else:
        k0, a0 = 1.0, max(c[0], 1e-3)
    a0 = min(max(a0, 1e-6), amax if math.isfinite(amax) else a0)
    if math.isfinite(amax) and a0 >= amax:
        a0 = amax * (1 - 1e-9)

    def resid(p):
        return (p[0] * np.exp(-p[1] * x) - c) * sw

    def jac(p):
        e = np.exp(-p[1] * x)
        return np.column_stack((e, -p[0] * x * e)) * sw[:, None]

    res = least_squares(resid, [a0, k0], jac=jac, bounds=([0.0, 0.0], [amax, np.inf]),
                        method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=1000)
    if res.status == 0:
        raise FitError("exponential fit did not converge", best=res.x)
    p = res.x
    if 0 < p[0] < amax and p[1] > 0:
        # a few Gauss-Newton steps take the interior optimum to machine precision
        for _ in range(3):
            step = np.linalg.lstsq(jac(p), -resid(p), rcond=None)[0]
            trial = p + step
            if not (0 < trial[0] < amax and trial[1] > 0):
                break
            p = trial
        res.fun = resid(p)
    a, k = p
    J = jac(p)
    dof = max(t.size - 2, 1)
    chi2 = float(res.fun @ res.fun) / dof
    scale = max(1.0, chi2) if absolute else chi2
    cov = np.linalg.pinv(J.T @ J) * scale
    sa, sk = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    rate, srate = k / tscale, sk / tscale
    if rate > 2 * srate:
        t2 = 1.0 / rate
        return CoherenceFit(t2, srate / rate ** 2, a, sa, rate, srate, chi2, True, t2)
    bound = 1.0 / (rate + 2 * srate) if rate + 2 * srate > 0 else math.inf
    return CoherenceFit(math.inf, math.inf, a, sa, rate, srate, chi2, False, bound)


# --- file formats ------------------------------------------------------------

_RECORD_HEADER = ["n_pulses", "tau_s", "total_time_s", "contrast", "stderr"]


def write_records_csv(records: Iterable[ContrastRecord], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_RECORD_HEADER)
    for r in records:
        w.writerow([r.n_pulses, repr(float(r.tau)), repr(float(r.total_time)),
                    repr(float(r.contrast)), repr(float(r.stderr))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_records_csv(source) -> list[ContrastRecord]:
    """Parse a contrast-scan table; errors name the offending line."""
    text = Path(source).read_text() if not (isinstance(source, str) and "\n" in source) else source
    out, seen = [], False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        cells = [x.strip() for x in s.split(",")]
        if not seen:
            if cells != _RECORD_HEADER:
                raise ValueError(f"line {lineno}: expected header {','.join(_RECORD_HEADER)!r}")
            seen = True
            continue
        if len(cells) != 5:
            raise ValueError(f"line {lineno}: expected 5 columns, got {len(cells)}")
        try:
            n = int(cells[0])
            vals = [float(x) for x in cells[1:]]
            out.append(ContrastRecord(n, *vals))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not seen:
        raise ValueError(f"missing header {','.join(_RECORD_HEADER)!r}")
    return out


def write_spectrum_estimate_csv(est: SpectrumEstimate, path=None, header_lines=()) -> str:
    buf = io.StringIO()
    for h in header_lines:
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["omega_c_rad_s", "bandwidth_rad_s", "S_beta", "uncertainty"])
    order = np.argsort(est.omega_c)
    for i in order:
        w.writerow([repr(float(est.omega_c[i])), repr(float(est.bandwidth[i])),
                    repr(float(est.values[i])), repr(float(est.uncertainty[i]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
