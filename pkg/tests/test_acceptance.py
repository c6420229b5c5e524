"""Acceptance criteria 1-11, one PASS/FAIL line each."""
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from ddlab import benchlab as bl
from ddlab import cohmodel as cm
from ddlab import iphys
from ddlab import seqkit as sk
from ddlab import spectro as sp
from ddlab.dephsim import mc_contrast
from ddlab.quad import integrate_panels
from ddlab.seqkit import PulseErrorModel
from ddlab.special import j0

TWO_PI = 2 * math.pi
T2_REF = 666.9


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def test_c01_line_oracle(verdict):
    beta = 5.0
    line = cm.DiscreteLine.from_hz(50.0, beta)
    model = cm.NoiseModel((line,))
    taus = np.linspace(0.0092, 0.0108, 11)
    t0 = time.perf_counter()
    worst = 0.0
    for tau in taus:
        seq = sk.make_cpmg(31, float(tau), allow_odd=True)
        exact = cm.contrast_discrete(seq, [line])
        mc = mc_contrast(seq, model, n_traj=10_000, seed=11)
        worst = max(worst, abs(mc.contrast - exact) / mc.stderr)
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 3 and elapsed < 60,
            f"{taus.size} tau points, max deviation {worst:.2f} stderr, {elapsed:.1f} s")


def _sum_rule(seq):
    T = seq.total_time
    wmax = 200 * (seq.n_pulses + 1) * math.pi / T
    edges = np.concatenate(([0.0], np.arange(1, math.ceil(wmax * T / TWO_PI) + 1) * TWO_PI / T))
    res = integrate_panels(lambda w: sk.filter_abs_sq(seq, w), edges, rtol=1e-9)
    return res.value + (4 * seq.n_pulses + 2) / edges[-1]


def test_c02_white_noise(verdict):
    s0, T = 0.5, 0.4
    white = cm.ContinuousSpectrum.white(s0)
    free = sk.free_evolution(T)
    analytic = cm.chi_integral(free, white).contrast
    mc = mc_contrast(free, cm.NoiseModel((), white), n_traj=10_000, seed=3)
    chis = [cm.chi_integral(sk.make_cpmg(n, T / n), white).chi for n in (2, 8, 40)]
    rules = [_sum_rule(s) / (math.pi * T) - 1 for s in (free, sk.make_cpmg(8, T / 8))]
    ok = (abs(analytic - math.exp(-2 * s0 * T)) < 1e-6
          and abs(mc.contrast - analytic) < 3 * mc.stderr
          and max(abs(c - 2 * s0 * T) for c in chis) < 1e-5
          and max(abs(r) for r in rules) < 1e-3)
    verdict(2, ok, f"analytic {analytic:.6f} vs {math.exp(-2 * s0 * T):.6f}, "
                   f"MC {mc.contrast:.5f}+-{mc.stderr:.5f}, CPMG chi spread "
                   f"{max(abs(c - 2 * s0 * T) for c in chis):.1e}, sum rule {max(map(abs, rules)):.1e}")


def test_c03_line_scan_round_trip(verdict):
    t0 = time.perf_counter()
    field = iphys.FieldConfig(bx=8.8)
    b50 = iphys.field_to_beta(field, 18.3e-6)
    b150 = iphys.field_to_beta(field, 57.5e-6)
    step, sigma = 0.25e-6, 0.02
    taus = np.arange(round(0.002 / step), round(0.350 / step) + 1) * step
    g = np.abs(sk.grid_filter_y(31, taus[:, None], TWO_PI * np.array([50.0, 150.0])[None, :]))
    clean = j0(b50 * g[:, 0]) * j0(b150 * g[:, 1])
    noisy = clean + sigma * np.random.default_rng(2024).standard_normal(clean.size)
    records = [sp.ContrastRecord(31, t, 31 * t, c, sigma) for t, c in zip(taus.tolist(), noisy.tolist())]
    fit = sp.fit_discrete_lines(records, [50.0, 150.0])
    elapsed = time.perf_counter() - t0
    rel = [abs(ln.beta / b - 1) for ln, b in zip(fit.lines, (b50, b150))]
    verdict(3, max(rel) < 0.05 and elapsed < 60,
            f"{len(records)} records, amplitude errors {rel[0]:.2%} and {rel[1]:.2%}, {elapsed:.1f} s")


def test_c04_notch_contrast(verdict):
    w = TWO_PI * np.array([50.0, 150.0])
    n = 2400
    good = np.abs(sk.grid_filter_y(n, 0.2, w)) ** 2
    bad = np.abs(sk.grid_filter_y(n, 0.25, w)) ** 2
    ratio = bad / np.maximum(good, np.finfo(float).tiny)
    env_good = sk.grid_notch_envelope(0.2, w)
    verdict(4, bool(np.all(ratio >= 1e8)) and bool(np.all(env_good < 1e-20)),
            f"|y|^2 at 200 ms {good[0]:.1e}, {good[1]:.1e}; at 250 ms {bad[0]:.1e}, {bad[1]:.1e}")


def _memory_spectrum():
    sf = 1 / (2 * T2_REF)
    fcap = 2 / 100 ** (1 / 20)
    spec = (cm.ContinuousSpectrum.white(sf)
            + cm.ContinuousSpectrum.white(100 * sf, 0, TWO_PI * fcap)
            + cm.ContinuousSpectrum.power_law(sf, -20, TWO_PI * 2, lo=TWO_PI * fcap)
            + cm.ContinuousSpectrum.power_law(sf, 2, TWO_PI * 100, lo=TWO_PI * 100, hi=TWO_PI * 1000))
    seq = sk.make_kdd_xy(2400, 0.2)
    chi = cm.chi_integral(seq, spec, omega_max=cm.default_omega_max(seq, 20), rtol=1e-6).chi
    return spec.scaled(480 / T2_REF / chi)


def test_c05_interval_optimization(verdict):
    spec = _memory_spectrum()
    choice = sp.optimize_interval(spec, [50.0, 150.0], (0.005, 0.25), 6e-5, 480.0)
    grid = [row[0] for row in choice.table]
    has_250 = any(abs(t - 0.25) < 1e-12 for t in grid)
    verdict(5, abs(choice.tau - 0.2) < 1e-12 and has_250,
            f"tau*={choice.tau:.3f} s, N={choice.n_pulses}, score {choice.score:.4f}, grid up to {max(grid):.3f} s")


def test_c06_flat_spectrum(verdict):
    s0 = 1e-3
    white = cm.ContinuousSpectrum.white(s0)
    records = []
    for tau in (0.02, 0.05, 0.1, 0.2, 0.5):
        for n in (20, 40, 60, 80, 100):
            chi = cm.chi_integral(sk.make_cpmg(n, tau), white).chi
            records.append(sp.ContrastRecord.on_grid(n, tau, math.exp(-chi), 1e-3))
    est = sp.reconstruct_spectrum(records)
    rel = np.abs(est.values / s0 - 1)
    centre = est.omega_c[np.argmin(np.abs(est.omega_c - math.pi / 0.2))] / TWO_PI
    verdict(6, bool(np.all(rel < 0.1)) and abs(centre - 2.5) < 1e-12,
            f"max band error {rel.max():.1e}, 200 ms band centre {centre:.6f} Hz")


def test_c07_t2_fit(verdict):
    t = np.linspace(75, 600, 8)
    clean = sp.fit_coherence_time(np.column_stack((t, np.exp(-t / T2_REF))))
    rng = np.random.default_rng(12345)
    sigma, covered = 0.03, 0
    for _ in range(200):
        c = np.exp(-t / T2_REF) + sigma * rng.standard_normal(t.size)
        fit = sp.fit_coherence_time(np.column_stack((t, c)), stderr=np.full(t.size, sigma))
        if fit.decaying:
            covered += abs(fit.t2 - T2_REF) <= fit.t2_uncertainty
        else:
            covered += fit.t2_lower_bound <= T2_REF
    err = abs(clean.t2 / T2_REF - 1)
    verdict(7, err < 0.02 and covered >= 136,
            f"noiseless error {err:.1e}, 1-sigma coverage {covered}/200")


def test_c08_process_tomography(verdict):
    noise = cm.NoiseModel((), cm.ContinuousSpectrum.white(1 / (2 * T2_REF)))
    channel = bl.StorageChannel(noise, 0.2)
    pm = bl.qpt(lambda rho: channel.apply(rho, 480.0))
    chi = pm.chi
    herm = np.allclose(chi, chi.conj().T, atol=1e-12)
    trace = abs(np.trace(chi) - 1) < 1e-12
    psd = np.linalg.eigvalsh(chi).min() >= -1e-12
    in_band = abs(pm.chi_II - 0.699) <= 0.058
    verdict(8, bool(abs(pm.chi_II - 0.743) < 1e-3 and in_band and herm and trace and psd),
            f"chi_II={pm.chi_II:.4f}, hermitian={herm}, trace1={trace}, psd={psd}")


def test_c09_randomized_benchmarking(verdict):
    lengths = [1, 500, 1000, 2000, 4000, 8000, 12000, 16000]
    run = bl.rb_simulate(lengths, PulseErrorModel(p_dep=1.2e-4), 32, 500, seed=7)
    fit = bl.rb_fit(run)
    ideal = bl.rb_fit(bl.rb_simulate([1, 100, 1000], PulseErrorModel(), 32, 500, seed=7))
    diff_pp = abs(fit.fidelity - 0.99994) * 100
    verdict(9, diff_pp <= 0.002 and ideal.fidelity == 1.0,
            f"F={fit.fidelity * 100:.5f}% (off by {diff_pp:.5f} points), ideal F={ideal.fidelity!r}")


def test_c10_robustness_ordering(verdict):
    eps = bl.calibrate_flip_error(0.85, 20_000)
    err = PulseErrorModel(flip_angle_error=eps)
    kdd = bl.dd_robustness("kdd_xy", [20_000], err).population_up[0]
    cpmg = bl.dd_robustness("cpmg", [20_000], err).population_up[0]
    ideal = [bl.dd_robustness(f, [20_000], PulseErrorModel()).population_up[0] for f in ("kdd_xy", "cpmg")]
    ok = abs(kdd - 0.85) < 1e-6 and cpmg <= kdd and max(abs(p - 1) for p in ideal) < 1e-9
    verdict(10, ok, f"eps={eps / math.pi:.6f} pi, KDD {kdd:.4f}, CPMG {cpmg:.4f}, "
                    f"ideal {ideal[0]:.12f}/{ideal[1]:.12f}")


CLI_CONFIGS = {
    "contrast": "sequence = cpmg\nn_pulses = 4\ntau_start_s = 0.01\ntau_stop_s = 0.02\n"
                "tau_step_s = 0.005\nline_freqs_hz = 50\nline_amps_gauss = 20e-6\nbx_gauss = 8.8\n"
                "white_s0_rad_s = 0.01\nmc = true\nn_traj = 500\nflip_error_rad = 0.01\n",
    "fit-lines": "input_csv = {scan}\ncandidate_freqs_hz = 50, 150\nbx_gauss = 8.8\n",
    "spectrum": "input_csv = {decay}\n",
    "optimize-tau": "line_freqs_hz = 50, 150\nwhite_s0_rad_s = 7.5e-4\ntau_min_s = 0.1\n"
                    "tau_max_s = 0.25\ntau_step_s = 0.01\nper_pulse_error = 6e-5\n",
    "rb": "lengths = 1, 200, 2000\nn_settings = 8\nn_reps = 100\np_dep = 1e-3\n",
    "qpt": "t2_s = 666.9\nmode = mc\nn_traj = 200\nshots = 1000\nduration_s = 8\n",
    "t2fit": "input_csv = {storage}\n",
    "constants": "",
}


def _cli_inputs(tmp):
    scan = [sp.ContrastRecord.on_grid(31, t, float(j0(3.0 * abs(sk.grid_filter_y(31, t, TWO_PI * 50)))), 0.01)
            for t in np.arange(0.008, 0.012, 5e-5).tolist()]
    white = cm.ContinuousSpectrum.white(1e-3)
    decay = []
    for tau in (0.05, 0.2):
        for n in (20, 40, 60, 80):
            chi = cm.chi_integral(sk.make_cpmg(n, tau), white).chi
            decay.append(sp.ContrastRecord.on_grid(n, tau, math.exp(-chi), 1e-3))
    storage = [sp.ContrastRecord.on_grid(n, 0.2, math.exp(-0.2 * n / T2_REF), 0.01) for n in (400, 800, 1600, 2400)]
    paths = {"scan": tmp / "scan.csv", "decay": tmp / "decay.csv", "storage": tmp / "storage.csv"}
    sp.write_records_csv(scan, paths["scan"])
    sp.write_records_csv(decay, paths["decay"])
    sp.write_records_csv(storage, paths["storage"])
    return paths


def test_c11_cli_determinism(verdict, tmp_path):
    paths = _cli_inputs(tmp_path)
    failures = []
    for cmd, template in CLI_CONFIGS.items():
        cfg = tmp_path / f"{cmd}.cfg"
        cfg.write_text(template.format(**paths))
        outputs = []
        for k, threads in enumerate((1, 1, 3)):
            out = tmp_path / f"{cmd}-{k}.out"
            proc = subprocess.run([sys.executable, "-m", "ddlab.cli", "--config", str(cfg), "--seed", "5",
                                   "--threads", str(threads), "--out", str(out), cmd],
                                  capture_output=True, text=True)
            if proc.returncode != 0:
                failures.append(f"{cmd}: exit {proc.returncode}: {proc.stderr.strip()}")
                break
            outputs.append((out.read_bytes(), proc.stdout))
        if len(outputs) == 3 and len(set(outputs)) != 1:
            failures.append(f"{cmd}: output differs")
    verdict(11, not failures, "; ".join(failures) or f"{len(CLI_CONFIGS)} commands x 3 runs identical")
