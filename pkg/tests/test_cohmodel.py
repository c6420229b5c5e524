import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from ddlab import cohmodel as cm
from ddlab import seqkit as sk
from ddlab.special import j0

TWO_PI = 2 * math.pi

line_st = st.builds(cm.DiscreteLine.from_hz, st.floats(1.0, 500.0), st.floats(0.0, 3.0))


def test_discrete_product():
    seq = sk.make_cpmg(10, 0.01)
    lines = [cm.DiscreteLine.from_hz(50, 2.0), cm.DiscreteLine.from_hz(150, 1.0)]
    y = np.abs(sk.filter_y(seq, np.array([ln.omega for ln in lines])).y)
    assert cm.contrast_discrete(seq, lines) == pytest.approx(j0(2.0 * y[0]) * j0(1.0 * y[1]), rel=1e-14)
    assert cm.contrast_discrete(seq, []) == 1.0


@given(st.lists(line_st, min_size=1, max_size=5), st.randoms())
def test_discrete_permutation_and_zero_lines(lines, rnd):
    seq = sk.make_kdd_xy(20, 0.0071)
    base = cm.contrast_discrete(seq, lines)
    shuffled = list(lines)
    rnd.shuffle(shuffled)
    padded = shuffled + [cm.DiscreteLine.from_hz(77.0, 0.0)]
    assert cm.contrast_discrete(seq, padded) == pytest.approx(base, rel=1e-12, abs=1e-15)


@given(st.floats(1.0, 300.0), st.floats(0.0, 1.0))
def test_small_noise_bridge(freq, frac):
    seq = sk.make_cpmg(8, 0.004)
    w = TWO_PI * freq
    y = math.sqrt(float(sk.filter_abs_sq(seq, w)))
    if y == 0:
        return
    beta = 0.3 * frac / y
    c = cm.contrast_discrete(seq, [cm.DiscreteLine(w, beta)])
    assert abs(c - math.exp(-(beta * y) ** 2 / 4)) < 1e-3
    # spike of weight (pi/8) beta^2 gives chi = (2/pi) * weight * |y|^2
    chi_spike = 2 / math.pi * cm.spike_weight(beta) * y * y
    assert chi_spike == pytest.approx((beta * y) ** 2 / 4, rel=1e-12)


@given(st.lists(line_st, min_size=1, max_size=3), st.floats(1.0, 3.0))
def test_monotone_in_amplitude(lines, s):
    seq = sk.make_cpmg(6, 0.003)
    y = np.abs(sk.filter_y(seq, np.array([ln.omega for ln in lines])).y)
    if np.any(np.array([ln.beta for ln in lines]) * y * s >= 2.4048):
        return
    louder = [cm.DiscreteLine(ln.omega, ln.beta * s) for ln in lines]
    assert cm.contrast_discrete(seq, louder) <= cm.contrast_discrete(seq, lines) + 1e-15


@pytest.mark.parametrize("n,tau", [(0, 0.3), (2, 0.05), (20, 0.01), (200, 0.2)])
def test_white_noise_chi(n, tau):
    seq = sk.make_cpmg(n, tau) if n else sk.free_evolution(tau)
    s0 = 0.37
    res = cm.chi_integral(seq, cm.ContinuousSpectrum.white(s0))
    assert res.chi == pytest.approx(2 * s0 * seq.total_time, rel=1e-6)


def test_chi_against_scipy_oracle():
    seq = sk.PulseSequence(0.1, [0.013, 0.05, 0.081], [0.0, 0.0, 0.0])
    spec = cm.ContinuousSpectrum.power_law(0.2, -1.5, 30.0, lo=5.0, hi=400.0)
    oracle = 2 / math.pi * quad(lambda w: spec(w) * float(sk.filter_abs_sq(seq, w)), 5.0, 400.0,
                                limit=2000, epsabs=1e-13, epsrel=1e-11)[0]
    assert cm.chi_integral(seq, spec, rtol=1e-10).chi == pytest.approx(oracle, rel=1e-8)


@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(-3.0, 3.0))
def test_chi_additive(a, b, k):
    seq = sk.make_cpmg(4, 0.02)
    s1 = cm.ContinuousSpectrum.white(a, 0, 500.0)
    s2 = cm.ContinuousSpectrum.power_law(b, k, 100.0, lo=10.0, hi=2000.0)
    tot = cm.chi_integral(seq, s1 + s2, rtol=1e-10).chi
    parts = cm.chi_integral(seq, s1, rtol=1e-10).chi + cm.chi_integral(seq, s2, rtol=1e-10).chi
    assert tot == pytest.approx(parts, rel=1e-8)


def test_chi_divergence_reported():
    rising = cm.ContinuousSpectrum.power_law(1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="diverges"):
        cm.chi_integral(sk.make_cpmg(2, 0.1), rising)


def test_contrast_total_combines():
    seq = sk.make_cpmg(2, 0.1)
    line = cm.DiscreteLine.from_hz(5, 1.0)
    white = cm.ContinuousSpectrum.white(0.2)
    model = cm.NoiseModel((line,), white)
    expected = cm.contrast_discrete(seq, [line]) * math.exp(-2 * 0.2 * 0.2)
    assert cm.contrast_total(seq, model) == pytest.approx(expected, rel=1e-7)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        cm.ContinuousSpectrum.white(-1.0)
    with pytest.raises(ValueError):
        cm.ContinuousSpectrum.power_law(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        cm.ContinuousSpectrum.from_table([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        cm.DiscreteLine(-1.0, 1.0)


def test_table_interpolation_is_log_log():
    spec = cm.ContinuousSpectrum.from_table([1.0, 100.0], [1.0, 1e-4])
    assert spec(10.0) == pytest.approx(1e-2, rel=1e-12)
    assert spec(100.0) == pytest.approx(1e-4, rel=1e-12)
    assert spec(1000.0) == 0.0


def test_csv_round_trips(tmp_path):
    w = np.array([1.0, 10.0, 100.0])
    s = np.array([1e-3, 5e-4, 1e-6])
    cm.write_spectrum_csv(w, s, tmp_path / "s.csv")
    back = cm.read_spectrum_csv(tmp_path / "s.csv")
    assert np.allclose(back(w), s, rtol=1e-12)
    lines = [cm.DiscreteLine.from_hz(50, 0.6), cm.DiscreteLine.from_hz(150, 2.0)]
    cm.write_lines_csv(lines, tmp_path / "l.csv")
    assert cm.read_lines_csv(tmp_path / "l.csv") == lines


def test_csv_errors_name_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("omega_rad_s,S_beta\n1.0,2.0\n2.0,abc\n")
    with pytest.raises(ValueError, match="line 3"):
        cm.read_spectrum_csv(p)
