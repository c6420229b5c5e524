import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddlab import iphys

GAMMA = 2 * math.pi * 20e6
D_FS = 2 * math.pi * 100e12


def test_constants():
    assert iphys.K_HZ_PER_G2 == 310.8
    assert iphys.HYPERFINE_HZ == 12_642_812_118.0
    with pytest.raises(ValueError):
        iphys.FieldConfig(K=300.0)
    with pytest.raises(ValueError):
        iphys.FieldConfig(bx=math.inf)


@given(st.floats(-50, 50))
def test_splitting_even(b):
    assert iphys.qubit_splitting(-b) == iphys.qubit_splitting(b)


def test_splitting_value():
    assert iphys.qubit_splitting(8.8) == pytest.approx(12_642_812_118.0 + 310.8 * 77.44, rel=1e-15)


@given(st.floats(0.1, 20.0), st.sampled_from("xyz"))
def test_sensitivity_linearity(b, axis):
    idx = "xyz".index(axis)
    one = iphys.beta_sensitivity(iphys.FieldConfig(**{f"b{axis}": b}))
    two = iphys.beta_sensitivity(iphys.FieldConfig(**{f"b{axis}": 2 * b}))
    assert two.linear[idx] == pytest.approx(2 * one.linear[idx], rel=1e-15)
    assert two.quadratic == one.quadratic == 2 * math.pi * 310.8


def test_field_to_beta_line_amplitudes():
    cfg = iphys.FieldConfig(bx=8.8)
    # 2 K B_x b in Hz for the two mains lines
    assert iphys.field_to_beta(cfg, 18.3e-6) / (2 * math.pi) == pytest.approx(2 * 310.8 * 8.8 * 18.3e-6)
    assert iphys.field_to_beta(cfg, 57.5e-6) / (2 * math.pi) == pytest.approx(0.3145296, rel=1e-6)
    assert iphys.field_to_beta(cfg, 57.5e-6, "z") == 0.0


def test_intensity():
    assert iphys.intensity_from_beam(1e-3, 1e-4) == pytest.approx(2e-3 / (math.pi * 1e-8))


def params(**kw):
    base = dict(gamma=GAMMA, delta_d1=2 * math.pi * 203.8e12, delta_fs=D_FS,
                convention="angular", intensity_ratio=49.6)
    base.update(kw)
    return iphys.ScatteringParams(**base)


def test_convention_is_mandatory():
    with pytest.raises(ValueError, match="convention"):
        iphys.ScatteringParams(GAMMA, 1.0, 1.0, intensity_ratio=1.0)
    with pytest.raises(ValueError):
        params(convention="MHz")


def test_conventions_agree():
    ang = iphys.scattering_rate(params())
    hz = iphys.scattering_rate(params(gamma=20e6, delta_d1=203.8e12, delta_fs=100e12, convention="hz"))
    assert ang.rate_hz == pytest.approx(hz.rate_hz, rel=1e-12)
    assert hz.convention == "hz"


def test_verbatim_formula_value():
    rate = iphys.scattering_rate(params()).rate_hz
    g2 = (20e6 / 2) ** 2 * 49.6 / 2
    expected = g2 * 20e6 / 6 * (1 / 203.8e12 ** 2 + 2 / 303.8e12 ** 2)
    assert rate == pytest.approx(expected, rel=1e-12)
    assert rate == pytest.approx(3.78e-7, rel=0.01)


@given(st.floats(1e12, 1e15), st.floats(1.0, 10.0))
def test_rate_decreases_with_detuning(d1, factor):
    a = iphys.scattering_rate(params(delta_d1=d1, convention="hz", gamma=20e6, delta_fs=100e12))
    b = iphys.scattering_rate(params(delta_d1=d1 * factor, convention="hz", gamma=20e6, delta_fs=100e12))
    assert b.rate_hz <= a.rate_hz


def test_ratio_wins_over_beam():
    with_beam = params(power_w=1.0, waist_m=1e-5, i_sat=1.0)
    assert with_beam.saturation == 49.6
    beam_only = params(intensity_ratio=None, power_w=1e-3, waist_m=1e-4, i_sat=510.0)
    assert beam_only.saturation == pytest.approx(iphys.intensity_from_beam(1e-3, 1e-4) / 510.0)
    with pytest.raises(ValueError):
        params(intensity_ratio=None)
