import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddlab.config import ConfigError, Key, UnitError, parse_config, render_header

SCHEMA = {
    "tau_s": Key("float", 0.2, "s"),
    "line_freqs_hz": Key("floats", (), "hz"),
    "n_pulses": Key("int", 2),
    "mc": Key("bool", False),
    "sequence": Key("str", "cpmg"),
}


def test_defaults_and_values():
    cfg = parse_config("tau_s = 0.1  # comment\nline_freqs_hz = 50, 150\nmc = yes\n", SCHEMA)
    assert cfg == {"tau_s": 0.1, "line_freqs_hz": (50.0, 150.0), "n_pulses": 2, "mc": True,
                   "sequence": "cpmg"}


def test_trailing_unit_must_match():
    assert parse_config("tau_s = 0.1 s", SCHEMA)["tau_s"] == 0.1
    with pytest.raises(UnitError, match="ms"):
        parse_config("tau_s = 100 ms", SCHEMA)


def test_wrong_unit_suffix_is_a_unit_error():
    with pytest.raises(UnitError, match="tau_s"):
        parse_config("tau_ms = 100", SCHEMA)


def test_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("colour = red", SCHEMA)
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("tau_s = 1\ntau_s = 2", SCHEMA)
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("tau_s = 1\nn_pulses = many", SCHEMA)
    with pytest.raises(ConfigError, match="key=value"):
        parse_config("just words", SCHEMA)


def test_overrides_win():
    assert parse_config("n_pulses = 4", SCHEMA, {"n_pulses": 8, "mc": None})["n_pulses"] == 8


@given(st.floats(allow_nan=False, allow_infinity=False), st.integers(0, 10**6))
def test_header_round_trip(tau, n):
    cfg = parse_config(f"tau_s = {tau!r}\nn_pulses = {n}", SCHEMA)
    lines = render_header("contrast", cfg, "0.1.0")
    assert lines[0] == "ddlab contrast version=0.1.0"
    body = "\n".join(lines[1:])
    assert parse_config(body.replace("line_freqs_hz=\n", ""), SCHEMA) == cfg
