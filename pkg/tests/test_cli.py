import io
import math

import numpy as np
import pytest

from ddlab import cli
from ddlab import spectro as sp


def run(tmp_path, command, text, *flags):
    cfg = tmp_path / f"{command}.cfg"
    cfg.write_text(text)
    buf = io.StringIO()
    code = cli.run(["--config", str(cfg), *flags, command], stdout=buf)
    return code, buf.getvalue()


def test_constants():
    buf = io.StringIO()
    assert cli.run(["constants"], stdout=buf) == 0
    out = buf.getvalue()
    assert "k_hz_per_g2=310.8\n" in out
    assert "hyperfine_hz=12642812118.0\n" in out


def test_contrast_embeds_config(tmp_path):
    out_path = tmp_path / "c.csv"
    code, summary = run(tmp_path, "contrast",
                        "n_pulses = 4\ntau_s = 0.01\nline_freqs_hz = 50\nline_amps_rad_s = 2.0\n",
                        "--out", str(out_path), "--threads", "2")
    assert code == 0
    assert summary == "rows=1\n"
    text = out_path.read_text()
    assert text.startswith("# ddlab contrast version=")
    assert "# tau_s=0.01\n" in text
    assert "threads" not in text
    assert "seed=0" in text


def test_gauss_amplitudes_use_field(tmp_path):
    base = "n_pulses = 4\ntau_s = 0.01\nline_freqs_hz = 50\n"
    _, a = run(tmp_path, "contrast", base + "line_amps_gauss = 2e-4\nbx_gauss = 8.8\n")
    beta = 2 * math.pi * 2 * 310.8 * 8.8 * 2e-4
    _, b = run(tmp_path, "contrast", base + f"line_amps_rad_s = {beta!r}\n")
    assert float(a.splitlines()[-2].split(",")[-1]) == pytest.approx(float(b.splitlines()[-2].split(",")[-1]))


def test_unit_error_exit(tmp_path, capsys):
    code, _ = run(tmp_path, "contrast", "tau_ms = 10\n")
    assert code == 2
    assert "unit error" in capsys.readouterr().err


def test_missing_key_and_bad_values(tmp_path, capsys):
    assert run(tmp_path, "fit-lines", "")[0] == 2
    assert "input_csv" in capsys.readouterr().err
    assert run(tmp_path, "contrast", "sequence = xy4\ntau_s = 0.1\n")[0] == 2
    assert "unknown sequence" in capsys.readouterr().err
    assert run(tmp_path, "contrast", "line_freqs_hz = 50\ntau_s = 0.1\n")[0] == 2
    assert "amplitudes" in capsys.readouterr().err


def test_seed_flag_overrides(tmp_path):
    text = "tau_s = 0.01\nline_freqs_hz = 50\nline_amps_rad_s = 3\nmc = true\nn_traj = 200\n"
    _, a = run(tmp_path, "contrast", text, "--seed", "1")
    _, b = run(tmp_path, "contrast", text, "--seed", "2")
    assert "# seed=1" in a and "# seed=2" in b
    assert a.splitlines()[-2] != b.splitlines()[-2]


def test_optimize_tau_summary(tmp_path):
    code, out = run(tmp_path, "optimize-tau",
                    "line_freqs_hz = 50, 150\ntau_min_s = 0.1\ntau_max_s = 0.25\n"
                    "tau_step_s = 0.01\nper_pulse_error = 6e-5\ntarget_time_s = 48\n")
    assert code == 0
    assert out.splitlines()[-1] == "tau_opt_s=0.240"


def test_t2fit_and_infeasible(tmp_path, capsys):
    recs = [sp.ContrastRecord.on_grid(n, 0.2, math.exp(-0.2 * n / 666.9), 0.0) for n in (400, 1200, 800, 2400)]
    sp.write_records_csv(recs, tmp_path / "r.csv")
    code, out = run(tmp_path, "t2fit", f"input_csv = {tmp_path / 'r.csv'}\n")
    assert code == 0
    assert out.splitlines()[-1].startswith("t2_s=666.9 ")
    code, _ = run(tmp_path, "optimize-tau", "line_freqs_hz = 50\ntau_min_s = 0.21\ntau_max_s = 0.23\n")
    assert code == 2
    assert "notch threshold" in capsys.readouterr().err


def test_rb_and_qpt(tmp_path):
    code, out = run(tmp_path, "rb", "lengths = 1, 10, 100\nn_settings = 4\nn_reps = 20\n")
    assert code == 0
    assert out.splitlines()[-1].startswith("fidelity=1.00000000")
    code, out = run(tmp_path, "qpt", "t2_s = 666.9\n")
    assert out.splitlines()[-1].startswith("chi_II=0.743438")
