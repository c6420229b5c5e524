"""``ddlab`` command line.

Every command reads a flat key=value config (``--config``), writes its
table or report to ``--out`` (stdout when omitted) with the resolved config
as ``#`` comment lines, and prints a one-line summary.
"""
from __future__ import annotations

import argparse
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchlab import StorageChannel, qpt, rb_fit, rb_simulate, write_chi_csv, write_rb_csv
from .cohmodel import (ContinuousSpectrum, DiscreteLine, NoiseModel, contrast_total,
                       read_spectrum_csv)
from .config import ConfigError, Key, UnitError, parse_config, read_config_file, render_header
from .dephsim import mc_contrast
from .iphys import (HYPERFINE_HZ, K_HZ_PER_G2, FieldConfig, beta_sensitivity, field_to_beta)
from .quad import QuadratureError
from .seqkit import KDD_XY_PHASES, PulseErrorModel, free_evolution, make_cpmg, make_hahn, make_kdd_xy
from .spectro import (FitError, InfeasibleError, fit_coherence_time, fit_discrete_lines,
                      optimize_interval, read_records_csv, reconstruct_spectrum,
                      write_spectrum_estimate_csv)

_FIELD = {
    "bx_gauss": Key("float", 0.0, "gauss"),
    "by_gauss": Key("float", 0.0, "gauss"),
    "bz_gauss": Key("float", 0.0, "gauss"),
    "line_axis": Key("str", "x"),
}
_NOISE = {
    "line_freqs_hz": Key("floats", (), "hz"),
    "line_amps_gauss": Key("floats", (), "gauss"),
    "line_amps_rad_s": Key("floats", (), "rad_s"),
    "continuum_csv": Key("str", ""),
    "white_s0_rad_s": Key("float", 0.0, "rad_s"),
}
_ERRORS = {
    "flip_error_rad": Key("float", 0.0, "rad"),
    "detuning_rad_s": Key("float", 0.0, "rad_s"),
    "pulse_duration_s": Key("float", 0.0, "s"),
}

SCHEMAS = {
    "contrast": {
        "sequence": Key("str", "cpmg"),
        "n_pulses": Key("int", 2),
        "allow_odd": Key("bool", False),
        "tau_s": Key("float", None, "s"),
        "tau_start_s": Key("float", None, "s"),
        "tau_stop_s": Key("float", None, "s"),
        "tau_step_s": Key("float", None, "s"),
        "mc": Key("bool", False),
        "n_traj": Key("int", 10_000),
        **_NOISE, **_FIELD, **_ERRORS,
    },
    "fit-lines": {
        "input_csv": Key("str", ""),
        "candidate_freqs_hz": Key("floats", (), "hz"),
        **_FIELD,
    },
    "spectrum": {
        "input_csv": Key("str", ""),
    },
    "optimize-tau": {
        "spectrum_csv": Key("str", ""),
        "white_s0_rad_s": Key("float", 0.0, "rad_s"),
        "line_freqs_hz": Key("floats", (), "hz"),
        "tau_min_s": Key("float", 0.005, "s"),
        "tau_max_s": Key("float", 0.25, "s"),
        "tau_step_s": Key("float", 0.001, "s"),
        "per_pulse_error": Key("float", 0.0),
        "target_time_s": Key("float", 480.0, "s"),
        "notch_threshold_s2": Key("float", 1e-10, "s2"),
        "sequence": Key("str", "kdd_xy"),
    },
    "rb": {
        "lengths": Key("ints", (1, 100, 1000, 4000, 8000, 16000)),
        "n_settings": Key("int", 32),
        "n_reps": Key("int", 500),
        "p_dep": Key("float", 0.0),
        **_ERRORS,
    },
    "qpt": {
        "duration_s": Key("float", 480.0, "s"),
        "tau_s": Key("float", 0.2, "s"),
        "t2_s": Key("float", None, "s"),
        "white_s0_rad_s": Key("float", 0.0, "rad_s"),
        "spectrum_csv": Key("str", ""),
        "mode": Key("str", "analytic"),
        "n_traj": Key("int", 2000),
        "shots": Key("int", 0),
        **_ERRORS,
    },
    "t2fit": {
        "input_csv": Key("str", ""),
        "amplitude_max": Key("float", 1.0),
    },
    "constants": {},
}


def _need(cfg, key):
    v = cfg.get(key)
    if v in (None, "", ()):
        raise ConfigError(f"missing required key {key!r}")
    return v


def _field(cfg) -> FieldConfig:
    return FieldConfig(cfg["bx_gauss"], cfg["by_gauss"], cfg["bz_gauss"])


def _errors(cfg) -> PulseErrorModel:
    return PulseErrorModel(flip_angle_error=cfg["flip_error_rad"], detuning=cfg["detuning_rad_s"],
                           pulse_duration=cfg["pulse_duration_s"])


def _noise(cfg) -> NoiseModel:
    freqs = cfg["line_freqs_hz"]
    g, r = cfg["line_amps_gauss"], cfg["line_amps_rad_s"]
    if g and r:
        raise ConfigError("give line amplitudes in gauss or rad/s, not both")
    amps = r or g
    if len(amps) != len(freqs):
        raise ConfigError(f"{len(freqs)} line frequencies but {len(amps)} amplitudes")
    if g:
        fc = _field(cfg)
        amps = tuple(field_to_beta(fc, a, cfg["line_axis"]) for a in g)
    lines = tuple(DiscreteLine.from_hz(f, a) for f, a in zip(freqs, amps))
    cont = ContinuousSpectrum.empty()
    if cfg["continuum_csv"]:
        cont = read_spectrum_csv(cfg["continuum_csv"])
    if cfg["white_s0_rad_s"]:
        cont = cont + ContinuousSpectrum.white(cfg["white_s0_rad_s"])
    return NoiseModel(lines, cont)


def _build_sequence(cfg, tau):
    fam, n = cfg["sequence"], cfg["n_pulses"]
    if fam == "cpmg":
        return make_cpmg(n, tau, allow_odd=cfg["allow_odd"])
    if fam == "kdd_xy":
        return make_kdd_xy(n, tau)
    if fam == "hahn":
        return make_hahn(tau)
    if fam == "free":
        return free_evolution(tau)
    raise ConfigError(f"unknown sequence {fam!r}; use cpmg, kdd_xy, hahn or free")


def _taus(cfg):
    if cfg["tau_start_s"] is not None:
        a, b, st = cfg["tau_start_s"], _need(cfg, "tau_stop_s"), _need(cfg, "tau_step_s")
        k = int(math.floor((b - a) / st + 1e-9))
        return [round(a + i * st, 12) for i in range(k + 1)]
    return [_need(cfg, "tau_s")]


def cmd_contrast(cfg, args):
    model = _noise(cfg)
    err = _errors(cfg)
    rows = []
    worst = 0.0
    for tau in _taus(cfg):
        seq = _build_sequence(cfg, tau)
        c = contrast_total(seq, model)
        row = [repr(float(tau)), str(seq.n_pulses), repr(float(seq.total_time)), repr(float(c))]
        if cfg["mc"]:
            mc = mc_contrast(seq, model, err, n_traj=cfg["n_traj"], seed=cfg["seed"],
                             threads=args.threads)
            row += [repr(mc.contrast), repr(mc.stderr)]
            if mc.stderr > 0:
                worst = max(worst, abs(mc.contrast - c) / mc.stderr)
        rows.append(",".join(row))
    head = "tau_s,n_pulses,total_time_s,contrast_analytic"
    if cfg["mc"]:
        head += ",contrast_mc,mc_stderr"
    body = head + "\n" + "\n".join(rows) + "\n"
    summary = f"rows={len(rows)}"
    if cfg["mc"]:
        summary += f" max_mc_deviation_sigma={worst:.3f}"
    return body, summary


def cmd_fit_lines(cfg, args):
    recs = read_records_csv(_need(cfg, "input_csv"))
    fit = fit_discrete_lines(recs, _need(cfg, "candidate_freqs_hz"))
    body = fit.report()
    fc = _field(cfg)
    sens = abs(beta_sensitivity(fc).linear["xyz".index(cfg["line_axis"])])
    if sens > 0:
        for ln, u in zip(fit.lines, fit.uncertainties):
            body += f"line_{ln.freq_hz:g}Hz_amplitude_gauss={ln.beta / sens!r}\n"
            body += f"line_{ln.freq_hz:g}Hz_amplitude_uncertainty_gauss={u / sens!r}\n"
    summary = " ".join(f"beta_{ln.freq_hz:g}Hz={ln.beta:.6g}" for ln in fit.lines)
    return body, summary


def cmd_spectrum(cfg, args):
    recs = read_records_csv(_need(cfg, "input_csv"))
    est = reconstruct_spectrum(recs)
    body = write_spectrum_estimate_csv(est)
    below = int(np.sum(est.values < est.uncertainty))
    return body, f"bands={len(est)} below_uncertainty={below}"


def _spectrum_from(cfg):
    spec = ContinuousSpectrum.empty()
    if cfg.get("spectrum_csv"):
        spec = read_spectrum_csv(cfg["spectrum_csv"])
    if cfg.get("white_s0_rad_s"):
        spec = spec + ContinuousSpectrum.white(cfg["white_s0_rad_s"])
    return spec


def cmd_optimize_tau(cfg, args):
    choice = optimize_interval(_spectrum_from(cfg), cfg["line_freqs_hz"],
                               (cfg["tau_min_s"], cfg["tau_max_s"]), cfg["per_pulse_error"],
                               cfg["target_time_s"], step=cfg["tau_step_s"],
                               notch_threshold=cfg["notch_threshold_s2"], sequence=cfg["sequence"])
    lines = ["tau_s,n_pulses,feasible,contrast,score"]
    for tau, n, ok, c, s in choice.table:
        lines.append(f"{tau!r},{n},{str(ok).lower()},{float(c)!r},{float(s)!r}")
    return "\n".join(lines) + "\n", f"tau_opt_s={choice.tau:.3f}"


def cmd_rb(cfg, args):
    err = PulseErrorModel(flip_angle_error=cfg["flip_error_rad"], detuning=cfg["detuning_rad_s"],
                          pulse_duration=cfg["pulse_duration_s"], p_dep=cfg["p_dep"])
    run = rb_simulate(cfg["lengths"], err, cfg["n_settings"], cfg["n_reps"], cfg["seed"])
    fit = rb_fit(run)
    body = write_rb_csv(run)
    body += "".join(f"# fit {line}\n" for line in fit.report().splitlines())
    return body, f"fidelity={fit.fidelity:.8f} uncertainty={fit.uncertainty:.3g}"


def cmd_qpt(cfg, args):
    spec = _spectrum_from(cfg)
    if cfg["t2_s"]:
        spec = spec + ContinuousSpectrum.white(1.0 / (2.0 * cfg["t2_s"]))
    channel = StorageChannel(NoiseModel((), spec), cfg["tau_s"], _errors(cfg), cfg["mode"],
                             cfg["n_traj"], cfg["seed"])
    duration = cfg["duration_s"]
    shots = cfg["shots"] or None
    pm = qpt(lambda rho: channel.apply(rho, duration), seed=cfg["seed"], shots=shots)
    body = write_chi_csv(pm)
    return body, f"chi_II={pm.chi_II:.6f} projection_distance={pm.projection_distance:.3g}"


def cmd_t2fit(cfg, args):
    recs = sorted(read_records_csv(_need(cfg, "input_csv")), key=lambda r: r.total_time)
    data = [(r.total_time, r.contrast) for r in recs]
    se = [r.stderr for r in recs]
    amax = cfg["amplitude_max"]
    fit = fit_coherence_time(data, stderr=se if any(se) else None,
                             amplitude_max=amax if amax > 0 else None)
    if fit.decaying:
        summary = f"t2_s={fit.t2:.6g} uncertainty_s={fit.t2_uncertainty:.3g}"
    else:
        summary = f"no measurable decay; t2_lower_bound_s={fit.t2_lower_bound:.6g}"
    return fit.report(), summary


def cmd_constants(cfg, args):
    out = [f"k_hz_per_g2={K_HZ_PER_G2!r}", f"hyperfine_hz={HYPERFINE_HZ!r}",
           "kdd_xy_phases_rad=" + ",".join(repr(p) for p in KDD_XY_PHASES)]
    return "\n".join(out) + "\n", f"constants={len(out)}"


COMMANDS = {
    "contrast": cmd_contrast,
    "fit-lines": cmd_fit_lines,
    "spectrum": cmd_spectrum,
    "optimize-tau": cmd_optimize_tau,
    "rb": cmd_rb,
    "qpt": cmd_qpt,
    "t2fit": cmd_t2fit,
    "constants": cmd_constants,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddlab", description=__doc__.splitlines()[1])
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    p.add_argument("command", choices=sorted(COMMANDS))
    return p


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        schema = dict(SCHEMAS[args.command])
        if args.command != "constants":
            schema["seed"] = Key("int", 0)
        cfg = parse_config(read_config_file(args.config), schema,
                           {"seed": args.seed} if "seed" in schema else None)
        body, summary = COMMANDS[args.command](cfg, args)
    except UnitError as exc:
        print(f"ddlab: unit error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, FileNotFoundError, QuadratureError, FitError,
            InfeasibleError, RuntimeError) as exc:
        print(f"ddlab: error: {exc}", file=sys.stderr)
        return 2
    header = "".join(f"# {h}\n" for h in render_header(args.command, cfg, __version__))
    text = header + body
    if args.out:
        Path(args.out).write_text(text)
        print(summary, file=stdout)
    else:
        stdout.write(text)
        print(summary, file=stdout)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
