"""Command-line front end.

Every subcommand reads one JSON config (all keys optional unless noted; unknown
keys are rejected), applies ``--set key=value`` overrides and writes its
artifacts into ``--out``.  Frequencies are given and emitted as value/2π in
MHz, positions in nm and times in μs.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Failures print a
JSON object with ``error``, ``message`` and ``exit_code`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import localization as loc
from . import model, sequence, shuttle, spectroscopy
from .errors import NumericalError, ValidationError
from .units import mhz, nm, to_mhz, to_nm, us

UNITS = {"frequency": "MHz (value/2pi)", "position": "nm", "time": "us"}

DEFAULTS = {
    "g0_mhz": 17.3,
    "kappa_mhz": 8.2,
    "gamma_mhz": 11.5,
    "f_sec_mhz": 2.73,
    "drive_mhz": 19.55,
    "rabi_cool_mhz": 14.0,
    "rabi_probe_mhz": 11.8,
    "cooling_detuning_mhz": 7.0,
    "probe_detuning_mhz": -10.0,
    "cavity_detuning_mhz": None,
    "repump_rate_mhz": 1.0,
    "wavelength_nm": 866.0,
    "n_max": 1,
    "probe_duration_us": 0.3,
    # standing-wave scan
    "scan_start_nm": -100.0,
    "scan_stop_nm": 1000.0,
    "scan_points": 45,
    "sigma_nm": 38.5,
    "temperature_mk": None,
    "x0_nm": 0.0,
    "micromotion": False,
    "noise": 0.0,
    "fit": False,
    # Raman spectroscopy
    "raman_points": spectroscopy.SCAN_POINTS,
    "g0_grid_mhz": [float(v) for v in spectroscopy.DEFAULT_G0_GRID_MHZ],
    "probe_grid_mhz": [float(v) for v in spectroscopy.DEFAULT_PROBE_GRID_MHZ],
    "delta_map_json": None,
    "shifts_csv": None,
    "synthetic_g0_mhz": None,
    "synthetic_probes_mhz": [float(v) for v in np.linspace(-27.5, -10.0, 8)],
    "synthetic_noise_mhz": 0.1,
    # shuttle
    "amplitude_v": 2.0,
    "rise_us": 1.0,
    "hold_us": 0.0,
    "fall_us": 1.0,
    "sample_rate_mhz": 1000.0,
    "leakage_freqs_mhz": [2.73],
    "leakage_threshold": shuttle.DEFAULT_THRESHOLD,
    "calibration_nm_per_v": 108.25,
    # sequence
    "sequence_kind": "standing-wave",
    "prep_us": 2.0,
    "cool_us": 6.0,
    "shuttle_us": 1.0,
    "settle_us": 1.7,
    "probe_us": 0.3,
    "return_us": 2.0,
    "target_rate_mhz": 0.091,
    "rate_tolerance": 0.01,
    "simulate": False,
}

REQUIRED = {"fit-g0": ("delta_map_json",)}


def load_config(path: str | None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ValidationError("config must be a JSON object")
        _merge(cfg, user)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _merge(cfg, {key.strip(): value})
    return cfg


def _merge(cfg: dict, user: dict):
    unknown = sorted(set(user) - set(DEFAULTS))
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
    for k, v in user.items():
        default = DEFAULTS[k]
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ValidationError(f"config key {k!r} must be true or false")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError(f"config key {k!r} must be a number")
        if isinstance(default, list) and not (isinstance(v, list) and all(isinstance(x, (int, float)) for x in v)):
            raise ValidationError(f"config key {k!r} must be a list of numbers")
        cfg[k] = v


def _require(cfg: dict, command: str):
    for key in REQUIRED.get(command, ()):
        if cfg.get(key) is None:
            raise ValidationError(f"missing config key {key!r} for {command}")


def system_params(cfg: dict) -> model.SystemParams:
    dp = cfg["probe_detuning_mhz"]
    dc = dp if cfg["cavity_detuning_mhz"] is None else cfg["cavity_detuning_mhz"]
    return model.SystemParams(
        ion=model.IonLevels(gamma_p=mhz(cfg["gamma_mhz"])),
        cavity=model.CavityParams(g0=mhz(cfg["g0_mhz"]), kappa=mhz(cfg["kappa_mhz"]),
                                  detuning=mhz(dc), n_max=int(cfg["n_max"]),
                                  wavelength=nm(cfg["wavelength_nm"])),
        lasers=(model.LaserField(mhz(cfg["rabi_probe_mhz"]), mhz(dp)),),
        position=nm(cfg["wavelength_nm"]) / 4,
    )


def trap_params(cfg: dict) -> loc.TrapParams:
    return loc.TrapParams(omega_ax=mhz(cfg["f_sec_mhz"]), drive_freq=mhz(cfg["drive_mhz"]))


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _rng(seed):
    return np.random.default_rng(seed)


def cmd_standing_wave(cfg, args, out: Path) -> dict:
    from . import plots

    params = system_params(cfg)
    if cfg["cavity_detuning_mhz"] is None:
        # tune the cavity to the coupled Raman peak at the antinode
        params = params.with_(cavity_detuning=model.raman_peak_detuning(params))
    trap = trap_params(cfg)
    if cfg["temperature_mk"] is not None:
        sigma = loc.thermal_sigma(cfg["temperature_mk"] * 1e-3, trap)
    else:
        sigma = nm(cfg["sigma_nm"])
    x = nm(np.linspace(cfg["scan_start_nm"], cfg["scan_stop_nm"], int(cfg["scan_points"])))
    x0 = nm(cfg["x0_nm"])
    dist = loc.PositionDistribution(0.0, sigma, 0.0, x0)
    curve = loc.EmissionCurve(params, probe_duration=us(cfg["probe_duration_us"]))
    scan = loc.standing_wave_scan(x, params, dist, trap if cfg["micromotion"] else None,
                                  normalise=True, curve=curve)
    if cfg["noise"] > 0:
        err = np.full(len(scan), cfg["noise"])
        scan = loc.StandingWaveScan(scan.position_ctrl,
                                    scan.emission + _rng(args.seed).normal(0, cfg["noise"], len(scan)),
                                    err, True)
    scan.to_csv(out / "standing_wave.csv",
                f"position_ctrl in nm from the node; emission normalised to its maximum; "
                f"cavity detuning {to_mhz(params.cavity.detuning):.6f} MHz")
    report = {
        "units": UNITS,
        "cavity_detuning_mhz": to_mhz(params.cavity.detuning),
        "sigma_nm": to_nm(sigma),
        "spread_nm": to_nm(loc.spread(sigma)),
        "visibility": loc.visibility(scan),
        "points": len(scan),
    }
    fit = None
    if cfg["fit"]:
        fit = loc.fit_standing_wave(scan, params, trap if cfg["micromotion"] else None, curve=curve)
        err = fit.stderr
        report["fit"] = {
            "x_scale": fit.x_scale, "y_scale": fit.y_scale,
            "sigma_nm": to_nm(fit.sigma), "sigma_stderr_nm": to_nm(err[2]),
            "spread_nm": to_nm(loc.spread(fit.sigma)),
            "temperature_mk": 1e3 * loc.temperature_from_spread(loc.spread(fit.sigma), trap),
            "chi2": fit.chi2,
        }
        if cfg["micromotion"]:
            report["fit"].update(x0_nm=to_nm(fit.x0), x0_stderr_nm=to_nm(err[3]))
    _write_json(out / "standing_wave.json", report)
    plots.standing_wave(scan, out / "standing_wave.svg", fit)
    return report


def cmd_raman_scan(cfg, args, out: Path) -> dict:
    from . import plots

    params = system_params(cfg)
    dp = mhz(cfg["probe_detuning_mhz"])
    grid = spectroscopy.scan_window(dp, params.cavity.kappa, int(cfg["raman_points"]))
    scan = spectroscopy.raman_scan(dp, grid, params.with_(position=params.cavity.node_spacing / 2),
                                   probe_duration=us(cfg["probe_duration_us"]))
    scan.to_csv(out / "raman_scan.csv")
    fit = spectroscopy.fit_lorentzian(scan)
    report = {
        "units": UNITS,
        "delta_p_mhz": to_mhz(dp),
        "center_mhz": to_mhz(fit.center),
        "delta_mhz": to_mhz(fit.center - dp),
        "fwhm_mhz": to_mhz(fit.fwhm),
        "amplitude": fit.amplitude,
        "offset": fit.offset,
    }
    _write_json(out / "raman_scan.json", report)
    plots.raman_scan(scan, out / "raman_scan.svg", fit)
    return report


def cmd_delta_map(cfg, args, out: Path) -> dict:
    from . import plots

    params = system_params(cfg)
    dmap = spectroscopy.build_delta_map(mhz(np.array(cfg["g0_grid_mhz"])), mhz(np.array(cfg["probe_grid_mhz"])),
                                        params, points=int(cfg["raman_points"]), workers=args.threads)
    path = Path(cfg["delta_map_json"]) if cfg["delta_map_json"] else out / "delta_map.json"
    dmap.to_json(path)
    plots.delta_map(dmap, out / "delta_map.svg")
    rows = [spectroscopy.is_dispersion_like(dmap.probe_grid, r) for r in dmap.delta]
    return {"units": UNITS, "path": str(path), "shape": list(dmap.delta.shape),
            "dispersion_like_rows": int(sum(rows))}


def synthetic_shifts(dmap, g0, probes, noise, seed) -> list:
    rng = _rng(seed)
    clean = dmap.at(g0, probes)
    return [spectroscopy.ShiftPoint(p, d + rng.normal(0, noise), noise) for p, d in zip(probes, clean)]


def cmd_fit_g0(cfg, args, out: Path) -> dict:
    from . import plots

    dmap = spectroscopy.DeltaMap.from_json(cfg["delta_map_json"])
    if cfg["shifts_csv"] is not None:
        points = spectroscopy.read_shift_points(cfg["shifts_csv"])
    elif cfg["synthetic_g0_mhz"] is not None:
        points = synthetic_shifts(dmap, mhz(cfg["synthetic_g0_mhz"]),
                                  mhz(np.array(cfg["synthetic_probes_mhz"])),
                                  mhz(cfg["synthetic_noise_mhz"]), args.seed)
        spectroscopy.write_shift_points(out / "shifts.csv", points)
    else:
        raise ValidationError("missing config key 'shifts_csv' (or 'synthetic_g0_mhz')")
    fit = spectroscopy.fit_g0(points, dmap)
    report = {"units": UNITS, "g0_mhz": to_mhz(fit.g0), "g0_stderr_mhz": to_mhz(fit.stderr),
              "chi2": fit.chi2, "points": fit.points}
    _write_json(out / "fit_g0.json", report)
    plots.g0_fit(points, dmap, fit, out / "fit_g0.svg")
    return report


def cmd_waveform(cfg, args, out: Path) -> dict:
    from . import plots

    pulse = shuttle.ShuttlePulse(cfg["amplitude_v"], us(cfg["rise_us"]), us(cfg["hold_us"]),
                                 us(cfg["fall_us"]), cfg["sample_rate_mhz"] * 1e6)
    wf = shuttle.generate_waveform(pulse)
    wf.to_csv(out / "waveform.csv")
    report = shuttle.adiabaticity_report(wf, [mhz(f) for f in cfg["leakage_freqs_mhz"]],
                                         cfg["leakage_threshold"])
    cal = shuttle.Calibration(nm(cfg["calibration_nm_per_v"]))
    report["units"] = UNITS
    report["peak_displacement_nm"] = to_nm(shuttle.displacement(cfg["amplitude_v"], cal))
    shuttle.write_report(report, out / "adiabaticity.json")
    plots.waveform(wf, out / "waveform.svg")
    return report


def sequence_config(cfg) -> sequence.SequenceConfig:
    dc = cfg["cavity_detuning_mhz"]
    return sequence.SequenceConfig(
        prep=us(cfg["prep_us"]), cool=us(cfg["cool_us"]), shuttle=us(cfg["shuttle_us"]),
        settle=us(cfg["settle_us"]), probe=us(cfg["probe_us"]), ret=us(cfg["return_us"]),
        cooling_offset=mhz(cfg["cooling_detuning_mhz"]),
        cooling_pump_detuning=mhz(cfg["probe_detuning_mhz"]),
        probe_detuning=mhz(cfg["probe_detuning_mhz"]),
        probe_cavity_detuning=None if dc is None else mhz(dc),
    )


def cmd_sequence(cfg, args, out: Path) -> dict:
    scfg = sequence_config(cfg)
    kind = cfg["sequence_kind"]
    if kind == "standing-wave":
        seq = sequence.standing_wave_sequence(scfg)
    elif kind == "coupling":
        seq = sequence.coupling_measurement_sequence(scfg)
    else:
        raise ValidationError(f"sequence_kind must be 'standing-wave' or 'coupling', got {kind!r}")
    doc = seq.to_dict()
    doc["units"] = UNITS
    target = cfg["target_rate_mhz"] * 1e6
    doc["target_rate_khz"] = target / 1e3
    if cfg["simulate"]:
        res = sequence.simulate_cycle(seq, system_params(cfg), rabi_cool=mhz(cfg["rabi_cool_mhz"]),
                                      repump_rate=mhz(cfg["repump_rate_mhz"]))
        doc["simulation"] = {"signal": res.signal, "reference": res.reference,
                             "s_population": res.populations}
    _write_json(out / "sequence.json", doc)
    print(f"repetition rate {seq.repetition_rate / 1e3:.1f} kHz")
    if args.check:
        seq.check_rate(target, cfg["rate_tolerance"])
        print(f"timing check passed: within {100 * cfg['rate_tolerance']:g}% of {target / 1e3:g} kHz")
    return doc


def cmd_selftest(cfg, args, out: Path) -> dict:
    from . import selftest

    results = selftest.run(seed=args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = [r[0] for r in results if not r[1]]
    if failed:
        raise NumericalError(f"self-test failures: {', '.join(failed)}")
    return {"passed": len(results)}


COMMANDS = {
    "standing-wave": (cmd_standing_wave, "smeared standing-wave scan, optional fit"),
    "raman-scan": (cmd_raman_scan, "single Raman scan with Lorentzian fit"),
    "delta-map": (cmd_delta_map, "build and save the Raman-shift map"),
    "fit-g0": (cmd_fit_g0, "fit g0 to measured or synthetic shifts"),
    "waveform": (cmd_waveform, "shuttle waveform and adiabaticity report"),
    "sequence": (cmd_sequence, "pulse-sequence phase table and timing check"),
    "selftest": (cmd_selftest, "run the built-in invariant checks"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ioncavity", description="Ion-cavity emission modelling toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("-c", "--config", help="JSON config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (value parsed as JSON)")
        s.add_argument("-o", "--out", default=".", help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker processes for grid evaluation")
        s.add_argument("--seed", type=int, default=0, help="seed for synthetic noise")
        if name == "sequence":
            s.add_argument("--check", action="store_true", help="fail unless the rate matches the target")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = load_config(args.config, args.set)
        _require(cfg, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, args, out)
    except (ValidationError, OSError) as exc:
        return _fail(exc, 2)
    except NumericalError as exc:
        return _fail(exc, 3)
    return 0


def _fail(exc: Exception, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    deficit = getattr(exc, "deficit", None)
    if deficit is not None:
        doc["deficit_us"] = deficit * 1e6
    print(json.dumps(doc), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
