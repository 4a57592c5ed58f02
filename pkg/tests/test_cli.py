import json

import numpy as np
import pytest

from ioncavity import cli


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_sequence_check_reports_rate(tmp_path, capsys):
    code, out, _ = run(capsys, "sequence", "--check", "-o", tmp_path)
    assert code == 0
    assert "repetition rate 90.9 kHz" in out
    assert "timing check passed" in out
    doc = json.loads((tmp_path / "sequence.json").read_text())
    assert [p["label"] for p in doc["phases"]][-1] == "IV-return"


def test_sequence_timing_failure_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "sequence", "--check", "--set", "cool_us=8", "-o", tmp_path)
    assert code == 2
    doc = json.loads(err)
    assert doc["error"] == "TimingError" and doc["exit_code"] == 2
    assert doc["deficit_us"] == pytest.approx(1e6 / 91e3 - 13.0, rel=1e-6)


def test_missing_required_key_named(tmp_path, capsys):
    code, _, err = run(capsys, "fit-g0", "-o", tmp_path)
    assert code == 2
    assert "delta_map_json" in json.loads(err)["message"]


def test_unknown_and_mistyped_keys(tmp_path, capsys):
    code, _, err = run(capsys, "sequence", "--set", "not_a_key=1", "-o", tmp_path)
    assert code == 2 and "not_a_key" in json.loads(err)["message"]
    code, _, _ = run(capsys, "sequence", "--set", 'cool_us="long"', "-o", tmp_path)
    assert code == 2


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"cool_us": 3.0, "target_rate_mhz": 0.125}))
    code, out, _ = run(capsys, "sequence", "--check", "-c", cfg, "-o", tmp_path)
    assert code == 0 and "repetition rate 125.0 kHz" in out


def test_coupling_sequence_command(tmp_path, capsys):
    code, out, _ = run(capsys, "sequence", "--set", 'sequence_kind="coupling"', "-o", tmp_path)
    assert code == 0 and "76.9 kHz" in out


def test_sequence_simulation(tmp_path, capsys):
    code, _, _ = run(capsys, "sequence", "--set", "simulate=true", "-o", tmp_path)
    assert code == 0
    sim = json.loads((tmp_path / "sequence.json").read_text())["simulation"]
    assert 0 < sim["signal"] < 1


def test_waveform_outputs(tmp_path, capsys):
    code, _, _ = run(capsys, "waveform", "-o", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "adiabaticity.json").read_text())
    assert rep["leakage"][0]["adiabatic"]
    assert rep["peak_displacement_nm"] == pytest.approx(216.5)
    assert (tmp_path / "waveform.svg").read_text().lstrip().startswith("<?xml")
    assert (tmp_path / "waveform.csv").exists()


def test_raman_scan_outputs(tmp_path, capsys):
    code, _, _ = run(capsys, "raman-scan", "--set", "raman_points=31", "-o", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "raman_scan.json").read_text())
    assert rep["delta_mhz"] > 0
    assert (tmp_path / "raman_scan.svg").exists()


def test_standing_wave_fit_recovers_sigma(tmp_path, capsys):
    code, _, _ = run(capsys, "standing-wave", "--set", "scan_points=25", "--set", "fit=true", "-o", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "standing_wave.json").read_text())
    assert rep["fit"]["sigma_nm"] == pytest.approx(38.5, rel=1e-4)
    assert "x0_nm" not in rep["fit"]


def test_fit_g0_synthetic(tmp_path, capsys, small_map):
    path = tmp_path / "map.json"
    small_map.to_json(path)
    code, _, _ = run(capsys, "fit-g0", "--set", f'delta_map_json="{path}"', "--set", "synthetic_g0_mhz=16.7",
                     "--set", "synthetic_probes_mhz=[-26,-22,-18,-14]", "-o", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "fit_g0.json").read_text())
    assert rep["g0_mhz"] == pytest.approx(16.7, abs=0.2)
    code, _, _ = run(capsys, "fit-g0", "--set", f'delta_map_json="{path}"',
                     "--set", f'shifts_csv="{tmp_path / "shifts.csv"}"', "-o", tmp_path / "again")
    assert code == 0
    again = json.loads((tmp_path / "again" / "fit_g0.json").read_text())
    assert again["g0_mhz"] == pytest.approx(rep["g0_mhz"], rel=1e-9)


def test_fit_g0_outside_map_domain(tmp_path, capsys, small_map):
    path = tmp_path / "map.json"
    small_map.to_json(path)
    code, _, err = run(capsys, "fit-g0", "--set", f'delta_map_json="{path}"', "--set", "synthetic_g0_mhz=25.0",
                       "-o", tmp_path)
    assert code != 0
    assert json.loads(err)["exit_code"] == code


@pytest.mark.parametrize("argv,files", [
    (["waveform"], ["waveform.csv", "adiabaticity.json", "waveform.svg"]),
    (["standing-wave", "--set", "scan_points=15", "--set", "noise=0.02"],
     ["standing_wave.csv", "standing_wave.json", "standing_wave.svg"]),
])
def test_outputs_are_byte_identical(tmp_path, capsys, argv, files):
    run(capsys, *argv, "-o", tmp_path / "a")
    run(capsys, *argv, "-o", tmp_path / "b")
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_selftest_passes(tmp_path, capsys):
    code, out, _ = run(capsys, "selftest", "-o", tmp_path)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_missing_input_file(tmp_path, capsys):
    code, _, err = run(capsys, "fit-g0", "--set", f'delta_map_json="{tmp_path / "none.json"}"', "-o", tmp_path)
    assert code == 2 and json.loads(err)["error"] == "FileNotFoundError"


def test_bad_thread_count(tmp_path, capsys):
    code, _, _ = run(capsys, "sequence", "--threads", "0", "-o", tmp_path)
    assert code == 2


def test_standing_wave_csv_is_numeric(tmp_path, capsys):
    run(capsys, "standing-wave", "--set", "scan_points=9", "-o", tmp_path)
    data = np.loadtxt(tmp_path / "standing_wave.csv", delimiter=",", comments="#", skiprows=2)
    assert data.shape == (9, 3)
