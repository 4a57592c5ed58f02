import numpy as np
import pytest

from ioncavity import model, spectroscopy as sp
from ioncavity.errors import BracketError, DomainError, ExtrapolationError, ValidationError
from ioncavity.units import mhz, to_mhz


def synthetic_scan(center=mhz(1.0), fwhm=mhz(8.0), amp=0.7, offset=0.02, noise=0.0, seed=0):
    x = sp.scan_window(0.0, mhz(8.2))
    y = sp.lorentzian(x, center, fwhm, amp, offset)
    err = np.full(x.size, noise)
    if noise:
        y = y + np.random.default_rng(seed).normal(0, noise, x.size)
    return sp.RamanScan(0.0, x, y, err)


def test_scan_window_spans_three_linewidths():
    w = sp.scan_window(mhz(-10), mhz(8.2))
    assert len(w) == 41
    assert w[0] == pytest.approx(mhz(-10 - 24.6))
    assert w[-1] == pytest.approx(mhz(-10 + 24.6))


def test_lorentzian_half_width():
    assert sp.lorentzian(2.0, 0.0, 4.0, 1.0, 0.0) == pytest.approx(0.5)


def test_fit_recovers_exact_lorentzian():
    fit = sp.fit_lorentzian(synthetic_scan())
    assert fit.center == pytest.approx(mhz(1.0), rel=1e-9)
    assert fit.fwhm == pytest.approx(mhz(8.0), rel=1e-9)
    assert fit.amplitude == pytest.approx(0.7, rel=1e-9)
    assert fit.offset == pytest.approx(0.02, abs=1e-10)


def test_fit_uncertainty_covers_truth():
    pulls = []
    for seed in range(30):
        fit = sp.fit_lorentzian(synthetic_scan(noise=0.01, seed=seed))
        pulls.append((fit.center - mhz(1.0)) / np.sqrt(fit.covariance[0, 0]))
    assert 0.5 < np.std(pulls) < 1.6


def test_fit_rejects_edge_peak():
    x = sp.scan_window(0.0, mhz(8.2))
    y = sp.lorentzian(x, x[0] - mhz(5), mhz(8), 1.0, 0.0)
    with pytest.raises(BracketError):
        sp.fit_lorentzian(sp.RamanScan(0.0, x, y, np.zeros_like(x)))


def test_raman_scan_validation():
    with pytest.raises(ValidationError):
        sp.RamanScan(0.0, [1, 2, 3], [1, 2, 3], [0, 0, 0])
    x = np.arange(10.0)
    with pytest.raises(ValidationError):
        sp.RamanScan(0.0, x[::-1], x, np.zeros(10))


def test_raman_scan_csv_round_trip(tmp_path):
    scan = synthetic_scan(noise=0.01)
    scan = sp.RamanScan(mhz(-12.5), scan.cavity_detuning, scan.emission, scan.stderr)
    path = tmp_path / "r.csv"
    scan.to_csv(path)
    back = sp.RamanScan.from_csv(path)
    assert back.probe_detuning == pytest.approx(mhz(-12.5))
    assert np.allclose(back.cavity_detuning, scan.cavity_detuning, rtol=1e-15)
    assert "delta_c_mhz,emission,stderr" in path.read_text()


def test_simulated_scan_peak_near_raman_maximum():
    p = model.probe_params()
    scan = sp.raman_scan(p.pump.detuning, sp.scan_window(p.pump.detuning, p.cavity.kappa), p)
    fit = sp.fit_lorentzian(scan)
    assert fit.center == pytest.approx(model.raman_peak_detuning(p), abs=mhz(0.5))


def test_shift_is_odd_in_probe_detuning():
    p = model.probe_params()
    a = sp.simulated_shift(mhz(16.0), mhz(-6.0), p)
    b = sp.simulated_shift(mhz(16.0), mhz(6.0), p)
    assert to_mhz(a) == pytest.approx(-to_mhz(b), abs=1e-6)


def test_dispersion_predicate():
    grid = np.linspace(-30, 10, 9)
    assert sp.is_dispersion_like(grid, np.sin(grid / 10))
    assert sp.is_dispersion_like(grid, -(grid + 10) ** 2 + 500)
    assert not sp.is_dispersion_like(grid, grid + 100)


def test_small_map_rows_dispersion_like(small_map):
    assert small_map.delta.shape == (5, 5)
    assert all(sp.is_dispersion_like(small_map.probe_grid, r) for r in small_map.delta)


def test_map_interpolation_hits_nodes(small_map):
    for g, row in zip(small_map.g0_grid, small_map.delta):
        assert np.allclose(small_map.at(g, small_map.probe_grid), row, atol=1e-9)


def test_map_interpolation_domain(small_map):
    with pytest.raises(DomainError):
        small_map.at(mhz(16), [mhz(5.0)])


def test_map_json_round_trip(tmp_path, small_map):
    path = tmp_path / "m.json"
    small_map.to_json(path)
    back = sp.DeltaMap.from_json(path)
    assert np.allclose(back.delta, small_map.delta, rtol=1e-14)
    assert set(__import__("json").loads(path.read_text())) == {"g0_mhz", "delta_p_mhz", "delta_mhz"}
    with pytest.raises(ValidationError):
        sp.DeltaMap.from_json('{"g0_mhz": [1]}')


def test_map_validation():
    with pytest.raises(ValidationError):
        sp.DeltaMap([1, 2], [1, 2, 3], np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        sp.build_delta_map(mhz(np.linspace(14, 18, 3)), mhz(np.linspace(-28, -8, 5)), model.probe_params())


def test_fit_g0_noiseless_round_trip(small_map):
    probes = mhz(np.linspace(-27, -9, 8))
    truth = mhz(15.3)
    pts = [sp.ShiftPoint(p, d, mhz(0.1)) for p, d in zip(probes, small_map.at(truth, probes))]
    fit = sp.fit_g0(pts, small_map)
    assert fit.g0 == pytest.approx(truth, rel=1e-7)
    assert fit.chi2 < 1e-10
    assert 0 < fit.stderr < mhz(0.2)


def test_fit_g0_boundary_and_size_errors(small_map):
    probes = mhz(np.linspace(-27, -9, 8))
    far = small_map.at(small_map.g0_grid[-1], probes) * 1.5
    with pytest.raises(ExtrapolationError):
        sp.fit_g0([sp.ShiftPoint(p, d, mhz(0.1)) for p, d in zip(probes, far)], small_map)
    with pytest.raises(ValidationError):
        sp.fit_g0([sp.ShiftPoint(mhz(-10), 0.0, 1.0)] * 3, small_map)


def test_shift_points_csv_round_trip(tmp_path):
    pts = [sp.ShiftPoint(mhz(-20), mhz(8.1), mhz(0.1)), sp.ShiftPoint(mhz(-10), mhz(9.2), mhz(0.2))]
    path = tmp_path / "s.csv"
    sp.write_shift_points(path, pts)
    back = sp.read_shift_points(path)
    assert [to_mhz(p.shift) for p in back] == pytest.approx([8.1, 9.2])
    assert "delta_p_mhz,delta_mhz,stderr" in path.read_text()
    with pytest.raises(ValidationError):
        sp.ShiftPoint(0.0, 0.0, -1.0)
