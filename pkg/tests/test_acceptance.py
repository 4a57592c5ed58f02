"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ioncavity import localization as loc
from ioncavity import model, qdyn, sequence, shuttle, spectroscopy
from ioncavity.qdyn import CollapseChannel, DensityMatrix, HilbertSpace, MasterEquation, Operator
from ioncavity.selftest import random_density_matrix, random_master_equation
from ioncavity.units import mhz, to_mhz, us

K = 2 * math.pi / 866e-9


def report(n, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail} ({elapsed:.2f} s, limit {limit:g} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_localisation_ladder():
    t0 = time.perf_counter()
    hot = loc.spread(loc.thermal_sigma(8.5e-3)) * 1e9
    cold = loc.spread(loc.thermal_sigma(2.1e-3)) * 1e9
    ok = abs(hot - 110) <= 2 and abs(cold - 55) <= 1
    report(1, ok, f"spread 8.5 mK = {hot:.2f} nm, 2.1 mK = {cold:.2f} nm", time.perf_counter() - t0, 1)


def test_criterion_02_effective_coupling_ratios():
    t0 = time.perf_counter()
    cold = loc.effective_coupling(1.0, loc.thermal_sigma(2.1e-3), K)
    hot = loc.effective_coupling(1.0, loc.thermal_sigma(8.5e-3), K)
    ok = abs(cold - 16.7 / 17.3) <= 0.01 and abs(hot - 15.2 / 17.3) <= 0.03
    report(2, ok, f"g_eff/g0 = {cold:.4f} (2.1 mK), {hot:.4f} (8.5 mK)", time.perf_counter() - t0, 1)


@pytest.fixture(scope="module")
def default_map():
    t0 = time.perf_counter()
    dmap = spectroscopy.build_delta_map(mhz(spectroscopy.DEFAULT_G0_GRID_MHZ),
                                        mhz(spectroscopy.DEFAULT_PROBE_GRID_MHZ), model.probe_params())
    return dmap, time.perf_counter() - t0


def test_criterion_03_g0_round_trip(default_map):
    dmap, build = default_map
    t0 = time.perf_counter()
    probes = mhz(np.linspace(-27.5, -10.0, 8))
    noise = mhz(0.1)
    rates = {}
    for g0 in (16.7, 15.2):
        clean = dmap.at(mhz(g0), probes)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            pts = [spectroscopy.ShiftPoint(p, d + rng.normal(0, noise), noise) for p, d in zip(probes, clean)]
            hits += abs(to_mhz(spectroscopy.fit_g0(pts, dmap).g0) - g0) <= 0.2
        rates[g0] = hits / 100
    ok = all(r >= 0.95 for r in rates.values())
    detail = ", ".join(f"g0 {g:.1f} MHz recovered in {100 * r:.0f}%" for g, r in rates.items())
    report(3, ok, detail, build + time.perf_counter() - t0, 600)


def test_criterion_04_dispersion_like_rows(default_map):
    dmap, build = default_map
    t0 = time.perf_counter()
    g = to_mhz(dmap.g0_grid)
    rows = dmap.delta[(g >= 14 - 1e-9) & (g <= 18 + 1e-9)]
    flags = [spectroscopy.is_dispersion_like(dmap.probe_grid, r) for r in rows]
    report(4, all(flags) and len(flags) >= 5, f"{sum(flags)}/{len(flags)} rows dispersion-like",
           build + time.perf_counter() - t0, 600)


def test_criterion_05_quadratic_emission():
    t0 = time.perf_counter()
    g = np.array([0.1, 0.2, 0.4])
    p = [model.photon_probability(model.probe_params(g0_mhz=v)) for v in g]
    slope = np.polyfit(np.log(g), np.log(p), 1)[0]
    report(5, abs(slope - 2) <= 0.05, f"log-log slope {slope:.4f}", time.perf_counter() - t0, 60)


def test_criterion_06_plateau_structure():
    t0 = time.perf_counter()
    p = model.probe_params(g0_mhz=17.3, rabi_mhz=11.8, probe_detuning_mhz=-10.0)
    p = p.with_(cavity_detuning=model.raman_peak_detuning(p))
    curve = loc.EmissionCurve(p)
    x = np.linspace(-100e-9, 1000e-9, 1101)
    antinode = p.cavity.node_spacing / 2
    dist = loc.PositionDistribution(0.0, 38.5e-9)
    scan = loc.standing_wave_scan(x, p, dist, curve=curve)
    window = np.abs(x - antinode) <= 60e-9
    plateau = scan.emission[window].min() / scan.emission.max()
    wide = loc.standing_wave_scan(x, p, loc.PositionDistribution(0.0, 77.5e-9), curve=curve)
    gap = loc.visibility(scan) - loc.visibility(wide)
    ok = plateau >= 0.9 and gap >= 0.05
    report(6, ok, f"plateau min/peak {plateau:.3f}, visibility gap {gap:.3f}", time.perf_counter() - t0, 300)


def test_criterion_07_sequence_timing():
    t0 = time.perf_counter()
    sw = sequence.standing_wave_sequence()
    rate = sw.repetition_rate
    (_, start, stop), = sw.gate_windows()
    settle = sw.phase("II-settle").duration
    cool = sequence.coupling_measurement_sequence().phases[1]
    offset = cool.cavity_detuning - cool.pump_detuning
    ok = (abs(rate - 91e3) <= 0.01 * 91e3 and math.isclose(stop - start, us(0.3), rel_tol=1e-12)
          and math.isclose(settle, us(1.7), rel_tol=1e-12) and math.isclose(cool.duration, us(6.0), rel_tol=1e-12)
          and math.isclose(offset, mhz(7.0), rel_tol=1e-12))
    detail = (f"rate {rate / 1e3:.2f} kHz, gate {(stop - start) * 1e9:.0f} ns, settle {settle * 1e6:.1f} us, "
              f"cooling {cool.duration * 1e6:.1f} us at +{to_mhz(offset):.1f} MHz")
    report(7, ok, detail, time.perf_counter() - t0, 1)


def test_criterion_08_empty_cavity_reference():
    t0 = time.perf_counter()
    kappa = model.CavityParams().kappa
    grid = np.linspace(-3, 3, 61) * kappa
    scan = spectroscopy.RamanScan(0.0, grid, model.empty_cavity_scan(grid, kappa), np.zeros(grid.size))
    fwhm = to_mhz(spectroscopy.fit_lorentzian(scan).fwhm)
    report(8, abs(fwhm - 8.2) <= 0.01 * 8.2, f"fitted FWHM {fwhm:.4f} MHz", time.perf_counter() - t0, 1)


def _liouvillian_gap(me):
    ev = np.linalg.eigvals(me.liouvillian)
    re = np.sort(-ev.real)
    return re[1]


def test_criterion_09_engine_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_phys = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 6))
        me = random_master_equation(rng, dim, channels=int(rng.integers(1, 4)))
        rho, _ = qdyn.propagate(random_density_matrix(rng, dim), me, rng.uniform(0.01, 5.0))
        a = rho.elements
        worst_phys = max(worst_phys, abs(np.trace(a) - 1), np.max(np.abs(a - a.conj().T)),
                         -min(0.0, np.linalg.eigvalsh(a)[0]))
    worst_ss = 0.0
    worst_cross = 0.0
    for _ in range(20):
        dim = int(rng.integers(2, 5))
        me = random_master_equation(rng, dim)
        ss = qdyn.steady_state(me)
        worst_ss = max(worst_ss, np.max(np.abs(qdyn.lindblad_derivative(ss, me))) / me.scale)
        horizon = 30.0 / _liouvillian_gap(me)
        final = qdyn.evolve(random_density_matrix(rng, dim), me, horizon, tol=1e-10)[-1][1]
        worst_cross = max(worst_cross, np.max(np.abs(final.elements - ss.elements)))
    qubit = HilbertSpace((2,))
    sm = Operator(qubit, np.array([[0, 1], [0, 0]]))
    up = DensityMatrix.basis_state(qubit, 1)
    down = DensityMatrix.basis_state(qubit, 0)
    gamma, rabi = 1.3, 2.1
    worst_2l = 0.0
    for t in (0.2, 1.0, 3.0):
        decay = qdyn.evolve(up, MasterEquation(Operator.zero(qubit), [CollapseChannel(sm, gamma)]), t, tol=1e-10)
        worst_2l = max(worst_2l, abs(decay[-1][1].elements[1, 1].real - math.exp(-gamma * t)))
        h = Operator(qubit, np.array([[0, rabi / 2], [rabi / 2, 0]]))
        osc = qdyn.evolve(down, MasterEquation(h), t, tol=1e-10)
        worst_2l = max(worst_2l, abs(osc[-1][1].elements[1, 1].real - math.sin(rabi * t / 2) ** 2))
    ok = worst_phys < 1e-10 and worst_ss < 1e-10 and worst_cross < 1e-6 and worst_2l < 1e-6
    detail = (f"physicality {worst_phys:.1e}, steady residual {worst_ss:.1e}, "
              f"evolve vs steady {worst_cross:.1e}, two-level {worst_2l:.1e}")
    report(9, ok, detail, time.perf_counter() - t0, 300)


def test_criterion_10_shuttle_adiabaticity():
    t0 = time.perf_counter()
    omega = mhz(2.73)
    step = shuttle.spectral_leakage(shuttle.rectangular_step(1.0, 4e-6), omega)
    rises = [0.5e-6, 1.0e-6, 2.0e-6]
    leaks = [shuttle.spectral_leakage(shuttle.generate_waveform(shuttle.ShuttlePulse(1.0, r)), omega)
             for r in rises]
    best = step / leaks[1]
    ok = best >= 1e3 and all(b < a for a, b in zip(leaks, leaks[1:]))
    detail = f"step/BNW at 1 us = {best:.2e}, leakage vs rise {', '.join(f'{v:.1e}' for v in leaks)}"
    report(10, ok, detail, time.perf_counter() - t0, 10)
