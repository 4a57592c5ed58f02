import math
from fractions import Fraction

import numpy as np
import pytest
from sympy import Rational
from sympy.physics.quantum.cg import CG

from ioncavity import model, qdyn
from ioncavity.errors import ValidationError
from ioncavity.model import CavityParams, LaserField, SystemParams
from ioncavity.qdyn import DensityMatrix
from ioncavity.units import mhz

HALF = Fraction(1, 2)
ANTINODE = 866e-9 / 4


def sympy_cg(J, m, q, J2, m2):
    r = lambda x: Rational(x.numerator, x.denominator)  # noqa: E731
    return float(CG(1, q, r(Fraction(J)), r(Fraction(m)), r(Fraction(J2)), r(Fraction(m2))).doit())


def test_cg_reference_values():
    assert model.clebsch_gordan(HALF, HALF, 0, HALF, HALF) == pytest.approx(-1 / math.sqrt(3), abs=1e-15)
    assert model.clebsch_gordan(HALF, -HALF, 1, HALF, HALF) == pytest.approx(math.sqrt(2 / 3), abs=1e-15)


def test_cg_matches_sympy_for_all_transitions():
    for J in (HALF, Fraction(3, 2)):
        ms = [Fraction(k, 2) for k in range(-int(2 * J), int(2 * J) + 1, 2)]
        for m in ms:
            for q in (-1, 0, 1):
                for m2 in (-HALF, HALF):
                    assert model.clebsch_gordan(J, m, q, HALF, m2) == pytest.approx(
                        sympy_cg(J, m, q, HALF, m2), abs=1e-14)


def test_cg_selection_rule_gives_zero():
    assert model.clebsch_gordan(HALF, HALF, 1, HALF, HALF) == 0.0
    assert model.clebsch_gordan(Fraction(3, 2), Fraction(3, 2), 1, HALF, HALF) == 0.0


def test_cg_completeness_for_each_upper_sublevel():
    ion = model.IonLevels()
    for p in model.P_LEVELS:
        for lower in (model.S_LEVELS, model.D_LEVELS):
            total = 0.0
            for i in lower:
                q = ion.m(p) - ion.m(i)
                if abs(q) <= 1:
                    total += model.clebsch_gordan(ion.J(i), ion.m(i), int(q), ion.J(p), ion.m(p)) ** 2
            assert total == pytest.approx(1.0, abs=1e-14)


def test_parameter_validation():
    with pytest.raises(ValidationError):
        model.IonLevels(branching_s=0.9, branching_d=0.2)
    with pytest.raises(ValidationError):
        LaserField(1.0, 0.0, polarization=(1.0, 1.0, 0.0))
    with pytest.raises(ValidationError):
        CavityParams(kappa=0.0)
    with pytest.raises(ValidationError):
        CavityParams(mode_polarizations=((0, 0, 1), (0, 0, 1)))
    with pytest.raises(ValidationError):
        SystemParams(lasers=(LaserField(1, 0), LaserField(1, 0)))
    with pytest.raises(ValidationError):
        SystemParams(coupling_phase_origin="peak")


def test_with_routes_changes():
    p = model.probe_params().with_(g0=mhz(5), cavity_detuning=mhz(3), rabi=mhz(2),
                                   probe_detuning=mhz(-4), position=1e-7)
    assert p.cavity.g0 == mhz(5) and p.cavity.detuning == mhz(3)
    assert p.pump.rabi == mhz(2) and p.pump.detuning == mhz(-4)
    assert p.position == 1e-7


def test_probe_params_defaults():
    p = model.probe_params()
    assert p.pump.rabi == pytest.approx(mhz(11.8))
    assert p.cavity.detuning == p.pump.detuning == pytest.approx(mhz(-10))
    assert p.position == pytest.approx(ANTINODE)


def test_local_coupling_standing_wave():
    cav = CavityParams()
    assert model.local_coupling(0.0, cav) == 0.0
    assert model.local_coupling(ANTINODE, cav) == pytest.approx(cav.g0)
    assert model.local_coupling(0.0, cav, "antinode") == pytest.approx(cav.g0)
    assert cav.node_spacing == pytest.approx(433e-9)


def test_hamiltonian_hermitian_and_space():
    me = model.build_system(model.probe_params())
    assert me.space.factor_dims == (8, 2, 2)
    assert me.hamiltonian.is_hermitian()


def test_bare_decay_rate_and_branching():
    # pump off, ion at the node: a P1/2 population decays at gamma into S and D
    p = model.probe_params(rabi_mhz=0.0, position=0.0)
    me = model.build_system(p)
    space = me.space
    rho0 = DensityMatrix.basis_state(space, space.index(3, 0, 0))
    t = 20e-9
    rho, _ = qdyn.propagate(rho0, me, t)
    pops = rho.elements.diagonal().real.reshape(8, 2, 2).sum(axis=(1, 2))
    gamma = p.ion.gamma_p
    assert pops[list(model.P_LEVELS)].sum() == pytest.approx(math.exp(-gamma * t), rel=1e-10)
    lost = 1 - math.exp(-gamma * t)
    assert pops[list(model.S_LEVELS)].sum() == pytest.approx(0.936 * lost, rel=1e-10)
    assert pops[list(model.D_LEVELS)].sum() == pytest.approx(0.064 * lost, rel=1e-10)


def test_photon_leaks_at_kappa():
    # one photon in mode 0 and no coupling: emitted number is 1 - exp(-kappa T)
    p = model.probe_params(rabi_mhz=0.0, position=0.0)
    space = model.model_space(p.cavity)
    rho0 = DensityMatrix.basis_state(space, space.index(0, 1, 0))
    T = 30e-9
    got = model.photon_probability(p, rho0=rho0, probe_duration=T)
    assert got == pytest.approx(1 - math.exp(-p.cavity.kappa * T), rel=1e-10)


def test_photon_probability_methods_agree():
    p = model.probe_params()
    a = model.photon_probability(p)
    b = model.photon_probability(p, method="evolve", tol=1e-10)
    assert 0 < a < 1
    assert a == pytest.approx(b, rel=1e-7)


def test_photon_probability_zero_without_coupling():
    assert model.photon_probability(model.probe_params(g0_mhz=0.0)) == 0.0
    assert model.photon_probability(model.probe_params(position=0.0)) == pytest.approx(0.0, abs=1e-15)


def test_photon_probability_rejects_bad_input():
    with pytest.raises(ValidationError):
        model.photon_probability(model.probe_params(), probe_duration=0.0)
    with pytest.raises(ValidationError):
        model.photon_probability(model.probe_params(), method="magic")


def test_restriction_matches_full_space():
    p = model.probe_params()
    me = model.build_system(p)
    rho0 = model.ground_state(me.space)
    n_op = model.photon_number(me.space)
    _, full = qdyn.propagate(rho0, me, model.DEFAULT_PROBE_DURATION, observable=n_op)
    assert model.photon_probability(p) == pytest.approx(p.cavity.kappa * full.real, rel=1e-9)


def test_small_coupling_scales_quadratically():
    ps = [model.photon_probability(model.probe_params(g0_mhz=g)) for g in (0.1, 0.2)]
    assert ps[1] / ps[0] == pytest.approx(4.0, rel=1e-3)


def test_emission_rate_nonnegative():
    me = model.build_system(model.probe_params())
    rho, _ = qdyn.propagate(model.ground_state(me.space), me, 50e-9)
    assert model.emission_rate(rho, model.probe_params()) > 0


def test_empty_cavity_lorentzian():
    k = mhz(8.2)
    assert np.allclose(model.empty_cavity_scan([0.0, k / 2, -k / 2], k), [1.0, 0.5, 0.5])


def test_raman_peak_is_a_local_maximum():
    p = model.probe_params()
    dc = model.raman_peak_detuning(p)
    top = model.photon_probability(p.with_(cavity_detuning=dc))
    for step in (-mhz(0.5), mhz(0.5)):
        assert model.photon_probability(p.with_(cavity_detuning=dc + step)) < top
