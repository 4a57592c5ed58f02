"""40Ca+ (8 Zeeman sublevels) coupled to a bimodal cavity.

Level order in the ion factor::

    0, 1      S1/2  m = -1/2, +1/2
    2, 3      P1/2  m = -1/2, +1/2
    4 .. 7    D3/2  m = -3/2 .. +3/2

Rotating frame: S at zero energy, P at -Δp, D (with the photon energy folded
in) at Δc - Δp, so the bare Raman resonance sits at Δc = Δp.

Linewidth convention: ``kappa`` is the FWHM of the empty-cavity transmission
Lorentzian and equals the photon (intensity) decay rate; each mode's collapse
operator is sqrt(kappa) * a.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt

import numpy as np

from . import qdyn
from .errors import ValidationError
from .qdyn import CollapseChannel, DensityMatrix, HilbertSpace, MasterEquation, Operator
from .units import mhz

S_LEVELS = (0, 1)
P_LEVELS = (2, 3)
D_LEVELS = (4, 5, 6, 7)
N_ION = 8

DEFAULT_PROBE_DURATION = 300e-9


def _half(x) -> Fraction:
    f = Fraction(x).limit_denominator(2)
    if f.denominator not in (1, 2):
        raise ValidationError(f"{x} is not a half-integer")
    return f


def _fact(x: Fraction) -> int:
    if x.denominator != 1 or x < 0:
        raise ValueError
    return factorial(int(x))


@lru_cache(maxsize=None)
def _cg(j1: Fraction, m1: Fraction, j2: Fraction, m2: Fraction, j: Fraction, m: Fraction) -> float:
    # Racah's closed form for <j1 m1; j2 m2 | j m>.
    if m1 + m2 != m:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m) > j:
        return 0.0
    if not abs(j1 - j2) <= j <= j1 + j2 or (j1 + j2 + j).denominator != 1:
        return 0.0
    pref = (2 * j + 1) * _fact(j1 + j2 - j) * _fact(j1 - j2 + j) * _fact(-j1 + j2 + j)
    pref = Fraction(pref, _fact(j1 + j2 + j + 1))
    pref *= (
        _fact(j1 + m1) * _fact(j1 - m1) * _fact(j2 + m2) * _fact(j2 - m2)
        * _fact(j + m) * _fact(j - m)
    )
    total = Fraction(0)
    kmin = max(0, int(j2 - j - m1), int(j1 + m2 - j))
    kmax = min(int(j1 + j2 - j), int(j1 - m1), int(j2 + m2))
    for k in range(kmin, kmax + 1):
        den = (
            factorial(k) * _fact(j1 + j2 - j - k) * _fact(j1 - m1 - k)
            * _fact(j2 + m2 - k) * _fact(j - j2 + m1 + k) * _fact(j - j1 - m2 + k)
        )
        total += Fraction((-1) ** k, den)
    return float(np.sign(total)) * sqrt(float(pref * total * total))


@lru_cache(maxsize=None)
def clebsch_gordan(J, m, q, J2, m2) -> float:
    """Coupling coefficient <1 q; J m | J2 m2> for a dipole transition.

    The photon (rank 1, component q) is coupled first.  Returns 0 when the
    selection rule m2 = m + q fails.
    """
    J, m, J2, m2 = _half(J), _half(m), _half(J2), _half(m2)
    if q not in (-1, 0, 1):
        raise ValidationError(f"q must be -1, 0 or +1, got {q}")
    if abs(m) > J or abs(m2) > J2:
        raise ValidationError(f"|m| exceeds J in ({J}, {m}) or ({J2}, {m2})")
    return _cg(Fraction(1), Fraction(q), J, m, J2, m2)


def _unit_polarization(eps, what) -> np.ndarray:
    e = np.asarray(eps, dtype=complex)
    if e.shape != (3,):
        raise ValidationError(f"{what} polarization needs three spherical components")
    if abs(np.vdot(e, e).real - 1.0) > 1e-10:
        raise ValidationError(f"{what} polarization is not normalised")
    return e


@dataclass(frozen=True)
class IonLevels:
    gamma_p: float = mhz(11.5)
    branching_s: float = 0.936
    branching_d: float = 0.064
    zeeman_shifts: tuple[float, ...] = (0.0,) * N_ION
    sublevels: tuple[tuple[str, Fraction, Fraction], ...] = field(
        default=(
            ("S1/2", Fraction(1, 2), Fraction(-1, 2)),
            ("S1/2", Fraction(1, 2), Fraction(1, 2)),
            ("P1/2", Fraction(1, 2), Fraction(-1, 2)),
            ("P1/2", Fraction(1, 2), Fraction(1, 2)),
            ("D3/2", Fraction(3, 2), Fraction(-3, 2)),
            ("D3/2", Fraction(3, 2), Fraction(-1, 2)),
            ("D3/2", Fraction(3, 2), Fraction(1, 2)),
            ("D3/2", Fraction(3, 2), Fraction(3, 2)),
        ),
        repr=False,
    )

    def __post_init__(self):
        if len(self.sublevels) != N_ION or len(self.zeeman_shifts) != N_ION:
            raise ValidationError("exactly 8 sublevels are required")
        if not self.gamma_p > 0:
            raise ValidationError("gamma_p must be positive")
        if min(self.branching_s, self.branching_d) < 0 or abs(
            self.branching_s + self.branching_d - 1.0
        ) > 1e-12:
            raise ValidationError("branching fractions must be >= 0 and sum to 1")

    def J(self, i):
        return self.sublevels[i][1]

    def m(self, i):
        return self.sublevels[i][2]


@dataclass(frozen=True)
class LaserField:
    """Pump/probe on S1/2 <-> P1/2; ``polarization`` is (eps_-1, eps_0, eps_+1)."""

    rabi: float
    detuning: float
    polarization: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if not self.rabi >= 0:
            raise ValidationError("Rabi frequency must be >= 0")
        _unit_polarization(self.polarization, "laser")


@dataclass(frozen=True)
class CavityParams:
    g0: float = mhz(17.3)
    kappa: float = mhz(8.2)
    detuning: float = mhz(-10.0)
    mode_polarizations: tuple = ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0))
    n_max: int = 1
    wavelength: float = 866e-9

    def __post_init__(self):
        if not self.g0 >= 0:
            raise ValidationError("g0 must be >= 0")
        if not self.kappa > 0:
            raise ValidationError("kappa must be positive")
        if int(self.n_max) < 1:
            raise ValidationError("n_max must be >= 1")
        if len(self.mode_polarizations) != 2:
            raise ValidationError("a bimodal cavity needs two mode polarizations")
        e1, e2 = (_unit_polarization(e, "cavity mode") for e in self.mode_polarizations)
        if abs(np.vdot(e1, e2)) > 1e-10:
            raise ValidationError("cavity mode polarizations are not orthogonal")

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def node_spacing(self) -> float:
        return self.wavelength / 2


@dataclass(frozen=True)
class SystemParams:
    ion: IonLevels = IonLevels()
    cavity: CavityParams = CavityParams()
    lasers: tuple[LaserField, ...] = (LaserField(mhz(11.8), mhz(-10.0)),)
    position: float = 216.5e-9
    coupling_phase_origin: str = "node"
    repump_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lasers", tuple(self.lasers))
        if len(self.lasers) != 1:
            raise ValidationError("exactly one pump laser per master-equation build")
        if not np.isfinite(self.position):
            raise ValidationError("position must be finite")
        if self.coupling_phase_origin not in ("node", "antinode"):
            raise ValidationError("coupling_phase_origin must be 'node' or 'antinode'")
        if not self.repump_rate >= 0:
            raise ValidationError("repump rate must be >= 0")

    @property
    def pump(self) -> LaserField:
        return self.lasers[0]

    def with_(self, **changes) -> SystemParams:
        """Copy with top-level, cavity (``g0``, ``cavity_detuning`` ...) or pump changes."""
        cav = {k: changes.pop(k) for k in ("g0", "kappa", "n_max") if k in changes}
        if "cavity_detuning" in changes:
            cav["detuning"] = changes.pop("cavity_detuning")
        pump = {}
        if "rabi" in changes:
            pump["rabi"] = changes.pop("rabi")
        if "probe_detuning" in changes:
            pump["detuning"] = changes.pop("probe_detuning")
        out = self
        if cav:
            out = replace(out, cavity=replace(out.cavity, **cav))
        if pump:
            out = replace(out, lasers=(replace(out.pump, **pump),))
        return replace(out, **changes) if changes else out


def probe_params(g0_mhz=17.3, probe_detuning_mhz=-10.0, cavity_detuning_mhz=None,
                 rabi_mhz=11.8, position=216.5e-9) -> SystemParams:
    """Probe-phase defaults (Ω = 2π×11.8 MHz, Δp = -2π×10 MHz, ion at the antinode)."""
    if cavity_detuning_mhz is None:
        cavity_detuning_mhz = probe_detuning_mhz
    return SystemParams(
        cavity=CavityParams(g0=mhz(g0_mhz), detuning=mhz(cavity_detuning_mhz)),
        lasers=(LaserField(mhz(rabi_mhz), mhz(probe_detuning_mhz)),),
        position=position,
    )


def local_coupling(x: float, cavity: CavityParams, origin: str = "node"):
    """Coherent coupling at displacement ``x`` from the reference node (or antinode)."""
    kx = cavity.k * np.asarray(x, dtype=float)
    g = cavity.g0 * (np.sin(kx) if origin == "node" else np.cos(kx))
    return g if np.ndim(g) else float(g)


def model_space(cavity: CavityParams) -> HilbertSpace:
    n = int(cavity.n_max) + 1
    return HilbertSpace((N_ION, n, n))


@lru_cache(maxsize=256)
def _ion_op(space, i, j) -> Operator:
    a = np.zeros((N_ION, N_ION))
    a[i, j] = 1.0
    return qdyn.embed(a, space, 0)


@lru_cache(maxsize=16)
def annihilation(space: HilbertSpace, mode: int) -> Operator:
    n = space.factor_dims[1 + mode]
    a = np.diag(np.sqrt(np.arange(1, n)), 1)
    return qdyn.embed(a, space, 1 + mode)


@lru_cache(maxsize=16)
def _decay_operators(ion: IonLevels, lower, branching):
    """One jump operator per photon polarization q for P1/2 -> lower manifold."""
    ops = []
    for q in (-1, 0, 1):
        a = np.zeros((N_ION, N_ION))
        for lo in lower:
            for up in P_LEVELS:
                if ion.m(up) == ion.m(lo) + q:
                    a[lo, up] = clebsch_gordan(ion.J(lo), ion.m(lo), q, ion.J(up), ion.m(up))
        if np.any(a):
            ops.append((a, ion.gamma_p * branching))
    return ops


def build_system(params: SystemParams) -> MasterEquation:
    ion, cav, pump = params.ion, params.cavity, params.pump
    space = model_space(cav)
    dim = space.total_dim
    h = np.zeros((dim, dim), dtype=complex)

    diag = np.zeros(N_ION)
    diag[list(P_LEVELS)] = -pump.detuning
    diag[list(D_LEVELS)] = cav.detuning - pump.detuning
    diag += np.asarray(ion.zeeman_shifts, dtype=float)
    h += qdyn.embed(np.diag(diag), space, 0).elements

    eps = _unit_polarization(pump.polarization, "laser")
    if pump.rabi > 0:
        for s in S_LEVELS:
            for p in P_LEVELS:
                q = int(ion.m(p) - ion.m(s))
                if q in (-1, 0, 1) and eps[q + 1] != 0:
                    c = 0.5 * pump.rabi * eps[q + 1] * clebsch_gordan(
                        ion.J(s), ion.m(s), q, ion.J(p), ion.m(p))
                    h += c * _ion_op(space, p, s).elements

    g = local_coupling(params.position, cav, params.coupling_phase_origin)
    a_ops = [annihilation(space, i) for i in (0, 1)]
    if g != 0:
        for mode, e in enumerate(cav.mode_polarizations):
            e = np.asarray(e, dtype=complex)
            adag = a_ops[mode].dag().elements
            for d in D_LEVELS:
                for p in P_LEVELS:
                    q = int(ion.m(p) - ion.m(d))
                    if q in (-1, 0, 1) and e[q + 1] != 0:
                        c = g * np.conj(e[q + 1]) * clebsch_gordan(
                            ion.J(d), ion.m(d), q, ion.J(p), ion.m(p))
                        h += c * (adag @ _ion_op(space, d, p).elements)
    # couplings were written below the diagonal only
    low = np.tril(h, -1)
    h = low + low.conj().T + np.diag(h.diagonal().real)

    channels = []
    for lower, b in ((S_LEVELS, ion.branching_s), (D_LEVELS, ion.branching_d)):
        for a, rate in _decay_operators(ion, lower, b):
            channels.append(CollapseChannel(qdyn.embed(a, space, 0), rate))
    for a in a_ops:
        channels.append(CollapseChannel(a, cav.kappa))
    if params.repump_rate > 0:
        for d in D_LEVELS:
            for s in S_LEVELS:
                channels.append(
                    CollapseChannel(_ion_op(space, s, d), params.repump_rate / len(S_LEVELS)))
    return MasterEquation(Operator(space, h), channels)


@lru_cache(maxsize=16)
def photon_number(space: HilbertSpace) -> Operator:
    a1, a2 = annihilation(space, 0), annihilation(space, 1)
    return a1.dag() @ a1 + a2.dag() @ a2


def emission_rate(rho: DensityMatrix, params: SystemParams) -> float:
    """Photon flux out of both cavity modes, κ(<n1> + <n2>), in photons/s."""
    n = photon_number(rho.space)
    return max(0.0, params.cavity.kappa * qdyn.expectation(rho, n).real)


def ground_state(space: HilbertSpace) -> DensityMatrix:
    """Ion equally mixed over S1/2 sublevels, both modes in vacuum."""
    a = np.zeros((space.total_dim,) * 2, dtype=complex)
    for s in S_LEVELS:
        i = space.index(s, 0, 0)
        a[i, i] = 1.0 / len(S_LEVELS)
    return DensityMatrix(space, a)


def _restrict(me: MasterEquation, rho0: DensityMatrix, observable: Operator | None = None):
    # Reachable block, minus absorbing states on which the observable vanishes.
    seeds = np.flatnonzero(np.abs(rho0.elements).sum(axis=0) > 0)
    idx = me.reachable(seeds)
    if observable is not None:
        o = observable.elements
        drop = {j for j in me.sinks(idx)
                if j not in seeds and not np.any(o[j, :]) and not np.any(o[:, j])}
        idx = [j for j in idx if j not in drop]
    if len(idx) == me.space.total_dim or len(idx) < 2:
        return me, rho0, None
    sub = me.restricted(idx)
    r0 = DensityMatrix(sub.space, rho0.elements[np.ix_(idx, idx)])
    return sub, r0, idx


def photon_probability(params: SystemParams, rho0: DensityMatrix | None = None,
                       probe_duration: float = DEFAULT_PROBE_DURATION,
                       method: str = "propagator", tol: float = 1e-9) -> float:
    """Expected number of photons leaving the cavity during the probe pulse.

    ``method="propagator"`` integrates κ<n> with the exact exponential of the
    (time-independent) Liouvillian; ``method="evolve"`` integrates the same
    quantity along the adaptive Runge-Kutta trajectory.
    """
    if not probe_duration > 0:
        raise ValidationError("probe duration must be positive")
    me = build_system(params)
    if rho0 is None:
        rho0 = ground_state(me.space)
    if params.cavity.g0 == 0 and params.repump_rate == 0:
        return 0.0
    n_op = photon_number(me.space)
    sub, r0, idx = _restrict(me, rho0, n_op)
    n_sub = n_op if idx is None else Operator(sub.space, n_op.elements[np.ix_(idx, idx)])
    if method == "propagator":
        _, integral = qdyn.propagate(r0, sub, probe_duration, observable=n_sub)
        value = integral.real
    elif method == "evolve":
        lv = sub.liouvillian
        o = n_sub.elements.T.ravel()

        def rhs(t, y):
            d = lv @ y[:-1]
            return np.append(d, o @ y[:-1])

        _, ys = qdyn.integrate(rhs, np.append(r0.elements.ravel(), 0.0), probe_duration,
                               rtol=tol, atol=tol * 1e-2)
        value = ys[-1][-1].real
    else:
        raise ValidationError(f"unknown method {method!r}")
    return max(0.0, params.cavity.kappa * value)


def empty_cavity_scan(detunings, kappa: float) -> np.ndarray:
    """Empty-cavity transmission, peak-normalised Lorentzian with FWHM ``kappa``."""
    d = np.asarray(detunings, dtype=float)
    return 1.0 / (1.0 + (2.0 * d / kappa) ** 2)


def raman_peak_detuning(params: SystemParams, span: float | None = None,
                        probe_duration: float = DEFAULT_PROBE_DURATION) -> float:
    """Cavity detuning that maximises the photon probability at ``params.position``.

    Searched over Δp - span .. Δp + span (default span 3κ) on a coarse grid,
    then refined by bounded Brent maximisation around the best node.
    """
    from scipy.optimize import minimize_scalar

    dp = params.pump.detuning
    span = 3 * params.cavity.kappa if span is None else span

    def neg(dc):
        return -photon_probability(params.with_(cavity_detuning=dc), probe_duration=probe_duration)

    grid = np.linspace(dp - span, dp + span, 25)
    vals = [neg(d) for d in grid]
    i = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(neg, bounds=(grid[i] - step, grid[i] + step), method="bounded",
                          options={"xatol": 1e-6 * params.cavity.kappa})
    return float(res.x)
