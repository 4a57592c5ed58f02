"""Built-in invariant checks run by ``ioncavity selftest``.

Each check returns ``(name, ok, detail)``.  The checks are cheap versions of
the engine properties the test suite covers in depth.
"""

from __future__ import annotations

import math

import numpy as np

from . import model, qdyn, sequence, shuttle
from .qdyn import CollapseChannel, DensityMatrix, HilbertSpace, MasterEquation, Operator


def random_master_equation(rng: np.random.Generator, dim: int, channels: int = 2,
                           scale: float = 1.0) -> MasterEquation:
    """Random Hermitian H and random collapse operators on a ``dim``-level space."""
    space = HilbertSpace((dim,))
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = Operator(space, scale * 0.5 * (a + a.conj().T))
    chans = []
    for _ in range(channels):
        l = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        chans.append(CollapseChannel(Operator(space, l / np.linalg.norm(l)), scale * rng.uniform(0.1, 2.0)))
    return MasterEquation(h, chans)


def random_density_matrix(rng: np.random.Generator, dim: int) -> DensityMatrix:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return DensityMatrix(HilbertSpace((dim,)), rho / np.trace(rho).real)


def check_random_evolution(rng, systems: int = 50):
    worst = 0.0
    for _ in range(systems):
        dim = int(rng.integers(2, 5))
        me = random_master_equation(rng, dim)
        rho, _ = qdyn.propagate(random_density_matrix(rng, dim), me, rng.uniform(0.1, 3.0))
        a = rho.elements
        worst = max(worst, abs(np.trace(a) - 1), np.max(np.abs(a - a.conj().T)),
                    -min(0.0, np.linalg.eigvalsh(a)[0]))
    return "random evolution keeps trace/Hermiticity/positivity", worst < 1e-8, f"worst {worst:.2e}"


def check_steady_state(rng, systems: int = 20):
    worst = 0.0
    for _ in range(systems):
        me = random_master_equation(rng, int(rng.integers(2, 5)))
        rho = qdyn.steady_state(me)
        worst = max(worst, np.max(np.abs(qdyn.lindblad_derivative(rho, me))) / me.scale)
    return "steady-state residual", worst < 1e-10, f"worst relative {worst:.2e}"


def check_two_level_decay():
    space = HilbertSpace((2,))
    gamma, t = 1.3, 0.7
    sm = Operator(space, np.array([[0, 1], [0, 0]]))
    me = MasterEquation(Operator.zero(space), [CollapseChannel(sm, gamma)])
    rho, _ = qdyn.propagate(DensityMatrix.basis_state(space, 1), me, t)
    err = abs(rho.elements[1, 1].real - math.exp(-gamma * t))
    return "two-level decay", err < 1e-10, f"error {err:.2e}"


def check_cg_sum_rule():
    ion = model.IonLevels()
    worst = 0.0
    for p in model.P_LEVELS:
        for lower in (model.S_LEVELS, model.D_LEVELS):
            total = sum(model.clebsch_gordan(ion.J(i), ion.m(i), int(ion.m(p) - ion.m(i)), ion.J(p), ion.m(p)) ** 2
                        for i in lower if abs(ion.m(p) - ion.m(i)) <= 1)
            worst = max(worst, abs(total - 1))
    return "Clebsch-Gordan sum rule", worst < 1e-12, f"worst {worst:.2e}"


def check_bnw():
    t = np.linspace(0, 1, 101)
    w = shuttle.bnw(t, 1.0)
    ok = abs(shuttle.bnw(0.5, 1.0) - 1) < 1e-12 and np.allclose(w, w[::-1], atol=1e-15)
    return "Blackman-Nuttall peak and symmetry", ok, f"peak {shuttle.bnw(0.5, 1.0):.10f}"


def check_sequence_rate():
    rate = sequence.standing_wave_sequence().repetition_rate
    return "standing-wave cycle rate", abs(rate - 91e3) <= 0.01 * 91e3, f"{rate / 1e3:.2f} kHz"


def run(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    return [
        check_random_evolution(rng),
        check_steady_state(rng),
        check_two_level_decay(),
        check_cg_sum_rule(),
        check_bnw(),
        check_sequence_rate(),
    ]
