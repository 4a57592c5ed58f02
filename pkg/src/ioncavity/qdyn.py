"""Small dense open-quantum-system engine.

Operators live on a composite Hilbert space (ion x cavity mode x cavity mode);
everything is a dense complex matrix because the spaces used here never exceed
a few dozen states.  Density matrices are vectorised row-major, so

    vec(A @ rho @ B) = kron(A, B.T) @ vec(rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import expm_multiply

from .errors import AmbiguityError, IntegrationError, NumericalError, ValidationError

HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True)
class HilbertSpace:
    factor_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims:
            raise ValidationError("a Hilbert space needs at least one factor")
        if dims[0] < 2 or any(d < 1 for d in dims):
            raise ValidationError(f"invalid factor dimensions {dims}")
        object.__setattr__(self, "factor_dims", dims)

    @property
    def total_dim(self) -> int:
        return math.prod(self.factor_dims)

    def index(self, *labels: int) -> int:
        """Flat basis index of a product state given one label per factor."""
        return int(np.ravel_multi_index(labels, self.factor_dims))


@dataclass(frozen=True, eq=False)
class Operator:
    space: HilbertSpace
    elements: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.elements, dtype=complex)
        n = self.space.total_dim
        if a.shape != (n, n):
            raise ValidationError(f"operator shape {a.shape} does not match dimension {n}")
        object.__setattr__(self, "elements", a)

    def dag(self) -> Operator:
        return Operator(self.space, self.elements.conj().T)

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        a = self.elements
        scale = np.max(np.abs(a)) if a.size else 0.0
        if scale == 0.0:
            return True
        return np.max(np.abs(a - a.conj().T)) < rtol * scale

    def __add__(self, other: Operator) -> Operator:
        _same_space(self.space, other.space)
        return Operator(self.space, self.elements + other.elements)

    def __sub__(self, other: Operator) -> Operator:
        _same_space(self.space, other.space)
        return Operator(self.space, self.elements - other.elements)

    def __matmul__(self, other: Operator) -> Operator:
        _same_space(self.space, other.space)
        return Operator(self.space, self.elements @ other.elements)

    def __mul__(self, scalar) -> Operator:
        return Operator(self.space, self.elements * scalar)

    __rmul__ = __mul__

    @classmethod
    def zero(cls, space: HilbertSpace) -> Operator:
        return cls(space, np.zeros((space.total_dim,) * 2, dtype=complex))

    @classmethod
    def identity(cls, space: HilbertSpace) -> Operator:
        return cls(space, np.eye(space.total_dim, dtype=complex))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated density matrix.

    Construction checks Hermiticity (1e-10 relative), unit trace (1e-8) and
    numerical positivity (smallest eigenvalue >= -1e-8); pass ``check=False``
    to skip this for intermediate results.
    """

    space: HilbertSpace
    elements: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        a = np.asarray(self.elements, dtype=complex)
        n = self.space.total_dim
        if a.shape != (n, n):
            raise ValidationError(f"density matrix shape {a.shape} does not match dimension {n}")
        object.__setattr__(self, "elements", a)
        if self.check:
            self.validate()

    def validate(self, herm_tol=1e-10, trace_tol=1e-8, pos_tol=1e-8):
        a = self.elements
        scale = max(np.max(np.abs(a)), 1.0)
        if np.max(np.abs(a - a.conj().T)) > herm_tol * scale:
            raise ValidationError("density matrix is not Hermitian")
        tr = np.trace(a)
        if abs(tr - 1.0) > trace_tol:
            raise ValidationError(f"density matrix trace {tr.real:.12g} is not 1")
        lam = np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0]
        if lam < -pos_tol:
            raise ValidationError(f"density matrix has negative eigenvalue {lam:.3g}")

    @classmethod
    def basis_state(cls, space: HilbertSpace, index: int) -> DensityMatrix:
        a = np.zeros((space.total_dim,) * 2, dtype=complex)
        a[index, index] = 1.0
        return cls(space, a)

    @classmethod
    def from_ket(cls, space: HilbertSpace, ket) -> DensityMatrix:
        psi = np.asarray(ket, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(space, np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, space: HilbertSpace) -> DensityMatrix:
        n = space.total_dim
        return cls(space, np.eye(n, dtype=complex) / n)

    def populations(self) -> np.ndarray:
        return self.elements.diagonal().real.copy()


@dataclass(frozen=True, eq=False)
class CollapseChannel:
    operator: Operator
    rate: float

    def __post_init__(self):
        if not self.rate >= 0.0:
            raise ValidationError(f"collapse rate must be >= 0, got {self.rate}")


@dataclass(frozen=True, eq=False)
class MasterEquation:
    """H plus collapse channels.

    ``loss`` is only set on blocks cut out of a larger system by
    :meth:`restricted`: it carries the part of sum_k rate_k L_k^dag L_k whose
    jumps land outside the block, so such blocks do not conserve trace.
    """

    hamiltonian: Operator
    channels: tuple[CollapseChannel, ...] = ()
    loss: Operator | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        for ch in self.channels:
            _same_space(self.space, ch.operator.space)
        if self.loss is not None:
            _same_space(self.space, self.loss.space)
        if not self.hamiltonian.is_hermitian():
            raise ValidationError("Hamiltonian is not Hermitian")

    @property
    def space(self) -> HilbertSpace:
        return self.hamiltonian.space

    @cached_property
    def effective_hamiltonian(self) -> np.ndarray:
        """H - (i/2) sum_k rate_k L_k^dag L_k."""
        h = self.hamiltonian.elements.copy()
        for ch in self.channels:
            l = ch.operator.elements
            h = h - 0.5j * ch.rate * (l.conj().T @ l)
        if self.loss is not None:
            h = h - 0.5j * self.loss.elements
        return h

    @cached_property
    def liouvillian(self) -> np.ndarray:
        n = self.space.total_dim
        eye = np.eye(n)
        heff = self.effective_hamiltonian
        sup = -1j * (np.kron(heff, eye) - np.kron(eye, heff.conj()))
        for ch in self.channels:
            if ch.rate == 0.0:
                continue
            l = ch.operator.elements
            sup = sup + ch.rate * np.kron(l, l.conj())
        return sup

    @cached_property
    def scale(self) -> float:
        """Max-norm of H plus the summed channel rates; a natural residual unit."""
        h = np.max(np.abs(self.hamiltonian.elements))
        return float(h + sum(ch.rate for ch in self.channels))

    def reachable(self, seeds: Sequence[int]) -> list[int]:
        """Basis indices reachable from ``seeds`` through H or any jump operator.

        Any density matrix supported on the returned block stays there under
        the dynamics, so the master equation can be restricted to it exactly.
        """
        adj = np.abs(self.hamiltonian.elements) > 0
        adj = adj | adj.T
        for ch in self.channels:
            if ch.rate > 0.0:
                adj = adj | (np.abs(ch.operator.elements) > 0)
        seen = set(int(s) for s in seeds)
        frontier = list(seen)
        while frontier:
            j = frontier.pop()
            for i in np.flatnonzero(adj[:, j]):
                i = int(i)
                if i not in seen:
                    seen.add(i)
                    frontier.append(i)
        return sorted(seen)

    def sinks(self, indices: Sequence[int]) -> list[int]:
        """Members of ``indices`` that nothing ever leaves (absorbing states).

        A sink has no off-diagonal Hamiltonian element and no jump operator
        acting on it.  Population still flows in, but no coherence with the
        rest of the system is ever created.
        """
        h = self.hamiltonian.elements
        out = []
        for j in indices:
            col = np.abs(h[:, j]).copy()
            col[j] = 0.0
            if np.any(col > 0) or np.any(np.abs(h[j, :][np.arange(len(h)) != j]) > 0):
                continue
            if any(ch.rate > 0 and np.any(ch.operator.elements[:, j] != 0) for ch in self.channels):
                continue
            out.append(int(j))
        return out

    def restricted(self, indices: Sequence[int]) -> MasterEquation:
        """The master equation on a block of basis states.

        Exact for states supported on the block as long as nothing flows back
        into it from outside (true for reachable sets and for reachable sets
        minus sinks).  Jumps leaving the block show up as ``loss``.
        """
        idx = np.asarray(indices)
        if len(idx) < 2:
            raise ValidationError("restricted block needs at least two states")
        sub = HilbertSpace((len(idx),))
        h = Operator(sub, self.hamiltonian.elements[np.ix_(idx, idx)])
        chans, loss = [], np.zeros((len(idx),) * 2, dtype=complex)
        for ch in self.channels:
            full = ch.operator.elements
            part = full[np.ix_(idx, idx)]
            loss += ch.rate * ((full.conj().T @ full)[np.ix_(idx, idx)] - part.conj().T @ part)
            chans.append(CollapseChannel(Operator(sub, part), ch.rate))
        if self.loss is not None:
            loss += self.loss.elements[np.ix_(idx, idx)]
        leaky = np.max(np.abs(loss)) > 0
        return MasterEquation(h, tuple(chans), Operator(sub, loss) if leaky else None)


def _same_space(a: HilbertSpace, b: HilbertSpace):
    if a != b:
        raise ValidationError(f"Hilbert spaces differ: {a.factor_dims} vs {b.factor_dims}")


def embed(op, space: HilbertSpace, slot: int) -> Operator:
    """Lift a single-factor operator to the full space (identity elsewhere)."""
    a = op.elements if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if not 0 <= slot < len(space.factor_dims):
        raise ValidationError(f"slot {slot} out of range for {space.factor_dims}")
    if a.shape != (space.factor_dims[slot],) * 2:
        raise ValidationError(
            f"operator of shape {a.shape} cannot act on factor {slot} of dimension "
            f"{space.factor_dims[slot]}"
        )
    factors = [np.eye(d) for d in space.factor_dims]
    factors[slot] = a
    return Operator(space, reduce(np.kron, factors))


def lindblad_derivative(rho, me: MasterEquation) -> np.ndarray:
    r = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if r.shape != (me.space.total_dim,) * 2:
        raise ValidationError("density matrix does not match the master equation space")
    heff = me.effective_hamiltonian
    out = -1j * (heff @ r - r @ heff.conj().T)
    for ch in me.channels:
        if ch.rate:
            l = ch.operator.elements
            out += ch.rate * (l @ r @ l.conj().T)
    return out


def expectation(rho: DensityMatrix, op: Operator) -> complex:
    _same_space(rho.space, op.space)
    return complex(np.sum(op.elements.T * rho.elements))


# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B - _B_LOW
ORDER = 5


def integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    duration: float,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    fixed_step: float | None = None,
    max_steps: int = 1_000_000,
):
    """Dormand-Prince 5(4) integration of y' = f(t, y) over [0, duration].

    Adaptive unless ``fixed_step`` is given (then the propagating 5th-order
    solution is used with no error control).  Returns ``(ts, ys)``.
    """
    t = 0.0
    y = np.asarray(y0, dtype=complex).copy()
    ts, ys = [t], [y.copy()]
    k = np.empty((7,) + y.shape, dtype=complex)
    k[0] = f(t, y)
    if fixed_step is not None:
        n = max(1, int(round(duration / fixed_step)))
        h = duration / n
    else:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
        d1 = np.sqrt(np.mean(np.abs(k[0] / scale) ** 2))
        h = 1e-6 * duration if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h = min(h, duration)
    steps = 0
    while t < duration:
        if steps >= max_steps:
            raise IntegrationError(f"step limit reached at t={t:.6g}", t_reached=t)
        h = min(h, duration - t)
        if h <= 1e-14 * max(abs(t), duration):
            raise IntegrationError(f"step size underflow at t={t:.6g}", t_reached=t)
        for s in range(1, 7):
            dy = sum(a * k[j] for j, a in enumerate(_A[s]) if a)
            k[s] = f(t + _C[s] * h, y + h * dy)
        y_new = y + h * np.tensordot(_B, k, axes=1)
        steps += 1
        if fixed_step is not None:
            t = duration if steps == n else steps * h
            y = y_new
            k[0] = k[6]
            ts.append(t)
            ys.append(y.copy())
            continue
        err = h * np.tensordot(_E, k, axes=1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = np.sqrt(np.mean(np.abs(err / scale) ** 2))
        if not np.isfinite(en):
            raise IntegrationError(f"non-finite state at t={t:.6g}", t_reached=t)
        if en <= 1.0:
            t += h
            y = y_new
            k[0] = k[6]
            ts.append(t)
            ys.append(y.copy())
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** (-1 / ORDER))
        else:
            fac = max(0.2, 0.9 * en ** (-1 / ORDER))
        h *= fac
    return np.array(ts), ys


def evolve(
    rho0: DensityMatrix,
    me: MasterEquation,
    duration: float,
    tol: float = 1e-8,
    fixed_step: float | None = None,
) -> list[tuple[float, DensityMatrix]]:
    """Integrate the master equation from ``rho0`` for ``duration`` seconds.

    Returns the accepted steps as ``(t, rho)`` pairs, starting with ``(0, rho0)``.
    """
    _same_space(rho0.space, me.space)
    if not duration > 0:
        raise ValidationError("duration must be positive")
    if not 1e-14 < tol < 1e-3:
        raise ValidationError(f"tolerance {tol} outside (1e-14, 1e-3)")
    n = me.space.total_dim
    lv = me.liouvillian
    ts, ys = integrate(
        lambda t, y: lv @ y, rho0.elements.ravel(), duration,
        rtol=tol, atol=tol, fixed_step=fixed_step,
    )
    return [(float(t), DensityMatrix(me.space, y.reshape(n, n))) for t, y in zip(ts, ys)]


def _expm_action(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    # Dense Pade is faster than the Krylov-free Taylor action for small blocks.
    if a.shape[0] <= 400:
        return la.expm(a) @ v
    return expm_multiply(a, v)


def propagate(rho0: DensityMatrix, me: MasterEquation, duration: float, observable=None):
    """Exact propagation under a time-independent generator.

    Returns ``(rho(T), integral)`` where ``integral`` is the time integral of
    ``<observable>`` over [0, T] (``None`` when no observable is given).  Uses
    the action of the matrix exponential of the Liouvillian, augmented by one
    row that accumulates the expectation value.
    """
    _same_space(rho0.space, me.space)
    n = me.space.total_dim
    lv = me.liouvillian
    v = rho0.elements.ravel()
    if observable is None:
        out = _expm_action(lv * duration, v)
        return DensityMatrix(me.space, out.reshape(n, n), check=False), None
    o = observable.elements if isinstance(observable, Operator) else np.asarray(observable)
    aug = np.zeros((n * n + 1, n * n + 1), dtype=complex)
    aug[: n * n, : n * n] = lv
    aug[n * n, : n * n] = o.T.ravel()
    w = _expm_action(aug * duration, np.append(v, 0.0))
    rho = DensityMatrix(me.space, w[: n * n].reshape(n, n), check=False)
    return rho, complex(w[-1])


def nullity(me: MasterEquation, rtol: float = 1e-9) -> int:
    """Numerical dimension of the Liouvillian null space (pivoted QR)."""
    r = la.qr(me.liouvillian, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(r))
    return int(np.sum(d <= rtol * d[0]))


def steady_state(me: MasterEquation, check_unique: bool = True) -> DensityMatrix:
    """Unique stationary state from the Liouvillian null space.

    One row of L vec(rho) = 0 is replaced by the trace condition and the
    resulting dense system is solved directly.
    """
    n = me.space.total_dim
    if check_unique:
        k = nullity(me)
        if k > 1:
            raise AmbiguityError(
                f"Liouvillian null space has dimension {k}; steady state is not unique",
                nullity=k,
            )
    a = me.liouvillian.copy()
    b = np.zeros(n * n, dtype=complex)
    a[0, :] = 0.0
    a[0, np.arange(n) * (n + 1)] = 1.0
    b[0] = 1.0
    try:
        x = la.solve(a, b)
    except la.LinAlgError as exc:
        raise AmbiguityError(f"steady-state system is singular: {exc}") from exc
    rho = x.reshape(n, n)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    resid = np.max(np.abs(lindblad_derivative(rho, me)))
    if resid > 1e-10 * max(me.scale, 1e-300):
        raise NumericalError(f"steady-state residual {resid:.3g} above tolerance")
    return DensityMatrix(me.space, rho)
