"""Gaussian localisation of the ion along the cavity axis.

Thermal motion and micromotion both enter as Gaussian position spreads and are
combined in quadrature.  The micromotion width at ion position ``x`` is
(q/2)|x - x0|, with ``x0`` the position of the micromotion minimum measured in
the same frame as ``x`` (origin at the cooling node).

"Spread" means the 1/e half-width of the position density, sqrt(2) * sigma.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lombscargle
from scipy.special import roots_hermite

from . import model
from .errors import ConvergenceError, QuadratureError, UnidentifiableError, ValidationError
from .model import SystemParams
from .units import K_B, MASS_CA40, mhz

GH_ORDER = 21
GH_MAX_ORDER = 21 * 2**6


@dataclass(frozen=True)
class TrapParams:
    omega_ax: float = mhz(2.73)
    q_param: float | None = None
    drive_freq: float = mhz(19.55)
    mass: float = MASS_CA40

    def __post_init__(self):
        if self.q_param is None:
            # lowest-order pseudopotential relation, a = 0: omega = q Omega / (2 sqrt 2)
            object.__setattr__(self, "q_param", 2 * math.sqrt(2) * self.omega_ax / self.drive_freq)
        if min(self.omega_ax, self.q_param, self.drive_freq, self.mass) <= 0:
            raise ValidationError("trap parameters must be positive")
        if self.q_param >= 1:
            raise ValidationError("q parameter must be < 1")


@dataclass(frozen=True)
class PositionDistribution:
    mean: float = 0.0
    sigma_thermal: float = 0.0
    sigma_micromotion: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.sigma_thermal < 0 or self.sigma_micromotion < 0:
            raise ValidationError("position widths must be >= 0")

    @property
    def sigma(self) -> float:
        return math.hypot(self.sigma_thermal, self.sigma_micromotion)

    def at(self, mean: float, trap: TrapParams | None = None) -> PositionDistribution:
        """Same thermal width and micromotion minimum, centred at ``mean``.

        With a trap the micromotion width is recomputed for the new position.
        """
        mm = self.sigma_micromotion if trap is None else micromotion_sigma(mean - self.x0, trap)
        return PositionDistribution(mean, self.sigma_thermal, mm, self.x0)


def thermal_sigma(T: float, trap: TrapParams = TrapParams()) -> float:
    """Equipartition width sqrt(kB T / (m omega^2)) of a thermal harmonic oscillator."""
    if T < 0:
        raise ValidationError("temperature must be >= 0")
    return math.sqrt(K_B * T / (trap.mass * trap.omega_ax**2))


def spread(sigma: float) -> float:
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    return math.sqrt(2.0) * sigma


def sigma_from_spread(s: float) -> float:
    if s < 0:
        raise ValidationError("spread must be >= 0")
    return s / math.sqrt(2.0)


def temperature_from_spread(s: float, trap: TrapParams = TrapParams()) -> float:
    sigma = sigma_from_spread(s)
    return trap.mass * trap.omega_ax**2 * sigma**2 / K_B


def micromotion_sigma(x0: float, trap: TrapParams = TrapParams()) -> float:
    """Micromotion position width (q/2)|x0| at distance ``x0`` from the rf null."""
    if not math.isfinite(x0):
        raise ValidationError("x0 must be finite")
    return 0.5 * trap.q_param * abs(x0)


@lru_cache(maxsize=32)
def _hermgauss(order: int):
    x, w = roots_hermite(order)
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


def gauss_average(curve: Callable, means, sigmas, order: int = GH_ORDER) -> np.ndarray:
    """Fixed-order Gauss-Hermite average of ``curve`` over N(mean, sigma^2), vectorised."""
    means = np.atleast_1d(np.asarray(means, dtype=float))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), means.shape)
    x, w = _hermgauss(order)
    pts = means[:, None] + sigmas[:, None] * x[None, :]
    return np.asarray(curve(pts.ravel()), dtype=float).reshape(pts.shape) @ w


def converged_order(curve: Callable, means, sigmas, order: int = GH_ORDER, rtol: float = 1e-6) -> int:
    """Smallest doubling of ``order`` whose result changes by < rtol on the next doubling."""
    prev = gauss_average(curve, means, sigmas, order)
    while order * 2 <= GH_MAX_ORDER:
        cur = gauss_average(curve, means, sigmas, order * 2)
        scale = np.maximum(np.abs(cur), np.max(np.abs(cur)) * 1e-12 + 1e-300)
        if np.all(np.abs(cur - prev) <= rtol * scale):
            return order
        order *= 2
        prev = cur
    raise QuadratureError(f"Gauss-Hermite average not converged at order {order}")


def smear(curve: Callable, dist: PositionDistribution, order: int = GH_ORDER, rtol: float = 1e-6) -> float:
    """Average of ``curve`` over the Gaussian position distribution ``dist``."""
    if dist.sigma == 0:
        return float(np.asarray(curve(np.array([dist.mean]))).ravel()[0])
    order = converged_order(curve, [dist.mean], [dist.sigma], order, rtol)
    return float(gauss_average(curve, [dist.mean], [dist.sigma], order * 2)[0])


def effective_coupling(g0: float, sigma: float, k: float, moment: str = "first") -> float:
    """Coupling of an ion smeared around an antinode.

    ``moment="first"`` gives g0 <cos kx> = g0 exp(-k^2 sigma^2 / 2);
    ``moment="second"`` gives the rms value g0 sqrt(<cos^2 kx>).
    """
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    a = (k * sigma) ** 2
    if moment == "first":
        return g0 * math.exp(-a / 2)
    if moment == "second":
        return g0 * math.sqrt(0.5 * (1 + math.exp(-2 * a)))
    raise ValidationError(f"unknown moment {moment!r}")


class EmissionCurve:
    """Photon probability tabulated against local coupling, P(g).

    P is an even, analytic function of g, so it is interpolated as a
    Chebyshev series in u = (g/g0)^2 on [0, 1].  Composed with the sinusoidal
    mode function this keeps the position profile analytic, which is what
    Gauss-Hermite averaging needs to converge quickly.
    """

    def __init__(self, params: SystemParams, nodes: int = 40,
                 probe_duration: float = model.DEFAULT_PROBE_DURATION):
        self.params = params
        g0 = params.cavity.g0
        self._series = None
        if g0 == 0:
            return
        u = 0.5 * (1 - np.cos(np.pi * (np.arange(nodes) + 0.5) / nodes))
        self.g = g0 * np.sqrt(u)
        antinode = params.cavity.node_spacing / 2
        self.p = np.array([
            model.photon_probability(params.with_(g0=g, position=antinode),
                                     probe_duration=probe_duration)
            for g in self.g
        ])
        self._series = np.polynomial.Chebyshev.fit(u, self.p, nodes - 1, domain=[0.0, 1.0])
        # The position profile is a polynomial of degree nodes-1 in sin^2(kx), i.e. a
        # trigonometric polynomial in 2kx; 4*nodes samples per period resolve it exactly.
        n = 4 * nodes
        xs = np.arange(n) * params.cavity.node_spacing / n
        self._fourier = np.fft.rfft(self(xs)) / n
        self._harmonics = np.arange(len(self._fourier))

    def of_coupling(self, g):
        g = np.asarray(g, dtype=float)
        if self._series is None:
            return np.zeros_like(g)
        return self._series((g / self.params.cavity.g0) ** 2)

    def __call__(self, x):
        """Photon probability at position(s) x (from the reference node)."""
        kx = self.params.cavity.k * np.asarray(x, dtype=float)
        if self._series is None:
            return np.zeros_like(kx)
        return self._series(np.sin(kx) ** 2)

    def smeared(self, means, sigmas) -> np.ndarray:
        """Exact Gaussian averages of the periodic profile via its Fourier series."""
        means = np.atleast_1d(np.asarray(means, dtype=float))
        sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), means.shape)
        if self._series is None:
            return np.zeros_like(means)
        kk = 2 * self.params.cavity.k * self._harmonics
        phase = np.exp(1j * np.outer(means, kk)) * np.exp(-0.5 * np.outer(sigmas, kk) ** 2)
        c = self._fourier.copy()
        c[1:] *= 2
        return (phase @ c).real


@dataclass
class StandingWaveScan:
    position_ctrl: np.ndarray
    emission: np.ndarray
    stderr: np.ndarray
    normalised: bool = False

    def __post_init__(self):
        self.position_ctrl = np.asarray(self.position_ctrl, dtype=float)
        self.emission = np.asarray(self.emission, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.position_ctrl.shape == self.emission.shape == self.stderr.shape):
            raise ValidationError("scan columns differ in length")
        if np.any(self.stderr < 0):
            raise ValidationError("standard errors must be >= 0")

    def __len__(self):
        return len(self.position_ctrl)

    def normalise(self) -> StandingWaveScan:
        top = np.max(self.emission)
        if top <= 0:
            raise ValidationError("cannot normalise a scan with no positive value")
        return StandingWaveScan(self.position_ctrl, self.emission / top, self.stderr / top, True)

    def to_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position_ctrl", "emission", "stderr"])
            for row in zip(self.position_ctrl, self.emission, self.stderr):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> StandingWaveScan:
        rows = _read_csv(path, ["position_ctrl", "emission", "stderr"])
        return cls(*rows)


def _read_csv(path, columns):
    with open(Path(path), encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != columns:
        raise ValidationError(f"{path}: expected header {','.join(columns)}")
    cols = [[] for _ in columns]
    for row in reader:
        for i, c in enumerate(columns):
            cols[i].append(float(row[c]))
    return [np.array(c) for c in cols]


def _total_sigma(x, sigma, x0, q):
    return np.sqrt(sigma**2 + (0.5 * q * (x - x0)) ** 2)


def smeared_profile(curve: Callable, positions, sigma: float, x0: float,
                    trap: TrapParams | None, order: int | None = None) -> np.ndarray:
    """Curve averaged over each position's distribution (thermal + micromotion)."""
    x = np.asarray(positions, dtype=float)
    q = 0.0 if trap is None else trap.q_param
    s = _total_sigma(x, sigma, x0, q)
    if np.all(s == 0):
        return np.asarray(curve(x), dtype=float)
    if hasattr(curve, "smeared"):
        return curve.smeared(x, s)
    if order is None:
        order = converged_order(curve, x, s) * 2
    return gauss_average(curve, x, s, order)


def standing_wave_scan(positions, params: SystemParams, dist: PositionDistribution,
                       trap: TrapParams | None = None, normalise: bool = False,
                       curve: EmissionCurve | None = None, stderr=None) -> StandingWaveScan:
    """Smeared photon probability at each ion position (metres, from the node).

    The returned scan's control coordinate is the position in nm.  Without a
    trap the micromotion width of ``dist`` is used unchanged at every point.
    """
    x = np.asarray(positions, dtype=float)
    if x.size == 0:
        raise ValidationError("positions must be non-empty")
    curve = EmissionCurve(params) if curve is None else curve
    if trap is None:
        vals = smeared_profile(curve, x, dist.sigma, 0.0, None)
    else:
        vals = smeared_profile(curve, x, dist.sigma_thermal, dist.x0, trap)
    err = np.zeros_like(vals) if stderr is None else np.broadcast_to(stderr, vals.shape).astype(float)
    scan = StandingWaveScan(x * 1e9, vals, err)
    return scan.normalise() if normalise else scan


@dataclass
class StandingWaveFit:
    x_scale: float
    y_scale: float
    sigma: float
    x0: float
    residual: float
    covariance: np.ndarray = field(repr=False)
    chi2: float = 0.0
    gradient_norm: float = 0.0
    curve: EmissionCurve | None = field(default=None, repr=False)
    trap: TrapParams | None = field(default=None, repr=False)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def model(self, ctrl):
        """Fitted emission at control coordinate(s)."""
        x = self.x_scale * np.asarray(ctrl, dtype=float)
        return self.y_scale * smeared_profile(self.curve, x, self.sigma, self.x0, self.trap)


def _period_guess(ctrl, y) -> float:
    span = np.ptp(ctrl)
    diffs = np.diff(np.sort(ctrl))
    dmin = np.min(diffs[diffs > 0])
    periods = np.linspace(3 * dmin, span, 400)
    power = lombscargle(ctrl, y - y.mean(), 2 * np.pi / periods)
    return float(periods[np.argmax(power)])


def fit_standing_wave(data: StandingWaveScan, params: SystemParams, trap: TrapParams | None = None,
                      curve: EmissionCurve | None = None, p0=None, restarts: int = 6,
                      tol: float = 1e-12) -> StandingWaveFit:
    """Weighted least-squares fit of (x_scale, y_scale, sigma, x0) to a scan.

    ``p0`` (x_scale, y_scale, sigma, x0) seeds the first start; the remaining
    starts vary sigma and x0 over a coarse grid.  The best converged start wins.
    """
    ctrl, y, err = data.position_ctrl, data.emission, data.stderr
    if len(ctrl) < 8:
        raise ValidationError("standing-wave fit needs at least 8 points")
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300) or (
        np.any(err > 0) and np.ptp(y) < np.median(err[err > 0])
    ):
        raise UnidentifiableError("scan is flat; position scale and width are unidentifiable")
    w = np.where(err > 0, 1.0 / np.where(err > 0, err, 1.0), 1.0)
    curve = EmissionCurve(params) if curve is None else curve
    lam2 = params.cavity.node_spacing
    q = 0.0 if trap is None else trap.q_param

    if p0 is None:
        xs0 = lam2 / _period_guess(ctrl, y)
        top = float(np.max(curve(np.linspace(0, lam2, 201))))
        p0 = (xs0, np.max(y) / max(top, 1e-300), 50e-9, 0.5 * lam2)
    xs0, ys0, s0, x00 = p0
    if np.ptp(ctrl) * xs0 < lam2 * 0.95:
        raise ValidationError("scan must span at least one standing-wave period")

    # Parameters scaled to O(1): x_scale/xs0, y_scale/ys0, sigma/100nm, x0/100nm.
    unit = np.array([xs0, ys0, 1e-7, 1e-7])

    def resid(u):
        xsc, ysc, sig, x0 = u * unit
        x = xsc * ctrl
        m = ysc * curve.smeared(x, _total_sigma(x, sig, x0, q))
        return (m - y) * w

    starts = [np.array([1.0, 1.0, s0 / 1e-7, x00 / 1e-7])]
    if trap is not None:
        x_lo, x_hi = np.min(ctrl) * xs0, np.max(ctrl) * xs0
        for s in (0.3, 0.8):
            for xf in (0.25, 0.75):
                starts.append(np.array([1.0, 1.0, s, (x_lo + xf * (x_hi - x_lo)) / 1e-7]))
    starts = starts[: max(1, restarts)]
    lower = [1e-6, 1e-9, 0.0, -np.inf]
    upper = [np.inf, np.inf, np.inf, np.inf]
    if trap is None:
        lower[3], upper[3] = -1e-9, 1e-9

    best = None
    for u0 in starts:
        u0 = np.clip(u0, np.array(lower) + 1e-12, upper)
        try:
            res = least_squares(resid, u0, bounds=(lower, upper), method="trf",
                                x_scale="jac", ftol=tol, xtol=tol, gtol=tol, max_nfev=2000)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None or best.status <= 0:
        raise ConvergenceError("standing-wave fit did not converge",
                               residual=None if best is None else 2 * best.cost)
    u = best.x
    xsc, ysc, sig, x0 = u * unit
    dof = max(1, len(y) - 4)
    chi2 = float(2 * best.cost)
    try:
        cov = np.linalg.pinv(best.jac.T @ best.jac) * np.outer(unit, unit)
    except np.linalg.LinAlgError:
        cov = np.full((4, 4), np.nan)
    if not np.any(err > 0):
        cov = cov * chi2 / dof
    if trap is None:
        cov[3, :] = cov[:, 3] = 0.0
        x0 = 0.0
    return StandingWaveFit(
        x_scale=float(xsc), y_scale=float(ysc), sigma=float(sig), x0=float(x0),
        residual=float(np.sqrt(np.mean(best.fun**2))), covariance=cov, chi2=chi2,
        gradient_norm=float(best.optimality), curve=curve, trap=trap,
    )


def visibility(scan: StandingWaveScan, model_fn: Callable | None = None, samples: int = 2001) -> float:
    """(max - min)/(max + min) of a standing-wave scan.

    With ``model_fn`` (e.g. ``StandingWaveFit.model``) the extrema are taken
    from the fitted curve on a dense grid over the scanned range instead of
    the raw points.
    """
    if len(scan) == 0:
        raise ValidationError("visibility of an empty scan")
    if model_fn is None:
        v = scan.emission
    else:
        v = np.asarray(model_fn(np.linspace(scan.position_ctrl.min(), scan.position_ctrl.max(), samples)))
    hi, lo = float(np.max(v)), float(np.min(v))
    if hi + lo == 0:
        raise ValidationError("visibility undefined: max + min = 0")
    return (hi - lo) / (hi + lo)
