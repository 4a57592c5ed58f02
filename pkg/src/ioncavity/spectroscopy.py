"""Raman-resonance spectroscopy and map-based extraction of g0.

Chain: cavity-detuning scan at fixed probe detuning -> Lorentzian centre ->
shift δ = centre - Δp -> δ(g0, Δp) map -> one-parameter χ² fit of g0.
File formats quote frequencies as frequency/2π in MHz.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import brentq, least_squares, minimize_scalar

from . import model
from .errors import (BracketError, ConvergenceError, DomainError, ExtrapolationError,
                     NumericalError, ValidationError)
from .localization import _read_csv
from .model import SystemParams
from .units import mhz, to_mhz

log = logging.getLogger(__name__)

SCAN_POINTS = 41
SCAN_HALF_WIDTH_KAPPA = 3.0
DEFAULT_G0_GRID_MHZ = np.linspace(12.0, 18.0, 13)
DEFAULT_PROBE_GRID_MHZ = np.linspace(-30.0, 10.0, 17)


@dataclass
class RamanScan:
    probe_detuning: float
    cavity_detuning: np.ndarray
    emission: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        self.cavity_detuning = np.asarray(self.cavity_detuning, dtype=float)
        self.emission = np.asarray(self.emission, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.cavity_detuning.shape == self.emission.shape == self.stderr.shape):
            raise ValidationError("Raman scan columns differ in length")
        if len(self.cavity_detuning) < 8:
            raise ValidationError("a Raman scan needs at least 8 points")
        if np.any(np.diff(self.cavity_detuning) <= 0):
            raise ValidationError("cavity detunings must be strictly increasing")
        if np.any(self.stderr < 0):
            raise ValidationError("standard errors must be >= 0")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# frequencies in MHz (value/2pi)\n")
            fh.write(f"# delta_p_mhz={to_mhz(self.probe_detuning)!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta_c_mhz", "emission", "stderr"])
            for dc, e, s in zip(self.cavity_detuning, self.emission, self.stderr):
                w.writerow([repr(float(to_mhz(dc))), repr(float(e)), repr(float(s))])

    @classmethod
    def from_csv(cls, path, probe_detuning: float | None = None) -> RamanScan:
        if probe_detuning is None:
            with open(path, encoding="utf-8") as fh:
                for ln in fh:
                    if ln.startswith("#") and "delta_p_mhz=" in ln:
                        probe_detuning = mhz(float(ln.split("delta_p_mhz=")[1]))
            if probe_detuning is None:
                raise ValidationError(f"{path}: probe detuning not given")
        dc, e, s = _read_csv(path, ["delta_c_mhz", "emission", "stderr"])
        return cls(probe_detuning, mhz(dc), e, s)


@dataclass
class LorentzianFitResult:
    center: float
    fwhm: float
    amplitude: float
    offset: float
    covariance: np.ndarray = field(repr=False)
    chi2: float = 0.0

    def __call__(self, x):
        return lorentzian(x, self.center, self.fwhm, self.amplitude, self.offset)


@dataclass(frozen=True)
class ShiftPoint:
    probe_detuning: float
    shift: float
    stderr: float

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValidationError("shift standard error must be >= 0")


def lorentzian(x, center, fwhm, amplitude, offset):
    return offset + amplitude / (1.0 + (2.0 * (np.asarray(x) - center) / fwhm) ** 2)


def scan_window(probe_detuning: float, kappa: float, points: int = SCAN_POINTS) -> np.ndarray:
    h = SCAN_HALF_WIDTH_KAPPA * kappa
    return np.linspace(probe_detuning - h, probe_detuning + h, points)


def raman_scan(probe_detuning: float, cavity_detunings, params: SystemParams,
               probe_duration: float = model.DEFAULT_PROBE_DURATION) -> RamanScan:
    """Photon probability versus cavity detuning at fixed probe detuning."""
    dcs = np.asarray(cavity_detunings, dtype=float)
    p = params.with_(probe_detuning=probe_detuning)
    em = [model.photon_probability(p.with_(cavity_detuning=dc), probe_duration=probe_duration)
          for dc in dcs]
    return RamanScan(probe_detuning, dcs, np.array(em), np.zeros(len(dcs)))


def fit_lorentzian(scan: RamanScan, tol: float = 1e-14) -> LorentzianFitResult:
    """Weighted least-squares Lorentzian (with offset) through a Raman scan."""
    x, y, err = scan.cavity_detuning, scan.emission, scan.stderr
    i = int(np.argmax(y))
    if i == 0 or i == len(y) - 1:
        raise BracketError("scan maximum lies on the edge; no interior peak to fit")
    lo = float(np.min(y))
    half = lo + 0.5 * (y[i] - lo)
    left = np.flatnonzero(y[:i] < half)
    right = np.flatnonzero(y[i:] < half)
    xl = x[left[-1]] if left.size else x[0]
    xr = x[i + right[0]] if right.size else x[-1]
    width0 = max(xr - xl, 2 * np.min(np.diff(x)))
    if not (left.size and right.size):
        width0 = max(width0, x[-1] - x[0])
    weighted = np.any(err > 0)
    w = np.where(err > 0, 1.0 / np.where(err > 0, err, 1.0), 1.0) if weighted else np.ones_like(y)

    span = max(np.ptp(y), 1e-300)
    unit = np.array([width0, width0, span, span])
    ref = np.array([x[i], 0.0, 0.0, 0.0])

    def resid(u):
        c, f, a, o = ref + u * unit
        return (lorentzian(x, c, f, a, o) - y) * w

    u0 = np.array([0.0, 1.0, (y[i] - lo) / span, lo / span])
    res = least_squares(resid, u0, method="lm", xtol=tol, ftol=tol, gtol=tol, max_nfev=5000)
    if res.status <= 0:
        raise ConvergenceError("Lorentzian fit did not converge", residual=2 * res.cost)
    c, f, a, o = ref + res.x * unit
    f = abs(f)
    if not (x[0] <= c <= x[-1]):
        raise BracketError(f"fitted centre {to_mhz(c):.3f} MHz lies outside the scan")
    if a <= 0:
        raise ConvergenceError("fitted Lorentzian has non-positive amplitude", residual=2 * res.cost)
    # covariance in the O(1) fit coordinates, then mapped to physical units
    cov = np.linalg.pinv(res.jac.T @ res.jac) * np.outer(unit, unit)
    chi2 = float(2 * res.cost)
    if not weighted:
        cov *= chi2 / max(1, len(y) - 4)
    return LorentzianFitResult(float(c), float(f), float(a), float(o), cov, chi2)


def raman_shift(scan: RamanScan) -> ShiftPoint:
    fit = fit_lorentzian(scan)
    return ShiftPoint(scan.probe_detuning, fit.center - scan.probe_detuning,
                      float(np.sqrt(max(fit.covariance[0, 0], 0.0))))


def simulated_shift(g0: float, probe_detuning: float, params: SystemParams,
                    points: int = SCAN_POINTS) -> float:
    """δ for one (g0, Δp) node: scan the standard window and fit the centre."""
    p = params.with_(g0=g0)
    scan = raman_scan(probe_detuning, scan_window(probe_detuning, p.cavity.kappa, points), p)
    return raman_shift(scan).shift


def _row(args):
    g0, probes, params, points = args
    out = []
    for dp in probes:
        try:
            out.append(simulated_shift(g0, dp, params, points))
        except NumericalError as exc:
            raise NumericalError(
                f"delta map node g0={to_mhz(g0):.4g} MHz, delta_p={to_mhz(dp):.4g} MHz: {exc}"
            ) from exc
    return out


@dataclass
class DeltaMap:
    g0_grid: np.ndarray
    probe_grid: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.g0_grid = np.asarray(self.g0_grid, dtype=float)
        self.probe_grid = np.asarray(self.probe_grid, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta.shape != (len(self.g0_grid), len(self.probe_grid)):
            raise ValidationError("delta matrix does not match the grids")
        for g in (self.g0_grid, self.probe_grid):
            if np.any(np.diff(g) <= 0):
                raise ValidationError("map grids must be strictly ascending")
        if not np.all(np.isfinite(self.delta)):
            raise ValidationError("delta map has non-finite entries")

    def to_json(self, path=None) -> str:
        doc = {
            "g0_mhz": [float(v) for v in to_mhz(self.g0_grid)],
            "delta_p_mhz": [float(v) for v in to_mhz(self.probe_grid)],
            "delta_mhz": [[float(v) for v in row] for row in to_mhz(self.delta)],
        }
        text = json.dumps(doc, indent=1)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, path_or_text) -> DeltaMap:
        p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("{") else None
        doc = json.loads(p.read_text(encoding="utf-8") if p else path_or_text)
        try:
            return cls(mhz(np.array(doc["g0_mhz"])), mhz(np.array(doc["delta_p_mhz"])),
                       mhz(np.array(doc["delta_mhz"])))
        except KeyError as exc:
            raise ValidationError(f"delta map JSON lacks key {exc}") from exc

    def at(self, g0, probe_detunings) -> np.ndarray:
        """Interpolated δ: monotone cubic in Δp, cubic spline in g0."""
        return _point_splines(self, np.atleast_1d(probe_detunings))(g0)


def _point_splines(dmap: DeltaMap, probes: np.ndarray) -> CubicSpline:
    lo, hi = dmap.probe_grid[0], dmap.probe_grid[-1]
    if np.any(probes < lo - 1e-9 * abs(lo)) or np.any(probes > hi + 1e-9 * abs(hi)):
        raise DomainError("probe detuning outside the map's probe grid")
    cols = np.array([PchipInterpolator(dmap.probe_grid, row)(probes) for row in dmap.delta])
    return CubicSpline(dmap.g0_grid, cols, axis=0)


def is_dispersion_like(probe_grid, row) -> bool:
    """True if δ(Δp) changes sign or has an interior extremum."""
    r = np.asarray(row, dtype=float)
    if np.any(r > 0) and np.any(r < 0):
        return True
    i, j = int(np.argmax(r)), int(np.argmin(r))
    return 0 < i < len(r) - 1 or 0 < j < len(r) - 1


def build_delta_map(g0_grid, probe_grid, params: SystemParams, points: int = SCAN_POINTS,
                    workers: int = 1, refine_threshold: float = mhz(1.0),
                    max_refine: int = 4) -> DeltaMap:
    """Simulate δ at every (g0, Δp) node.

    Probe intervals where any row jumps by more than ``refine_threshold``
    between neighbours are bisected, up to ``max_refine`` times.
    """
    g0_grid = np.asarray(g0_grid, dtype=float)
    probes = np.asarray(probe_grid, dtype=float)
    if len(g0_grid) < 5 or len(probes) < 5:
        raise ValidationError("map grids need at least 5 points each")
    if np.any(np.diff(g0_grid) <= 0) or np.any(np.diff(probes) <= 0):
        raise ValidationError("map grids must be strictly ascending")
    params = params.with_(position=params.cavity.node_spacing / 2, coupling_phase_origin="node")

    def columns(ps):
        jobs = [(g, ps, params, points) for g in g0_grid]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                rows = list(ex.map(_row, jobs))
        else:
            rows = [_row(j) for j in jobs]
        return np.array(rows).reshape(len(g0_grid), len(ps))

    delta = columns(probes)
    for _ in range(max_refine):
        jumps = np.max(np.abs(np.diff(delta, axis=1)), axis=0)
        bad = np.flatnonzero(jumps >= refine_threshold)
        if bad.size == 0:
            break
        mids = 0.5 * (probes[bad] + probes[bad + 1])
        new = columns(mids)
        probes = np.concatenate([probes, mids])
        delta = np.concatenate([delta, new], axis=1)
        order = np.argsort(probes)
        probes, delta = probes[order], delta[:, order]
    else:
        jumps = np.max(np.abs(np.diff(delta, axis=1)), axis=0)
        if np.any(jumps >= refine_threshold):
            log.warning("delta map still has jumps up to %.3g MHz after refinement",
                        to_mhz(np.max(jumps)))
    return DeltaMap(g0_grid, probes, delta)


@dataclass
class G0Fit:
    g0: float
    stderr: float
    chi2: float
    points: int


def fit_g0(points, dmap: DeltaMap, samples: int = 601) -> G0Fit:
    """One-parameter weighted χ² fit of g0 against the interpolated map.

    The minimum is bracketed on a dense g0 grid, then refined by bounded
    Brent (golden-section + parabolic) search.  ``stderr`` is the half-width of
    the Δχ² = 1 interval.
    """
    pts = list(points)
    if len(pts) < 4:
        raise ValidationError("fit_g0 needs at least 4 shift points")
    probes = np.array([p.probe_detuning for p in pts])
    y = np.array([p.shift for p in pts])
    err = np.array([p.stderr for p in pts])
    w = 1.0 / err if np.all(err > 0) else np.ones_like(y)
    spl = _point_splines(dmap, probes)

    def chi2(g):
        return float(np.sum(((spl(g) - y) * w) ** 2))

    lo, hi = dmap.g0_grid[0], dmap.g0_grid[-1]
    grid = np.linspace(lo, hi, samples)
    vals = np.array([chi2(g) for g in grid])
    i = int(np.argmin(vals))
    if i == 0 or i == samples - 1:
        raise ExtrapolationError(
            f"χ² minimum at the g0 grid boundary ({to_mhz(grid[i]):.3f} MHz); extend the grid")
    step = grid[1] - grid[0]
    res = minimize_scalar(chi2, bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                          options={"xatol": 1e-10 * step})
    g, cmin = float(res.x), float(res.fun)
    if not lo < g < hi:
        raise ExtrapolationError("fitted g0 outside the map's g0 range")

    def level(x):
        return chi2(x) - cmin - 1.0

    halves = []
    for edge in (lo, hi):
        if level(edge) > 0:
            halves.append(abs(brentq(level, min(g, edge), max(g, edge), xtol=1e-12 * hi) - g))
    if halves:
        stderr = float(np.mean(halves))
    else:
        h = 1e-3 * step
        curv = (chi2(g + h) - 2 * cmin + chi2(g - h)) / h**2
        stderr = float(np.sqrt(2.0 / curv)) if curv > 0 else float("inf")
    return G0Fit(g, stderr, cmin, len(pts))


def write_shift_points(path, points):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# frequencies in MHz (value/2pi)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta_p_mhz", "delta_mhz", "stderr"])
        for p in points:
            w.writerow([repr(float(to_mhz(v))) for v in (p.probe_detuning, p.shift, p.stderr)])


def read_shift_points(path) -> list[ShiftPoint]:
    dp, d, s = _read_csv(path, ["delta_p_mhz", "delta_mhz", "stderr"])
    return [ShiftPoint(mhz(a), mhz(b), mhz(c)) for a, b, c in zip(dp, d, s)]
