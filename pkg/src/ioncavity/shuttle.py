"""Blackman–Nuttall shuttle waveforms and their adiabaticity.

The electrode pair receives +V(t) and -V(t).  V rises along the first half of a
Blackman–Nuttall window, holds, and falls along the second half.  With no hold
and equal flanks the pulse is one contiguous window.

Adiabaticity is judged by the motional amplitude a transport leaves
behind in a trap of frequency omega.  For a trap centre moving as x(t), the
residual oscillation amplitude is |int x'(t) exp(-i omega t) dt| / omega, which
equals |X(omega)| for a profile that starts and ends at rest.  Dividing by the
total displacement and multiplying by omega gives the dimensionless leakage:
a rectangular step scores exactly 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ResolutionError, SamplingError, ValidationError
from .units import mhz, to_mhz, to_us

BNW_COEFFS = (0.3635819, 0.4891775, 0.1365995, 0.0106411)
MIN_SAMPLES_PER_SEGMENT = 20
DEFAULT_SAMPLE_RATE = 1e9
DEFAULT_THRESHOLD = 1e-3


def bnw(t, T: float):
    """Four-term Blackman–Nuttall window on [0, T], peak 1 at T/2."""
    if T <= 0:
        raise DomainError("window length must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T):
        raise DomainError("bnw evaluated outside [0, T]")
    x = 2 * np.pi * t / T
    out = sum((-1) ** j * a * np.cos(j * x) for j, a in enumerate(BNW_COEFFS))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShuttlePulse:
    amplitude: float
    rise_time: float
    hold_time: float = 0.0
    fall_time: float | None = None
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.fall_time is None:
            object.__setattr__(self, "fall_time", self.rise_time)
        durations = (self.rise_time, self.hold_time, self.fall_time)
        if min(durations) < 0:
            raise ValidationError("pulse durations must be >= 0")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        nonzero = [d for d in durations if d > 0]
        if not nonzero:
            raise ValidationError("pulse has zero length")
        if self.sample_rate * min(nonzero) < MIN_SAMPLES_PER_SEGMENT:
            raise SamplingError(
                f"sample_rate * shortest segment = {self.sample_rate * min(nonzero):.3g}"
                f" < {MIN_SAMPLES_PER_SEGMENT}"
            )

    @property
    def duration(self) -> float:
        return self.rise_time + self.hold_time + self.fall_time


@dataclass(frozen=True)
class Waveform:
    time: np.ndarray
    upper: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return -self.upper

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0])

    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.time.tolist(), self.upper.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# upper electrode; lower electrode is the negation\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_us", "voltage_v"])
            for t, v in zip(self.time, self.upper):
                w.writerow([f"{to_us(t):.6f}", f"{v:.12g}"])

    @classmethod
    def from_csv(cls, path) -> Waveform:
        rows = [r for r in Path(path).read_text(encoding="utf-8").splitlines() if r and not r.startswith("#")]
        reader = csv.DictReader(rows)
        if reader.fieldnames != ["time_us", "voltage_v"]:
            raise ValidationError(f"expected header time_us,voltage_v, got {reader.fieldnames}")
        data = np.array([[float(r["time_us"]), float(r["voltage_v"])] for r in reader])
        return cls(data[:, 0] * 1e-6, data[:, 1])


def generate_waveform(pulse: ShuttlePulse) -> Waveform:
    """Sample the rise/hold/fall voltage for the upper electrode.

    One rest sample at 0 V is kept on either side of the pulse, so the window
    edge values (about 3.6e-4 of the amplitude) appear as the small steps they
    are on the real electrode.
    """
    dt = 1.0 / pulse.sample_rate
    n = int(round(pulse.duration * pulse.sample_rate))
    t = np.arange(n + 1) * dt
    v = np.full(t.shape, float(pulse.amplitude))
    r, h, f = pulse.rise_time, pulse.hold_time, pulse.fall_time
    if r > 0:
        m = t < r
        v[m] = pulse.amplitude * bnw(t[m], 2 * r)
    if f > 0:
        m = t > r + h
        # second half of a window of length 2f, clipped against rounding at the end
        tf = np.minimum(t[m] - (r + h) + f, 2 * f)
        v[m] = pulse.amplitude * bnw(tf, 2 * f)
    t = np.concatenate(([0.0], t + dt, [t[-1] + 2 * dt]))
    v = np.concatenate(([0.0], v, [0.0]))
    return Waveform(t, v)


def rectangular_step(amplitude: float, duration: float, sample_rate: float = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Zero at t = 0, then ``amplitude`` for the rest of ``duration``."""
    n = int(round(duration * sample_rate))
    if n < MIN_SAMPLES_PER_SEGMENT:
        raise SamplingError("step too short for the sample rate")
    t = np.arange(n + 1) / sample_rate
    v = np.full(t.shape, float(amplitude))
    v[0] = 0.0
    return Waveform(t, v)


def linear_ramp(pulse: ShuttlePulse) -> Waveform:
    """Trapezoid with the same segment durations as ``pulse``."""
    t = np.arange(int(round(pulse.duration * pulse.sample_rate)) + 1) / pulse.sample_rate
    r, h, f = pulse.rise_time, pulse.hold_time, pulse.fall_time
    up = np.clip(t / r, 0, 1) if r > 0 else np.ones_like(t)
    down = np.clip((pulse.duration - t) / f, 0, 1) if f > 0 else np.ones_like(t)
    return Waveform(t, pulse.amplitude * np.minimum(up, down))


def max_slope(wf: Waveform) -> float:
    return float(np.max(np.abs(np.diff(wf.upper) / np.diff(wf.time))))


def spectral_leakage(wf: Waveform, omega: float) -> float:
    """Residual motional amplitude at ``omega`` relative to the displacement.

    Voltage increments are weighted at segment midpoints, so a constant waveform
    scores 0 and a single sharp step scores 1.
    """
    if omega <= 0:
        raise ValidationError("omega must be positive")
    if wf.duration < 2 * (2 * np.pi / omega):
        raise ResolutionError(
            f"waveform lasts {to_us(wf.duration):.3g} us, need >= two periods at {to_mhz(omega):.3g} MHz"
        )
    scale = np.max(np.abs(wf.upper))
    if scale == 0:
        return 0.0
    mid = 0.5 * (wf.time[1:] + wf.time[:-1])
    amp = np.sum(np.diff(wf.upper) * np.exp(-1j * omega * mid))
    return float(abs(amp) / scale)


def is_adiabatic(wf: Waveform, omega: float = mhz(2.73), threshold: float = DEFAULT_THRESHOLD) -> bool:
    return spectral_leakage(wf, omega) < threshold


def adiabaticity_report(wf: Waveform, omegas, threshold: float = DEFAULT_THRESHOLD) -> dict:
    """Leakage per frequency, keyed by frequency/2π in MHz."""
    entries = []
    for w in omegas:
        leak = spectral_leakage(wf, w)
        entries.append({"freq_mhz": round(to_mhz(w), 9), "leakage": leak, "adiabatic": leak < threshold})
    return {
        "duration_us": to_us(wf.duration),
        "amplitude_v": float(np.max(np.abs(wf.upper))),
        "threshold": threshold,
        "leakage": entries,
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Calibration:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError("calibration alpha must be > 0")


def displacement(V, cal: Calibration):
    """Linear voltage to displacement map, alpha * V."""
    return cal.alpha * V


def voltage_for(x, cal: Calibration):
    return x / cal.alpha
