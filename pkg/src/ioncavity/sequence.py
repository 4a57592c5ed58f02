"""Experimental pulse sequences and piecewise cycle simulation.

Two sequences are provided: the standing-wave mapping cycle (cool at the node,
shuttle, settle, probe, return) and the coupling-measurement cycle, which adds a
state-preparation phase with an empty-cavity transmission reference gate.

Frequencies in the phase table are angular (rad/s); the JSON form uses MHz.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model, qdyn
from .errors import NumericalError, TimingError, ValidationError
from .localization import PositionDistribution, smear
from .model import SystemParams
from .qdyn import DensityMatrix
from .units import mhz, to_mhz, to_us, us

LASERS = frozenset({"pump397", "doppler393", "repump850", "repump854", "probe866_transmission"})
POSITIONS = ("node", "antinode", "in-transit")
GATES = (None, "signal", "reference")
REPUMPERS = frozenset({"repump850", "repump854"})
RATE_TOLERANCE = 0.01


@dataclass(frozen=True)
class Phase:
    label: str
    duration: float
    lasers_on: frozenset = frozenset()
    ion_position: str = "node"
    cavity_detuning: float = 0.0
    pump_detuning: float | None = None
    detection_gate: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "lasers_on", frozenset(self.lasers_on))
        if not self.duration > 0:
            raise ValidationError(f"phase {self.label!r}: duration must be > 0")
        unknown = self.lasers_on - LASERS
        if unknown:
            raise ValidationError(f"phase {self.label!r}: unknown lasers {sorted(unknown)}")
        if self.ion_position not in POSITIONS:
            raise ValidationError(f"phase {self.label!r}: position must be one of {POSITIONS}")
        if self.detection_gate not in GATES:
            raise ValidationError(f"phase {self.label!r}: gate must be one of {GATES[1:]} or None")
        if self.detection_gate and self.ion_position == "in-transit":
            raise ValidationError(f"phase {self.label!r}: detection gate while the ion is in transit")
        if "pump397" in self.lasers_on and self.pump_detuning is None:
            raise ValidationError(f"phase {self.label!r}: pump397 on without a pump detuning")

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "duration_us": round(to_us(self.duration), 12),
            "lasers": sorted(self.lasers_on),
            "position": self.ion_position,
            "cavity_detuning_mhz": round(to_mhz(self.cavity_detuning), 12),
            "pump_detuning_mhz": None if self.pump_detuning is None else round(to_mhz(self.pump_detuning), 12),
            "gate": self.detection_gate,
        }

    @classmethod
    def from_record(cls, rec: dict) -> Phase:
        pd = rec.get("pump_detuning_mhz")
        return cls(rec["label"], us(rec["duration_us"]), frozenset(rec["lasers"]), rec["position"],
                   mhz(rec["cavity_detuning_mhz"]), None if pd is None else mhz(pd), rec["gate"])


@dataclass(frozen=True)
class PulseSequence:
    phases: tuple[Phase, ...]
    kind: str = "standing-wave"

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValidationError("sequence has no phases")
        labels = [p.label for p in self.phases]
        if len(set(labels)) != len(labels):
            raise ValidationError("phase labels must be unique")
        gates = [p.detection_gate for p in self.phases if p.detection_gate]
        if self.kind == "standing-wave":
            if gates != ["signal"]:
                raise ValidationError("standing-wave cycle needs exactly one signal gate")
        elif self.kind == "coupling":
            if "reference" not in gates:
                raise ValidationError("coupling cycle is missing its reference transmission gate")
            if sorted(gates) != ["reference", "signal"]:
                raise ValidationError("coupling cycle needs one reference and one signal gate")
            if self.phases[0].detection_gate != "reference":
                raise ValidationError("reference gate must belong to the first phase")
        else:
            raise ValidationError(f"unknown sequence kind {self.kind!r}")

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.phases)

    @property
    def repetition_rate(self) -> float:
        return 1.0 / self.total_duration

    def phase(self, label: str) -> Phase:
        for p in self.phases:
            if p.label == label:
                return p
        raise KeyError(label)

    def gate_windows(self) -> list[tuple[str, float, float]]:
        """(gate kind, start, stop) for each gate; a gate spans its whole phase."""
        out, t = [], 0.0
        for p in self.phases:
            if p.detection_gate:
                out.append((p.detection_gate, t, t + p.duration))
            t += p.duration
        return out

    def check_rate(self, target: float, rtol: float = RATE_TOLERANCE) -> None:
        """Raise TimingError when the cycle rate misses ``target`` by more than ``rtol``."""
        deficit = 1.0 / target - self.total_duration
        if abs(self.repetition_rate - target) > rtol * target:
            raise TimingError(
                f"cycle lasts {to_us(self.total_duration):.4g} us, rate {self.repetition_rate / 1e3:.4g} kHz;"
                f" {to_us(deficit):+.4g} us needed for {target / 1e3:.4g} kHz",
                deficit=deficit,
            )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "total_us": round(to_us(self.total_duration), 12),
            "repetition_rate_khz": round(self.repetition_rate / 1e3, 9),
            "phases": [p.to_record() for p in self.phases],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> PulseSequence:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple(Phase.from_record(r) for r in d["phases"]), d.get("kind", "standing-wave"))


@dataclass(frozen=True)
class SequenceConfig:
    """Durations in seconds and detunings in rad/s for both cycle types."""

    prep: float = us(2.0)
    cool: float = us(6.0)
    shuttle: float = us(1.0)
    settle: float = us(1.7)
    probe: float = us(0.3)
    ret: float = us(2.0)
    cooling_offset: float = mhz(7.0)
    cooling_pump_detuning: float = mhz(-10.0)
    probe_detuning: float = mhz(-10.0)
    probe_cavity_detuning: float | None = None
    target_rate: float | None = None

    def __post_init__(self):
        for name in ("prep", "cool", "shuttle", "settle", "probe", "ret"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"sequence duration {name!r} must be > 0")
        if self.target_rate is not None and not self.target_rate > 0:
            raise ValidationError("target_rate must be positive")

    @property
    def probe_cavity(self) -> float:
        return self.probe_detuning if self.probe_cavity_detuning is None else self.probe_cavity_detuning


def _finish(seq: PulseSequence, cfg: SequenceConfig) -> PulseSequence:
    if cfg.target_rate is not None:
        seq.check_rate(cfg.target_rate)
    return seq


def standing_wave_sequence(cfg: SequenceConfig = SequenceConfig()) -> PulseSequence:
    """Cool at the node, shuttle, settle, probe with one gate, return."""
    cool_cav = cfg.cooling_pump_detuning + cfg.cooling_offset
    probe_cav = cfg.probe_cavity
    phases = (
        Phase("I-cool", cfg.cool, {"pump397", "repump850", "repump854"}, "node",
              cool_cav, cfg.cooling_pump_detuning),
        Phase("II-shuttle", cfg.shuttle, set(), "in-transit", probe_cav),
        Phase("II-settle", cfg.settle, set(), "antinode", probe_cav),
        Phase("III-probe", cfg.probe, {"pump397"}, "antinode", probe_cav, cfg.probe_detuning, "signal"),
        Phase("IV-return", cfg.ret, {"repump850", "repump854"}, "in-transit", probe_cav),
    )
    return _finish(PulseSequence(phases, "standing-wave"), cfg)


def coupling_measurement_sequence(cfg: SequenceConfig = SequenceConfig(),
                                  cavity_detuning: float | None = None) -> PulseSequence:
    """Five-phase coupling cycle at one scanned cavity detuning.

    The cooling beam co-scans with the cavity: in phase II the cavity sits
    ``cooling_offset`` above the nominal Raman resonance with the cooling beam
    for every scanned ``cavity_detuning``.
    """
    dc = cfg.probe_cavity if cavity_detuning is None else cavity_detuning
    phases = (
        Phase("I-prep", cfg.prep, {"repump850", "repump854", "probe866_transmission"}, "node",
              dc, None, "reference"),
        Phase("II-cool", cfg.cool, {"pump397", "repump850", "repump854"}, "node",
              dc, dc - cfg.cooling_offset),
        Phase("III-shuttle", cfg.shuttle + cfg.settle, {"repump850", "repump854"}, "in-transit", dc),
        Phase("IV-photon", cfg.probe, {"pump397"}, "antinode", dc, cfg.probe_detuning, "signal"),
        Phase("V-return", cfg.ret, {"repump850", "repump854", "doppler393"}, "in-transit", dc),
    )
    return _finish(PulseSequence(phases, "coupling"), cfg)


@dataclass(frozen=True)
class CycleResult:
    signal: float
    reference: float | None = None
    populations: dict = field(default_factory=dict)


def _position(phase: Phase, params: SystemParams, target: float | None) -> float:
    node = 0.0 if params.coupling_phase_origin == "node" else params.cavity.node_spacing / 2
    if phase.ion_position == "node":
        return node
    if target is not None:
        return target
    return node + params.cavity.node_spacing / 2


def _phase_params(phase: Phase, params: SystemParams, rabi: dict, repump_rate: float) -> SystemParams:
    pump_on = "pump397" in phase.lasers_on
    kind = "probe" if phase.detection_gate else "cool"
    return params.with_(
        cavity_detuning=phase.cavity_detuning,
        probe_detuning=phase.pump_detuning if pump_on else params.pump.detuning,
        rabi=rabi[kind] if pump_on else 0.0,
        repump_rate=repump_rate if phase.lasers_on & REPUMPERS else 0.0,
    )


def project_ground(rho: DensityMatrix) -> DensityMatrix:
    """Trace out the cavity, keep the S1/2 block, renormalise, attach vacuum."""
    dims = rho.space.factor_dims
    r = rho.elements.reshape(dims + dims)
    ion = np.einsum("iabjab->ij", r)
    s = list(model.S_LEVELS)
    block = ion[np.ix_(s, s)]
    tr = np.trace(block).real
    if tr < 1e-12:
        raise NumericalError("no S1/2 population left to prepare from")
    out = np.zeros_like(rho.elements)
    idx = [rho.space.index(i, 0, 0) for i in s]
    out[np.ix_(idx, idx)] = block / tr
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(rho.space, out)


def _evolve_phase(rho: DensityMatrix, phase: Phase, p: SystemParams) -> DensityMatrix:
    me = model.build_system(p)
    sub, r0, idx = model._restrict(me, rho)
    r1, _ = qdyn.propagate(r0, sub, phase.duration)
    if idx is None:
        return DensityMatrix(rho.space, r1.elements, check=False)
    full = np.zeros_like(rho.elements)
    full[np.ix_(idx, idx)] = r1.elements
    return DensityMatrix(rho.space, full, check=False)


def simulate_cycle(seq: PulseSequence, params: SystemParams,
                   dist_by_phase: dict | None = None, target_position: float | None = None,
                   rabi_cool: float = mhz(14.0), rabi_probe: float | None = None,
                   repump_rate: float = mhz(1.0), probe_offset: float = 0.0) -> CycleResult:
    """Compose the cycle phase by phase and report the gated signals.

    Fixed-position phases with lasers on are propagated exactly.  In-transit
    phases are not propagated; cooling is represented only through the
    position distributions in ``dist_by_phase`` (label -> PositionDistribution,
    whose mean is ignored).  A phase with repumpers on and the pump off ends in
    S1/2, so every phase with repumpers on is projected there once it finishes.
    ``populations`` records the S1/2 population at the end of each propagated
    phase, before projection.
    The signal gate returns the photon probability averaged over the ion's
    position distribution; the reference gate returns the empty-cavity
    transmission of a probe ``probe_offset`` away from the cavity resonance.
    """
    dist_by_phase = dist_by_phase or {}
    rabi = {"cool": rabi_cool, "probe": params.pump.rabi if rabi_probe is None else rabi_probe}
    space = model.model_space(params.cavity)
    rho = model.ground_state(space)
    signal, reference, pops = None, None, {}
    for ph in seq.phases:
        if ph.detection_gate == "reference":
            reference = float(model.empty_cavity_scan([probe_offset], params.cavity.kappa)[0])
        if ph.ion_position == "in-transit":
            if ph.lasers_on & REPUMPERS:
                rho = project_ground(rho)
            continue
        p = _phase_params(ph, params, rabi, repump_rate).with_(
            position=_position(ph, params, target_position))
        if ph.detection_gate == "signal":
            signal = _gate_probability(rho, ph, p, dist_by_phase.get(ph.label))
            continue
        if ph.lasers_on:
            rho = _evolve_phase(rho, ph, p)
        pops[ph.label] = _s_population(rho)
        if ph.lasers_on & REPUMPERS:
            rho = project_ground(rho)
    if signal is None:
        raise ValidationError("sequence has no signal gate")
    return CycleResult(signal, reference, pops)


def _s_population(rho: DensityMatrix) -> float:
    diag = rho.elements.diagonal().real.reshape(rho.space.factor_dims)
    return float(diag[list(model.S_LEVELS)].sum())


def _gate_probability(rho: DensityMatrix, ph: Phase, p: SystemParams,
                      dist: PositionDistribution | None) -> float:
    if "pump397" not in ph.lasers_on or p.cavity.g0 == 0:
        return 0.0

    def curve(xs):
        return np.array([model.photon_probability(p.with_(position=float(x)), rho0=rho,
                                                  probe_duration=ph.duration)
                         for x in np.atleast_1d(xs)])

    if dist is None or dist.sigma == 0:
        return float(curve([p.position])[0])
    return smear(curve, replace(dist, mean=p.position))
