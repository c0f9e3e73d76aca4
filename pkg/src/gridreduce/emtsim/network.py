"""Build EMT circuits from case data and run configured simulations."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .._validation import check_scalar
from ..casefile import GROUND, CaseFile
from ..errors import CaseError
from ..netmodel import check_operating_point, machine_impedance
from .circuit import GND, Circuit
from .hooks import InjectionHook
from .solver import Simulator
from .trace import SimTrace

# One fundamental cycle at 60 Hz in 333 steps (about 50 us).
STEPS_PER_CYCLE = 333


def default_dt(f0: float = 60.0) -> float:
    return 1.0 / (f0 * STEPS_PER_CYCLE)


@dataclass(frozen=True)
class FaultSpec:
    bus: int
    t_on: float = 0.1
    t_off: float = 0.2
    conductance: float = 1e4


@dataclass(frozen=True)
class SimConfig:
    """Step, duration, fault protocol and recorded channels of one run."""
    dt: Optional[float] = None
    duration: float = 5.0
    f0: float = 60.0
    fault: Optional[FaultSpec] = None
    taps: tuple = ()

    def __post_init__(self):
        dt = default_dt(self.f0) if self.dt is None else self.dt
        check_scalar(dt, "dt", low=0.0, high=1e-4, include_low=False)
        object.__setattr__(self, "dt", float(dt))
        check_scalar(self.duration, "duration", low=0.0, include_low=False)
        check_scalar(self.f0, "f0", low=0.0, include_low=False)
        if self.fault is not None:
            f = self.fault
            check_scalar(f.conductance, "fault conductance", low=0.0, include_low=False)
            if not (0 <= f.t_on < f.t_off <= self.duration):
                raise ValueError(f"fault times must satisfy 0 <= t_on < t_off <= duration, "
                                 f"got {f.t_on}, {f.t_off}, {self.duration}")
        object.__setattr__(self, "taps", tuple(self.taps))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def machine_emf(case: CaseFile, gen) -> complex:
    """E' behind Ra + jX'd from the generator's terminal voltage and output."""
    v = case.bus(gen.bus).phasor
    if v == 0:
        raise CaseError(f"generator {gen.id}: zero terminal voltage")
    z = machine_impedance(gen, case.base_mva, case.omega0, case.omega0)
    return v + z * np.conj(complex(gen.p, gen.q) / v)


@dataclass
class NetworkModel:
    """A case mapped onto an EMT circuit, with lookups for taps."""
    case: CaseFile
    circuit: Circuit
    series: Dict[tuple, List[int]] = field(default_factory=dict)
    shunt_at: Dict[tuple, List[int]] = field(default_factory=dict)
    machine_emf: Dict[str, complex] = field(default_factory=dict)

    def flow_elements(self, a: int, b: int):
        """(element, sign) pairs whose currents sum to the flow from a toward b, measured at a."""
        out = []
        for e in self.series.get((a, b), []):
            out.append((e, 1.0))
        for e in self.series.get((b, a), []):
            out.append((e, -1.0))
        for e in self.shunt_at.get((a, b), []):
            out.append((e, 1.0))
        if not out:
            raise KeyError(f"no branch between buses {a} and {b}")
        return out


def build_network(case: CaseFile, buses: Optional[Sequence[int]] = None, *,
                  passive: bool = False) -> NetworkModel:
    """Map the case (or the subnetwork on ``buses``) onto an EMT circuit.

    Lines become series R-L branches with half the charging at each end,
    constant-impedance loads become shunt G with L or C, constant-current
    loads become fundamental-frequency current sources and generators become
    classical machines.

    With ``passive=True`` the sources are zeroed: machines become their
    Ra + jX'd impedance to ground and constant-current loads are left open.
    """
    w0 = case.omega0
    sub = set(case.bus_ids if buses is None else buses)
    for b in sub:
        case.bus(b)
    ckt = Circuit()
    for b in sorted(sub):
        ckt._touch(b)
    model = NetworkModel(case, ckt)
    node = (lambda b: GND if b == GROUND else b)
    for i, br in enumerate(case.branches):
        if not ({br.from_bus, br.to_bus} - {GROUND}) <= sub:
            continue
        a, b = node(br.from_bus), node(br.to_bus)
        e = ckt.add_rl(a, b, br.r, br.x / w0, tag=("branch", i))
        model.series.setdefault((br.from_bus, br.to_bus), []).append(e)
        if br.b > 0:
            for end, other in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
                if end == GROUND:
                    continue
                e = ckt.add_c(end, GND, 0.5 * br.b / w0, tag=("charging", i, end))
                model.shunt_at.setdefault((end, other), []).append(e)
    for ld in case.loads:
        if ld.bus not in sub:
            continue
        vm = case.bus(ld.bus).v
        if ld.model == "current":
            if passive:
                continue
            v = case.bus(ld.bus).phasor
            ckt.add_current_source(ld.bus, -np.conj(complex(ld.p, ld.q) / v))
            continue
        g = ld.p / vm**2
        bsh = -ld.q / vm**2
        if g > 0:
            ckt.add_r(ld.bus, GND, 1.0 / g, tag=("load", ld.bus))
        if bsh < 0:
            ckt.add_rl(ld.bus, GND, 0.0, 1.0 / (w0 * -bsh), tag=("load", ld.bus))
        elif bsh > 0:
            ckt.add_c(ld.bus, GND, bsh / w0, tag=("load", ld.bus))
    for gen in case.generators:
        if gen.bus not in sub:
            continue
        z = machine_impedance(gen, case.base_mva, w0, w0)
        if passive:
            ckt.add_rl(gen.bus, GND, z.real, z.imag / w0, tag=("machine", gen.id))
            continue
        scale = gen.mva / case.base_mva
        ckt.add_machine(gen.id, gen.bus, z.real, z.imag / w0, 2.0 * gen.h * scale, gen.d * scale)
        model.machine_emf[gen.id] = machine_emf(case, gen)
    return model


class EmtSession:
    """An initialized solver for a case network plus hooks, with tap handling."""

    def __init__(self, model: NetworkModel, dt: float, hooks: Sequence[InjectionHook] = ()):
        self.model = model
        self.case = model.case
        self.hooks = list(hooks)
        self.sim = Simulator(model.circuit, dt, model.case.frequency, self.hooks)
        self.last_runtime = None

    def steady_state(self, injections: Optional[Dict[int, complex]] = None) -> dict:
        V = self.sim.steady_state(machine_emf=self.model.machine_emf, injections=injections)
        return {n: V[i] for i, n in enumerate(self.sim.free + self.sim.forced)}

    def apply_fault(self, bus: int, on: bool, conductance: float = 1e4) -> None:
        name = f"fault:{bus}"
        if name not in self.sim.switch_index:
            self.sim.add_switch(name, bus, conductance)
        self.sim.set_switch(name, on)

    def run(self, config: SimConfig) -> SimTrace:
        if abs(config.dt - self.sim.dt) > 1e-15:
            raise ValueError("config dt differs from the session's dt")
        events = []
        if config.fault is not None:
            f = config.fault
            name = f"fault:{f.bus}"
            if name not in self.sim.switch_index:
                self.sim.add_switch(name, f.bus, f.conductance)
            k_on = int(round(f.t_on / config.dt))
            k_off = int(round(f.t_off / config.dt))
            events = [(self.sim.k + k_on, name, True), (self.sim.k + k_off, name, False)]
        nodes, elems = self._tap_needs(config.taps)
        t0 = time.perf_counter()
        rec = self.sim.run(config.n_steps, record_nodes=nodes, record_elements=elems, events=events)
        self.last_runtime = time.perf_counter() - t0
        return self._to_trace(rec, config.taps)

    # -- taps ---------------------------------------------------------------
    def _tap_needs(self, taps):
        nodes, elems = [], []
        for tap in taps:
            kind, _, arg = tap.partition(":")
            if kind in ("v", "vb", "vmag"):
                nodes.append(int(arg))
            elif kind in ("p", "q", "i"):
                a, b = (int(x) for x in arg.split("-"))
                nodes.append(a)
                elems += [e for e, _ in self.model.flow_elements(a, b)]
            elif kind in ("delta", "speed", "pe"):
                if arg not in self.sim.machine_names:
                    raise KeyError(f"tap {tap!r}: unknown machine")
            elif kind in ("pinj", "qinj"):
                nodes.append(int(arg))
            elif kind in ("eqdelta", "eqspeed"):
                if not any(h.native_kind == "tsa" and h.bus == int(arg) for h in self.hooks):
                    raise KeyError(f"tap {tap!r}: no phasor equivalent at bus {arg}")
            else:
                raise ValueError(f"unknown tap {tap!r}")
        return list(dict.fromkeys(nodes)), list(dict.fromkeys(elems))

    def _to_trace(self, rec, taps) -> SimTrace:
        tr = SimTrace(rec.k0 * rec.dt, rec.dt)
        for tap in taps:
            kind, _, arg = tap.partition(":")
            if kind == "v":
                tr.add(tap, rec.v[int(arg)][:, 0])
            elif kind == "vb":
                tr.add(tap, rec.v[int(arg)][:, 1])
            elif kind == "vmag":
                tr.add(tap, np.hypot(rec.v[int(arg)][:, 0], rec.v[int(arg)][:, 1]))
            elif kind in ("p", "q", "i"):
                a, b = (int(x) for x in arg.split("-"))
                cur = sum(s * rec.i[e] for e, s in self.model.flow_elements(a, b))
                v = rec.v[a]
                if kind == "i":
                    tr.add(tap, cur[:, 0])
                else:
                    tr.add(tap, _power(v, cur, kind))
            elif kind in ("delta", "speed", "pe"):
                col = {"delta": 0, "speed": 1, "pe": 2}[kind]
                tr.add(tap, rec.machines[arg][:, col])
            elif kind in ("pinj", "qinj"):
                bus = int(arg)
                cur = sum((h for hk, h in zip(self.hooks, rec.hooks) if hk.bus == bus),
                          np.zeros((rec.n, 2)))
                tr.add(tap, _power(rec.v[bus], cur, kind[0]))
            elif kind in ("eqdelta", "eqspeed"):
                j = next(j for j, h in enumerate(self.hooks)
                         if h.native_kind == "tsa" and h.bus == int(arg))
                tr.add(tap, rec.tsa[j][:, 0 if kind == "eqdelta" else 1])
        return tr


def _power(v, i, kind):
    if kind == "p":
        return v[:, 0] * i[:, 0] + v[:, 1] * i[:, 1]
    return v[:, 1] * i[:, 0] - v[:, 0] * i[:, 1]


def steady_state_init(case: CaseFile, dt: Optional[float] = None, hooks=(),
                      buses=None, injections=None, tol: float = 1e-4) -> EmtSession:
    """Build the case network and load its sinusoidal steady state.

    The operating point is checked against the network equations first and
    an :class:`OperatingPointError` is raised when the mismatch exceeds
    ``tol``.
    """
    check_operating_point(case, tol=tol)
    dt = default_dt(case.frequency) if dt is None else dt
    sess = EmtSession(build_network(case, buses), dt, hooks)
    sess.steady_state(injections)
    return sess


def run(case_or_session, config: SimConfig, hooks: Sequence[InjectionHook] = ()) -> SimTrace:
    """Run ``config`` on an initialized session, or initialize the case first."""
    if isinstance(case_or_session, EmtSession):
        if hooks:
            raise ValueError("hooks are fixed when the session is created")
        sess = case_or_session
    else:
        sess = steady_state_init(case_or_session, config.dt, hooks)
    return sess.run(config)


def apply_fault(session: EmtSession, bus: int, on: bool, conductance: float = 1e4) -> None:
    """Insert or remove a shunt fault conductance at ``bus``."""
    session.apply_fault(bus, on, conductance)


__all__ = ["SimConfig", "FaultSpec", "NetworkModel", "EmtSession", "build_network",
           "steady_state_init", "run", "apply_fault", "default_dt", "machine_emf",
           "STEPS_PER_CYCLE"]
