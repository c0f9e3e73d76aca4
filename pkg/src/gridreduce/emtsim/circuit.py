"""Circuit description for the EMT solver.

A circuit has free nodes (solved each step), forced nodes whose voltage is
imposed (voltage sources and machine EMFs) and ground. Two-terminal elements
are series R-L branches, capacitors and switchable conductances. All values
are per-unit with time in seconds, so an inductance is X/omega0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, List, Optional

import numpy as np

GND = "gnd"

RL, CAP, SWITCH = 0, 1, 2


@dataclass
class Element:
    kind: int
    a: Hashable
    b: Hashable
    r: float = 0.0
    l: float = 0.0
    c: float = 0.0
    g: float = 0.0
    tag: object = None


@dataclass
class Machine:
    """Classical machine: constant EMF behind Ra + jX'd with swing dynamics.

    ``h2`` is 2H and ``d`` the damping, both on the system base.
    """
    name: str
    bus: Hashable
    node: str
    element: int
    h2: float
    d: float


@dataclass
class VoltageSource:
    node: Hashable
    waveform: Optional[Callable] = None


@dataclass
class CurrentSource:
    """Sinusoidal injection at the fundamental: Re/Im of amp*exp(j w0 t)."""
    node: Hashable
    amp: complex


@dataclass
class Circuit:
    elements: List[Element] = field(default_factory=list)
    machines: List[Machine] = field(default_factory=list)
    sources: List[VoltageSource] = field(default_factory=list)
    current_sources: List[CurrentSource] = field(default_factory=list)
    switches: dict = field(default_factory=dict)
    _free: dict = field(default_factory=dict)
    _forced: dict = field(default_factory=dict)

    # -- nodes ---------------------------------------------------------------
    def _touch(self, node):
        if node == GND or node in self._forced or node in self._free:
            return
        self._free[node] = len(self._free)

    def _force(self, node):
        if node == GND:
            raise ValueError("ground cannot be a forced node")
        if node in self._forced:
            raise ValueError(f"node {node!r} is already forced")
        self._free.pop(node, None)
        self._free = {n: i for i, n in enumerate(self._free)}
        self._forced[node] = len(self._forced)

    @property
    def free_nodes(self) -> list:
        return list(self._free)

    @property
    def forced_nodes(self) -> list:
        return list(self._forced)

    @property
    def nodes(self) -> list:
        return self.free_nodes + self.forced_nodes

    def has_node(self, node) -> bool:
        return node in self._free or node in self._forced

    # -- elements ------------------------------------------------------------
    def _add(self, el: Element) -> int:
        if el.a == el.b:
            raise ValueError(f"element connects node {el.a!r} to itself")
        self._touch(el.a)
        self._touch(el.b)
        self.elements.append(el)
        return len(self.elements) - 1

    def add_rl(self, a, b, r: float, l: float, tag=None) -> int:
        if r < 0 or l < 0 or (r == 0 and l == 0):
            raise ValueError(f"invalid R-L branch r={r}, l={l}")
        return self._add(Element(RL, a, b, r=float(r), l=float(l), tag=tag))

    def add_r(self, a, b, r: float, tag=None) -> int:
        return self.add_rl(a, b, r, 0.0, tag)

    def add_c(self, a, b, c: float, tag=None) -> int:
        if not c > 0:
            raise ValueError(f"capacitance must be positive, got {c}")
        return self._add(Element(CAP, a, b, c=float(c), tag=tag))

    def add_switch(self, name: str, a, b=GND, g: float = 1e4) -> int:
        """Conductance ``g`` between a and b, open until switched on."""
        if not g > 0:
            raise ValueError(f"switch conductance must be positive, got {g}")
        if name in self.switches:
            raise ValueError(f"duplicate switch {name!r}")
        idx = self._add(Element(SWITCH, a, b, g=float(g), tag=("switch", name)))
        self.switches[name] = idx
        return idx

    def add_voltage_source(self, node, waveform: Optional[Callable] = None) -> None:
        """Impose the node voltage. ``waveform(t)`` returns alpha/beta samples of shape (len(t), 2)."""
        self._force(node)
        self.sources.append(VoltageSource(node, waveform))

    def add_current_source(self, node, amp: complex) -> None:
        self._touch(node)
        self.current_sources.append(CurrentSource(node, complex(amp)))

    def add_machine(self, name: str, bus, r: float, l: float, h2: float, d: float = 0.0) -> Machine:
        if not h2 > 0:
            raise ValueError(f"machine {name}: inertia must be positive")
        node = f"E:{name}"
        self._force(node)
        el = self.add_rl(node, bus, r, l, tag=("machine", name))
        m = Machine(name, bus, node, el, float(h2), float(d))
        self.machines.append(m)
        return m

    def elements_tagged(self, pred) -> list:
        return [i for i, el in enumerate(self.elements) if pred(el.tag)]


def element_admittance(el: Element, omega: float, closed: bool = False) -> complex:
    """Phasor admittance of one element at angular frequency ``omega``."""
    if el.kind == RL:
        return 1.0 / complex(el.r, omega * el.l)
    if el.kind == CAP:
        return 1j * omega * el.c
    return el.g if closed else 0.0


def companion(kinds: np.ndarray, r, l, c, g, closed, dt: float, trapezoidal: bool):
    """Per-element (G, hv, hi) so that i_k = G v_k + hv v_{k-1} + hi i_{k-1}."""
    n = len(kinds)
    G = np.zeros(n)
    hv = np.zeros(n)
    hi = np.zeros(n)
    for e in range(n):
        if kinds[e] == RL:
            if l[e] == 0.0:
                G[e] = 1.0 / r[e]
            elif trapezoidal:
                G[e] = 1.0 / (r[e] + 2.0 * l[e] / dt)
                hv[e] = G[e]
                hi[e] = G[e] * (2.0 * l[e] / dt - r[e])
            else:
                G[e] = 1.0 / (r[e] + l[e] / dt)
                hi[e] = G[e] * l[e] / dt
        elif kinds[e] == CAP:
            if trapezoidal:
                G[e] = 2.0 * c[e] / dt
                hv[e] = -G[e]
                hi[e] = -1.0
            else:
                G[e] = c[e] / dt
                hv[e] = -G[e]
        else:
            G[e] = g[e] if closed[e] else 0.0
    return G, hv, hi
