"""Nodal admittance assembly, Kron elimination and port admittance sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np

from .casefile import GROUND, CaseFile, Generator, Load
from .errors import CaseError, OperatingPointError, SingularNetworkError

# Largest condition number accepted for an eliminated block.
MAX_CONDITION = 1e13


@dataclass(frozen=True)
class ComplexMatrix:
    """Dense complex matrix whose rows and columns share one label list."""

    values: np.ndarray
    labels: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        labels = tuple(self.labels)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError(f"matrix must be square, got shape {vals.shape}")
        if len(labels) != vals.shape[0]:
            raise ValueError(f"{len(labels)} labels for a {vals.shape[0]}x{vals.shape[0]} matrix")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, labels: Iterable[Hashable]) -> list:
        pos = {lab: i for i, lab in enumerate(self.labels)}
        out = []
        for lab in labels:
            if lab not in pos:
                raise KeyError(f"label {lab!r} not in matrix")
            out.append(pos[lab])
        return out

    def block(self, rows, cols) -> np.ndarray:
        return self.values[np.ix_(self.index(rows), self.index(cols))]

    def __getitem__(self, key):
        r, c = key
        i, j = self.index([r, c])
        return self.values[i, j]

    def asymmetry(self) -> float:
        """Largest |Y_ij - Y_ji| relative to the largest entry."""
        scale = np.max(np.abs(self.values)) if self.values.size else 0.0
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(self.values - self.values.T)) / scale)


def machine_node(gen: Generator) -> str:
    """Label of the internal EMF node added for ``gen``."""
    return f"E:{gen.id}"


def branch_series_admittance(r: float, x: float, omega: float, omega0: float) -> complex:
    z = complex(r, x * omega / omega0)
    if z == 0:
        raise CaseError(f"branch r={r}, x={x} has zero impedance at omega={omega}")
    return 1.0 / z


def load_admittance(load: Load, vmag: float, omega: float, omega0: float) -> complex:
    """Constant-impedance load as parallel G with an L or C part.

    The inductive susceptance scales as omega0/omega and the capacitive one as
    omega/omega0.
    """
    if vmag <= 0:
        raise CaseError(f"load at bus {load.bus}: operating voltage must be positive")
    g = load.p / vmag**2
    b = -load.q / vmag**2
    if b < 0:
        if omega == 0:
            raise CaseError(f"inductive load at bus {load.bus} is a short circuit at DC")
        b *= omega0 / omega
    else:
        b *= omega / omega0
    return complex(g, b)


def machine_impedance(gen: Generator, base_mva: float, omega: float, omega0: float) -> complex:
    """Ra + jX'd converted to the system base, reactance scaled with frequency."""
    scale = base_mva / gen.mva
    return complex(gen.ra * scale, gen.xd * scale * omega / omega0)


def build_admittance(case: CaseFile, bus_subset: Optional[Sequence[int]] = None,
                     omega: Optional[float] = None, *, machines: Optional[str] = None,
                     loads: bool = True) -> ComplexMatrix:
    """Assemble Y(omega) over ``bus_subset`` (all buses by default).

    Branches are included when every non-ground endpoint is in the subset.
    ``machines`` selects how generator reactances enter: ``None`` leaves them
    out, ``"internal"`` adds an internal EMF node per generator (label from
    :func:`machine_node`) and ``"shorted"`` ties the reactance to ground.
    Only constant-impedance loads are stamped.
    """
    omega0 = case.omega0
    if omega is None:
        omega = omega0
    if not math.isfinite(omega) or omega < 0:
        raise ValueError(f"omega must be finite and >= 0, got {omega}")
    if machines not in (None, "internal", "shorted"):
        raise ValueError(f"machines must be None, 'internal' or 'shorted', got {machines!r}")
    known = set(case.bus_ids)
    buses = list(case.bus_ids) if bus_subset is None else list(bus_subset)
    for b in buses:
        if b not in known:
            raise CaseError(f"unknown bus id {b}")
    if len(set(buses)) != len(buses):
        raise ValueError("bus subset has duplicates")
    sub = set(buses)
    gens = [g for g in case.generators if g.bus in sub] if machines else []
    labels = buses + ([machine_node(g) for g in gens] if machines == "internal" else [])
    pos = {lab: i for i, lab in enumerate(labels)}
    Y = np.zeros((len(labels), len(labels)), dtype=complex)
    scale = omega / omega0

    def stamp(a, b, y):
        if a is not None:
            Y[a, a] += y
        if b is not None:
            Y[b, b] += y
        if a is not None and b is not None:
            Y[a, b] -= y
            Y[b, a] -= y

    for br in case.branches:
        ends = {br.from_bus, br.to_bus} - {GROUND}
        if not ends <= sub:
            continue
        a = pos.get(br.from_bus)
        b = pos.get(br.to_bus)
        stamp(a, b, branch_series_admittance(br.r, br.x, omega, omega0))
        if br.b:
            ysh = 0.5j * br.b * scale
            for end in (a, b):
                if end is not None:
                    Y[end, end] += ysh
    if loads:
        vm = {b.id: b.v for b in case.buses}
        for ld in case.loads:
            if ld.bus in sub and ld.model == "impedance":
                i = pos[ld.bus]
                Y[i, i] += load_admittance(ld, vm[ld.bus], omega, omega0)
    for g in gens:
        z = machine_impedance(g, case.base_mva, omega, omega0)
        if z == 0:
            raise CaseError(f"generator {g.id} has zero impedance at DC; set ra > 0")
        y = 1.0 / z
        if machines == "internal":
            stamp(pos[g.bus], pos[machine_node(g)], y)
        else:
            stamp(pos[g.bus], None, y)
    return ComplexMatrix(Y, tuple(labels))


def kron_reduce(Y: ComplexMatrix, retain: Sequence[Hashable]) -> ComplexMatrix:
    """Eliminate every label not in ``retain``.

    Y_red = Y_rr - Y_re Y_ee^-1 Y_er, labelled in the caller's order.
    """
    retain = list(retain)
    if not retain:
        raise ValueError("retain set is empty")
    r = Y.index(retain)
    if len(set(r)) != len(r):
        raise ValueError("retain set has duplicates")
    keep = set(r)
    e = [i for i in range(Y.size) if i not in keep]
    Yrr = Y.values[np.ix_(r, r)]
    if not e:
        return ComplexMatrix(Yrr.copy(), tuple(retain))
    Yee = Y.values[np.ix_(e, e)]
    cond = np.linalg.cond(Yee)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularNetworkError(
            f"eliminated block is singular (condition estimate {cond:.3g})", condition=cond)
    Yre = Y.values[np.ix_(r, e)]
    Yer = Y.values[np.ix_(e, r)]
    return ComplexMatrix(Yrr - Yre @ np.linalg.solve(Yee, Yer), tuple(retain))


def port_admittance_sweep(case: CaseFile, port: int, freqs: Iterable[float]) -> np.ndarray:
    """Driving-point admittance of the external area seen from ``port``.

    ``case`` may be a full case (its external view is taken) or an external
    view. Generator EMFs are shorted behind Ra + jX'd, constant-current loads
    are opened and constant-impedance loads are kept.
    """
    part = case.require_partition()
    if part.study:
        case = case.external_view()
        part = case.partition
    if port != part.boundary and port not in part.external:
        raise CaseError(f"port {port} is not in the external area")
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if np.any(~np.isfinite(freqs)) or np.any(freqs <= 0):
        raise ValueError("frequencies must be positive and finite")
    out = np.empty(freqs.shape, dtype=complex)
    for i, f in enumerate(freqs):
        Y = build_admittance(case, omega=2 * math.pi * f, machines="shorted")
        out[i] = kron_reduce(Y, [port]).values[0, 0]
    return out


# -- operating point ---------------------------------------------------------

def bus_injections(case: CaseFile) -> np.ndarray:
    """Specified complex power injection per bus (generation minus non-Z load)."""
    idx = {b: i for i, b in enumerate(case.bus_ids)}
    s = np.zeros(len(idx), dtype=complex)
    for g in case.generators:
        s[idx[g.bus]] += complex(g.p, g.q)
    for ld in case.loads:
        if ld.model != "impedance":
            s[idx[ld.bus]] -= complex(ld.p, ld.q)
    return s


def injection_mismatch(case: CaseFile) -> np.ndarray:
    """V conj(Y V) minus the specified injections, per bus, at nominal frequency."""
    Y = build_admittance(case).values
    V = np.array([b.phasor for b in case.buses])
    return V * np.conj(Y @ V) - bus_injections(case)


def check_operating_point(case: CaseFile, tol: float = 1e-4) -> float:
    """Raise OperatingPointError when the largest bus mismatch exceeds ``tol``."""
    mis = injection_mismatch(case)
    worst = float(np.max(np.abs(mis))) if mis.size else 0.0
    if worst > tol:
        bus = case.bus_ids[int(np.argmax(np.abs(mis)))]
        raise OperatingPointError(
            f"operating point mismatch {worst:.3g} pu at bus {bus} exceeds {tol:g}", mismatch=mis)
    return worst


def solve_power_flow(case: CaseFile, slack: int, *, tol: float = 1e-12,
                     max_iter: int = 30) -> CaseFile:
    """Newton-Raphson load flow with generator buses as PV buses.

    All loads are treated as constant power at their specified values; the
    returned case carries the solved voltages and generator outputs so that the
    constant-impedance conversion reproduces the same powers exactly.
    """
    ids = case.bus_ids
    idx = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    net = replace(case, loads=())
    Y = build_admittance(net).values
    gen_buses = {g.bus for g in case.generators}
    if slack not in gen_buses:
        raise CaseError(f"slack bus {slack} has no generator")
    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for g in case.generators:
        p_spec[idx[g.bus]] += g.p
    for ld in case.loads:
        p_spec[idx[ld.bus]] -= ld.p
        q_spec[idx[ld.bus]] -= ld.q
    vm = np.array([b.v for b in case.buses])
    va = np.array([b.angle for b in case.buses])
    pv = [idx[b] for b in sorted(gen_buses) if b != slack]
    pq = [i for i in range(n) if ids[i] not in gen_buses]
    ang_idx = pv + pq
    for it in range(max_iter):
        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        dp = p_spec - S.real
        dq = q_spec - S.imag
        mis = np.concatenate([dp[ang_idx], dq[pq]])
        if np.max(np.abs(mis)) < tol:
            break
        # dS/dVa and dS/dVm in the usual complex form
        Ibus = Y @ V
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y @ np.diag(V))
        dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(V / vm)) + np.diag(V / vm) @ np.conj(np.diag(Ibus))
        J = np.block([
            [dS_dVa.real[np.ix_(ang_idx, ang_idx)], dS_dVm.real[np.ix_(ang_idx, pq)]],
            [dS_dVa.imag[np.ix_(pq, ang_idx)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, mis)
        va[ang_idx] += dx[:len(ang_idx)]
        vm[pq] += dx[len(ang_idx):]
    else:
        raise OperatingPointError(f"power flow did not converge in {max_iter} iterations")
    V = vm * np.exp(1j * va)
    S = V * np.conj(Y @ V)
    load_s = np.zeros(n, dtype=complex)
    for ld in case.loads:
        load_s[idx[ld.bus]] += complex(ld.p, ld.q)
    gen_s = S + load_s
    gens = []
    for g in case.generators:
        same = [h for h in case.generators if h.bus == g.bus]
        share = g.mva / sum(h.mva for h in same)
        s = gen_s[idx[g.bus]] * share
        if g.bus == slack or len(same) > 1:
            gens.append(replace(g, p=float(s.real), q=float(s.imag)))
        else:
            gens.append(replace(g, q=float(s.imag)))
    buses = [replace(b, v=float(vm[idx[b.id]]), angle=float(va[idx[b.id]])) for b in case.buses]
    return replace(case, buses=tuple(buses), generators=tuple(gens))


__all__ = ["ComplexMatrix", "build_admittance", "kron_reduce", "port_admittance_sweep",
           "machine_node", "machine_impedance", "load_admittance", "branch_series_admittance",
           "bus_injections", "injection_mismatch", "check_operating_point", "solve_power_flow"]
