"""Fixed-step nodal EMT solver built on trapezoidal companion models."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericalError, SingularNetworkError
from . import kernel
from .circuit import GND, SWITCH, Circuit, Element, companion, element_admittance
from .hooks import InjectionHook

def warped_omega(omega: float, dt: float) -> float:
    """Frequency at which the continuous network matches the trapezoidal one at ``omega``."""
    return 2.0 / dt * math.tan(omega * dt / 2.0)


@dataclass
class RunRecord:
    """Raw arrays from one :meth:`Simulator.run` call; row 0 is the starting state."""
    k0: int
    dt: float
    v: Dict[object, np.ndarray]
    i: Dict[int, np.ndarray]
    machines: Dict[str, np.ndarray]
    hooks: List[np.ndarray]
    tsa: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        for rec in (self.v, self.i, self.machines):
            if rec:
                return len(next(iter(rec.values())))
        return 0

    @property
    def t(self) -> np.ndarray:
        return (self.k0 + np.arange(self.n)) * self.dt


class Simulator:
    """EMT solver instance for one circuit.

    Parameters
    ----------
    circuit : Circuit
    dt : float
        Step in seconds.
    f0 : float
        Fundamental frequency in Hz (machine EMFs and phasor sources).
    hooks : sequence of InjectionHook
        Current injections attached to free nodes.
    """

    def __init__(self, circuit: Circuit, dt: float, f0: float = 60.0,
                 hooks: Sequence[InjectionHook] = ()):
        if not (math.isfinite(dt) and dt > 0):
            raise ValueError(f"dt must be positive, got {dt}")
        self.circuit = circuit
        self.dt = float(dt)
        self.f0 = float(f0)
        self.w0 = 2 * math.pi * self.f0
        self.free = circuit.free_nodes
        self.forced = circuit.forced_nodes
        self.nu = len(self.free)
        self.n_all = self.nu + len(self.forced)
        self.index = {n: i for i, n in enumerate(self.free + self.forced)}
        self.index[GND] = self.n_all
        els = circuit.elements
        self.kinds = np.array([e.kind for e in els], dtype=np.int64)
        self.r = np.array([e.r for e in els])
        self.l = np.array([e.l for e in els])
        self.c = np.array([e.c for e in els])
        self.g = np.array([e.g for e in els])
        self.ef = np.array([self.index[e.a] for e in els], dtype=np.int64)
        self.et = np.array([self.index[e.b] for e in els], dtype=np.int64)
        self.closed = np.zeros(len(els), dtype=bool)
        self.switch_index = dict(circuit.switches)
        self.hooks = list(hooks)
        self.gsh = np.zeros(self.n_all)
        for hk in self.hooks:
            if hk.bus not in self.index or self.index[hk.bus] >= self.nu:
                raise ValueError(f"hook bus {hk.bus!r} is not a free node")
            hk.bind(self.dt, self.f0)
            self.gsh[self.index[hk.bus]] += hk.conductance
        ms = circuit.machines
        self.machine_names = [m.name for m in ms]
        self.m_node = np.array([self.index[m.node] for m in ms], dtype=np.int64)
        self.m_elem = np.array([m.element for m in ms], dtype=np.int64)
        self.m_E = np.zeros(len(ms))
        self.m_st = np.zeros((len(ms), 3))
        self.m_par = np.array([[0.0, m.h2, m.d] for m in ms]).reshape(len(ms), 3)
        self.s_node = np.array([self.index[s.node] for s in circuit.sources], dtype=np.int64)
        self.c_node = np.array([self.index[s.node] for s in circuit.current_sources], dtype=np.int64)
        self.c_amp = np.array([s.amp for s in circuit.current_sources], dtype=complex)
        self.v = np.zeros((self.n_all + 1, 2))
        self.ib = np.zeros((len(els), 2))
        self.k = 0
        self.pending_cda = True
        self._topo: Dict[tuple, tuple] = {}
        self._vlog: List[np.ndarray] = []

    # -- configuration -------------------------------------------------------
    def node_index(self, node) -> int:
        try:
            return self.index[node]
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    def add_switch(self, name: str, node, g: float = 1e4) -> int:
        """Add an open shunt conductance at ``node`` after construction."""
        if name in self.switch_index:
            raise ValueError(f"duplicate switch {name!r}")
        if not g > 0:
            raise ValueError("switch conductance must be positive")
        self.node_index(node)
        self.circuit.elements.append(Element(SWITCH, node, GND, g=float(g), tag=("switch", name)))
        self.circuit.switches[name] = len(self.circuit.elements) - 1
        self.switch_index[name] = len(self.circuit.elements) - 1
        self.kinds = np.append(self.kinds, SWITCH)
        self.r = np.append(self.r, 0.0)
        self.l = np.append(self.l, 0.0)
        self.c = np.append(self.c, 0.0)
        self.g = np.append(self.g, float(g))
        self.ef = np.append(self.ef, self.index[node])
        self.et = np.append(self.et, self.n_all)
        self.closed = np.append(self.closed, False)
        self.ib = np.vstack([self.ib, np.zeros((1, 2))])
        self._topo.clear()
        return self.switch_index[name]

    def set_switch(self, name: str, closed: bool) -> None:
        idx = self.switch_index[name]
        if bool(self.closed[idx]) != bool(closed):
            self.closed[idx] = bool(closed)
            self.pending_cda = True

    def conductance_matrix(self, trapezoidal: bool = True) -> np.ndarray:
        """Full nodal conductance matrix (free and forced nodes) for the present topology."""
        h = self.dt if trapezoidal else self.dt / 2
        G, _, _ = companion(self.kinds, self.r, self.l, self.c, self.g, self.closed, h, trapezoidal)
        M = np.zeros((self.n_all + 1, self.n_all + 1))
        np.add.at(M, (self.ef, self.ef), G)
        np.add.at(M, (self.et, self.et), G)
        np.add.at(M, (self.ef, self.et), -G)
        np.add.at(M, (self.et, self.ef), -G)
        M = M[:self.n_all, :self.n_all]
        M[np.diag_indices(self.n_all)] += self.gsh
        return M

    def _matrices(self, trapezoidal: bool):
        key = (trapezoidal, self.closed.tobytes())
        if key not in self._topo:
            h = self.dt if trapezoidal else self.dt / 2
            ge, hv, hi = companion(self.kinds, self.r, self.l, self.c, self.g, self.closed,
                                   h, trapezoidal)
            M = self.conductance_matrix(trapezoidal)
            guu = M[:self.nu, :self.nu]
            guk = np.ascontiguousarray(M[:self.nu, self.nu:])
            if self.nu:
                cond = np.linalg.cond(guu)
                if not np.isfinite(cond) or cond > 1e15:
                    raise SingularNetworkError(
                        f"conductance matrix is singular (condition {cond:.3g}); isolated node?",
                        condition=cond)
                ginv = np.linalg.inv(guu)
            else:
                ginv = np.zeros((0, 0))
            self._topo[key] = (np.ascontiguousarray(ginv), guk, ge, hv, hi)
        return self._topo[key]

    # -- initial state ---------------------------------------------------------
    def init_rest(self, machine_emf: Optional[Dict[str, complex]] = None) -> None:
        """Zero voltages and currents; the first step is a damped restart."""
        self.v[:] = 0.0
        self.ib[:] = 0.0
        self.m_st[:] = 0.0
        for name, e in (machine_emf or {}).items():
            m = self.machine_names.index(name)
            self.m_E[m] = abs(e)
            self.m_st[m, 0] = np.angle(e)
        self.k = 0
        self.pending_cda = True
        self._vlog.clear()

    def init_state(self, v: Dict[object, Sequence[float]], i: Optional[Dict[int, Sequence[float]]] = None,
                   k: int = 0) -> None:
        """Impose instantaneous node voltages and element currents (no damping step)."""
        self.v[:] = 0.0
        self.ib[:] = 0.0
        for node, val in v.items():
            self.v[self.node_index(node)] = val
        for e, val in (i or {}).items():
            self.ib[e] = val
        self.k = k
        self.pending_cda = False
        self._vlog.clear()

    def steady_state(self, sources: Optional[Dict[object, complex]] = None,
                     machine_emf: Optional[Dict[str, complex]] = None,
                     injections: Optional[Dict[object, complex]] = None) -> np.ndarray:
        """Solve the sinusoidal steady state and load it as the state at t = 0.

        Element admittances are taken at the warped frequency so that the
        sampled sinusoid is an exact fixed point of the trapezoidal recursion.
        Returns the phasor of every node (free then forced).
        """
        sources = dict(sources or {})
        machine_emf = dict(machine_emf or {})
        injections = dict(injections or {})
        ww = warped_omega(self.w0, self.dt)
        Y = np.zeros((self.n_all + 1, self.n_all + 1), dtype=complex)
        ys = np.array([element_admittance(el, ww, bool(self.closed[e]))
                       for e, el in enumerate(self.circuit.elements)], dtype=complex)
        np.add.at(Y, (self.ef, self.ef), ys)
        np.add.at(Y, (self.et, self.et), ys)
        np.add.at(Y, (self.ef, self.et), -ys)
        np.add.at(Y, (self.et, self.ef), -ys)
        Y = Y[:self.n_all, :self.n_all]
        Y[np.diag_indices(self.n_all)] += self.gsh
        V = np.zeros(self.n_all, dtype=complex)
        for node, ph in sources.items():
            V[self.node_index(node)] = ph
        for m, name in enumerate(self.machine_names):
            if name not in machine_emf:
                raise KeyError(f"no EMF given for machine {name}")
            V[self.m_node[m]] = machine_emf[name]
        I = np.zeros(self.n_all, dtype=complex)
        for node, amp in injections.items():
            I[self.node_index(node)] += amp
        for c, amp in zip(self.c_node, self.c_amp):
            I[c] += amp
        nu = self.nu
        if nu:
            V[:nu] = np.linalg.solve(Y[:nu, :nu], I[:nu] - Y[:nu, nu:] @ V[nu:])
        Vg = np.append(V, 0.0)
        Ie = ys * (Vg[self.ef] - Vg[self.et])
        self.v[:, 0] = Vg.real
        self.v[:, 1] = Vg.imag
        self.ib[:, 0] = Ie.real
        self.ib[:, 1] = Ie.imag
        for m, name in enumerate(self.machine_names):
            e = machine_emf[name]
            self.m_E[m] = abs(e)
            self.m_st[m] = (np.angle(e), 0.0, (e * np.conj(Ie[self.m_elem[m]])).real)
            self.m_par[m, 0] = self.m_st[m, 2]
        self.k = 0
        self.pending_cda = False
        self._vlog.clear()
        return V

    # -- time stepping ---------------------------------------------------------
    def run(self, n_steps: int, *, record_nodes: Iterable = (), record_elements: Iterable[int] = (),
            events: Iterable[Tuple[int, str, bool]] = (), native: bool = True) -> RunRecord:
        """Advance ``n_steps`` steps.

        ``events`` are (step, switch name, closed) tuples in absolute step
        indices; the switch changes before that step is solved. A step that
        follows a switching event (or a rest start) is taken as two
        backward-Euler half steps to suppress trapezoidal ringing.
        """
        n_steps = int(n_steps)
        if n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        k0 = self.k
        k1 = k0 + n_steps
        hook_nodes = [self.index[h.bus] for h in self.hooks]
        rec_labels = list(dict.fromkeys(list(record_nodes) + [h.bus for h in self.hooks]))
        rec_nodes = np.array([self.node_index(n) for n in rec_labels], dtype=np.int64)
        rec_elems = np.array(list(record_elements), dtype=np.int64)
        n = n_steps + 1
        rec_v = np.zeros((n, len(rec_nodes), 2))
        rec_i = np.zeros((n, len(rec_elems), 2))
        nm = len(self.machine_names)
        rec_m = np.zeros((n, nm, 3))
        rec_v[0] = self.v[rec_nodes]
        if len(rec_elems):
            rec_i[0] = self.ib[rec_elems]
        rec_m[0] = self.m_st
        t = (k0 + np.arange(n)) * self.dt
        s_vals = np.zeros((n, len(self.s_node), 2))
        for j, src in enumerate(self.circuit.sources):
            if src.waveform is not None:
                s_vals[:, j, :] = np.asarray(src.waveform(t), dtype=float).reshape(n, 2)
            else:
                s_vals[:, j, :] = self.v[self.s_node[j]]

        use_native = native and all(h.native_kind is not None for h in self.hooks)
        hook_rec = [np.zeros((n, 2)) for _ in self.hooks]
        packs = self._pack_native(n) if use_native else self._pack_native(n, empty=True)
        x_inj = np.zeros((self.n_all + 1, 2))
        rot_slot = {}
        if not use_native:
            for h in self.hooks:
                h.reset_sequence()
            # rotating hooks share the kernel's rotating-source slots
            rot_hooks = [j for j, h in enumerate(self.hooks) if h.rotating]
            nc = packs[15].shape[0]
            rot_slot = {j: nc + i for i, j in enumerate(rot_hooks)}
            packs = packs[:15] + (
                np.concatenate([packs[15], np.array([hook_nodes[j] for j in rot_hooks], dtype=np.int64)]),
                np.concatenate([packs[16], np.zeros(len(rot_hooks), dtype=complex)]))

        ev = {}
        for (ke, name, closed) in events:
            if name not in self.switch_index:
                raise KeyError(f"unknown switch {name!r}")
            if k0 < ke <= k1:
                ev.setdefault(int(ke), []).append((name, bool(closed)))
        # record initial hook injections for native hooks
        if use_native:
            self._native_initial_records(packs, hook_rec)

        def call(ka, kb_, nsub, trap):
            ginv, guk, ge, hv, hi = self._matrices(trap)
            (f_node, f_a, f_b, f_b0, f_ih, f_vh, rec_f,
             t_node, t_ring, t_tw, t_M, t_c, t_r, t_out, rec_t, c_node, c_amp) = packs
            status = kernel.advance(
                ka, kb_, k0, nsub, self.dt, self.w0,
                ginv, guk, ge, hv, hi, self.ef, self.et, self.nu,
                self.v, self.ib, self.s_node, s_vals,
                self.m_node, self.m_elem, self.m_E, self.m_st, self.m_par,
                c_node, c_amp, x_inj,
                f_node, f_a, f_b, f_b0, f_ih, f_vh,
                t_node, t_ring, t_tw, t_M, t_c, t_r, t_out,
                rec_nodes, rec_elems, rec_v, rec_i, rec_m, rec_f, rec_t)
            if status >= 0:
                raise NumericalError(f"non-finite solution at step {status}", step=status)

        k = k0
        if use_native:
            while k < k1:
                for name, closed in ev.get(k + 1, ()):
                    self.set_switch(name, closed)
                if self.pending_cda:
                    call(k, k + 1, 2, False)
                    self.pending_cda = False
                    k += 1
                    continue
                nxt = min([ke - 1 for ke in ev if ke - 1 > k] + [k1])
                call(k, nxt, 1, True)
                k = nxt
            self._unpack_native(packs, hook_rec)
        else:
            prior = self._prior_history(hook_nodes)
            n_prior = prior.shape[0]
            past_buf = np.zeros((n_prior + n, len(self.hooks), 2))
            past_buf[:n_prior] = prior
            past_buf[n_prior] = self.v[hook_nodes]
            for j in rot_slot:
                z = complex(self.hooks[j].phasor(k0, past_buf[:n_prior, j])) * cmath.exp(1j * self.w0 * k0 * self.dt)
                hook_rec[j][0] = (z.real, z.imag)
            while k < k1:
                for name, closed in ev.get(k + 1, ()):
                    self.set_switch(name, closed)
                x_inj[:] = 0.0
                m = n_prior + k - k0 + 1
                for j, h in enumerate(self.hooks):
                    past = past_buf[:m, j]
                    past.flags.writeable = False
                    if j in rot_slot:
                        p = complex(h.phasor(k + 1, past))
                        packs[16][rot_slot[j]] = p
                        z = p * cmath.exp(1j * self.w0 * (k + 1) * self.dt)
                        val = np.array([z.real, z.imag])
                    else:
                        val = np.asarray(h(k + 1, past), dtype=float).reshape(2)
                    if not np.all(np.isfinite(val)):
                        raise NumericalError(f"hook at {h.bus!r} returned a non-finite value "
                                             f"at step {k + 1}", step=k + 1)
                    if j not in rot_slot:
                        x_inj[hook_nodes[j]] += val
                    hook_rec[j][k + 1 - k0] = val
                if self.pending_cda:
                    call(k, k + 1, 2, False)
                    self.pending_cda = False
                else:
                    call(k, k + 1, 1, True)
                k += 1
                past_buf[m] = self.v[hook_nodes]
            for j, h in enumerate(self.hooks):
                h.finish(k1, self.v[hook_nodes[j]].copy())
                h.reset_sequence()
                # the Norton conductance current is part of the hook's injection
                if h.conductance:
                    hook_rec[j] -= h.conductance * rec_v[:, rec_labels.index(h.bus)]
        self.k = k1
        self._remember_history(hook_nodes, rec_v, rec_labels)
        rec = RunRecord(
            k0=k0, dt=self.dt,
            v={lab: rec_v[:, i] for i, lab in enumerate(rec_labels)},
            i={int(e): rec_i[:, i] for i, e in enumerate(rec_elems)},
            machines={name: rec_m[:, m] for m, name in enumerate(self.machine_names)},
            hooks=hook_rec,
        )
        if use_native:
            tsa_hooks = [j for j, h in enumerate(self.hooks) if h.native_kind == "tsa"]
            rec.tsa = {j: packs[14][:, a, 2:4] for a, j in enumerate(tsa_hooks)}
        return rec

    # -- helpers for the two hook paths ----------------------------------------
    def _prior_history(self, hook_nodes):
        """Hook-bus voltages of earlier runs since the last initialization."""
        if not self._vlog:
            return np.zeros((0, len(hook_nodes), 2))
        return np.concatenate(self._vlog, axis=0)

    def _remember_history(self, hook_nodes, rec_v, rec_labels):
        # the last row is the present state and reappears as row 0 of the next run
        cols = [rec_labels.index(h.bus) for h in self.hooks]
        self._vlog.append(rec_v[:-1, cols].copy())

    def _pack_native(self, n, empty=False):
        fd = [] if empty else [h for h in self.hooks if h.native_kind == "fdne"]
        ts = [] if empty else [h for h in self.hooks if h.native_kind == "tsa"]
        cs = [] if empty else [h for h in self.hooks if h.native_kind == "current"]
        nmax = max([h.order for h in fd], default=0)
        f_node = np.array([self.index[h.bus] for h in fd], dtype=np.int64)
        f_a = np.zeros((len(fd), nmax))
        f_b = np.zeros((len(fd), nmax))
        f_ih = np.zeros((len(fd), nmax, 2))
        f_vh = np.zeros((len(fd), nmax, 2))
        f_b0 = np.array([h.b0 for h in fd], dtype=float)
        for a, h in enumerate(fd):
            f_a[a, :h.order] = h.a
            f_b[a, :h.order] = h.b
            f_ih[a, :h.order] = h.ih
            f_vh[a, :h.order] = h.vh
        rec_f = np.zeros((n, len(fd), 2))
        if ts:
            N = ts[0].window
            M = ts[0].macro
            if any(h.window != N or h.macro != M for h in ts):
                raise ValueError("all TSA hooks must share window and macro step")
            t_tw = ts[0].twiddle.copy()
        else:
            N, M = 1, 1
            t_tw = np.ones(1, dtype=complex)
        t_node = np.array([self.index[h.bus] for h in ts], dtype=np.int64)
        t_ring = np.array([h.ring for h in ts], dtype=float).reshape(len(ts), N)
        t_c = np.array([h.cparams for h in ts], dtype=complex).reshape(len(ts), kernel.T_NCPLX)
        t_r = np.array([h.rparams for h in ts], dtype=float).reshape(len(ts), kernel.T_NREAL)
        t_out = np.array([h.out for h in ts], dtype=complex)
        rec_t = np.zeros((n, len(ts), 4))
        c_node = np.concatenate([self.c_node, np.array([self.index[h.bus] for h in cs], dtype=np.int64)])
        c_amp = np.concatenate([self.c_amp, np.array([h.amp for h in cs], dtype=complex)])
        self._native_groups = (fd, ts, cs)
        return (f_node, f_a, f_b, f_b0, f_ih, f_vh, rec_f,
                t_node, t_ring, t_tw, np.int64(M), t_c, t_r, t_out, rec_t,
                c_node.astype(np.int64), c_amp)

    def _native_initial_records(self, packs, hook_rec):
        fd, ts, cs = self._native_groups
        k0 = self.k
        for a, h in enumerate(fd):
            # drawn current at the starting step, from the stored history
            packs[6][0, a] = h.ih[0] if h.order else 0.0
        for a, h in enumerate(ts):
            z = h.out * np.exp(1j * self.w0 * k0 * self.dt)
            packs[14][0, a] = (z.real, z.imag, h.rparams[kernel.T_DELTA], h.rparams[kernel.T_DW])

    def _unpack_native(self, packs, hook_rec):
        fd, ts, cs = self._native_groups
        (f_node, f_a, f_b, f_b0, f_ih, f_vh, rec_f,
         t_node, t_ring, t_tw, t_M, t_c, t_r, t_out, rec_t, c_node, c_amp) = packs
        n = rec_f.shape[0]
        t = (self.k + np.arange(n)) * self.dt
        for a, h in enumerate(fd):
            h.ih[:] = f_ih[a, :h.order]
            h.vh[:] = f_vh[a, :h.order]
            h.k_last = None
        for a, h in enumerate(ts):
            h.ring[:] = t_ring[a]
            h.rparams[:] = t_r[a]
            h.out = complex(t_out[a])
            h.k_seen = self.k + n - 1
        for j, h in enumerate(self.hooks):
            if h.native_kind == "fdne":
                hook_rec[j][:] = -rec_f[:, fd.index(h)]
            elif h.native_kind == "tsa":
                hook_rec[j][:] = rec_t[:, ts.index(h), :2]
            elif h.native_kind == "current":
                z = h.amp * np.exp(1j * self.w0 * t)
                hook_rec[j][:, 0] = z.real
                hook_rec[j][:, 1] = z.imag
