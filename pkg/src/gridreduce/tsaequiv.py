"""Phasor-domain equivalent of the external area.

The external generators are aggregated into one classical machine, the
external network is Kron-reduced to the boundary bus b and the equivalent
machine's terminal bus g, and the result runs as a multirate phasor model
coupled to the EMT solver through a current injection at b.

Conventions: phasors are peak values referenced to a cosine at t = 0, so
v(t) = |V| cos(w0 t + angle V). ``I_b`` is the current drawn by the external
network at b; the hook injects ``-I_b + Y60 V_b`` into the boundary bus.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._validation import check_int, check_scalar
from .casefile import CaseFile, Generator
from .emtsim import kernel
from .emtsim.hooks import InjectionHook
from .errors import CaseError
from .netmodel import ComplexMatrix, build_admittance, kron_reduce

DEFAULT_MACRO = 20


@dataclass(frozen=True)
class Phasor:
    """Peak-magnitude phasor; the angle is kept unwrapped."""
    magnitude: float
    angle: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.magnitude) and math.isfinite(self.angle)):
            raise ValueError("phasor must be finite")
        if self.magnitude < 0:
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude}")

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor":
        return cls(abs(z), cmath.phase(z))

    @property
    def value(self) -> complex:
        return cmath.rect(self.magnitude, self.angle)

    def __complex__(self):
        return self.value

    @property
    def wrapped_angle(self) -> float:
        """Angle in (-pi, pi]."""
        a = math.remainder(self.angle, 2 * math.pi)
        return math.pi if a == -math.pi else a


def window_length(f0: float, dt: float) -> int:
    return int(round(1.0 / (f0 * dt)))


def extract_phasor(samples, f0: float, dt: float, t0: float = 0.0) -> Phasor:
    """Fundamental phasor of one cycle of samples taken at t0 + m dt.

    Integer harmonics fall on nulls of the full-cycle window.
    """
    x = np.asarray(samples, dtype=float)
    n = window_length(f0, dt)
    if x.ndim != 1 or x.size != n:
        raise ValueError(f"window must hold one cycle of {n} samples, got shape {x.shape}")
    t = t0 + np.arange(n) * dt
    z = 2.0 / n * np.sum(x * np.exp(-2j * np.pi * f0 * t))
    return Phasor.from_complex(complex(z))


def phasor_to_instantaneous(p, t, f0: float):
    """|p| cos(2 pi f0 t + angle p); ``p`` is a Phasor or complex."""
    z = complex(p)
    return np.abs(z) * np.cos(2 * np.pi * f0 * np.asarray(t, dtype=float) + np.angle(z))


class SlidingPhasor:
    """Running full-cycle DFT over the last N samples.

    Slot k % N holds the sample of step k, and the twiddle of a slot is that
    of any step mapped to it, which requires N dt f0 = 1.
    """

    def __init__(self, f0: float, dt: float):
        self.n = window_length(f0, dt)
        if abs(self.n * f0 * dt - 1.0) > 1e-9:
            raise ValueError(f"dt={dt:g} does not divide the {f0:g} Hz cycle into whole steps")
        self.f0 = f0
        self.dt = dt
        self.ring = np.zeros(self.n)
        self.twiddle = np.exp(-2j * np.pi * f0 * dt * np.arange(self.n))

    def push(self, k: int, value: float) -> None:
        self.ring[k % self.n] = value

    def fill(self, p: complex, k_last: int) -> None:
        """Load the steady samples of phasor ``p`` for the cycle ending at step k_last."""
        ks = np.arange(k_last - self.n + 1, k_last + 1)
        self.ring[ks % self.n] = phasor_to_instantaneous(p, ks * self.dt, self.f0)

    def phasor(self) -> complex:
        return complex(kernel.window_phasor(self.ring, self.twiddle))


# -- aggregation ----------------------------------------------------------------

@dataclass
class EquivalentGenerator:
    """Aggregated classical machine. ``xd`` is on the system base."""
    s_mva: float
    h: float
    d: float
    xd: float
    bus: int
    p: float = 0.0
    q: float = 0.0
    e: complex = 0j
    base_mva: float = 100.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("H_eq must be positive")
        if not self.xd > 0:
            raise ValueError("X'd_eq must be positive")

    @property
    def xd_machine_base(self) -> float:
        return self.xd * self.s_mva / self.base_mva

    @property
    def pm(self) -> float:
        return self.p

    def as_generator(self, gen_id: str = "EQ") -> Generator:
        return Generator(gen_id, self.bus, self.s_mva, self.h, self.xd_machine_base,
                         p=self.p, q=self.q, d=self.d)

    def to_dict(self) -> dict:
        return {"s_mva": self.s_mva, "h": self.h, "d": self.d, "xd_system": self.xd,
                "xd_machine": self.xd_machine_base, "bus": self.bus, "p": self.p, "q": self.q,
                "e_mag": abs(self.e), "e_angle": cmath.phase(self.e)}


def aggregate_generators(gens: Sequence[Generator], case: Optional[CaseFile] = None, *,
                         bus: Optional[int] = None, base_mva: Optional[float] = None) -> EquivalentGenerator:
    """Inertial aggregation of coherent machines.

    S_eq = sum S_i, H_eq and D_eq are MVA-weighted means and X'd_eq is the
    parallel combination on the system base. The machine sits at ``bus``
    (default: terminal of the largest machine, first on ties); with a case,
    E' comes from the aggregate P + jQ at that terminal voltage.
    """
    gens = list(gens)
    if not gens:
        raise ValueError("no generators to aggregate")
    base = base_mva if base_mva is not None else (case.base_mva if case is not None else 100.0)
    s = sum(g.mva for g in gens)
    h = sum(g.h * g.mva for g in gens) / s
    d = sum(g.d * g.mva for g in gens) / s
    ysum = sum(1.0 / (g.xd * base / g.mva) for g in gens)
    if len(gens) == 1:
        xd = gens[0].xd * base / gens[0].mva
    else:
        xd = 1.0 / ysum
    p = sum(g.p for g in gens)
    q = sum(g.q for g in gens)
    if bus is None:
        bus = max(gens, key=lambda g: g.mva).bus
    e = 0j
    if case is not None:
        v = case.bus(bus).phasor
        e = v + 1j * xd * np.conj(complex(p, q) / v)
    if len(gens) == 1:
        h, d = gens[0].h, gens[0].d
    return EquivalentGenerator(s_mva=float(s), h=float(h), d=float(d), xd=float(xd), bus=int(bus),
                               p=float(p), q=float(q), e=complex(e), base_mva=float(base))


def external_generators(case: CaseFile) -> list:
    part = case.require_partition()
    # the partition lists external generator buses; default is every external machine
    buses = set(part.external_generators) or set(part.external)
    gens = [g for g in case.generators if g.bus in buses]
    if not gens:
        raise CaseError("external area has no generators")
    return gens


def reduce_external(external_case: CaseFile, boundary: int, gen_bus, xd_eq: Optional[float] = None,
                    omega: Optional[float] = None) -> ComplexMatrix:
    """Two-port admittance [[Y_bb, Y_bg], [Y_gb, Y_gg]] of the external network.

    Generators are left out (they are the equivalent's source); loads stay as
    constant impedances. With ``xd_eq`` the equivalent's 1/(jX'd) is added
    to Y_gg.
    """
    part = external_case.partition
    if part is not None and part.study:
        external_case = external_case.external_view()
    if boundary == gen_bus:
        raise ValueError("boundary and generator bus must differ")
    Y = build_admittance(external_case, omega=omega)
    R = kron_reduce(Y, [boundary, gen_bus])
    if xd_eq is not None:
        check_scalar(xd_eq, "xd_eq", low=0.0, include_low=False)
        vals = R.values.copy()
        vals[1, 1] += 1.0 / (1j * xd_eq)
        R = ComplexMatrix(vals, R.labels)
    return R


# -- phasor recursion --------------------------------------------------------------

class TsaState:
    """Equivalent machine plus two-port network, stepped every ``h`` seconds.

    Real and complex parameters live in flat arrays shared with the compiled
    EMT loop (layouts in :mod:`gridreduce.emtsim.kernel`).
    """

    def __init__(self, y_red, xd: float, h_const: float, d: float, h: float,
                 f0: float = 60.0, y60: complex = 0j, s_mva: float = 100.0, base_mva: float = 100.0):
        Y = np.asarray(getattr(y_red, "values", y_red), dtype=complex)
        if Y.shape != (2, 2):
            raise ValueError("Y_red must be 2x2")
        check_scalar(xd, "xd", low=0.0, include_low=False)
        check_scalar(h, "macro step", low=0.0, include_low=False)
        self.cparams = np.zeros(kernel.T_NCPLX, dtype=complex)
        self.cparams[kernel.T_YBB] = Y[0, 0]
        self.cparams[kernel.T_YBG] = Y[0, 1]
        self.cparams[kernel.T_YGB] = Y[1, 0]
        self.cparams[kernel.T_YGG] = Y[1, 1]
        self.cparams[kernel.T_Y60] = y60
        self.rparams = np.zeros(kernel.T_NREAL)
        r = self.rparams
        r[kernel.T_X] = xd
        r[kernel.T_H2] = 2.0 * h_const * s_mva / base_mva
        r[kernel.T_D] = d * s_mva / base_mva
        r[kernel.T_H] = h
        r[kernel.T_W0] = 2 * math.pi * f0
        self.f0 = f0

    @property
    def y_red(self) -> np.ndarray:
        c = self.cparams
        return np.array([[c[kernel.T_YBB], c[kernel.T_YBG]], [c[kernel.T_YGB], c[kernel.T_YGG]]])

    @property
    def y60(self) -> complex:
        return complex(self.cparams[kernel.T_Y60])

    @y60.setter
    def y60(self, value):
        self.cparams[kernel.T_Y60] = value

    @property
    def delta(self) -> float:
        return float(self.rparams[kernel.T_DELTA])

    @property
    def dw(self) -> float:
        return float(self.rparams[kernel.T_DW])

    @property
    def pe(self) -> float:
        return float(self.rparams[kernel.T_PE])

    @property
    def e(self) -> complex:
        return cmath.rect(self.rparams[kernel.T_E], self.rparams[kernel.T_DELTA])

    def init_from_boundary(self, vb: complex, ib: complex) -> None:
        """Set E', delta and Pm so that the drawn boundary current at ``vb`` is ``ib``."""
        c = self.cparams
        if abs(c[kernel.T_YBG]) == 0:
            raise CaseError("boundary and generator ports are not coupled")
        vg = (ib - c[kernel.T_YBB] * vb) / c[kernel.T_YBG]
        ig = c[kernel.T_YGB] * vb + c[kernel.T_YGG] * vg
        e = ig * 1j * self.rparams[kernel.T_X]
        r = self.rparams
        r[kernel.T_E] = abs(e)
        r[kernel.T_DELTA] = cmath.phase(e)
        r[kernel.T_DW] = 0.0
        _, pe = kernel.tsa_solve(c, r, r[kernel.T_DELTA], complex(vb))
        r[kernel.T_PM] = pe
        r[kernel.T_PE] = pe

    def drawn_current(self, vb: complex) -> complex:
        """I_b = Y_bb V_b + Y_bg V_g at the present rotor angle."""
        vg, _ = kernel.tsa_solve(self.cparams, self.rparams, self.rparams[kernel.T_DELTA], complex(vb))
        return complex(self.cparams[kernel.T_YBB] * vb + self.cparams[kernel.T_YBG] * vg)

    def injection(self, vb: complex) -> complex:
        """Injected boundary current -I_b + Y60 V_b without advancing the machine."""
        return -self.drawn_current(vb) + self.y60 * vb


def tsa_step(state: TsaState, vb) -> tuple:
    """Advance the equivalent by one macro step at boundary phasor ``vb``.

    Returns (V_g, I_binj) with V_g from the rotor angle at the start of the
    step and I_binj the current injected into the boundary bus.
    """
    vb = complex(vb)
    if not cmath.isfinite(vb):
        raise ValueError("non-finite boundary phasor")
    vg, _ = kernel.tsa_solve(state.cparams, state.rparams, state.rparams[kernel.T_DELTA], vb)
    inj = kernel.tsa_update(state.cparams, state.rparams, vb)
    return complex(vg), complex(inj)


def constant_current_boundary(p: float, q: float, vb) -> Phasor:
    """Current drawn at the boundary for a fixed P + jQ: conj(S / V)."""
    vb = complex(vb)
    if vb == 0:
        raise ValueError("boundary voltage is zero")
    return Phasor.from_complex(np.conj(complex(p, q) / vb))


class TsaInjector(InjectionHook):
    """Hook running a :class:`TsaState` inside the EMT simulation.

    The boundary alpha voltage of every step enters a one-cycle ring; every
    ``macro`` steps the phasor is extracted and the machine advanced. The
    latest injection phasor is converted to instantaneous values each step.
    """

    native_kind = "tsa"
    rotating = True

    def __init__(self, state: TsaState, bus, macro: int = DEFAULT_MACRO):
        super().__init__(bus)
        self.state = state
        self.macro = check_int(macro, "macro", low=1)
        self.out = 0j
        self.k_seen = None

    @property
    def cparams(self):
        return self.state.cparams

    @property
    def rparams(self):
        return self.state.rparams

    def bind(self, dt, f0):
        super().bind(dt, f0)
        self.sliding = SlidingPhasor(f0, dt)
        self.window = self.sliding.n
        self.twiddle = self.sliding.twiddle
        self.ring = self.sliding.ring
        h = self.macro * dt
        if abs(self.state.rparams[kernel.T_H] - h) > 1e-12:
            raise ValueError(f"state macro step {self.state.rparams[kernel.T_H]:g} s does not match "
                             f"{self.macro} x {dt:g} s")

    def prime_steady(self, vb: complex, k: int = 0) -> None:
        """Fill the window with the steady boundary voltage and set the injection."""
        self.sliding.fill(vb, k)
        self.out = self.state.injection(vb)
        self.k_seen = k

    def _consume(self, k, v_alpha):
        self.ring[k % self.window] = v_alpha
        if k % self.macro == 0:
            vb = self.sliding.phasor()
            self.out = complex(kernel.tsa_update(self.state.cparams, self.state.rparams, vb))
        self.k_seen = k

    def phasor(self, k, history):
        if self.k_seen is None:
            raise RuntimeError("TSA hook used before prime_steady")
        if self.k_seen < k - 1:
            self._consume(k - 1, float(history[-1, 0]))
        return self.out

    def __call__(self, k, history):
        z = self.phasor(k, history) * cmath.exp(1j * self.w0 * k * self.dt)
        return np.array([z.real, z.imag])

    def finish(self, k, v):
        if self.k_seen is not None and self.k_seen < k:
            self._consume(k, float(v[0]))

    def steady_injection(self, vb):
        return self.state.injection(vb)


def make_tsa_equivalent(case: CaseFile, dt: float, *, y60: complex = 0j, macro: int = DEFAULT_MACRO,
                        gen_bus: Optional[int] = None):
    """Aggregate and reduce the external area of ``case``.

    Returns (EquivalentGenerator, Y_red with X'd folded, TsaState). The state
    still needs :meth:`TsaState.init_from_boundary`.
    """
    part = case.require_partition()
    eq = aggregate_generators(external_generators(case), case, bus=gen_bus)
    y_red = reduce_external(case, part.boundary, eq.bus, xd_eq=eq.xd)
    st = TsaState(y_red, eq.xd, eq.h, eq.d, macro * dt, case.frequency, y60,
                  eq.s_mva, case.base_mva)
    return eq, y_red, st


__all__ = ["Phasor", "extract_phasor", "phasor_to_instantaneous", "SlidingPhasor",
           "EquivalentGenerator", "aggregate_generators", "external_generators", "reduce_external",
           "TsaState", "tsa_step", "constant_current_boundary", "TsaInjector",
           "make_tsa_equivalent", "window_length", "DEFAULT_MACRO"]
