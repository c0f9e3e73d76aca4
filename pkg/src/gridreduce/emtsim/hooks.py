"""Current-injection hooks coupling external models into the EMT solver.

A hook injects current into one bus. Its ``__call__(k, history)`` receives
the step index and a read-only array of the bus voltage at steps before k
(shape (m, 2), alpha and beta), so by construction it cannot see the voltage
being solved for. A hook may also carry a ``conductance`` that is stamped
into the network matrix; that Norton part responds to the present voltage
the way any network element does.

A ``rotating`` hook instead returns a fundamental-frequency phasor from
``phasor(k, history)``. The solver turns it into instantaneous values at
every solve instant, including the half steps after a switching event.

The hooks defined here also expose ``native_kind`` so that the solver can run
them inside the compiled loop. The compiled and Python paths share the same
per-step helpers.
"""
from __future__ import annotations

import math

import numpy as np


class InjectionHook:
    """Base class. Subclasses implement ``__call__``."""

    native_kind = None
    conductance = 0.0
    rotating = False

    def __init__(self, bus):
        self.bus = bus

    def __call__(self, k: int, history: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def phasor(self, k: int, history: np.ndarray) -> complex:  # pragma: no cover
        """Peak injection phasor held over step k (rotating hooks only)."""
        raise NotImplementedError

    def bind(self, dt: float, f0: float) -> None:
        """Called by the solver when the hook is attached."""
        self.dt = float(dt)
        self.f0 = float(f0)
        self.w0 = 2 * math.pi * self.f0

    def reset_sequence(self) -> None:
        """Forget the last-call bookkeeping (called when the solver takes over)."""

    def finish(self, k: int, v: np.ndarray) -> None:
        """Called after the last step ``k`` of a Python-path run with that step's bus voltage."""

    def steady_injection(self, vb: complex) -> complex:
        """Phasor injection in sinusoidal steady state at bus voltage ``vb``."""
        return 0.0j


class CallableHook(InjectionHook):
    """Wrap a plain function ``f(k, history) -> (alpha, beta)``."""

    def __init__(self, bus, func, conductance: float = 0.0):
        super().__init__(bus)
        self.func = func
        self.conductance = float(conductance)

    def __call__(self, k, history):
        return np.asarray(self.func(k, history), dtype=float).reshape(2)


class PhasorCurrentSource(InjectionHook):
    """Constant fundamental-frequency current ``amp`` (peak phasor)."""

    native_kind = "current"
    rotating = True

    def __init__(self, bus, amp: complex):
        super().__init__(bus)
        self.amp = complex(amp)

    def phasor(self, k, history):
        return self.amp

    def __call__(self, k, history):
        z = self.amp * np.exp(1j * self.w0 * k * self.dt)
        return np.array([z.real, z.imag])

    def steady_injection(self, vb):
        return self.amp
