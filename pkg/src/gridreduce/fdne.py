"""Discrete port-admittance equivalent run as a difference equation.

The drawn current at step k is

    i_F(k) = b0 v(k) + sum_i ( -a_i i_F(k-i) + b_i v(k-i) )

The history sum uses strictly past samples only. The direct term b0 is an
ordinary conductance: inside the EMT solver it is stamped into the nodal
matrix like any resistor, so the hook itself never needs the voltage being
solved for. With b0 = 0 the model is strictly proper.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._validation import check_scalar
from .emtsim.hooks import InjectionHook
from .emtsim.kernel import fdne_history, fdne_push
from .errors import StabilityError

DOC_FORMAT = "gridreduce.fdne/1"


@dataclass
class FitReport:
    """Diagnostics of one identification run."""
    innovation_rms: float
    relative_residual: float
    tail_variance: float
    pole_moduli: list
    n_samples: int
    stable: bool
    converged: bool
    residual_flag: bool = False
    probe: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.stable and self.converged


@dataclass
class FdneCoefficients:
    """Y(z) = (b0 + sum b_i z^-i) / (1 + sum a_i z^-i) at sample period ``dt``."""
    a: np.ndarray
    b: np.ndarray
    dt: float
    port: object = None
    b0: float = 0.0
    report: Optional[FitReport] = None

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.a.ndim != 1 or self.a.shape != self.b.shape or self.a.size < 1:
            raise ValueError(f"a and b must be 1-D of equal length n >= 1, got {self.a.shape}, {self.b.shape}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b)) and math.isfinite(self.b0)):
            raise ValueError("coefficients must be finite")
        check_scalar(self.dt, "dt", low=0.0, include_low=False)
        self.b0 = float(self.b0)

    @property
    def n(self) -> int:
        return self.a.size

    def poles(self) -> np.ndarray:
        return np.roots(np.concatenate([[1.0], self.a]))

    def pole_moduli(self) -> np.ndarray:
        return np.abs(self.poles())

    def is_stable(self) -> bool:
        return bool(np.all(self.pole_moduli() < 1.0))

    def check_stable(self) -> None:
        if not self.is_stable():
            raise StabilityError(f"equivalent has poles outside the unit circle: moduli "
                                 f"{np.round(self.pole_moduli(), 6).tolist()}")

    # -- document ------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"format": DOC_FORMAT, "n": self.n, "dt": self.dt, "port": self.port,
             "a": self.a.tolist(), "b": self.b.tolist(), "b0": self.b0,
             "pole_moduli": self.pole_moduli().tolist()}
        if self.report is not None:
            d["report"] = asdict(self.report)
        return d

    @classmethod
    def from_dict(cls, d: dict, check: bool = True) -> "FdneCoefficients":
        if d.get("format", DOC_FORMAT) != DOC_FORMAT:
            raise ValueError(f"unsupported coefficient document format {d.get('format')!r}")
        try:
            a, b, dt = d["a"], d["b"], d["dt"]
        except KeyError as exc:
            raise ValueError(f"coefficient document is missing {exc.args[0]!r}") from None
        if "n" in d and int(d["n"]) != len(a):
            raise ValueError(f"document says n={d['n']} but has {len(a)} a-coefficients")
        rep = d.get("report")
        c = cls(a=a, b=b, dt=dt, port=d.get("port"), b0=d.get("b0", 0.0),
                report=FitReport(**rep) if rep else None)
        if check:
            c.check_stable()
        return c


def save_coefficients(coeffs: FdneCoefficients, path) -> None:
    Path(path).write_text(json.dumps(coeffs.to_dict(), indent=2) + "\n")


def load_coefficients(path) -> FdneCoefficients:
    """Read a coefficient document; unstable models are rejected."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a valid coefficient document ({exc})") from None
    return FdneCoefficients.from_dict(d, check=True)


def eval_y(coeffs: FdneCoefficients, f) -> np.ndarray:
    """Y(e^{j 2 pi f dt}); scalar in, complex scalar out."""
    f = np.asarray(f, dtype=float)
    if np.any(np.abs(f) >= 0.5 / coeffs.dt):
        raise ValueError(f"frequency must be below Nyquist ({0.5 / coeffs.dt:g} Hz)")
    zi = np.exp(-2j * np.pi * f * coeffs.dt)
    k = np.arange(1, coeffs.n + 1)
    zk = zi[..., None] ** k
    num = coeffs.b0 + zk @ coeffs.b
    den = 1.0 + zk @ coeffs.a
    out = num / den
    return complex(out) if out.ndim == 0 else out


class FdneRuntime:
    """Difference-equation state: the last n drawn currents and port voltages.

    Histories are (n, 2) arrays (alpha, beta); row 0 is the most recent
    sample. Scalar use goes through the alpha column.
    """

    def __init__(self, coeffs: FdneCoefficients):
        self.coeffs = coeffs
        self.ih = np.zeros((coeffs.n, 2))
        self.vh = np.zeros((coeffs.n, 2))
        self._out = np.zeros(2)

    def history_term(self) -> np.ndarray:
        fdne_history(self.coeffs.a, self.coeffs.b, self.ih, self.vh, self._out)
        return self._out.copy()

    def prime_sinusoid(self, vb: complex, w: float, k: int = 0) -> None:
        """Fill the histories with the steady response to V_b e^{j w t}, present step ``k``."""
        dt = self.coeffs.dt
        y = eval_y(self.coeffs, w / (2 * math.pi))
        steps = k - np.arange(self.coeffs.n)
        rot = np.exp(1j * w * steps * dt)
        v = vb * rot
        i = y * vb * rot
        self.vh[:, 0], self.vh[:, 1] = v.real, v.imag
        self.ih[:, 0], self.ih[:, 1] = i.real, i.imag

    def reset(self) -> None:
        self.ih[:] = 0.0
        self.vh[:] = 0.0


def fdne_step(rt: FdneRuntime, v_new):
    """Drawn current at the new step, then push (i, v) into the histories.

    ``v_new`` is a scalar (alpha only) or an (alpha, beta) pair; the return
    value has the same shape.
    """
    scalar = np.ndim(v_new) == 0
    v = np.array([float(v_new), 0.0]) if scalar else np.asarray(v_new, dtype=float).reshape(2)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite port voltage {v_new!r}")
    i = rt.coeffs.b0 * v + rt.history_term()
    fdne_push(rt.ih, rt.vh, i, v)
    return float(i[0]) if scalar else i


class FdneInjector(InjectionHook):
    """Hook running the equivalent at a bus.

    The b0 part is the hook's ``conductance``; ``__call__`` returns minus the
    history term, so the total injection is -i_F.
    """

    native_kind = "fdne"

    def __init__(self, coeffs: FdneCoefficients, bus):
        super().__init__(bus)
        self.coeffs = coeffs
        self.rt = FdneRuntime(coeffs)
        self.conductance = coeffs.b0
        self.k_last = None
        self._fh = np.zeros(2)

    # attributes read by the compiled path
    @property
    def order(self):
        return self.coeffs.n

    @property
    def a(self):
        return self.coeffs.a

    @property
    def b(self):
        return self.coeffs.b

    @property
    def b0(self):
        return self.coeffs.b0

    @property
    def ih(self):
        return self.rt.ih

    @property
    def vh(self):
        return self.rt.vh

    def bind(self, dt, f0):
        super().bind(dt, f0)
        if abs(dt - self.coeffs.dt) > 1e-12 * dt:
            raise ValueError(f"equivalent identified at dt={self.coeffs.dt:g} cannot run at dt={dt:g}; "
                             "re-identify at the simulation step")

    def reset_sequence(self):
        self.k_last = None

    def __call__(self, k, history):
        if self.k_last is not None:
            if k != self.k_last + 1:
                raise ValueError(f"equivalent stepped out of order: {self.k_last} then {k}")
            v_prev = history[-1]
            fdne_push(self.rt.ih, self.rt.vh, self.b0 * v_prev + self._fh, v_prev)
        self._fh = self.rt.history_term()
        self.k_last = k
        return -self._fh

    def finish(self, k, v):
        if self.k_last == k:
            fdne_push(self.rt.ih, self.rt.vh, self.b0 * v + self._fh, v)
        self.k_last = None

    def prime_steady(self, vb: complex, k: int = 0) -> None:
        """Histories of the fundamental steady state at bus voltage ``vb``."""
        self.rt.prime_sinusoid(vb, 2 * math.pi * self.f0, k)
        self.k_last = None

    def steady_injection(self, vb):
        return -(eval_y(self.coeffs, self.f0) - self.b0) * vb


def make_injector(coeffs: FdneCoefficients, port=None) -> FdneInjector:
    """Hook for ``coeffs`` at ``port`` (defaults to the coefficients' own port)."""
    coeffs.check_stable()
    port = coeffs.port if port is None else port
    if port is None:
        raise ValueError("no port bus given")
    return FdneInjector(coeffs, port)


__all__ = ["FdneCoefficients", "FitReport", "FdneRuntime", "FdneInjector", "fdne_step", "eval_y",
           "make_injector", "save_coefficients", "load_coefficients"]
