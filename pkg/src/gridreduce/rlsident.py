"""Recursive least-squares identification of a discrete port admittance.

The model is the ARX difference equation

    y(k) = -a1 y(k-1) - ... - an y(k-n) + b1 u(k-1) + ... + bn u(k-n) [+ b0 u(k)]

with u the port voltage and y the port current. The parameter vector is
laid out as [a1..an, b1..bn] with b0 appended when direct feedthrough is
enabled. The regressor carries the negated output history so the stored
a_i keep the sign of the denominator 1 + a1 z^-1 + ... + an z^-n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numba import njit
from scipy import signal as sps
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_signal, check_int, check_scalar
from .errors import RankDeficientError

DEFAULT_P0 = 1e6
# probe data of a network seen at 20 kHz is badly conditioned; a weak prior
# is needed for the estimate to reach the least-squares solution
IDENT_P0 = 1e12
CONVERGENCE_TOL = 1e-10


@dataclass
class RlsState:
    """One running RLS estimator. Updated in place by :func:`rls_update`."""
    n: int
    theta: np.ndarray
    P: np.ndarray
    gamma: float = 1.0
    feedthrough: bool = False
    y_hist: np.ndarray = None
    u_hist: np.ndarray = None
    K: np.ndarray = None
    k: int = 0
    last_innovation: float = 0.0

    @property
    def n_params(self) -> int:
        return 2 * self.n + (1 if self.feedthrough else 0)

    @property
    def a(self) -> np.ndarray:
        return self.theta[:self.n]

    @property
    def b(self) -> np.ndarray:
        return self.theta[self.n:2 * self.n]

    @property
    def b0(self) -> float:
        return float(self.theta[2 * self.n]) if self.feedthrough else 0.0


def rls_init(n: int, p0: float = DEFAULT_P0, gamma: float = 1.0,
             feedthrough: bool = False) -> RlsState:
    """Theta = 0, P = p0 I, zero histories."""
    n = check_int(n, "n", low=1)
    p0 = check_scalar(p0, "p0", low=0.0, include_low=False)
    gamma = check_scalar(gamma, "gamma", low=0.0, high=1.0, include_low=False)
    m = 2 * n + (1 if feedthrough else 0)
    return RlsState(n=n, theta=np.zeros(m), P=p0 * np.eye(m), gamma=gamma,
                    feedthrough=bool(feedthrough), y_hist=np.zeros(n), u_hist=np.zeros(n),
                    K=np.zeros(m))


def regressor(state: RlsState, u_now: float) -> np.ndarray:
    x = np.concatenate([-state.y_hist, state.u_hist])
    if state.feedthrough:
        x = np.append(x, u_now)
    return x


def rls_update(state: RlsState, u: float, y: float) -> RlsState:
    """Fold one (u(k), y(k)) sample into the estimate.

    K = P x / (gamma + x'P x); theta += K (y - x'theta); P = (P - K x'P) / gamma,
    then P is symmetrized. The only division is by the scalar denominator.
    """
    u = float(u)
    y = float(y)
    if not (math.isfinite(u) and math.isfinite(y)):
        raise ValueError(f"non-finite sample at step {state.k}: u={u}, y={y}")
    x = regressor(state, u)
    Px = state.P @ x
    denom = state.gamma + x @ Px
    K = Px / denom
    eps = y - x @ state.theta
    state.theta = state.theta + K * eps
    P = (state.P - np.outer(K, Px)) / state.gamma
    state.P = 0.5 * (P + P.T)
    state.K = K
    state.last_innovation = eps
    if state.n:
        state.y_hist = np.roll(state.y_hist, 1)
        state.u_hist = np.roll(state.u_hist, 1)
        state.y_hist[0] = y
        state.u_hist[0] = u
    state.k += 1
    return state


@njit(cache=True)
def _rls_run(theta, P, y_hist, u_hist, gamma, feedthrough, u, y, traj, innov):
    """Compiled loop doing exactly what repeated :func:`rls_update` calls do."""
    n = y_hist.shape[0]
    m = theta.shape[0]
    x = np.empty(m)
    Px = np.empty(m)
    for k in range(u.shape[0]):
        for i in range(n):
            x[i] = -y_hist[i]
            x[n + i] = u_hist[i]
        if feedthrough:
            x[2 * n] = u[k]
        denom = gamma
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += P[i, j] * x[j]
            Px[i] = acc
            denom += x[i] * acc
        eps = y[k]
        for i in range(m):
            eps -= x[i] * theta[i]
        for i in range(m):
            theta[i] += Px[i] / denom * eps
        for i in range(m):
            for j in range(m):
                P[i, j] = (P[i, j] - Px[i] / denom * Px[j]) / gamma
        for i in range(m):
            for j in range(i + 1, m):
                s = 0.5 * (P[i, j] + P[j, i])
                P[i, j] = s
                P[j, i] = s
        for i in range(n - 1, 0, -1):
            y_hist[i] = y_hist[i - 1]
            u_hist[i] = u_hist[i - 1]
        y_hist[0] = y[k]
        u_hist[0] = u[k]
        for i in range(m):
            traj[k, i] = theta[i]
        innov[k] = eps


def rls_run(state: RlsState, u, y, traj: Optional[np.ndarray] = None) -> np.ndarray:
    """Fold a whole record into ``state``; returns the innovations.

    Equivalent to calling :func:`rls_update` per sample, in compiled form.
    ``traj`` (len(u), n_params), if given, receives Theta after each sample.
    """
    u = np.ascontiguousarray(as_signal(u, "u", min_len=0))
    y = np.ascontiguousarray(as_signal(y, "y", min_len=0))
    if u.size != y.size:
        raise ValueError(f"u has {u.size} samples but y has {y.size}")
    if traj is None:
        traj = np.empty((u.size, state.n_params))
    innov = np.empty(u.size)
    if u.size:
        _rls_run(state.theta, state.P, state.y_hist, state.u_hist, state.gamma,
                 state.feedthrough, u, y, traj, innov)
        state.k += u.size
        state.last_innovation = float(innov[-1])
    return innov


def regression_matrix(u, y, n: int, feedthrough: bool = False) -> np.ndarray:
    """Rows x(k) for k = 0..N-1 with zero-padded history."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    N = u.size
    cols = []
    for i in range(1, n + 1):
        cols.append(-np.concatenate([np.zeros(i), y[:N - i]]))
    for i in range(1, n + 1):
        cols.append(np.concatenate([np.zeros(i), u[:N - i]]))
    if feedthrough:
        cols.append(u)
    return np.column_stack(cols)


def batch_ls(u, y, n: int, feedthrough: bool = False) -> np.ndarray:
    """Least-squares Theta minimizing the equation error, with a rank check."""
    n = check_int(n, "n", low=1)
    u = as_signal(u, "u")
    y = as_signal(y, "y")
    if u.size != y.size:
        raise ValueError("u and y must have the same length")
    m = 2 * n + (1 if feedthrough else 0)
    if u.size < m:
        raise ValueError(f"need at least {m} samples for {m} parameters, got {u.size}")
    X = regression_matrix(u, y, n, feedthrough)
    s = np.linalg.svd(X, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    tol = s[0] * max(X.shape) * np.finfo(float).eps
    if s[0] == 0 or np.sum(s > tol) < m:
        raise RankDeficientError(
            f"regression matrix is rank deficient (condition estimate {cond:.3g}); "
            "the input is not persistently exciting", condition=cond)
    theta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return theta


def equation_error(theta, u, y, n: int, feedthrough: bool = False) -> float:
    """Sum of squared equation errors J = e'e."""
    X = regression_matrix(u, y, n, feedthrough)
    e = np.asarray(y, dtype=float) - X @ theta
    return float(e @ e)


def simulate_arx(a, b, u, b0: float = 0.0) -> np.ndarray:
    """Output of the difference equation from rest."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    num = np.concatenate([[b0], b])
    den = np.concatenate([[1.0], a])
    return sps.lfilter(num, den, np.asarray(u, dtype=float))


# -- probe signals -------------------------------------------------------------

PROBE_KINDS = ("multisine", "chirp", "filtered-noise")


@dataclass(frozen=True)
class ProbeConfig:
    """Broadband voltage probe. ``amplitude`` is the RMS value in pu."""
    kind: str = "multisine"
    amplitude: float = 0.1
    band: Tuple[float, float] = (1.0, 600.0)
    duration: float = 2.0
    dt: float = 1.0 / (60.0 * 333)
    seed: int = 0
    n_tones: int = 50
    period: float = 1.0
    spacing: str = "linear"

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"probe kind must be one of {PROBE_KINDS}, got {self.kind!r}")
        check_scalar(self.amplitude, "amplitude", low=0.0)
        check_scalar(self.dt, "dt", low=0.0, include_low=False)
        check_scalar(self.duration, "duration", low=0.0, include_low=False)
        lo, hi = (float(x) for x in self.band)
        if not (0 < lo < hi):
            raise ValueError(f"band must satisfy 0 < low < high, got {self.band}")
        if hi >= 0.5 / self.dt:
            raise ValueError(f"band upper edge {hi} Hz is not below Nyquist {0.5 / self.dt:g} Hz")
        object.__setattr__(self, "band", (lo, hi))
        check_int(self.n_tones, "n_tones", low=1)
        check_scalar(self.period, "period", low=0.0, include_low=False)
        if self.spacing not in ("linear", "log"):
            raise ValueError(f"spacing must be 'linear' or 'log', got {self.spacing!r}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1


def multisine_tones(cfg: ProbeConfig) -> np.ndarray:
    """Tone frequencies: equally spaced over the band, snapped to the 1/period grid."""
    df = 1.0 / cfg.period
    if cfg.spacing == "log":
        raw = np.geomspace(cfg.band[0], cfg.band[1], cfg.n_tones)
    else:
        raw = np.linspace(cfg.band[0], cfg.band[1], cfg.n_tones)
    tones = np.unique(np.clip(np.round(raw / df), 1, None) * df)
    return tones


def generate_probe(cfg: ProbeConfig) -> np.ndarray:
    """Deterministic probe samples at t = k dt, k = 0..n_samples-1."""
    n = cfg.n_samples
    if cfg.amplitude == 0:
        return np.zeros(n)
    t = np.arange(n) * cfg.dt
    rng = np.random.default_rng(cfg.seed)
    if cfg.kind == "multisine":
        tones = multisine_tones(cfg)
        phases = rng.uniform(0, 2 * np.pi, tones.size)
        x = np.cos(2 * np.pi * np.outer(t, tones) + phases).sum(axis=1)
        rms = math.sqrt(tones.size / 2.0)
    elif cfg.kind == "chirp":
        x = sps.chirp(t, f0=cfg.band[0], t1=t[-1], f1=cfg.band[1], method="logarithmic",
                      phi=float(rng.uniform(0, 360)))
        rms = float(np.sqrt(np.mean(x**2)))
    else:
        w = rng.standard_normal(n + 2000)
        nyq = 0.5 / cfg.dt
        sos = sps.butter(4, [cfg.band[0] / nyq, cfg.band[1] / nyq], btype="bandpass", output="sos")
        x = sps.sosfiltfilt(sos, w)[1000:1000 + n]
        rms = float(np.sqrt(np.mean(x**2)))
    return cfg.amplitude * x / rms


# -- estimators ------------------------------------------------------------------

class RLSIdentifier(BaseEstimator, RegressorMixin):
    """ARX port-admittance estimator updated sample by sample.

    ``fit(u, y)`` runs the recursion over a record from a fresh state,
    ``partial_fit`` continues it, ``predict(u)`` simulates the identified
    difference equation from rest.

    Parameters
    ----------
    order : int
        Model order n.
    p0 : float
        Initial covariance scale.
    forgetting : float
        Forgetting factor gamma in (0, 1].
    feedthrough : bool
        Include the direct term b0 u(k).
    tail_fraction : float
        Share of the record used for the convergence statistics.
    """

    def __init__(self, order: int = 3, p0: float = DEFAULT_P0, forgetting: float = 1.0,
                 feedthrough: bool = False, tail_fraction: float = 0.1):
        self.order = order
        self.p0 = p0
        self.forgetting = forgetting
        self.feedthrough = feedthrough
        self.tail_fraction = tail_fraction

    def _check_uy(self, u, y):
        u = as_signal(u, "u", min_len=1)
        y = as_signal(y, "y", min_len=1)
        if u.size != y.size:
            raise ValueError(f"u has {u.size} samples but y has {y.size}")
        return u, y

    def fit(self, u, y):
        u, y = self._check_uy(u, y)
        self.state_ = rls_init(self.order, self.p0, self.forgetting, self.feedthrough)
        self.trajectory_ = np.zeros((0, self.state_.n_params))
        self.innovations_ = np.zeros(0)
        return self.partial_fit(u, y)

    def partial_fit(self, u, y):
        u, y = self._check_uy(u, y)
        if not hasattr(self, "state_"):
            self.state_ = rls_init(self.order, self.p0, self.forgetting, self.feedthrough)
            self.trajectory_ = np.zeros((0, self.state_.n_params))
            self.innovations_ = np.zeros(0)
        st = self.state_
        traj = np.empty((u.size, st.n_params))
        innov = rls_run(st, u, y, traj)
        self.trajectory_ = np.vstack([self.trajectory_, traj])
        self.innovations_ = np.concatenate([self.innovations_, innov])
        self._set_coefs()
        return self

    def _set_coefs(self):
        st = self.state_
        self.theta_ = st.theta.copy()
        self.a_ = st.a.copy()
        self.b_ = st.b.copy()
        self.b0_ = st.b0

    def predict(self, u):
        check_is_fitted(self, "theta_")
        u = as_signal(u, "u")
        return simulate_arx(self.a_, self.b_, u, self.b0_)

    def tail_variance(self) -> float:
        check_is_fitted(self, "theta_")
        m = max(2, int(math.ceil(self.tail_fraction * self.trajectory_.shape[0])))
        tail = self.trajectory_[-m:]
        return float(np.max(np.var(tail, axis=0)))

    def innovation_rms(self) -> float:
        check_is_fitted(self, "theta_")
        m = max(1, int(math.ceil(self.tail_fraction * self.innovations_.size)))
        return float(np.sqrt(np.mean(self.innovations_[-m:] ** 2)))


class BatchARX(BaseEstimator, RegressorMixin):
    """Batch least-squares ARX estimator (the oracle for :class:`RLSIdentifier`)."""

    def __init__(self, order: int = 3, feedthrough: bool = False):
        self.order = order
        self.feedthrough = feedthrough

    def fit(self, u, y):
        self.theta_ = batch_ls(u, y, self.order, self.feedthrough)
        n = self.order
        self.a_ = self.theta_[:n].copy()
        self.b_ = self.theta_[n:2 * n].copy()
        self.b0_ = float(self.theta_[2 * n]) if self.feedthrough else 0.0
        return self

    def predict(self, u):
        check_is_fitted(self, "theta_")
        return simulate_arx(self.a_, self.b_, as_signal(u, "u"), self.b0_)


# -- probe identification of a case's external area -----------------------------

def _probe_view(case):
    part = case.require_partition()
    view = case.external_view() if part.study else case
    if not view.partition.external and not view.branches:
        raise ValueError("external area is empty")
    return view


def probe_records(external_case, probe: ProbeConfig, ramp: float = 0.01):
    """Drive the boundary of the passive external network; return (v_b, i_b).

    Machine EMFs are shorted behind their impedance, constant-current loads
    are opened and constant-impedance loads kept. The probe is faded in over
    ``ramp`` seconds from zero so that the rest start is consistent with the
    discrete model. ``i_b`` is the current drawn from the boundary bus.
    """
    from .emtsim.network import build_network
    from .emtsim.solver import Simulator

    view = _probe_view(external_case)
    port = view.partition.boundary
    u = generate_probe(probe)
    nr = int(round(ramp / probe.dt))
    if nr > 0:
        u[:nr] *= np.sin(0.5 * np.pi * np.arange(nr) / nr) ** 2
    model = build_network(view, passive=True)
    ckt = model.circuit
    wave = np.column_stack([u, np.zeros_like(u)])
    ckt.add_voltage_source(port, lambda t: wave[:len(t)])
    sim = Simulator(ckt, probe.dt, view.frequency)
    sim.init_rest()
    elems = [(e, 1.0) for e in range(len(ckt.elements)) if ckt.elements[e].a == port]
    elems += [(e, -1.0) for e in range(len(ckt.elements)) if ckt.elements[e].b == port]
    if not elems:
        raise ValueError(f"boundary bus {port} has no connection into the external area")
    rec = sim.run(u.size - 1, record_nodes=[port], record_elements=[e for e, _ in elems])
    i = sum(s * rec.i[e][:, 0] for e, s in elems)
    return rec.v[port][:, 0].copy(), i, port


def default_probe(dt: float = 1.0 / (60.0 * 333)) -> ProbeConfig:
    """Probe used by :func:`identify_fdne` when none is given."""
    return ProbeConfig(kind="multisine", amplitude=0.1, band=(1.0, 600.0), duration=41.0,
                       dt=dt, spacing="log")


def identify_fdne(external_case, probe: Optional[ProbeConfig] = None, n: int = 3, *,
                  p0: float = IDENT_P0, forgetting: float = 1.0, feedthrough: bool = True,
                  settle: float = 1.0, tail_fraction: float = 0.1, tol: float = CONVERGENCE_TOL,
                  residual_tol: float = 1e-3):
    """Identify the boundary admittance of an external area by probing it in the EMT solver.

    ``external_case`` may be a full partitioned case (its external view is
    used) or an external view. The first ``settle`` seconds of the record
    only fill the regressor history. Voltage and current are scaled to unit
    RMS before the recursion (``p0`` refers to the scaled problem) and the
    coefficients are scaled back afterwards.

    Returns :class:`FdneCoefficients` carrying a :class:`FitReport`.
    Non-convergence and instability are flagged in the report, not raised.
    """
    from .fdne import FdneCoefficients, FitReport

    n = check_int(n, "n", low=1)
    probe = default_probe() if probe is None else probe
    v, i, port = probe_records(external_case, probe)
    k0 = max(n + 1, int(round(settle / probe.dt)))
    if v.size - k0 < 10 * (2 * n + 1):
        raise ValueError(f"probe of {probe.duration} s leaves too few samples after settling")
    su = float(np.sqrt(np.mean(v[k0:] ** 2)))
    sy = float(np.sqrt(np.mean(i[k0:] ** 2)))
    if su == 0 or sy == 0:
        raise ValueError("probe produced no excitation at the boundary")
    st = rls_init(n, p0, forgetting, feedthrough)
    st.y_hist[:] = i[k0 - n:k0][::-1] / sy
    st.u_hist[:] = v[k0 - n:k0][::-1] / su
    traj = np.empty((v.size - k0, st.n_params))
    innov = rls_run(st, v[k0:] / su, i[k0:] / sy, traj)
    m = max(2, int(math.ceil(tail_fraction * traj.shape[0])))
    tail_var = float(np.max(np.var(traj[-m:], axis=0)))
    rel = float(np.sqrt(np.mean(innov[-m:] ** 2)))
    scale = sy / su
    coeffs = FdneCoefficients(a=st.a, b=st.b * scale, b0=st.b0 * scale, dt=probe.dt, port=port)
    moduli = coeffs.pole_moduli()
    coeffs.report = FitReport(
        innovation_rms=rel * sy, relative_residual=rel, tail_variance=tail_var,
        pole_moduli=moduli.tolist(), n_samples=int(traj.shape[0]),
        stable=bool(np.all(moduli < 1.0)), converged=bool(tail_var < tol),
        residual_flag=bool(rel > residual_tol),
        probe={"kind": probe.kind, "amplitude": probe.amplitude, "band": list(probe.band),
               "duration": probe.duration, "spacing": probe.spacing, "seed": probe.seed})
    return coeffs
