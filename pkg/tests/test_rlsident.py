import inspect
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridreduce import rlsident
from gridreduce.casefile import rlc_tank_case, series_rl_case
from gridreduce.errors import RankDeficientError
from gridreduce.fdne import eval_y
from gridreduce.netmodel import port_admittance_sweep
from gridreduce.rlsident import (DEFAULT_P0, BatchARX, ProbeConfig, RLSIdentifier, batch_ls,
                                 default_probe, equation_error, generate_probe, identify_fdne,
                                 multisine_tones, regression_matrix, regressor, rls_init, rls_run,
                                 rls_update)

from oracles import arx_simulate, poly_from_poles

A3 = poly_from_poles([0.8, -0.6, 0.2])
B3 = np.array([1.0, 0.5, 0.25])
# slow poles and a small numerator: the prior term p0^-1 I matters more here
A_SLOW = poly_from_poles([0.9, 0.5 + 0.3j, 0.5 - 0.3j])
B_SLOW = np.array([0.3, -0.1, 0.05])


def prbs(rng, n):
    return rng.choice([-1.0, 1.0], size=n)


@pytest.fixture(scope="module")
def third_order():
    rng = np.random.default_rng(3)
    u = prbs(rng, 2000)
    return u, arx_simulate(A3, B3, u)


# -- rls_init / rls_update ----------------------------------------------------

def test_init_contract():
    s = rls_init(3, 1e6)
    assert s.theta.shape == (6,)
    assert np.all(s.theta == 0)
    np.testing.assert_array_equal(s.P, 1e6 * np.eye(6))
    assert s.k == 0
    assert np.all(s.y_hist == 0) and np.all(s.u_hist == 0)


@pytest.mark.parametrize("args", [(0, 1e6, 1.0), (2, 0.0, 1.0), (2, 1e6, 0.0), (2, 1e6, 1.5)])
def test_init_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        rls_init(*args)


def test_regressor_layout():
    s = rls_init(2)
    for u, y in ((1.0, 2.0), (3.0, 5.0)):
        rls_update(s, u, y)
    # x(k) = [-y(k-1), -y(k-2), u(k-1), u(k-2)]
    np.testing.assert_array_equal(regressor(s, 0.0), [-5.0, -2.0, 3.0, 1.0])


def test_zero_output_keeps_zero_parameters(rng):
    s = rls_init(3)
    for u in rng.normal(size=300):
        rls_update(s, u, 0.0)
    assert np.all(s.theta == 0.0)


def test_first_order_recovery_in_200_samples(rng):
    u = prbs(rng, 200)
    y = arx_simulate([-0.5], [0.25], u)
    s = rls_init(1)
    for uk, yk in zip(u, y):
        rls_update(s, uk, yk)
    np.testing.assert_allclose(s.theta, [-0.5, 0.25], atol=1e-6, rtol=0)


def test_third_order_recovery_in_2000_samples(third_order):
    u, y = third_order
    s = rls_init(3)
    for uk, yk in zip(u, y):
        rls_update(s, uk, yk)
    assert np.max(np.abs(s.theta - np.concatenate([A3, B3]))) < 1e-6


def test_compiled_run_equals_stepwise_update(third_order):
    u, y = third_order
    a, b = rls_init(3), rls_init(3)
    for uk, yk in zip(u[:500], y[:500]):
        rls_update(a, uk, yk)
    rls_run(b, u[:500], y[:500])
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(a.P, b.P, rtol=1e-10, atol=1e-12)


def test_covariance_stays_symmetric_positive_definite(third_order):
    u, y = third_order
    s = rls_init(3)
    for k, (uk, yk) in enumerate(zip(u, y)):
        rls_update(s, uk, yk)
        if k % 250 == 0:
            assert np.array_equal(s.P, s.P.T)
            assert np.min(np.linalg.eigvalsh(s.P)) > 0


def test_non_finite_sample_rejected_with_step():
    s = rls_init(1)
    rls_update(s, 1.0, 1.0)
    with pytest.raises(ValueError, match="step 1"):
        rls_update(s, float("nan"), 0.0)


def test_update_has_no_matrix_inversion():
    src = inspect.getsource(rlsident.rls_update) + inspect.getsource(rlsident._rls_run.py_func)
    for name in ("inv(", "solve(", "lstsq", "pinv", "cholesky"):
        assert name not in src


@pytest.mark.parametrize("p0", [DEFAULT_P0, 1e9])
def test_rls_endpoint_matches_batch(third_order, p0):
    u, y = third_order
    s = rls_init(3, p0)
    rls_run(s, u, y)
    assert np.max(np.abs(s.theta - batch_ls(u, y, 3))) < 1e-8


def test_rls_matches_batch_on_slow_system_with_large_p0(rng):
    u = prbs(np.random.default_rng(3), 2000)
    y = arx_simulate(A_SLOW, B_SLOW, u)
    s = rls_init(3, 1e9)
    rls_run(s, u, y)
    assert np.max(np.abs(s.theta - batch_ls(u, y, 3))) < 1e-8


def test_gamma_one_is_unweighted(third_order):
    # with gamma = 1 the information matrix is the plain sum of regressor outer products
    u, y = third_order
    s = rls_init(3, 1e6, 1.0)
    rls_run(s, u[:300], y[:300])
    X = regression_matrix(u[:300], y[:300], 3)
    info = X.T @ X + np.eye(6) / 1e6
    np.testing.assert_allclose(np.linalg.inv(s.P), info, rtol=1e-6, atol=1e-6)


def _reconvergence_time(gamma, u, y, theta_new, k_switch, tol=1e-3):
    s = rls_init(1, 1e6, gamma)
    traj = np.empty((u.size, 2))
    rls_run(s, u, y, traj)
    err = np.max(np.abs(traj[k_switch:] - theta_new), axis=1)
    bad = np.nonzero(err >= tol)[0]
    if bad.size and bad[-1] == err.size - 1:
        return math.inf
    return 0 if not bad.size else int(bad[-1] + 1)


def test_forgetting_factor_tracks_system_change(rng):
    n1, n2 = 1000, 3000
    u = prbs(rng, n1 + n2)
    y = np.empty(u.size)
    y[:n1] = arx_simulate([-0.5], [0.25], u[:n1])
    prev = y[n1 - 1]
    for k in range(n1, u.size):
        prev = 0.8 * prev + 0.6 * u[k - 1]
        y[k] = prev
    new = np.array([-0.8, 0.6])
    t98 = _reconvergence_time(0.98, u, y, new, n1)
    t1 = _reconvergence_time(1.0, u, y, new, n1)
    assert t98 < t1
    assert math.isfinite(t98)


# -- batch_ls ---------------------------------------------------------------------

def test_batch_exact_first_order(rng):
    u = prbs(rng, 100)
    y = arx_simulate([-0.5], [0.25], u)
    np.testing.assert_allclose(batch_ls(u, y, 1), [-0.5, 0.25], atol=1e-14)


def test_batch_rank_deficient_on_constant_input():
    u = np.full(200, 2.0)
    y = np.full(200, 1.0)
    with pytest.raises(RankDeficientError) as ei:
        batch_ls(u, y, 2)
    assert ei.value.condition is not None and ei.value.condition > 1e10


def test_batch_rank_deficient_on_single_sinusoid():
    t = np.arange(2000) * 1e-3
    u = np.sin(2 * np.pi * 60 * t)
    y = 0.5 * np.sin(2 * np.pi * 60 * t - 0.3)
    with pytest.raises(RankDeficientError):
        batch_ls(u, y, 3)


def test_batch_too_few_samples():
    with pytest.raises(ValueError):
        batch_ls(np.ones(3), np.ones(3), 2)


@given(seed=st.integers(0, 2**31 - 1), coef=st.integers(0, 5), sign=st.sampled_from([-1.0, 1.0]))
def test_batch_minimizes_squared_error(seed, coef, sign):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=400)
    y = arx_simulate(A3, B3, u) + 0.01 * rng.normal(size=400)
    th = batch_ls(u, y, 3)
    j0 = equation_error(th, u, y, 3)
    pert = th.copy()
    pert[coef] += sign * 1e-3
    assert equation_error(pert, u, y, 3) > j0


# -- estimators --------------------------------------------------------------------

def test_estimators_agree(third_order):
    u, y = third_order
    rls = RLSIdentifier(order=3, p0=1e9).fit(u, y)
    ls = BatchARX(order=3).fit(u, y)
    assert np.max(np.abs(rls.theta_ - ls.theta_)) < 1e-8
    np.testing.assert_allclose(rls.predict(u), y, atol=1e-6)
    assert rls.tail_variance() < 1e-10
    assert rls.score(u, y) > 1 - 1e-9


def test_partial_fit_continues(third_order):
    u, y = third_order
    whole = RLSIdentifier(order=3).fit(u, y)
    parts = RLSIdentifier(order=3).fit(u[:700], y[:700]).partial_fit(u[700:], y[700:])
    np.testing.assert_allclose(parts.theta_, whole.theta_, rtol=1e-12, atol=1e-14)
    assert parts.trajectory_.shape == (2000, 6)


def test_feedthrough_estimation(rng):
    u = prbs(rng, 500)
    y = arx_simulate([-0.5], [0.25], u, b0=0.7)
    est = RLSIdentifier(order=1, feedthrough=True).fit(u, y)
    assert abs(est.b0_ - 0.7) < 1e-6
    np.testing.assert_allclose(est.a_, [-0.5], atol=1e-6)


def test_estimator_params_roundtrip():
    est = RLSIdentifier(order=2, forgetting=0.99)
    assert est.get_params()["forgetting"] == 0.99
    assert est.set_params(order=4).order == 4


# -- probes ------------------------------------------------------------------------

def test_multisine_has_fifty_flat_peaks():
    cfg = ProbeConfig(kind="multisine", n_tones=50, band=(1.0, 600.0), duration=4.0, period=1.0)
    x = generate_probe(cfg)[:-1]
    spec = np.abs(np.fft.rfft(x))
    f = np.fft.rfftfreq(x.size, cfg.dt)
    tones = multisine_tones(cfg)
    assert tones.size == 50
    peaks = spec[np.searchsorted(f, tones)]
    floor = np.median(spec)
    assert np.all(peaks > 1e3 * floor)
    assert 20 * np.log10(peaks.max() / peaks.min()) < 3.0
    # nothing else stands out
    other = np.delete(spec, np.searchsorted(f, tones))
    assert other.max() < 1e-6 * peaks.min()


@pytest.mark.parametrize("kind", ["multisine", "chirp", "filtered-noise"])
def test_probe_rms_and_determinism(kind):
    cfg = ProbeConfig(kind=kind, amplitude=0.2, duration=1.0, seed=4)
    x = generate_probe(cfg)
    assert x.size == cfg.n_samples
    assert abs(np.sqrt(np.mean(x**2)) - 0.2) < 0.2 * (0.02 if kind == "multisine" else 1e-9)
    assert np.array_equal(x, generate_probe(cfg))


@pytest.mark.parametrize("kind", ["multisine", "chirp", "filtered-noise"])
def test_zero_amplitude_probe(kind):
    assert np.all(generate_probe(ProbeConfig(kind=kind, amplitude=0.0, duration=0.5)) == 0)


def test_probe_band_must_be_below_nyquist():
    with pytest.raises(ValueError, match="Nyquist"):
        ProbeConfig(band=(1.0, 30000.0), dt=1e-5 * 2)


def test_probe_rejects_unknown_kind():
    with pytest.raises(ValueError):
        ProbeConfig(kind="step")


# -- identify_fdne ------------------------------------------------------------------

def _rel_errors(coeffs, case, port, f):
    ref = port_admittance_sweep(case, port, f)
    got = eval_y(coeffs, f)
    mag = np.abs(np.abs(got) / np.abs(ref) - 1)
    ph = np.degrees(np.abs(np.angle(got / ref)))
    return mag, ph


def test_identify_series_rl_within_one_percent():
    case = series_rl_case()
    c = identify_fdne(case)
    assert c.report.ok and c.is_stable()
    f = np.linspace(1.0, 600.0, 120)
    mag, _ = _rel_errors(c, case, 1, f)
    assert mag.max() < 0.01
    # DC end of the band
    assert abs(eval_y(c, 0.0) - 1.0) < 0.01
    assert c.report.relative_residual < 1e-6


def test_identify_rlc_resonance_frequency():
    case = rlc_tank_case(f_res=200.0)
    c = identify_fdne(case)
    f = np.linspace(100.0, 300.0, 2001)
    ref = np.abs(port_admittance_sweep(case, 1, f))
    got = np.abs(eval_y(c, f))
    # series-fed tank: the port admittance has its extremum at the tank resonance
    f_ref = f[np.argmin(ref)]
    f_got = f[np.argmin(got)]
    assert abs(f_got - f_ref) / f_ref < 0.02
    assert abs(f_ref - 200.0) / 200.0 < 0.02


def test_under_modeling_flagged():
    case = rlc_tank_case()
    low = identify_fdne(case, n=1)
    high = identify_fdne(case, n=3)
    assert low.report.residual_flag
    assert not high.report.residual_flag
    assert low.report.relative_residual > 100 * high.report.relative_residual


def test_short_probe_reported_as_not_converged(two_area):
    probe = ProbeConfig(kind="multisine", duration=1.5, spacing="log")
    c = identify_fdne(two_area, probe, settle=1.0)
    assert not c.report.converged
    assert not c.report.ok


def test_identification_is_deterministic():
    case = rlc_tank_case()
    a = identify_fdne(case)
    b = identify_fdne(case)
    assert a.to_dict() == b.to_dict()


def test_default_probe_is_valid():
    p = default_probe()
    assert p.band == (1.0, 600.0) and p.spacing == "log"
