import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridreduce.casefile import Branch, Bus, CaseFile, Partition, series_rl_case
from gridreduce.errors import CaseError, SingularNetworkError
from gridreduce.netmodel import (ComplexMatrix, build_admittance, check_operating_point,
                                 injection_mismatch, kron_reduce, port_admittance_sweep)

from oracles import admittance_by_inspection, random_network, sequential_kron


def _two_bus(r=1.0, x=1.0):
    return CaseFile(buses=(Bus(1), Bus(2)), branches=(Branch(1, 2, r, x),))


def _cm(Y):
    return ComplexMatrix(Y, tuple(range(Y.shape[0])))


# -- build_admittance -------------------------------------------------------------

def test_single_branch_at_nominal_frequency():
    case = _two_bus()
    Y = build_admittance(case).values
    g = 1 / (1 + 1j)
    np.testing.assert_allclose(Y, [[g, -g], [-g, g]], rtol=0, atol=1e-15)


def test_single_branch_dc_limit():
    Y = build_admittance(_two_bus(), omega=0.0).values
    np.testing.assert_allclose(Y, [[1, -1], [-1, 1]], atol=1e-15)


def test_zero_impedance_branch_rejected():
    with pytest.raises(CaseError):
        build_admittance(_two_bus(r=0.0, x=0.0))


def test_unknown_bus_rejected(two_area):
    with pytest.raises(CaseError):
        build_admittance(two_area, bus_subset=[1, 99])


def test_negative_omega_rejected():
    with pytest.raises(ValueError):
        build_admittance(_two_bus(), omega=-1.0)


def test_two_area_matches_assembly_by_inspection(two_area):
    Y = build_admittance(two_area)
    ref, ids = admittance_by_inspection(two_area, two_area.omega0)
    assert list(Y.labels) == ids
    np.testing.assert_allclose(Y.values, ref, atol=1e-12)


def test_two_area_diagonal_dominance_on_shunt_free_buses(two_area):
    Y = build_admittance(two_area).values
    shunted = {ld.bus for ld in two_area.loads} | {b for br in two_area.branches if br.b
                                                   for b in (br.from_bus, br.to_bus)}
    for i, bus in enumerate(two_area.bus_ids):
        if bus in shunted:
            continue
        off = np.sum(np.abs(Y[i])) - abs(Y[i, i])
        assert abs(Y[i, i]) >= off - 1e-9


def test_two_area_symmetric(two_area):
    Y = build_admittance(two_area, machines="internal")
    assert Y.asymmetry() < 1e-12


def test_operating_point_consistent(two_area):
    assert np.max(np.abs(injection_mismatch(two_area))) < 1e-8
    assert check_operating_point(two_area) < 1e-8


# -- kron_reduce ------------------------------------------------------------------

def test_retain_all_returns_input():
    Y = _cm(random_network(np.random.default_rng(0), 5))
    out = kron_reduce(Y, list(Y.labels))
    assert np.array_equal(out.values, Y.values)


def test_three_node_chain():
    Y = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=complex)
    out = kron_reduce(ComplexMatrix(Y, (1, 2, 3)), [1, 3])
    np.testing.assert_allclose(out.values, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    assert out.labels == (1, 3)


def test_ten_node_against_sequential_elimination():
    rng = np.random.default_rng(7)
    Y = random_network(rng, 10)
    retain = [8, 2, 5]
    out = kron_reduce(_cm(Y), retain)
    ref = sequential_kron(Y, range(10), retain)
    assert np.max(np.abs(out.values - ref)) < 1e-10


def test_singular_block_reports_condition():
    Y = np.array([[1, -1, 0], [-1, 1, 0], [0, 0, 0]], dtype=complex)
    with pytest.raises(SingularNetworkError) as ei:
        kron_reduce(ComplexMatrix(Y, ("a", "b", "c")), ["a"])
    assert ei.value.condition is not None


def test_empty_retain_rejected():
    with pytest.raises(ValueError):
        kron_reduce(_cm(np.eye(2, dtype=complex)), [])


network_seeds = st.integers(min_value=0, max_value=2**31 - 1)


@given(seed=network_seeds, n=st.integers(4, 9))
def test_kron_transitive(seed, n):
    rng = np.random.default_rng(seed)
    Y = _cm(random_network(rng, n))
    a, b, c = (int(x) for x in rng.choice(n, size=3, replace=False))
    step = kron_reduce(kron_reduce(Y, [a, b, c]), [a, b])
    direct = kron_reduce(Y, [a, b])
    assert np.max(np.abs(step.values - direct.values)) < 1e-12 * max(1.0, np.max(np.abs(direct.values)))
    one = kron_reduce(kron_reduce(Y, [a, b, c]), [a])
    assert abs(one.values[0, 0] - kron_reduce(Y, [a]).values[0, 0]) < 1e-12 * max(1.0, abs(one.values[0, 0]))


@given(seed=network_seeds, n=st.integers(3, 9))
def test_kron_preserves_symmetry(seed, n):
    rng = np.random.default_rng(seed)
    Y = _cm(random_network(rng, n))
    keep = sorted(int(x) for x in rng.choice(n, size=2, replace=False))
    assert kron_reduce(Y, keep).asymmetry() < 1e-12


@given(seed=network_seeds, n=st.integers(3, 9))
def test_reduced_port_currents_match_full_network(seed, n):
    rng = np.random.default_rng(seed)
    Y = random_network(rng, n)
    m = int(rng.integers(1, n))
    keep = list(range(m))
    red = kron_reduce(_cm(Y), keep).values
    vr = rng.normal(size=m) + 1j * rng.normal(size=m)
    # interior voltages with zero interior injection
    e = list(range(m, n))
    ve = np.linalg.solve(Y[np.ix_(e, e)], -Y[np.ix_(e, keep)] @ vr)
    v = np.concatenate([vr, ve])
    i_full = (Y @ v)[:m]
    assert np.max(np.abs(red @ vr - i_full)) < 1e-10


@given(seed=network_seeds)
def test_kron_matches_oracle_on_asymmetric(seed):
    rng = np.random.default_rng(seed)
    Y = random_network(rng, 7, symmetric=False)
    out = kron_reduce(_cm(Y), [6, 0])
    assert np.max(np.abs(out.values - sequential_kron(Y, range(7), [6, 0]))) < 1e-10


# -- port_admittance_sweep ---------------------------------------------------------

def test_sweep_series_rl_at_60hz():
    y = port_admittance_sweep(series_rl_case(), 1, [60.0])[0]
    assert abs(y - 1 / (1 + 2j * math.pi * 60 * 1e-3)) < 1e-14


def test_sweep_series_rl_dc_limit():
    y = port_admittance_sweep(series_rl_case(), 1, [1e-6])[0]
    assert abs(y - 1.0) < 1e-6


def test_sweep_two_area_smooth_and_conjugate_symmetric(two_area):
    f = np.linspace(1.0, 600.0, 300)
    y = port_admittance_sweep(two_area, 10, f)
    assert np.all(np.isfinite(y))
    # Y(-f) = conj(Y(f)): evaluate the network matrix at negative frequency directly
    ext = two_area.external_view()
    for fi, yi in zip(f[::50], y[::50]):
        w = 2 * math.pi * fi
        Yp = build_admittance(ext, omega=w, machines="shorted")
        Ym = np.conj(Yp.values)  # real-coefficient network: Y(-jw) = conj(Y(jw))
        ym = kron_reduce(ComplexMatrix(Ym, Yp.labels), [10]).values[0, 0]
        assert abs(ym - np.conj(yi)) < 1e-10 * abs(yi)


def test_sweep_rejects_study_port(two_area):
    with pytest.raises(CaseError):
        port_admittance_sweep(two_area, 8, [60.0])


def test_sweep_rejects_nonpositive_frequency():
    with pytest.raises(ValueError):
        port_admittance_sweep(series_rl_case(), 1, [0.0])
