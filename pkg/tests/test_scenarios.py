import json

import numpy as np
import pytest

from gridreduce.emtsim import SimConfig, SimTrace
from gridreduce.scenarios import (VARIANTS, ScenarioResult, boundary_neighbors, compare, default_config,
                                  format_report, full_operating_point, pct_error, run_scenario,
                                  save_report, study_buses)


def test_two_area_boundary_layout(two_area):
    assert boundary_neighbors(two_area) == [9]
    assert study_buses(two_area)[-1] == 10 and 8 in study_buses(two_area)


def test_default_fault_must_be_in_study_area(two_area):
    with pytest.raises(ValueError):
        default_config(two_area, fault_bus=11)


def test_unknown_variant(two_area):
    with pytest.raises(ValueError, match="full, fdne, tsa, fdne\\+tsa"):
        run_scenario(two_area, "dynamic", SimConfig(duration=0.01))


@pytest.mark.parametrize("variant", ["fdne", "fdne+tsa"])
def test_missing_coefficients(two_area, variant):
    with pytest.raises(ValueError, match="coefficients"):
        run_scenario(two_area, variant, SimConfig(duration=0.01))


def test_runs_are_deterministic(two_area, two_area_coeffs):
    cfg = default_config(two_area, duration=0.3)
    op = full_operating_point(two_area, cfg.dt)
    a = run_scenario(two_area, "fdne+tsa", cfg, two_area_coeffs, op=op)
    b = run_scenario(two_area, "fdne+tsa", cfg, two_area_coeffs, op=op)
    for name in a.trace.names:
        assert np.array_equal(a.trace[name], b.trace[name]), name


def test_study_network_identical_across_variants(experiment):
    hashes = {r.study_hash for r in experiment.values()}
    assert len(hashes) == 1 and "" not in hashes


def test_all_variants_start_from_same_boundary_flow(experiment):
    p0 = experiment["full"].steady["p"]
    q0 = experiment["full"].steady["q"]
    for name, r in experiment.items():
        assert abs(r.steady["p"] - p0) < 0.01 * abs(p0), name
        assert abs(r.steady["q"] - q0) < 0.01 * abs(p0), name


def test_reduced_variants_hold_steady_state_before_fault(experiment):
    for name, r in experiment.items():
        pre = r.trace.t < 0.1
        p = r.trace["p_boundary"][pre]
        assert np.ptp(p) < 0.01 * abs(p[0]), name


def test_full_fault_shape(experiment):
    tr = experiment["full"].trace
    on = (tr.t > 0.11) & (tr.t < 0.19)
    assert np.max(tr["vmag:8"][on]) < 0.1
    assert np.min(tr["vmag:8"][tr.t < 0.1]) > 0.9
    # study machines accelerate during the fault and stay synchronous
    assert np.max(tr["speed:G1"][tr.t < 0.25]) > 1e-3
    d = tr["delta:G1"] - tr["delta:G2"]
    assert np.max(np.abs(d)) < np.pi


def test_compare_against_itself_is_zero(experiment):
    rep = compare({"full": experiment["full"]})
    m = rep["variants"]["full"]
    assert m["rms_all"] == 0 and m["max_error"] == 0 and m["runtime_ratio"] == 1.0


def _scaled(res, factor):
    ch = {n: res.trace[n] for n in res.trace.names}
    ch["p_boundary"] = factor * ch["p_boundary"]
    tr = SimTrace(res.trace.t0, res.trace.dt, ch)
    return ScenarioResult("scaled", tr, res.runtime, res.config, res.study_hash)


def test_compare_scaled_trace():
    t = np.arange(1000) * 1e-4
    p = 2.0 + 0 * t
    full = ScenarioResult("full", SimTrace(0.0, 1e-4, {"p_boundary": p, "q_boundary": 0.5 + 0 * t}),
                          1.0, SimConfig(dt=1e-4, duration=0.1), "h")
    scaled = _scaled(full, 1.05)
    rep = compare({"full": full, "x": scaled})
    assert rep["variants"]["x"]["rms_all"] == pytest.approx(5.0)
    assert rep["variants"]["x"]["steady_p_mismatch_pct"] == pytest.approx(5.0)
    assert rep["verdicts"]["steady P within 1%"] is False


def test_pct_error_examples():
    np.testing.assert_allclose(pct_error([1.1, 0.9], [1.0, 1.0], 2.0), [5.0, 5.0])
    with pytest.raises(ValueError):
        pct_error([1.0], [1.0], 0.0)


def test_compare_rejects_misaligned(experiment):
    full = experiment["full"]
    tr = SimTrace(full.trace.t0 + full.trace.dt, full.trace.dt,
                  {n: full.trace[n] for n in full.trace.names})
    other = ScenarioResult("tsa", tr, 1.0, full.config)
    with pytest.raises(ValueError, match="time-aligned"):
        compare({"full": full, "tsa": other})
    with pytest.raises(ValueError, match="full"):
        compare({"tsa": other})


def test_accuracy_ordering(experiment):
    rep = compare(experiment)
    v = rep["variants"]
    assert v["fdne+tsa"]["rms_post_fault"] < v["tsa"]["rms_post_fault"]
    assert v["fdne+tsa"]["rms_post_fault"] < v["fdne"]["rms_post_fault"]
    assert rep["ordering"] is True


def test_fdne_only_holds_boundary_voltage(experiment):
    full = experiment["full"].trace
    for name in ("fdne", "fdne+tsa", "tsa"):
        tr = experiment[name].trace
        pre = tr.t < 0.1
        v0 = full["vmag:10"][0]
        assert np.max(np.abs(tr["vmag:10"][pre] - v0)) < 0.01 * v0, name


def test_report_text_and_json(experiment, tmp_path):
    rep = compare(experiment)
    txt = format_report(rep)
    assert "ordering verdict: PASS" in txt
    for v in VARIANTS:
        assert v in txt
    save_report(rep, tmp_path / "r.json")
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["ordering"] is True and set(back["variants"]) == set(VARIANTS)


def test_error_ranking_reported(experiment):
    rep = compare(experiment)
    assert rep["ranking"][:2] == ["full", "fdne+tsa"]
    assert "error ranking (best first): full < fdne+tsa" in format_report(rep)


@pytest.mark.xfail(strict=True, reason="on this case the FDNE-only variant, with a fixed boundary current "
                                        "source and no external swing dynamics, is less accurate than "
                                        "TSA-only; the reference ranking puts FDNE-only second")
def test_full_reference_ranking(experiment):
    assert compare(experiment)["ranking"] == ["full", "fdne+tsa", "fdne", "tsa"]
