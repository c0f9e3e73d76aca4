import json

import numpy as np
import pytest

from gridreduce.casefile import case_to_dict, save_case, two_area_case
from gridreduce.cli import EXIT_INPUT, EXIT_NOCONV, EXIT_OK, RunManifest, main
from gridreduce.emtsim import SimTrace
from gridreduce.fdne import load_coefficients, save_coefficients

from smallcases import three_bus_case


@pytest.fixture
def out(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv("GRIDREDUCE_OUTPUT_DIR", str(d))
    return d


def test_reduce_two_area(out, capsys):
    assert main(["reduce", "two-area"]) == EXIT_OK
    assert "S_eq=1800 MVA" in capsys.readouterr().out
    doc = json.loads((out / "equivalent.json").read_text())
    assert doc["equivalent_machine"]["s_mva"] == 1800.0
    assert doc["boundary"] == 10 and doc["generator_bus"] == 3
    assert np.asarray(doc["y_red"]["real"]).shape == (2, 2)


def test_reduce_single_machine_passes_through(out, tmp_path):
    case = three_bus_case()
    save_case(case, tmp_path / "three.yaml")
    assert main(["reduce", str(tmp_path / "three.yaml"), "--out", str(tmp_path / "o")]) == EXIT_OK
    doc = json.loads((tmp_path / "o" / "equivalent.json").read_text())
    g = case.generator("G2")
    assert doc["equivalent_machine"]["h"] == g.h and doc["equivalent_machine"]["s_mva"] == g.mva
    assert not out.exists()


def test_missing_partition_is_input_error(out, tmp_path, capsys):
    d = case_to_dict(two_area_case())
    del d["partition"]
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert main(["reduce", str(tmp_path / "c.json")]) == EXIT_INPUT
    assert "partition" in capsys.readouterr().err


def test_missing_file_is_input_error(out, tmp_path):
    assert main(["reduce", str(tmp_path / "nope.yaml")]) == EXIT_INPUT


def test_identify_series_rl(out):
    assert main(["identify", "series-rl", "--probe-duration", "2"]) == EXIT_OK
    c = load_coefficients(out / "coefficients.json")
    assert c.is_stable() and c.n == 3
    assert c.report.relative_residual < 1e-6
    first = (out / "coefficients.json").read_bytes()
    assert main(["identify", "series-rl", "--probe-duration", "2"]) == EXIT_OK
    assert (out / "coefficients.json").read_bytes() == first


def test_identify_short_probe_does_not_converge(out, capsys):
    rc = main(["identify", "two-area", "--probe-duration", "1.5"])
    assert rc == EXIT_NOCONV
    assert "converge" in capsys.readouterr().err


def test_simulate_without_fault_is_flat(out):
    assert main(["simulate", "two-area", "--no-fault", "--duration", "0.2"]) == EXIT_OK
    tr = SimTrace.from_csv(out / "trace_full.csv")
    p = tr["p_boundary"]
    assert np.ptp(p) < 1e-3 * abs(p[0])


def test_simulate_unknown_variant(out, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "two-area", "--variant", "magic"])
    assert exc.value.code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "full" in err and "fdne+tsa" in err


def test_simulate_needs_coefficients(out, capsys):
    assert main(["simulate", "two-area", "--variant", "fdne", "--duration", "0.1"]) == EXIT_INPUT


def test_compare_from_manifest(out, tmp_path, two_area_coeffs, capsys):
    save_coefficients(two_area_coeffs, tmp_path / "coeffs.json")
    man = RunManifest(case="two-area", command="compare", output_dir=str(tmp_path / "run"),
                      overrides={"duration": 1.0, "repeats": 1, "coeffs": str(tmp_path / "coeffs.json")})
    (tmp_path / "m.json").write_text(json.dumps(man.to_dict()))
    assert main(["compare", "--manifest", str(tmp_path / "m.json"), "--emit-plot-data"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "ordering verdict" in text
    run = tmp_path / "run"
    rep = json.loads((run / "report.json").read_text())
    assert set(rep["variants"]) == {"full", "fdne", "tsa", "fdne+tsa"}
    for v in ("full", "fdne", "tsa", "fdne_tsa"):
        assert (run / f"trace_{v}.csv").exists()
    figs = sorted(p.name for p in (run / "plot-data").iterdir())
    assert "boundary_p.csv" in figs and "boundary_p_pct_error.csv" in figs and "fault_bus_voltage.csv" in figs


def test_manifest_rejects_wrong_command(out, tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"case": "two-area", "command": "reduce"}))
    assert main(["compare", "--manifest", str(tmp_path / "m.json")]) == EXIT_INPUT


def test_manifest_unknown_override(out, tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"case": "two-area", "command": "compare",
                                                 "overrides": {"warp": 9}}))
    assert main(["compare", "--manifest", str(tmp_path / "m.json")]) == EXIT_INPUT


def test_manifest_case_path_relative_to_manifest(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"case": "c.yaml", "command": "compare"}))
    assert RunManifest.load(tmp_path / "m.json").case == str(tmp_path / "c.yaml")
