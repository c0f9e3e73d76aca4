"""Command-line front end: ``gridreduce reduce|identify|simulate|compare``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 non-convergence.
Artifacts go to ``--out``, else ``$GRIDREDUCE_OUTPUT_DIR``, else
``./gridreduce-out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .casefile import load_case, rlc_tank_case, series_rl_case, two_area_case
from .emtsim.network import FaultSpec, SimConfig
from .emtsim.trace import SimTrace
from .errors import CaseError, GridReduceError, NumericalError, SingularNetworkError, StabilityError
from .fdne import load_coefficients, save_coefficients
from .rlsident import PROBE_KINDS, ProbeConfig, default_probe, identify_fdne
from .scenarios import (DEFAULT_FAULT_BUS, VARIANTS, compare, format_report, run_scenario,
                        save_report, full_operating_point)
from .tsaequiv import aggregate_generators, external_generators, reduce_external

log = logging.getLogger("gridreduce")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_NOCONV = 4
SHIPPED_CASE = "two-area"
BUILTIN_CASES = {"two-area": two_area_case, "series-rl": series_rl_case, "rlc-tank": rlc_tank_case}


class NonConvergence(GridReduceError):
    pass


@dataclass
class RunManifest:
    """What a command runs on and where its output goes."""
    case: str
    command: str
    overrides: Dict[str, object] = field(default_factory=dict)
    output_dir: str = ""
    seed: int = 0

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from None
        for key in ("case", "command"):
            if key not in d:
                raise ValueError(f"{path}: manifest is missing {key!r}")
        base = Path(path).parent
        case = d["case"]
        if case not in BUILTIN_CASES and not Path(case).is_absolute():
            case = str(base / case)
        return cls(case=case, command=d["command"], overrides=dict(d.get("overrides", {})),
                   output_dir=d.get("output_dir", ""), seed=int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"case": self.case, "command": self.command, "overrides": self.overrides,
                "output_dir": self.output_dir, "seed": self.seed}


def _case(spec: str):
    if spec in BUILTIN_CASES:
        return BUILTIN_CASES[spec]()
    return load_case(spec)


def _outdir(arg: Optional[str]) -> Path:
    d = Path(arg or os.environ.get("GRIDREDUCE_OUTPUT_DIR") or "gridreduce-out")
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise ValueError(f"output directory {d} is not writable")
    return d


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _config(case, args) -> SimConfig:
    fault = None
    if not args.no_fault:
        bus = DEFAULT_FAULT_BUS if args.fault_bus is None else args.fault_bus
        fault = FaultSpec(bus, args.t_on, args.t_off, args.fault_conductance)
    return SimConfig(dt=args.dt, duration=args.duration, f0=case.frequency, fault=fault)


def _strided(tr: SimTrace, stride: int) -> SimTrace:
    if stride <= 1:
        return tr
    return SimTrace(tr.t0, tr.dt * stride, {n: v[::stride] for n, v in tr.items()})


# -- commands ----------------------------------------------------------------------

def cmd_reduce(args) -> int:
    case = _case(args.case)
    part = case.require_partition()
    gens = external_generators(case)
    eq = aggregate_generators(gens, case, bus=args.gen_bus)
    y = reduce_external(case, part.boundary, eq.bus)
    y_x = reduce_external(case, part.boundary, eq.bus, xd_eq=eq.xd)
    out = _outdir(args.out)
    doc = {"case": case.name, "boundary": part.boundary, "generator_bus": eq.bus,
           "aggregated": [g.id for g in gens], "equivalent_machine": eq.to_dict(),
           "y_red": _matrix_doc(y), "y_red_with_machine": _matrix_doc(y_x)}
    _write_json(out / "equivalent.json", doc)
    print(f"equivalent machine: S_eq={eq.s_mva:g} MVA H_eq={eq.h:g} s X'd_eq={eq.xd:.6g} pu (system base)")
    print(f"Y_red ports [{part.boundary}, {eq.bus}] written to {out / 'equivalent.json'}")
    return EXIT_OK


def _matrix_doc(m) -> dict:
    return {"labels": list(m.labels), "real": m.values.real.tolist(), "imag": m.values.imag.tolist()}


def cmd_identify(args) -> int:
    case = _case(args.case)
    base = default_probe() if args.dt is None else default_probe(args.dt)
    probe = ProbeConfig(kind=args.kind, amplitude=args.amplitude,
                        band=tuple(args.band) if args.band else base.band,
                        duration=args.probe_duration if args.probe_duration else base.duration,
                        dt=base.dt, seed=args.seed, n_tones=args.tones, spacing=args.spacing)
    coeffs = identify_fdne(case, probe, args.order, p0=args.p0, forgetting=args.forgetting,
                           feedthrough=not args.no_feedthrough)
    out = _outdir(args.out)
    path = Path(args.output) if args.output else out / "coefficients.json"
    save_coefficients(coeffs, path)
    r = coeffs.report
    print(f"order {coeffs.n}, innovation RMS {r.innovation_rms:.3e} "
          f"(relative {r.relative_residual:.3e}), tail variance {r.tail_variance:.3e}")
    print("pole moduli: " + ", ".join(f"{m:.6f}" for m in r.pole_moduli))
    print(f"coefficients written to {path}")
    if not r.stable:
        print("identified model is unstable", file=sys.stderr)
        return EXIT_NOCONV
    if not r.converged:
        print("identification did not converge", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_simulate(args) -> int:
    case = _case(args.case)
    cfg = _config(case, args)
    coeffs = load_coefficients(args.coeffs) if args.coeffs else None
    if "fdne" in args.variant and coeffs is None:
        raise ValueError(f"variant {args.variant!r} needs --coeffs (run 'identify' first)")
    res = run_scenario(case, args.variant, cfg, coeffs)
    out = _outdir(args.out)
    tag = args.variant.replace("+", "_")
    path = out / f"trace_{tag}.csv"
    _strided(res.trace, args.stride).to_csv(path)
    print(f"{args.variant}: {res.trace.n} samples, stepping {res.runtime:.3f} s, "
          f"steady boundary P={res.steady['p']:.6f} Q={res.steady['q']:.6f}")
    print(f"trace written to {path}")
    if args.emit_plot_data:
        emit_plot_data(out, case, {args.variant: res}, args.plot_stride)
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.manifest:
        man = RunManifest.load(args.manifest)
        if man.command != "compare":
            raise ValueError(f"manifest command is {man.command!r}, expected 'compare'")
        ov = man.overrides
        for key, val in ov.items():
            if not hasattr(args, key):
                raise ValueError(f"unknown manifest override {key!r}")
            setattr(args, key, val)
        args.case = man.case
        args.seed = man.seed
        if man.output_dir and not args.out:
            args.out = man.output_dir
    if not args.case:
        raise ValueError("no case given (positional CASE or --manifest)")
    case = _case(args.case)
    cfg = _config(case, args)
    variants = list(args.variants) if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; valid variants: {', '.join(VARIANTS)}")
    if "full" not in variants:
        variants.insert(0, "full")
    out = _outdir(args.out)
    coeffs = None
    if any("fdne" in v for v in variants):
        if args.coeffs:
            coeffs = load_coefficients(args.coeffs)
        else:
            coeffs = identify_fdne(case, replace(default_probe(cfg.dt), seed=args.seed))
            save_coefficients(coeffs, out / "coefficients.json")
    op = full_operating_point(case, cfg.dt)
    results = {v: run_scenario(case, v, cfg, coeffs, repeats=args.repeats, op=op) for v in variants}
    rep = compare(results)
    save_report(rep, out / "report.json")
    text = format_report(rep)
    (out / "report.txt").write_text(text)
    for v, res in results.items():
        _strided(res.trace, args.stride).to_csv(out / f"trace_{v.replace('+', '_')}.csv")
    if args.emit_plot_data:
        emit_plot_data(out, case, results, args.plot_stride)
    print(text, end="")
    return EXIT_OK


def emit_plot_data(out: Path, case, results, stride: int = 10) -> list:
    """Write plot-ready (t, value) tables; returns the written paths."""
    part = case.require_partition()
    some = next(iter(results.values()))
    cfg = some.config
    d = out / "plot-data"
    d.mkdir(exist_ok=True)
    written = []

    def table(name, cols):
        tr = SimTrace(some.trace.t0, some.trace.dt, cols)
        tr = _strided(tr, stride)
        p = d / name
        tr.to_csv(p)
        written.append(p)

    tag = lambda v: v.replace("+", "_")
    if cfg.fault is not None:
        fb = cfg.fault.bus
        table("fault_bus_voltage.csv", {f"{tag(v)}_v{fb}": r.trace[f"v:{fb}"] for v, r in results.items()})
    study_gens = [g.id for g in case.generators if g.bus in set(part.study)]
    if len(study_gens) >= 2:
        a, b = study_gens[0], study_gens[1]
        table("relative_speed.csv", {f"{tag(v)}_{b}-{a}": r.trace[f"speed:{b}"] - r.trace[f"speed:{a}"]
                                     for v, r in results.items()})
    table("generator_power.csv", {f"{tag(v)}_{g}": r.trace[f"pe:{g}"]
                                   for v, r in results.items() for g in study_gens})
    table("boundary_p.csv", {tag(v): r.trace["p_boundary"] for v, r in results.items()})
    table("boundary_q.csv", {tag(v): r.trace["q_boundary"] for v, r in results.items()})
    if "full" in results and len(results) > 1:
        full = results["full"].trace["p_boundary"]
        ref = abs(full[0])
        table("boundary_p_pct_error.csv", {tag(v): 100.0 * np.abs(r.trace["p_boundary"] - full) / ref
                                             for v, r in results.items() if v != "full"})
    return written


# -- parser ---------------------------------------------------------------------------

_CASE_HELP = "case file (.yaml/.json) or a built-in case: " + ", ".join(BUILTIN_CASES)


def _add_sim_args(p):
    p.add_argument("--dt", type=float, default=None, help="EMT step in s (default one 333rd of a cycle)")
    p.add_argument("--duration", type=float, default=5.0, help="simulated time in s")
    p.add_argument("--fault-bus", type=int, default=None, help=f"faulted bus (default {DEFAULT_FAULT_BUS})")
    p.add_argument("--t-on", type=float, default=0.1, help="fault start in s")
    p.add_argument("--t-off", type=float, default=0.2, help="fault clearing in s")
    p.add_argument("--fault-conductance", type=float, default=1e4, help="fault conductance in pu")
    p.add_argument("--no-fault", action="store_true", help="run without the fault")
    p.add_argument("--coeffs", default=None, help="equivalent coefficient document")
    p.add_argument("--stride", type=int, default=1, help="write every n-th sample of traces")
    p.add_argument("--emit-plot-data", action="store_true", help="write plot-ready tables")
    p.add_argument("--plot-stride", type=int, default=10, help="sample stride of plot tables")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridreduce", description="External-area reduction and EMT comparison.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reduce", help="aggregate external generators and Kron-reduce the external network")
    p.add_argument("case", help=_CASE_HELP)
    p.add_argument("--gen-bus", type=int, default=None, help="terminal bus of the equivalent machine")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("identify", help="identify the boundary admittance of the external area")
    p.add_argument("case", help=_CASE_HELP)
    p.add_argument("--order", type=int, default=3, help="model order n")
    p.add_argument("--kind", choices=PROBE_KINDS, default="multisine")
    p.add_argument("--amplitude", type=float, default=0.1, help="probe RMS in pu")
    p.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"), default=None, help="probe band in Hz")
    p.add_argument("--probe-duration", type=float, default=None, help="probe length in s")
    p.add_argument("--tones", type=int, default=50, help="multisine tone count")
    p.add_argument("--spacing", choices=("linear", "log"), default="log", help="multisine tone spacing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=None, help="sample period in s")
    p.add_argument("--p0", type=float, default=1e12, help="initial covariance scale")
    p.add_argument("--forgetting", type=float, default=1.0)
    p.add_argument("--no-feedthrough", action="store_true", help="strictly proper model (no b0)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-o", "--output", default=None, help="coefficient document path")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("simulate", help="run one model variant")
    p.add_argument("case", help=_CASE_HELP)
    p.add_argument("--variant", default="full", help=f"one of: {', '.join(VARIANTS)}")
    _add_sim_args(p)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run the variants and compare boundary power against the full model")
    p.add_argument("case", nargs="?", default=None, help=_CASE_HELP)
    p.add_argument("--manifest", default=None, help="JSON run manifest")
    p.add_argument("--variants", nargs="+", default=None, help=f"subset of: {', '.join(VARIANTS)}")
    p.add_argument("--repeats", type=int, default=3, help="timing repeats per variant (minimum is kept)")
    p.add_argument("--seed", type=int, default=0, help="probe seed when identifying")
    _add_sim_args(p)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "simulate" and args.variant not in VARIANTS:
        ap.error(f"unknown variant {args.variant!r}; valid variants: {', '.join(VARIANTS)}")
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (NumericalError, SingularNetworkError, StabilityError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaseError, ValueError, KeyError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
