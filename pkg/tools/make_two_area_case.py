"""Regenerate src/gridreduce/data/two_area.yaml from the benchmark data sheet.

Standard four-machine two-area system: 900 MVA machines, 20/230 kV step-up
transformers, double-circuit 230 kV lines. The operating point is solved
with a Newton load flow so the stored voltages are self-consistent.
"""
import math
from pathlib import Path

from gridreduce.casefile import (Branch, Bus, CaseFile, Generator, Load, Partition,
                                 save_case)
from gridreduce.netmodel import check_operating_point, solve_power_flow

BASE = 100.0
R_KM, X_KM, B_KM = 0.0001, 0.001, 0.00175   # pu/km on 100 MVA, 230 kV


def line(a, b, km, circuits=2):
    return [Branch(a, b, R_KM * km, X_KM * km, B_KM * km) for _ in range(circuits)]


def main():
    xt = 0.15 * BASE / 900.0
    branches = [Branch(1, 5, 0.0, xt), Branch(2, 6, 0.0, xt),
                Branch(3, 11, 0.0, xt), Branch(4, 10, 0.0, xt)]
    for a, b, km in ((5, 6, 25), (6, 7, 10), (7, 8, 110), (8, 9, 110),
                     (9, 10, 10), (10, 11, 25)):
        branches += line(a, b, km)
    common = dict(mva=900.0, xd=0.3, ra=0.0025, d=0.0)
    gens = [Generator("G1", 1, h=6.5, p=7.0, q=1.85, **common),
            Generator("G2", 2, h=6.5, p=7.0, q=2.35, **common),
            Generator("G3", 3, h=6.175, p=7.19, q=1.76, **common),
            Generator("G4", 4, h=6.175, p=7.0, q=2.02, **common)]
    loads = [Load(7, 9.67, 1.0), Load(7, 0.0, -2.0),
             Load(9, 17.67, 1.0), Load(9, 0.0, -3.5)]
    vset = {1: 1.03, 2: 1.01, 3: 1.03, 4: 1.01}
    buses = [Bus(i, vset.get(i, 1.0), math.radians(-6.8) if i == 3 else 0.0)
             for i in range(1, 12)]
    part = Partition(study=(1, 2, 5, 6, 7, 8, 9), external=(3, 4, 11), boundary=10,
                     external_generators=(3, 4))
    case = CaseFile(buses, branches, gens, loads, part, frequency=60.0, base_mva=BASE,
                    name="two-area four-machine")
    case = solve_power_flow(case, slack=3)
    check_operating_point(case, tol=1e-9)
    out = Path(__file__).resolve().parents[1] / "src/gridreduce/data/two_area.yaml"
    save_case(case, out)
    for b in case.buses:
        print(b.id, round(b.v, 4), round(math.degrees(b.angle), 2))
    for g in case.generators:
        print(g.id, round(g.p, 4), round(g.q, 4))


if __name__ == "__main__":
    main()
