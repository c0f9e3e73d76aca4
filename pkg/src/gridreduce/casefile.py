"""Case data model and its text serialization.

A case holds the network (buses, branches, generators, loads), the solved
operating point and the study/external partition. All electrical values are
per-unit on the system MVA base except generator ``xd``, ``ra``, ``h`` and
``d`` which are on the machine's own rating, as in utility data sheets.
Bus id 0 is reserved for ground and may appear as a branch endpoint.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .errors import CaseError

GROUND = 0
LOAD_MODELS = ("impedance", "current")


@dataclass(frozen=True)
class Bus:
    id: int
    v: float = 1.0
    angle: float = 0.0
    name: str = ""

    @property
    def phasor(self) -> complex:
        return self.v * complex(math.cos(self.angle), math.sin(self.angle))


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    mva: float
    h: float
    xd: float
    p: float = 0.0
    q: float = 0.0
    d: float = 0.0
    ra: float = 0.0


@dataclass(frozen=True)
class Load:
    bus: int
    p: float
    q: float
    model: str = "impedance"


@dataclass(frozen=True)
class Partition:
    study: tuple
    external: tuple
    boundary: int
    external_generators: tuple = ()


@dataclass(frozen=True)
class CaseFile:
    buses: tuple
    branches: tuple
    generators: tuple = ()
    loads: tuple = ()
    partition: Optional[Partition] = None
    frequency: float = 60.0
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        validate_case(self)

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def bus_ids(self) -> list:
        return [b.id for b in self.buses]

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise CaseError(f"unknown bus id {bus_id}")

    def generator(self, gen_id: str) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise CaseError(f"unknown generator id {gen_id!r}")

    def voltages(self) -> dict:
        return {b.id: b.phasor for b in self.buses}

    def require_partition(self) -> Partition:
        if self.partition is None:
            raise CaseError("case has no 'partition' section")
        return self.partition

    # -- area views -------------------------------------------------------
    def subnetwork(self, buses: Iterable[int], *, branches=None, name: str = "",
                   partition: Optional[Partition] = None) -> "CaseFile":
        keep = set(buses)
        if branches is None:
            branches = [br for br in self.branches
                        if {br.from_bus, br.to_bus} - {GROUND} <= keep]
        return CaseFile(
            buses=[b for b in self.buses if b.id in keep],
            branches=branches,
            generators=[g for g in self.generators if g.bus in keep],
            loads=[ld for ld in self.loads if ld.bus in keep],
            partition=partition,
            frequency=self.frequency,
            base_mva=self.base_mva,
            name=name or self.name,
        )

    def _split_branches(self):
        part = self.require_partition()
        ext = set(part.external)
        study, external = [], []
        for br in self.branches:
            if br.from_bus in ext or br.to_bus in ext:
                external.append(br)
            else:
                study.append(br)
        return study, external

    def external_view(self) -> "CaseFile":
        """External area plus the boundary bus, as seen from the boundary.

        Branches touching an external bus belong to the external area. Loads
        and generators at the boundary bus stay with the study area.
        """
        part = self.require_partition()
        _, ext_branches = self._split_branches()
        buses = [part.boundary] + sorted(part.external)
        view = self.subnetwork(buses, branches=ext_branches,
                               name=f"{self.name}:external")
        view = replace(view,
                       generators=tuple(g for g in view.generators if g.bus != part.boundary),
                       loads=tuple(ld for ld in view.loads if ld.bus != part.boundary),
                       partition=Partition(study=(), external=tuple(sorted(part.external)),
                                           boundary=part.boundary,
                                           external_generators=part.external_generators))
        return view

    def study_view(self) -> "CaseFile":
        """Study area plus the boundary bus with all non-external branches."""
        part = self.require_partition()
        st_branches, _ = self._split_branches()
        buses = sorted(part.study) + [part.boundary]
        return self.subnetwork(buses, branches=st_branches,
                               name=f"{self.name}:study")


def validate_case(case: CaseFile) -> None:
    ids = [b.id for b in case.buses]
    if not ids:
        raise CaseError("case has no buses")
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids")
    if GROUND in ids:
        raise CaseError("bus id 0 is reserved for ground")
    known = set(ids)
    for name, val in (("frequency", case.frequency), ("base_mva", case.base_mva)):
        if not (math.isfinite(val) and val > 0):
            raise CaseError(f"{name} must be positive and finite, got {val}")
    for b in case.buses:
        if not (math.isfinite(b.v) and math.isfinite(b.angle)) or b.v < 0:
            raise CaseError(f"bus {b.id}: invalid voltage {b.v}∠{b.angle}")
    for i, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end != GROUND and end not in known:
                raise CaseError(f"branch {i} ({br.from_bus}-{br.to_bus}): unknown bus id {end}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {i} connects bus {br.from_bus} to itself")
        if not all(math.isfinite(v) for v in (br.r, br.x, br.b)):
            raise CaseError(f"branch {i} ({br.from_bus}-{br.to_bus}): non-finite parameter")
        if br.r == 0.0 and br.x == 0.0:
            raise CaseError(f"branch {i} ({br.from_bus}-{br.to_bus}): zero impedance")
        if br.r < 0 or br.x < 0:
            raise CaseError(f"branch {i} ({br.from_bus}-{br.to_bus}): negative R or X")
    gids = [g.id for g in case.generators]
    if len(set(gids)) != len(gids):
        raise CaseError("duplicate generator ids")
    for g in case.generators:
        if g.bus not in known:
            raise CaseError(f"generator {g.id}: unknown bus id {g.bus}")
        vals = (g.mva, g.h, g.xd, g.p, g.q, g.d, g.ra)
        if not all(math.isfinite(v) for v in vals):
            raise CaseError(f"generator {g.id}: non-finite parameter")
        if g.h <= 0 or g.xd <= 0 or g.mva <= 0:
            raise CaseError(f"generator {g.id}: H, X'd and MVA must be positive")
        if g.ra < 0 or g.d < 0:
            raise CaseError(f"generator {g.id}: negative Ra or D")
    for ld in case.loads:
        if ld.bus not in known:
            raise CaseError(f"load at unknown bus id {ld.bus}")
        if ld.model not in LOAD_MODELS:
            raise CaseError(f"load at bus {ld.bus}: model must be one of {LOAD_MODELS}")
        if not (math.isfinite(ld.p) and math.isfinite(ld.q)):
            raise CaseError(f"load at bus {ld.bus}: non-finite P or Q")
    if case.partition is not None:
        validate_partition(case, case.partition)


def validate_partition(case: CaseFile, part: Partition) -> None:
    known = set(case.bus_ids)
    study, ext = set(part.study), set(part.external)
    if part.boundary not in known:
        raise CaseError(f"partition: boundary bus {part.boundary} is not in the bus list")
    if study & ext:
        raise CaseError(f"partition: buses {sorted(study & ext)} are in both areas")
    if part.boundary in study or part.boundary in ext:
        raise CaseError("partition: boundary bus must belong to neither area")
    covered = study | ext | {part.boundary}
    if covered != known:
        missing = sorted(known - covered)
        extra = sorted(covered - known)
        raise CaseError(f"partition: uncovered buses {missing}, unknown buses {extra}")
    gen_buses = {g.bus for g in case.generators}
    for gb in part.external_generators:
        if gb not in ext or gb not in gen_buses:
            raise CaseError(f"partition: external generator bus {gb} has no external generator")
    # every branch must stay within one area (boundary excepted)
    for br in case.branches:
        ends = {br.from_bus, br.to_bus} - {GROUND, part.boundary}
        if ends & study and ends & ext:
            raise CaseError(f"partition: branch {br.from_bus}-{br.to_bus} bypasses the boundary")


# -- serialization --------------------------------------------------------

_SECTION_KEYS = ("buses", "branches", "generators", "loads")


def case_from_dict(doc: dict) -> CaseFile:
    if not isinstance(doc, dict):
        raise CaseError("case document must be a mapping")
    for key in ("buses", "branches"):
        if key not in doc:
            raise CaseError(f"case document is missing the '{key}' key")
    try:
        buses = [Bus(id=int(b["id"]), v=float(b.get("v", 1.0)),
                     angle=float(b.get("angle", 0.0)), name=str(b.get("name", "")))
                 for b in doc["buses"]]
        branches = [Branch(from_bus=int(br["from"]), to_bus=int(br["to"]),
                           r=float(br.get("r", 0.0)), x=float(br.get("x", 0.0)),
                           b=float(br.get("b", 0.0)))
                    for br in doc["branches"]]
        gens = []
        for i, g in enumerate(doc.get("generators") or []):
            gens.append(Generator(id=str(g.get("id", f"G{i + 1}")), bus=int(g["bus"]),
                                  mva=float(g["mva"]), h=float(g["h"]), xd=float(g["xd"]),
                                  p=float(g.get("p", 0.0)), q=float(g.get("q", 0.0)),
                                  d=float(g.get("d", 0.0)), ra=float(g.get("ra", 0.0))))
        loads = [Load(bus=int(ld["bus"]), p=float(ld.get("p", 0.0)), q=float(ld.get("q", 0.0)),
                      model=str(ld.get("model", "impedance")))
                 for ld in doc.get("loads") or []]
    except KeyError as exc:
        raise CaseError(f"case document entry is missing the {exc.args[0]!r} key") from None
    except (TypeError, ValueError) as exc:
        raise CaseError(f"malformed case entry: {exc}") from None
    part = None
    if doc.get("partition") is not None:
        p = doc["partition"]
        for key in ("study", "external", "boundary"):
            if key not in p:
                raise CaseError(f"partition is missing the '{key}' key")
        part = Partition(study=tuple(int(b) for b in p["study"]),
                         external=tuple(int(b) for b in p["external"]),
                         boundary=int(p["boundary"]),
                         external_generators=tuple(int(b) for b in p.get("external_generators", ())))
    return CaseFile(buses=buses, branches=branches, generators=gens, loads=loads,
                    partition=part, frequency=float(doc.get("frequency", 60.0)),
                    base_mva=float(doc.get("base_mva", 100.0)), name=str(doc.get("name", "")))


def case_to_dict(case: CaseFile) -> dict:
    doc = {"name": case.name, "frequency": case.frequency, "base_mva": case.base_mva}
    doc["buses"] = [{"id": b.id, "v": b.v, "angle": b.angle, **({"name": b.name} if b.name else {})}
                    for b in case.buses]
    doc["branches"] = [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b}
                       for br in case.branches]
    doc["generators"] = [asdict(g) for g in case.generators]
    doc["loads"] = [asdict(ld) for ld in case.loads]
    if case.partition is not None:
        p = case.partition
        doc["partition"] = {"study": list(p.study), "external": list(p.external),
                            "boundary": p.boundary,
                            "external_generators": list(p.external_generators)}
    return doc


def load_case(path) -> CaseFile:
    """Read a case from a YAML or JSON document."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise CaseError(f"cannot parse case file {path}: {exc}") from None
    return case_from_dict(doc)


def save_case(case: CaseFile, path) -> None:
    path = Path(path)
    doc = case_to_dict(case)
    if path.suffix == ".json":
        path.write_text(json.dumps(doc, indent=2) + "\n")
    else:
        path.write_text(yaml.safe_dump(doc, sort_keys=False))


def two_area_case() -> CaseFile:
    """The shipped four-machine two-area benchmark case."""
    return load_case(Path(__file__).with_name("data") / "two_area.yaml")


def series_rl_case(r: float = 1.0, l: float = 1e-3, frequency: float = 60.0) -> CaseFile:
    """Port bus 1 with a series R-L branch to ground; ``r`` in pu, ``l`` in pu-seconds."""
    w0 = 2 * math.pi * frequency
    return CaseFile(buses=(Bus(1),), branches=(Branch(1, GROUND, r, w0 * l),),
                    partition=Partition(study=(), external=(), boundary=1),
                    frequency=frequency, name="series-rl")


def rlc_tank_case(f_res: float = 200.0, r_series: float = 0.05, r_tank: float = 20.0,
                  l: float = 2e-3, r_l: float = 0.05, frequency: float = 60.0) -> CaseFile:
    """Port bus 1, series resistor to bus 2, parallel R / lossy L / C tank to ground.

    C is chosen so that the tank resonates at ``f_res``. A bare capacitor or
    lossless inductor at the port would put a pole of the trapezoidal model on
    the unit circle, hence the series and inductor resistances.
    """
    w0 = 2 * math.pi * frequency
    c = 1.0 / ((2 * math.pi * f_res) ** 2 * l)
    # tank R and C as a constant-impedance load at 1 pu: G = P, B = -Q
    return CaseFile(buses=(Bus(1), Bus(2)),
                    branches=(Branch(1, 2, r_series, 0.0), Branch(2, GROUND, r_l, w0 * l)),
                    loads=(Load(2, 1.0 / r_tank, -w0 * c),),
                    partition=Partition(study=(), external=(2,), boundary=1),
                    frequency=frequency, name="rlc-tank")


__all__ = ["series_rl_case", "rlc_tank_case", "Bus", "Branch", "Generator", "Load", "Partition", "CaseFile", "GROUND",
           "validate_case", "case_from_dict", "case_to_dict", "load_case", "save_case",
           "two_area_case"]
