import json

import pytest
import yaml

from gridreduce.casefile import (Branch, Bus, CaseFile, Generator, Load, Partition, case_from_dict,
                                 case_to_dict, load_case, save_case)
from gridreduce.errors import CaseError
from gridreduce.netmodel import check_operating_point

from smallcases import three_bus_case


def test_shipped_case_contents(two_area):
    assert len(two_area.buses) == 11
    assert len(two_area.generators) == 4
    assert all(g.mva == 900.0 for g in two_area.generators)
    part = two_area.require_partition()
    assert part.boundary == 10
    assert set(part.external_generators) == {3, 4}
    assert set(part.study) | set(part.external) | {part.boundary} == set(two_area.bus_ids)


@pytest.mark.parametrize("suffix", [".yaml", ".json"])
def test_round_trip(tmp_path, two_area, suffix):
    path = tmp_path / f"case{suffix}"
    save_case(two_area, path)
    assert load_case(path) == two_area


def test_missing_section_named():
    with pytest.raises(CaseError, match="'branches'"):
        case_from_dict({"buses": [{"id": 1}]})


def test_missing_partition_key_named(two_area):
    doc = case_to_dict(two_area)
    del doc["partition"]["boundary"]
    with pytest.raises(CaseError, match="'boundary'"):
        case_from_dict(doc)


def test_unknown_branch_bus():
    with pytest.raises(CaseError, match="unknown bus id 7"):
        CaseFile(buses=(Bus(1),), branches=(Branch(1, 7, 0.1, 0.1),))


def test_unknown_generator_bus():
    with pytest.raises(CaseError, match="unknown bus"):
        CaseFile(buses=(Bus(1),), branches=(), generators=(Generator("G", 2, 100, 5, 0.3),))


@pytest.mark.parametrize("h, xd", [(0.0, 0.3), (5.0, 0.0), (-1.0, 0.3)])
def test_nonpositive_machine_constants(h, xd):
    with pytest.raises(CaseError):
        CaseFile(buses=(Bus(1),), branches=(), generators=(Generator("G", 1, 100, h, xd),))


def test_non_finite_branch():
    with pytest.raises(CaseError):
        CaseFile(buses=(Bus(1), Bus(2)), branches=(Branch(1, 2, float("nan"), 0.1),))


def test_partition_overlap_rejected():
    with pytest.raises(CaseError, match="both areas"):
        CaseFile(buses=(Bus(1), Bus(2), Bus(3)), branches=(),
                 partition=Partition(study=(1, 3), external=(3,), boundary=2))


def test_partition_must_cover_all_buses():
    with pytest.raises(CaseError, match="uncovered"):
        CaseFile(buses=(Bus(1), Bus(2), Bus(3)), branches=(),
                 partition=Partition(study=(1,), external=(), boundary=2))


def test_boundary_in_area_rejected():
    with pytest.raises(CaseError, match="boundary"):
        CaseFile(buses=(Bus(1), Bus(2)), branches=(),
                 partition=Partition(study=(1, 2), external=(), boundary=2))


def test_branch_bypassing_boundary_rejected():
    with pytest.raises(CaseError, match="bypasses"):
        CaseFile(buses=(Bus(1), Bus(2), Bus(3)), branches=(Branch(1, 3, 0.0, 0.1),),
                 partition=Partition(study=(1,), external=(3,), boundary=2))


def test_bad_load_model():
    with pytest.raises(CaseError):
        CaseFile(buses=(Bus(1),), branches=(), loads=(Load(1, 1.0, 0.0, "power"),))


def test_unreadable_and_unparsable_files(tmp_path):
    with pytest.raises(CaseError):
        load_case(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("buses: [1, 2\n")
    with pytest.raises(CaseError):
        load_case(bad)


def test_external_view_of_two_area(two_area):
    ext = two_area.external_view()
    assert ext.partition.boundary == 10
    assert set(ext.bus_ids) == {10, 3, 4, 11}
    assert {g.id for g in ext.generators} == {"G3", "G4"}
    assert ext.partition.study == ()


def test_three_bus_power_flow_is_consistent():
    assert check_operating_point(three_bus_case(), tol=1e-9) < 1e-9
