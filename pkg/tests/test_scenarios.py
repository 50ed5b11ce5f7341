import copy

import pytest

from sovorch.model import SchemaError
from sovorch.scenarios import (SITE_COUNTS, Configuration, build_scenario, load_spec,
                               orderings, run_scenario)


@pytest.mark.parametrize("sid", ["A", "B", "C"])
@pytest.mark.parametrize("seed", [0, 3])
def test_site_counts_and_determinism(sid, seed):
    a, b = build_scenario(sid, seed), build_scenario(sid, seed)
    assert len(a.base.sites) == SITE_COUNTS[sid]
    assert a.base == b.base and a.workloads == b.workloads


@pytest.mark.parametrize("seed", range(5))
def test_regional_sites_are_close(seed):
    scn = build_scenario("A", seed)
    assert len(scn.base.links) == 5 * 4
    assert max(l.delay for l in scn.base.links) <= 10.0


@pytest.mark.parametrize("seed", range(5))
def test_fossil_zone_at_least_twice_renewable(seed):
    scn = build_scenario("B", seed)
    by_zone = {}
    for s in scn.base.sites:
        by_zone.setdefault(scn.zone_of[s.id], []).append(s.carbon_intensity)
    assert min(by_zone["fossil"]) >= 2 * max(by_zone["renewable"])
    assert len(by_zone["renewable"]) == 2


@pytest.mark.parametrize("seed", range(5))
def test_water_stress_hits_at_least_two_sites(seed):
    scn = build_scenario("C", seed)
    assert len(scn.stressed) >= 2
    assert scn.in_stress(70 * 3600.0) and not scn.in_stress(10 * 3600.0)


def test_bad_spec_names_field():
    spec = load_spec("A")
    spec["site_groups"][0]["count"] += 1
    with pytest.raises(SchemaError) as e:
        build_scenario(spec)
    assert e.value.field == "scenario.site_groups"
    with pytest.raises(SchemaError):
        build_scenario("D")


def short_c():
    spec = copy.deepcopy(load_spec("C"))
    spec["stress"][0].update(start_h=2, end_h=4)
    return spec


def test_short_water_stress_run():
    rep = run_scenario(short_c(), [0], [Configuration.JOINT], horizon_hours=6,
                       cycle_seconds=900)
    j = rep.results[0]
    assert j.infeasible_in_stress >= 1 and j.infeasible_outside_stress == 0
    assert all(any(g["class"] == "WaterCap" for g in c["groups"]) for c in j.certificates)


def test_short_green_remote_run():
    rep = run_scenario("B", [1], horizon_hours=6, cycle_seconds=900)
    checks = orderings(rep)["B"]
    assert checks["compute_only_slo_violations"]["passed"]
    assert checks["joint_zero_slo_violations"]["passed"]
    assert checks["joint_impact_lt_baseline"]["passed"]
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("scenario,configuration,seed")
    assert len(csv) == 4
    assert rep.plot_data().count("\n") == 1 + 3 * 24
