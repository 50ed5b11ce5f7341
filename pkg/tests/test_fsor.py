import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import both, site, wl
from sovorch.bnb import SolveStatus, solve
from sovorch.formulation import ConstraintClass, build_instance
from sovorch.fsor import (FsorError, check_certificate, classify_green_but_far, enumerate_fsor,
                          extract_iis, fsor_contains)
from sovorch.instances import InstanceParams, random_instance
from sovorch.model import TelemetrySnapshot, WorkloadClass


def tight(seed, n_sites=None, m=None):
    rng = np.random.default_rng(seed)
    n = n_sites or int(rng.integers(2, 4))
    m = m or int(rng.integers(3, 7))
    return random_instance(n, m, rng, InstanceParams(load_factor=float(rng.uniform(0.4, 1.0))))


def brute_family(snap, ws):
    fam = set()
    for r in range(len(ws) + 1):
        for combo in itertools.combinations(ws, r):
            if solve(build_instance(snap, list(combo))).optimal:
                fam.add(frozenset(w.id for w in combo))
    return fam


def test_water_bound_certificate():
    snap = TelemetrySnapshot(0.0, (site("S1", cap=1000.0, water=2.0, permit=100.0),), ())
    inst = build_instance(snap, [wl("w1", power=30.0), wl("w2", power=30.0)])
    assert solve(inst).status is SolveStatus.INFEASIBLE
    cert = extract_iis(inst, 60)
    assert cert.has(ConstraintClass.WATER_CAP)
    assert check_certificate(inst, cert, 60) == []
    assert "water headroom" in cert.levers()


def test_no_certificate_for_feasible(one_site):
    snap, ws = one_site
    with pytest.raises(FsorError):
        extract_iis(build_instance(snap, ws))


def test_enumeration_guard(one_site):
    snap, _ = one_site
    ws = [wl(f"w{i}", power=0.1) for i in range(16)]
    with pytest.raises(FsorError):
        enumerate_fsor(snap, ws)


def test_green_but_far():
    snap = TelemetrySnapshot(0.0, (site("S1", carbon=600.0), site("S2", carbon=50.0),
                                   site("S3", carbon=50.0)),
                             tuple(both("S1", "S2", delay=1.0) + both("S1", "S3", delay=20.0)))
    w = wl("i1", slo=5.0, traffic=1.0, dest="S1", cls=WorkloadClass.INFERENCE)
    part = classify_green_but_far(snap, w)
    assert part == {"interior": ["S2"], "green_but_far": ["S3"], "ineligible": ["S1"]}
    rep = enumerate_fsor(snap, [w])
    assert rep.green_but_far == {"i1": ["S3"]}


def test_membership_witness_is_feasible():
    snap, ws = tight(11, 3, 4)
    for r in range(len(ws) + 1):
        for combo in itertools.combinations(ws, r):
            ok, witness = fsor_contains(snap, list(combo))
            assert ok == (witness is not None)


@given(st.integers(0, 10**6))
def test_family_is_exact_and_downward_closed(seed):
    snap, ws = tight(seed)
    rep = enumerate_fsor(snap, ws)
    fam = rep.family()
    assert fam == brute_family(snap, ws)
    for s in fam:
        for w in s:
            assert s - {w} in fam


@given(st.integers(0, 10**6), st.sampled_from(["power_cap", "water_permit", "carbon_ceiling"]),
       st.floats(0.3, 0.95))
def test_tightening_never_enlarges_family(seed, field, factor):
    snap, ws = tight(seed)
    target = snap.sites[seed % len(snap.sites)]
    if field == "carbon_ceiling":
        sites = tuple(s if s.id != target.id else
                      replace(s, carbon_ceiling=s.carbon_ceiling * factor)
                      for s in snap.sites)
        tighter = TelemetrySnapshot(snap.timestamp, sites, snap.links)
    else:
        pid = f"site/{target.id}/{field}"
        tighter = snap.with_params({pid: snap.param_values()[pid] * factor})
    assert enumerate_fsor(tighter, ws).family() <= enumerate_fsor(snap, ws).family()


@given(st.integers(0, 10**6))
def test_certificates_are_irreducible(seed):
    snap, ws = tight(seed)
    inst = build_instance(snap, ws)
    if solve(inst).status is not SolveStatus.INFEASIBLE:
        return
    cert = extract_iis(inst, 60)
    assert cert.groups
    assert check_certificate(inst, cert, 60) == []
