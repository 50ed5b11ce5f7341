import re

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import both, site, wl
from sovorch.formulation import (ConstraintClass, FormulationError, FormulationOptions,
                                 MigrationError, NormalizationWindow, build_instance,
                                 effective_latency_budget, export_lp, migration_carbon,
                                 transfer_delay_ms)
from sovorch.instances import random_instance
from sovorch.model import TelemetrySnapshot, WorkloadClass


# ---------------------------------------------------------- migration


def migrating(slo, state_gb, rehydration, bw):
    snap = TelemetrySnapshot(0.0, (site("S1"), site("S2")),
                             tuple(both("S1", "S2", cap=bw, delay=1.0)))
    w = wl("w", slo=slo, state_size=state_gb, rehydration=rehydration, cls=WorkloadClass.INFERENCE)
    return effective_latency_budget(w, "S1", "S2", snap)


def test_migration_headroom_examples():
    # 0.25 GB over 100 Gbps is 20 ms of transfer
    assert transfer_delay_ms(0.25, 100.0) == pytest.approx(20.0)
    assert migrating(50.0, 0.25, 10.0, 100.0) == pytest.approx(20.0)
    assert migrating(50.0, 0.375, 0.0, 100.0) == pytest.approx(20.0)  # 30 ms transfer


def test_transfer_of_100_gb_at_100_gbps_takes_8_s():
    assert transfer_delay_ms(100.0, 100.0) == pytest.approx(8000.0)


def test_staying_put_keeps_full_budget_and_immobile_cannot_move():
    snap = TelemetrySnapshot(0.0, (site("S1"), site("S2")), tuple(both("S1", "S2")))
    w = wl("w", slo=30.0, state_size=5.0)
    assert effective_latency_budget(w, "S1", "S1", snap) == 30.0
    with pytest.raises(MigrationError):
        effective_latency_budget(wl("t", portable=False, cls=WorkloadClass.TRAINING),
                                 "S1", "S2", snap)


def test_migration_carbon_arithmetic():
    # 1e-11 J/bit * 10 GB * 8e9 bit/GB = 0.8 J -> 0.8/3.6e6 kWh at 360 g/kWh = 8e-5 g
    assert migration_carbon(site("S1", carbon=360.0), 1e-11, 10.0) == pytest.approx(8e-5)


# ------------------------------------------------------------- gates


def test_carbon_gate_fixes_site(two_sites):
    s1, s2 = two_sites.sites
    snap = two_sites.with_params({"site/S1/carbon_intensity": 600.0})
    inst = build_instance(snap, [wl("w1")])
    assert ("S1", "w1") not in inst.x_index
    assert ("S2", "w1") in inst.x_index
    assert any(f.group.cls is ConstraintClass.CARBON_GATE for f in inst.gate_log)


def test_latency_gate_excludes_far_site(two_sites):
    inst = build_instance(two_sites, [wl("w1", slo=3.0, traffic=1.0, dest="S1")])
    assert set(inst.x_index) == {("S1", "w1")}
    assert any(f.group.cls is ConstraintClass.LATENCY_GATE for f in inst.gate_log)


def test_onsite_generation_offsets_carbon():
    s = site("S1", cap=100.0, carbon=600.0, ceiling=400.0, onsite_gen=50.0)
    assert s.effective_carbon == pytest.approx(300.0)
    inst = build_instance(TelemetrySnapshot(0.0, (s,), ()), [wl("w1")])
    assert ("S1", "w1") in inst.x_index


def test_alpha_outside_unit_interval_rejected(one_site):
    snap, ws = one_site
    with pytest.raises(FormulationError):
        build_instance(snap, ws, alpha=1.5)


def test_alpha_one_prefers_clean_site(two_sites):
    inst = build_instance(two_sites, [wl("w1")], alpha=1.0)
    from sovorch.bnb import solve
    assert solve(inst).placement.assignment == {"w1": "S2"}


def test_latency_objective_prefers_dest(two_sites):
    from sovorch.bnb import solve
    opts = FormulationOptions(objective="latency")
    inst = build_instance(two_sites, [wl("w1", traffic=1.0, slo=20.0, dest="S1")], 1.0, None, opts)
    assert solve(inst).placement.assignment == {"w1": "S1"}


def test_normalization_window_clamps():
    w = NormalizationWindow(100.0, 300.0, 0.5, 1.5)
    assert w.gamma(50.0) == 0.0 and w.gamma(400.0) == 1.0
    assert w.gamma(200.0) == pytest.approx(0.5)


# ------------------------------------------------------------- counts


@pytest.mark.parametrize("n,m,cont", [(4, 10, 120), (6, 15, 450), (8, 20, 1120)])
def test_nominal_variable_counts(n, m, cont):
    snap, ws = random_instance(n, m, 3)
    inst = build_instance(snap, ws)
    assert inst.meta["nominal_continuous"] == cont
    assert inst.meta["binaries"] <= n * m


# ---------------------------------------------------------- LP export


def parse_lp(text):
    """Minimal reader for the subset of the LP format the exporter writes."""
    section, obj, rows, binaries = None, {}, [], []
    term = re.compile(r"([+-]?)\s*([0-9.eE+-]+)\s+([A-Za-z_][\w.]*)")
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line in ("Minimize", "Subject To", "Bounds", "Binary", "End"):
            section = line
            continue
        if section == "Minimize":
            for sgn, v, name in term.findall(line.split(":", 1)[1]):
                obj[name] = obj.get(name, 0.0) + (-1 if sgn == "-" else 1) * float(v)
        elif section == "Subject To":
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)\s*(<=|>=|=)\s*(\S+)$", body.strip())
            coeffs = {}
            for sgn, v, var in term.findall(m.group(1)):
                coeffs[var] = coeffs.get(var, 0.0) + (-1 if sgn == "-" else 1) * float(v)
            rows.append((name.strip(), coeffs, m.group(2), float(m.group(3))))
        elif section == "Binary":
            binaries.append(line)
    return obj, rows, binaries


@given(st.integers(0, 10**5))
def test_lp_export_matches_matrix(seed):
    rng = np.random.default_rng(seed)
    snap, ws = random_instance(int(rng.integers(2, 4)), int(rng.integers(1, 4)), rng)
    inst = build_instance(snap, ws, 0.5)
    lp = inst.to_lp()
    obj, rows, binaries = parse_lp(export_lp(inst))
    names = [v.name for v in inst.variables]
    for j, name in enumerate(names):
        assert obj.get(name, 0.0) == pytest.approx(lp.c[j], rel=1e-12, abs=1e-15)
    assert len(rows) == lp.A.shape[0]
    sense = {"<=": -1, "=": 0, ">=": 1}
    for i, (_, coeffs, s, rhs) in enumerate(rows):
        dense = np.array([coeffs.get(n, 0.0) for n in names])
        assert dense == pytest.approx(lp.A[i])
        assert sense[s] == lp.senses[i] and rhs == pytest.approx(lp.b[i])
    assert sorted(binaries) == sorted(names[j] for j in inst.binaries)
