import io
import math

import pytest
from hypothesis import given, strategies as st

from helpers import both, site, wl
from sovorch.loop import ControlLoop, LoopConfig, Outcome
from sovorch.model import Confidence, SchemaError, TelemetrySnapshot
from sovorch.telemetry import (ADVERSE_UP, DAY_S, Domain, FreshnessPolicy, RawReading,
                               ReadingIndex, SiteProfile, StreamSpec, estimate,
                               field_name, generate_stream, ingest_report, read_ndjson,
                               worst_case, write_ndjson)

CI = "site/S1/carbon_intensity"
CAP = "site/S1/power_cap"
ALARM = "link/S1/S2/alarmed"


def base():
    return TelemetrySnapshot(0.0, (site("S1"), site("S2")), tuple(both("S1", "S2")))


def r(t, pid, v):
    return RawReading(float(t), pid, float(v))


def test_fresh_and_interpolated_tags():
    rep = ingest_report([r(400, CI, 300), r(900, CAP, 800)], 1000.0, FreshnessPolicy(), base())
    snap = rep.snapshot
    # 600 s old: older than a cycle yet within the 900 s carbon limit
    assert snap.confidence[CI] is Confidence.INTERPOLATED
    assert snap.confidence[CAP] is Confidence.FRESH
    assert snap.site("S1").carbon_intensity == 300.0
    assert snap.confidence["site/S2/power_cap"] is Confidence.FRESH  # never telemetered


def test_carbon_falls_back_to_day_old_forecast():
    readings = [r(t, CI, 100 + t / 300) for t in range(0, 3600 + 1, 300)]
    readings += [r(DAY_S, CI, 500.0)]
    t = DAY_S + 2400.0  # last reading 2400 s old, beyond 900 s
    rep = ingest_report(readings, t, FreshnessPolicy(), base())
    assert rep.snapshot.confidence[CI] is Confidence.FORECAST_SUBSTITUTED
    assert rep.snapshot.site("S1").carbon_intensity == pytest.approx(108.0)
    assert rep.stale[CI] == "ForecastSubstitute"
    assert not rep.snapshot.hold


def test_power_cap_takes_conservative_bound():
    readings = [r(0, CAP, 900), r(60, CAP, 700), r(120, CAP, 950)]
    rep = ingest_report(readings, 600.0, FreshnessPolicy(), base())
    assert rep.snapshot.confidence[CAP] is Confidence.CONSERVATIVE_BOUND
    assert rep.snapshot.site("S1").power_cap == 700.0  # lowest cap is least favourable


def test_stale_alarm_holds_optimization():
    rep = ingest_report([r(0, ALARM, 0.0)], 600.0, FreshnessPolicy(), base())
    assert rep.snapshot.hold
    assert rep.snapshot.confidence[ALARM] is Confidence.HOLD
    assert ALARM in rep.hold_reasons[0]


def test_hold_cycle_skips_the_solver():
    snap = base()
    loop = ControlLoop(snap, [wl("w1")], [r(0, ALARM, 0.0)], LoopConfig(), alerts=None)
    rec = loop.run_cycle(600.0)
    assert rec.outcome is Outcome.HOLD
    assert rec.nodes == 0 and rec.solve_seconds == 0.0 and rec.objective is None
    assert loop.run_cycle(60.0 + 600).outcome is Outcome.HOLD


def test_backwards_timestamp_rejected():
    idx = ReadingIndex([RawReading(10.0, CI, 1.0, source="grid")])
    with pytest.raises(ValueError, match="back"):
        idx.add(RawReading(5.0, CI, 1.0, source="grid"))
    idx.add(RawReading(5.0, CI, 1.0, source="other"))  # different source, own clock


def test_ndjson_roundtrip_and_errors():
    spec = StreamSpec((SiteProfile("S1", 300.0, 0.2, carbon_noise=0.05),))
    rs = generate_stream(spec, 3600.0, seed=4)
    buf = io.StringIO()
    write_ndjson(rs, buf)
    buf.seek(0)
    assert list(read_ndjson(buf)) == rs
    with pytest.raises(SchemaError) as e:
        list(read_ndjson(io.StringIO('{"parameter": "x", "value": 1, "timestamp": 0}\n{oops\n'),
                         "f.ndjson"))
    assert e.value.field == "f.ndjson:2"
    with pytest.raises(SchemaError) as e:
        list(read_ndjson(io.StringIO('{"parameter": "x", "value": 1}\n'), "f.ndjson"))
    assert e.value.field == "f.ndjson:1.timestamp"


def test_generator_is_deterministic_per_seed():
    spec = StreamSpec((SiteProfile("S1", 300.0, carbon_noise=0.1, power_walk=0.01),))
    assert generate_stream(spec, 7200.0, seed=1) == generate_stream(spec, 7200.0, seed=1)
    assert generate_stream(spec, 7200.0, seed=1) != generate_stream(spec, 7200.0, seed=2)


def test_forecast_horizon_and_worst_case():
    snaps = []
    for k in range(int(DAY_S / 300) + 1):
        t = k * 300.0
        ci = 200.0 + 100.0 * math.sin(2 * math.pi * t / DAY_S)
        snaps.append(base().with_params({CI: ci}, timestamp=t))
    est = estimate(snaps, horizon_minutes=30.0)
    traj = est.forecasts[CI]
    assert len(traj) == 6
    worst = worst_case(est)
    assert worst.site("S1").carbon_intensity == pytest.approx(max(traj + (est.site("S1").carbon_intensity,)))


def test_substituted_values_widen_adversely():
    snap = base().with_params({CI: 300.0}, confidence={CI: Confidence.FORECAST_SUBSTITUTED})
    est = estimate([snap], 0.0, uncertainty={CI: 25.0})
    assert est.site("S1").carbon_intensity == pytest.approx(325.0)


# ------------------------------------------------------------- invariants

PIDS = [CI, CAP, ALARM, "site/S1/water_intensity", "link/S1/S2/utilization"]

readings_st = st.lists(
    st.tuples(st.floats(0, 20000), st.sampled_from(PIDS), st.floats(0, 1000)),
    max_size=40)


@given(readings_st, st.floats(0, 25000))
def test_ingest_invariants(raw, t):
    readings = sorted(r(ts, pid, v) for ts, pid, v in raw)
    policy = FreshnessPolicy()
    rep = ingest_report(readings, t, policy, base())
    snap = rep.snapshot
    vals = snap.param_values()
    assert set(snap.confidence) == set(snap.parameter_ids())
    assert snap.hold == any(c is Confidence.HOLD for c in snap.confidence.values())
    assert snap.hold == bool(rep.hold_reasons)
    for pid in PIDS:
        seen = [x for x in readings if x.parameter == pid and x.timestamp <= t]
        c = snap.confidence[pid]
        if c in (Confidence.FRESH, Confidence.INTERPOLATED) and seen:
            assert t - seen[-1].timestamp <= policy.for_param(pid).tau_max
        if c is Confidence.CONSERVATIVE_BOUND:
            window = [x.value for x in seen if x.timestamp >= t - policy.bound_window] or \
                [x.value for x in seen]
            worst = max(window) if field_name(pid) in ADVERSE_UP else min(window)
            assert vals[pid] == worst
    # readings after the cycle time never leak in
    past = [x for x in readings if x.timestamp <= t]
    again = ingest_report(past, t, policy, base()).snapshot
    for pid in PIDS:
        if any(x.parameter == pid for x in past):
            assert again.param_values()[pid] == vals[pid]
            assert again.confidence[pid] is snap.confidence[pid]
