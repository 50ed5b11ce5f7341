"""Small builders for hand-written instances."""

from sovorch.model import Link, Site, TelemetrySnapshot, Workload, WorkloadClass


def site(sid, cap=1000.0, carbon=200.0, water=1.0, ceiling=500.0, permit=1e6, **kw):
    return Site(sid, cap, carbon, water, ceiling, permit, **kw)


def link(a, b, cap=100.0, delay=2.0, **kw):
    return Link(a, b, cap, delay, **kw)


def both(a, b, cap=100.0, delay=2.0, **kw):
    return [link(a, b, cap, delay, **kw), link(b, a, cap, delay, **kw)]


def wl(wid, power=10.0, slo=None, traffic=0.0, dest="S1", portable=True,
       cls=WorkloadClass.BATCH, **kw):
    return Workload(wid, power, slo, traffic, portable, dest, cls, **kw)
