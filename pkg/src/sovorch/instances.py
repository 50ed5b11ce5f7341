"""Seeded random instances drawn from the scenario parameter ranges.

Used by the benchmark, the fuzz tests and the oracle comparisons. Sites sit
on a unit plane scaled to ``extent_km``; link delay follows fibre distance
with a routing stretch, so the triangle inequality roughly holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Link, Site, TelemetrySnapshot, Workload, WorkloadClass
from .routing import FIBER_INDEX, SPEED_OF_LIGHT_KM_S

CLASS_MIX = {WorkloadClass.TRAINING: 0.25, WorkloadClass.INFERENCE: 0.45,
             WorkloadClass.BATCH: 0.30}


@dataclass(frozen=True)
class InstanceParams:
    extent_km: float = 2000.0
    stretch: float = 1.3
    power_cap: tuple[float, float] = (800.0, 2500.0)
    carbon: tuple[float, float] = (40.0, 650.0)
    ceiling: tuple[float, float] = (350.0, 700.0)
    water: tuple[float, float] = (0.3, 2.5)
    permit_hours: tuple[float, float] = (0.8, 1.6)  # permit as a share of ω·P
    capacity: tuple[float, float] = (100.0, 400.0)
    utilization: tuple[float, float] = (0.0, 0.5)
    energy_per_bit: tuple[float, float] = (1e-12, 2e-11)
    link_density: float = 1.0  # share of ordered pairs with a link
    load_factor: float = 0.15  # total workload power / total site power


def fibre_delay_ms(km: float) -> float:
    return km / (SPEED_OF_LIGHT_KM_S / FIBER_INDEX) * 1000.0


def random_instance(
    n_sites: int,
    n_workloads: int,
    seed: int | np.random.Generator = 0,
    params: InstanceParams | None = None,
) -> tuple[TelemetrySnapshot, list[Workload]]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = params or InstanceParams()
    ids = [f"S{i + 1}" for i in range(n_sites)]
    xy = rng.uniform(0.0, p.extent_km, size=(n_sites, 2))

    def u(lo_hi: tuple[float, float]) -> float:
        return float(rng.uniform(*lo_hi))

    sites = []
    for sid in ids:
        cap = round(u(p.power_cap), 1)
        omega = round(u(p.water), 3)
        sites.append(Site(
            id=sid,
            power_cap=cap,
            carbon_intensity=round(u(p.carbon), 1),
            water_intensity=omega,
            carbon_ceiling=round(u(p.ceiling), 1),
            water_permit=round(omega * cap * u(p.permit_hours), 1),
        ))
    links = []
    for a in range(n_sites):
        for b in range(n_sites):
            if a == b or (p.link_density < 1.0 and rng.random() > p.link_density):
                continue
            km = float(np.hypot(*(xy[a] - xy[b]))) * p.stretch
            links.append(Link(
                src=ids[a], dst=ids[b],
                capacity=round(u(p.capacity), 1),
                delay=round(max(0.1, fibre_delay_ms(km)), 3),
                energy_per_bit=float(u(p.energy_per_bit)),
                utilization=round(u(p.utilization), 3),
            ))
    total_power = sum(s.power_cap for s in sites)
    mean_power = p.load_factor * total_power / max(1, n_workloads)
    classes = list(CLASS_MIX)
    probs = np.array([CLASS_MIX[c] for c in classes])
    workloads = []
    for k in range(n_workloads):
        cls = classes[int(rng.choice(len(classes), p=probs))]
        dest = ids[int(rng.integers(n_sites))]
        power = round(float(mean_power * rng.uniform(0.3, 1.7)), 1)
        if cls is WorkloadClass.TRAINING:
            wl = Workload(f"w{k + 1}", power, None, round(u((0.0, 5.0)), 2), False, dest,
                          cls, state_size=round(u((200.0, 2000.0)), 1))
        elif cls is WorkloadClass.INFERENCE:
            wl = Workload(f"w{k + 1}", power, round(u((4.0, 25.0)), 2),
                          round(u((5.0, 60.0)), 2), True, dest, cls,
                          state_size=round(u((1.0, 50.0)), 1), rehydration=round(u((0.0, 3.0)), 2))
        else:
            wl = Workload(f"w{k + 1}", power, None, round(u((1.0, 30.0)), 2), True, dest,
                          cls, state_size=round(u((10.0, 500.0)), 1))
        workloads.append(wl)
    snap = TelemetrySnapshot(timestamp=0.0, sites=tuple(sites), links=tuple(links))
    return snap, workloads


def scale_hint(n_sites: int) -> float:
    """Extent that keeps site spacing comparable across scales."""
    return 2000.0 * math.sqrt(n_sites / 8.0)
