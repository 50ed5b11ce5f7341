"""Delay-constrained path machinery over the optical graph."""

from __future__ import annotations

import functools
import heapq
from collections import OrderedDict, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .model import Link, TelemetrySnapshot

SPEED_OF_LIGHT_KM_S = 299792.458
FIBER_INDEX = 1.468

Path = tuple[str, ...]


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    nodes: tuple[str, ...]
    edges: Mapping[tuple[str, str], Link]

    @classmethod
    def from_links(
        cls, nodes: Iterable[str], links: Iterable[Link], drop_alarmed: bool = True
    ) -> "Graph":
        edges = {l.key: l for l in links if not (drop_alarmed and l.alarmed)}
        return cls(tuple(nodes), edges)

    @classmethod
    def from_snapshot(cls, snapshot: TelemetrySnapshot, drop_alarmed: bool = True) -> "Graph":
        return cls.from_links(snapshot.site_ids, snapshot.links, drop_alarmed)

    def successors(self, node: str) -> list[str]:
        return sorted(b for (a, b) in self.edges if a == node)

    @functools.cached_property
    def signature(self) -> tuple:
        return tuple(sorted((a, b, l.delay) for (a, b), l in self.edges.items()))


_PATH_CACHE: "OrderedDict[tuple, list[tuple[Path, float]]]" = OrderedDict()
_PATH_CACHE_SIZE = 20000


def path_delay(path: Sequence[str], graph: Graph) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        link = graph.edges.get((a, b))
        if link is None:
            raise RoutingError(f"no edge {a}->{b} on path {'->'.join(path)}")
        total += link.delay
    return total


class DelayMatrix:
    """All-pairs minimal one-way delay; unreachable pairs read as ``None``."""

    def __init__(self, nodes: Sequence[str], dist: Mapping[tuple[str, str], float]):
        self.nodes = tuple(nodes)
        self._dist = dict(dist)

    def __getitem__(self, pair: tuple[str, str]) -> float | None:
        return self._dist.get(pair)

    def reachable(self, s: str, t: str) -> bool:
        return (s, t) in self._dist


def shortest_delays(graph: Graph) -> DelayMatrix:
    inf = float("inf")
    nodes = graph.nodes
    d = {(a, b): (0.0 if a == b else inf) for a in nodes for b in nodes}
    for (a, b), l in graph.edges.items():
        if a != b and l.delay < d[(a, b)]:
            d[(a, b)] = l.delay
    for m in nodes:
        for a in nodes:
            dam = d[(a, m)]
            if dam == inf:
                continue
            for b in nodes:
                alt = dam + d[(m, b)]
                if alt < d[(a, b)]:
                    d[(a, b)] = alt
    return DelayMatrix(nodes, {k: v for k, v in d.items() if v < inf})


def enumerate_admissible_paths(
    graph: Graph,
    source: str,
    dest: str,
    budget: float | None,
    hop_limit: int = 3,
) -> list[tuple[Path, float]]:
    """Simple paths from ``source`` to ``dest`` with at most ``hop_limit`` hops
    and total delay within ``budget`` (``None`` = unbounded), sorted by node ids."""
    if hop_limit < 1:
        raise ValueError("hop_limit must be >= 1")
    if source == dest:
        return [((source,), 0.0)] if budget is None or budget >= 0 else []
    key = (graph.signature, source, dest, hop_limit)
    paths = _PATH_CACHE.get(key)
    if paths is None:
        paths = _all_paths(graph, source, dest, hop_limit)
        _PATH_CACHE[key] = paths
        if len(_PATH_CACHE) > _PATH_CACHE_SIZE:
            _PATH_CACHE.popitem(last=False)
    if budget is None:
        return list(paths)
    return [pd for pd in paths if pd[1] <= budget]


def _all_paths(graph: Graph, source: str, dest: str, hop_limit: int) -> list[tuple[Path, float]]:
    budget = None
    out: list[tuple[Path, float]] = []
    adj: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for (a, b), l in graph.edges.items():
        if a != b:
            adj[a].append((b, l.delay))
    for a in adj:
        adj[a].sort()

    def walk(path: list[str], delay: float) -> None:
        node = path[-1]
        for nxt, dl in adj.get(node, ()):
            if nxt in path:
                continue
            nd = delay + dl
            if budget is not None and nd > budget:
                continue
            if nxt == dest:
                out.append((tuple(path) + (nxt,), nd))
            elif len(path) < hop_limit:
                path.append(nxt)
                walk(path, nd)
                path.pop()

    walk([source], 0.0)
    out.sort(key=lambda pd: pd[0])
    return out


def latency_radius(budget_ms: float | None) -> float | None:
    """Geographic reach in km of a one-way propagation budget."""
    if budget_ms is None:
        return None
    return budget_ms / 1000.0 * SPEED_OF_LIGHT_KM_S / FIBER_INDEX


def paths_to_flows(
    path_weights: Iterable[tuple[Sequence[str], float]],
) -> dict[tuple[str, str], float]:
    flows: dict[tuple[str, str], float] = defaultdict(float)
    for path, w in path_weights:
        if w < 0:
            raise RoutingError(f"negative path weight {w} on {'->'.join(path)}")
        for a, b in zip(path, path[1:]):
            flows[(a, b)] += w
    return dict(flows)


def net_outflow(flows: Mapping[tuple[str, str], float], node: str) -> float:
    out = sum(v for (a, _), v in flows.items() if a == node)
    inn = sum(v for (_, b), v in flows.items() if b == node)
    return out - inn


def flows_to_paths(
    flows: Mapping[tuple[str, str], float], source: str, dest: str, tol: float = 1e-9
) -> list[tuple[Path, float]]:
    """Decompose an s-t arc flow into path weights.

    Circulations left after the s-t paths are exhausted are dropped. Raises on
    negative arc flows.
    """
    rem = {}
    for e, v in flows.items():
        if v < -tol:
            raise RoutingError(f"negative flow {v} on {e[0]}->{e[1]}")
        if v > tol:
            rem[e] = v
    out: list[tuple[Path, float]] = []
    if source == dest:
        return out
    while True:
        # depth-first search for any s-t path over positive arcs
        stack = [(source, (source,))]
        found: Path | None = None
        seen = {source}
        while stack and found is None:
            node, path = stack.pop()
            for (a, b) in sorted(rem, reverse=True):
                if a != node or b in seen:
                    continue
                if b == dest:
                    found = path + (b,)
                    break
                seen.add(b)
                stack.append((b, path + (b,)))
        if found is None:
            break
        arcs = list(zip(found, found[1:]))
        w = min(rem[e] for e in arcs)
        for e in arcs:
            rem[e] -= w
            if rem[e] <= tol:
                del rem[e]
        out.append((found, w))
    return out


def shortest_path(graph: Graph, source: str, dest: str) -> Path | None:
    """Minimum-delay path, ties broken by node ids; ``None`` when unreachable."""
    if source == dest:
        return (source,)
    best = {source: 0.0}
    heap: list[tuple[float, Path]] = [(0.0, (source,))]
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node == dest:
            return path
        if dist > best.get(node, float("inf")):
            continue
        for nxt in graph.successors(node):
            nd = dist + graph.edges[(node, nxt)].delay
            if nd < best.get(nxt, float("inf")):
                best[nxt] = nd
                heapq.heappush(heap, (nd, path + (nxt,)))
    return None
