import itertools

import pytest
from hypothesis import given, strategies as st

from helpers import both, link
from sovorch.routing import (Graph, RoutingError, enumerate_admissible_paths, flows_to_paths,
                             latency_radius, net_outflow, path_delay, paths_to_flows,
                             shortest_delays, shortest_path)


def square():
    links = both("A", "B", delay=1.0) + both("B", "D", delay=1.0) + \
        both("A", "C", delay=2.0) + both("C", "D", delay=2.0)
    return Graph.from_links("ABCD", links)


def test_latency_radius_one_ms():
    assert latency_radius(1.0) == pytest.approx(204.2, abs=0.1)
    assert latency_radius(None) is None


def test_admissible_paths_respect_budget_and_hops():
    g = square()
    assert [p for p, _ in enumerate_admissible_paths(g, "A", "D", 2.0)] == [("A", "B", "D")]
    assert len(enumerate_admissible_paths(g, "A", "D", 4.0)) == 2
    assert enumerate_admissible_paths(g, "A", "D", None, hop_limit=1) == []
    assert enumerate_admissible_paths(g, "A", "A", 0.0) == [(("A",), 0.0)]
    with pytest.raises(ValueError):
        enumerate_admissible_paths(g, "A", "D", None, hop_limit=0)


def test_alarmed_links_are_dropped():
    g = Graph.from_links("AB", [link("A", "B", alarmed=True)])
    assert shortest_path(g, "A", "B") is None
    assert Graph.from_links("AB", [link("A", "B", alarmed=True)], drop_alarmed=False).edges


def test_shortest_delays_match_floyd():
    g = square()
    d = shortest_delays(g)
    assert d[("A", "D")] == pytest.approx(2.0)
    assert d[("C", "B")] == pytest.approx(3.0)
    assert shortest_path(g, "C", "B") in {("C", "A", "B"), ("C", "D", "B")}


def test_flow_path_roundtrip():
    flows = paths_to_flows([(("A", "B", "D"), 3.0), (("A", "C", "D"), 1.0)])
    assert net_outflow(flows, "A") == pytest.approx(4.0)
    assert net_outflow(flows, "D") == pytest.approx(-4.0)
    assert net_outflow(flows, "B") == pytest.approx(0.0)
    paths = flows_to_paths(flows, "A", "D")
    assert sum(w for _, w in paths) == pytest.approx(4.0)
    with pytest.raises(RoutingError):
        paths_to_flows([(("A", "B"), -1.0)])


@given(st.floats(0.5, 6.0), st.floats(0.5, 6.0), st.one_of(st.none(), st.floats(0.0, 12.0)))
def test_enumerated_paths_are_simple_and_within_budget(d1, d2, budget):
    g = Graph.from_links("ABCD", both("A", "B", delay=d1) + both("B", "D", delay=d2)
                         + both("A", "C", delay=d2) + both("C", "D", delay=d1)
                         + both("B", "C", delay=d1 + d2))
    for path, d in enumerate_admissible_paths(g, "A", "D", budget):
        assert len(set(path)) == len(path)
        assert d == pytest.approx(path_delay(path, g))
        assert budget is None or d <= budget
    # brute force over node orders finds the same set
    found = {p for p, _ in enumerate_admissible_paths(g, "A", "D", budget, hop_limit=3)}
    brute = set()
    for k in range(0, 3):
        for mid in itertools.permutations("BC", k):
            p = ("A",) + mid + ("D",)
            if all(e in g.edges for e in zip(p, p[1:])) and (
                    budget is None or path_delay(p, g) <= budget):
                brute.add(p)
    assert found == brute
