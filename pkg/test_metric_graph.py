import itertools
import logging

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.exceptions import GraphError
from src.metric_graph import Edge, GraphPoint, MetricGraph, validate_graph


def brute_force_distance(graph: MetricGraph, x: GraphPoint, y: GraphPoint) -> float:
    """Enumerate every simple vertex path between the ends of x's and y's edges."""
    multi = nx.MultiGraph()
    multi.add_nodes_from(graph.vertices)
    for e in graph.edges:
        multi.add_edge(e.endpoint0, e.endpoint1, weight=e.length)

    def vertex_distance(u, v):
        if u == v:
            return 0.0
        best = np.inf
        for path in nx.all_simple_edge_paths(multi, u, v):
            best = min(best, sum(multi.edges[edge]["weight"] for edge in path))
        return best

    ex, ey = graph.edge(x.edge), graph.edge(y.edge)
    best = abs(x.s - y.s) if x.edge == y.edge else np.inf
    for (u, a), (v, b) in itertools.product(
        [(ex.endpoint0, x.s), (ex.endpoint1, ex.length - x.s)],
        [(ey.endpoint0, y.s), (ey.endpoint1, ey.length - y.s)],
    ):
        best = min(best, a + vertex_distance(u, v) + b)
    return best


def test_vertices_have_one_canonical_point(g2):
    graph, _ = g2
    # b is the far end of both edges; e1 is the lowest id
    assert graph.canonicalize(GraphPoint(edge="e2", s=1.0)) == GraphPoint(edge="e1", s=1.0)
    assert graph.same_point(GraphPoint(edge="e1", s=0.0), GraphPoint(edge="e2", s=0.0))
    assert graph.vertex_at(GraphPoint(edge="e2", s=0.5)) is None


def test_offset_outside_edge_is_rejected(g1):
    graph, _ = g1
    with pytest.raises(GraphError):
        graph.canonicalize(GraphPoint(edge="e1", s=1.5))
    with pytest.raises(GraphError):
        graph.edge("nope")


def test_distance_on_two_parallel_edges(g2):
    graph, _ = g2
    mid1, mid2 = GraphPoint(edge="e1", s=0.5), GraphPoint(edge="e2", s=0.5)
    assert graph.distance(mid1, mid2) == pytest.approx(1.0)
    assert graph.distance(GraphPoint(edge="e1", s=0.2), GraphPoint(edge="e2", s=0.1)) == pytest.approx(0.3)
    assert graph.distance(GraphPoint(edge="e1", s=0.2), GraphPoint(edge="e2", s=0.9)) == pytest.approx(0.9)
    assert graph.distance(mid1, mid1) == 0.0


def test_geodesic_passes_through_the_shared_vertex(g2):
    graph, _ = g2
    points = graph.geodesic(GraphPoint(edge="e1", s=0.2), GraphPoint(edge="e2", s=0.1))
    assert points[0] == GraphPoint(edge="e1", s=0.2)
    assert points[-1] == GraphPoint(edge="e2", s=0.1)
    assert GraphPoint(edge="e1", s=0.0) in points


def test_route_ties_prefer_smallest_edge_sequence(g2):
    graph, _ = g2
    route = graph.shortest_route(GraphPoint(edge="e1", s=0.0), GraphPoint(edge="e1", s=1.0))
    assert [seg.edge for seg in route] == ["e1"]


def test_diameter(g2, triangle):
    assert g2[0].diameter() == pytest.approx(1.0)
    assert triangle[0].diameter() == pytest.approx(2.75)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["e1", "e2", "e3"]),
    st.floats(0.0, 1.0),
    st.sampled_from(["e1", "e2", "e3"]),
    st.floats(0.0, 1.0),
)
def test_distance_matches_path_enumeration(triangle, ex, fx, ey, fy):
    graph, _ = triangle
    x = GraphPoint(edge=ex, s=fx * graph.edge(ex).length)
    y = GraphPoint(edge=ey, s=fy * graph.edge(ey).length)
    assert graph.distance(x, y) == pytest.approx(brute_force_distance(graph, x, y), abs=1e-9)
    assert graph.distance(x, y) == pytest.approx(graph.distance(y, x), abs=1e-12)


def test_distance_matrix_agrees_with_pairwise_distance(triangle):
    graph, _ = triangle
    points = [graph.vertex_point(v) for v in graph.vertices]
    points += [GraphPoint(edge=e, s=0.3 * graph.edge(e).length) for e in graph.edge_ids]
    table = graph.distance_matrix(points)
    for i, j in itertools.product(range(len(points)), repeat=2):
        assert table[i, j] == pytest.approx(graph.distance(points[i], points[j]), abs=1e-12)
    n = len(points)
    for i, j, k in itertools.product(range(n), repeat=3):
        assert table[i, k] <= table[i, j] + table[j, k] + 1e-12


def test_validate_reports_every_violation():
    graph = MetricGraph(
        ["a", "b", "c", "d", "lonely"],
        [
            Edge(id="e1", endpoint0="a", endpoint1="b", length=1.0),
            Edge(id="e1", endpoint0="a", endpoint1="b", length=1.0),
            Edge(id="e2", endpoint0="c", endpoint1="d", length=-1.0),
            Edge(id="e3", endpoint0="c", endpoint1="z", length=1.0),
        ],
    )
    kinds = {v.kind for v in validate_graph(graph)}
    assert kinds == {"duplicate edge", "non-positive length", "unknown endpoint", "isolated vertex", "disconnected"}
    messages = [v.message for v in validate_graph(graph)]
    assert "unknown endpoint z" in messages
    with pytest.raises(GraphError):
        graph.require_valid()


def test_valid_desk_graphs_have_no_violations(g1, g2, triangle):
    for graph, _ in (g1, g2, triangle):
        assert validate_graph(graph) == []


def test_empty_graph_is_invalid():
    assert [v.kind for v in validate_graph(MetricGraph([], []))] == ["empty graph"]


def test_parallel_edges_take_the_shorter_one():
    graph = MetricGraph(
        ["a", "b"],
        [
            Edge(id="e1", endpoint0="a", endpoint1="b", length=1.0),
            Edge(id="e2", endpoint0="a", endpoint1="b", length=3.0),
        ],
    )
    assert graph.distance(GraphPoint(edge="e1", s=0.0), GraphPoint(edge="e1", s=1.0)) == pytest.approx(1.0)
    assert graph.distance(GraphPoint(edge="e2", s=0.0), GraphPoint(edge="e2", s=3.0)) == pytest.approx(1.0)


def test_unit_triangle_midpoints():
    graph = MetricGraph(
        ["a", "b", "c"],
        [
            Edge(id="e1", endpoint0="a", endpoint1="b", length=1.0),
            Edge(id="e2", endpoint0="b", endpoint1="c", length=1.0),
            Edge(id="e3", endpoint0="a", endpoint1="c", length=1.0),
        ],
    )
    x, y = GraphPoint(edge="e1", s=0.5), GraphPoint(edge="e2", s=0.5)
    assert graph.distance(x, y) == pytest.approx(1.0)
    assert len(graph.geodesic(x, y)) == 3
    assert graph.geodesic(x, x) == [x]


def test_degree_one_vertex_is_accepted_with_a_warning(caplog):
    graph = MetricGraph(
        ["a", "b", "c"],
        [
            Edge(id="e1", endpoint0="a", endpoint1="b", length=1.0),
            Edge(id="e2", endpoint0="b", endpoint1="c", length=1.0),
        ],
    )
    with caplog.at_level(logging.WARNING, logger="src.metric_graph"):
        assert validate_graph(graph) == []
    warned = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING]
    assert any("vertex a has degree 1" in m for m in warned)
    assert any("vertex c has degree 1" in m for m in warned)
    assert not any("vertex b" in m for m in warned)
