from __future__ import annotations

import logging
import math
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict

from src.exceptions import GraphError

logger = logging.getLogger(__name__)

VertexId = str
EdgeId = str

# Offsets this close to an edge end are snapped onto the vertex.
END_TOL = 1e-12
TIE_TOL = 1e-12


class Edge(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: EdgeId
    endpoint0: VertexId
    endpoint1: VertexId
    length: float

    def endpoint(self, end: int) -> VertexId:
        return self.endpoint0 if end == 0 else self.endpoint1

    def offset_of_end(self, end: int) -> float:
        return 0.0 if end == 0 else self.length


class GraphPoint(BaseModel):
    """A location on the graph: arc-length offset `s` along `edge`."""
    model_config = ConfigDict(frozen=True)

    edge: EdgeId
    s: float


class Segment(NamedTuple):
    edge: EdgeId
    s_from: float
    s_to: float

    @property
    def length(self) -> float:
        return abs(self.s_to - self.s_from)

    def reversed(self) -> "Segment":
        return Segment(self.edge, self.s_to, self.s_from)


class Violation(BaseModel):
    kind: str
    location: str
    message: str


class MetricGraph:
    """
    Finite graph with arc-length parametrized edges. Immutable after
    construction; every query is read-only.
    """

    def __init__(self, vertices: Iterable[VertexId], edges: Iterable[Edge]):
        self.vertices: Tuple[VertexId, ...] = tuple(sorted(set(vertices)))
        self.edges: Tuple[Edge, ...] = tuple(edges)
        self._edges: Dict[EdgeId, Edge] = {e.id: e for e in self.edges}
        self.incidence: Dict[VertexId, List[Tuple[EdgeId, int]]] = {v: [] for v in self.vertices}
        for edge in sorted(self.edges, key=lambda e: e.id):
            for end in (0, 1):
                v = edge.endpoint(end)
                if v in self.incidence:
                    self.incidence[v].append((edge.id, end))
        self._vertex_dist: Optional[Dict[VertexId, Dict[VertexId, float]]] = None
        self._vertex_paths: Optional[Dict[VertexId, Dict[VertexId, List[VertexId]]]] = None
        self._hop_edge: Dict[Tuple[VertexId, VertexId], Edge] = {}
        self._dist_array: Optional[np.ndarray] = None
        self._vertex_index = {v: i for i, v in enumerate(self.vertices)}

    # ------------------------------------------------------------------ lookup

    def edge(self, edge_id: EdgeId) -> Edge:
        try:
            return self._edges[edge_id]
        except KeyError:
            raise GraphError(f"unknown edge {edge_id!r}") from None

    @property
    def edge_ids(self) -> List[EdgeId]:
        return sorted(self._edges)

    def degree(self, v: VertexId) -> int:
        return len(self.incidence.get(v, []))

    def require_valid(self) -> None:
        violations = validate_graph(self)
        if violations:
            raise GraphError("; ".join(f"{v.kind} at {v.location}: {v.message}" for v in violations))

    # ---------------------------------------------------------- canonical form

    def vertex_point(self, v: VertexId) -> GraphPoint:
        if not self.incidence.get(v):
            raise GraphError(f"vertex {v!r} has no incident edge")
        edge_id, end = min(self.incidence[v])
        return GraphPoint(edge=edge_id, s=self._edges[edge_id].offset_of_end(end))

    def canonicalize(self, p: GraphPoint) -> GraphPoint:
        edge = self.edge(p.edge)
        tol = END_TOL * max(1.0, edge.length)
        if not (-tol <= p.s <= edge.length + tol):
            raise GraphError(f"offset {p.s} outside [0, {edge.length}] on edge {edge.id}")
        if abs(p.s) <= tol:
            return self.vertex_point(edge.endpoint0)
        if abs(p.s - edge.length) <= tol:
            return self.vertex_point(edge.endpoint1)
        return p

    def vertex_at(self, p: GraphPoint) -> Optional[VertexId]:
        """Vertex at `p`, or None for interior points."""
        edge = self.edge(p.edge)
        tol = END_TOL * max(1.0, edge.length)
        if abs(p.s) <= tol:
            return edge.endpoint0
        if abs(p.s - edge.length) <= tol:
            return edge.endpoint1
        return None

    def same_point(self, p: GraphPoint, q: GraphPoint) -> bool:
        return self.canonicalize(p) == self.canonicalize(q)

    # --------------------------------------------------------------- distances

    def _ensure_vertex_distances(self) -> None:
        if self._vertex_dist is not None:
            return
        simple = nx.Graph()
        simple.add_nodes_from(self.vertices)
        for edge in sorted(self.edges, key=lambda e: e.id):
            u, v = edge.endpoint0, edge.endpoint1
            if u == v:
                continue
            current = simple.get_edge_data(u, v)
            if current is None or edge.length < current["weight"]:
                simple.add_edge(u, v, weight=edge.length, edge=edge)
        self._vertex_dist, self._vertex_paths = {}, {}
        for source, (dist, paths) in nx.all_pairs_dijkstra(simple, weight="weight"):
            self._vertex_dist[source] = dist
            self._vertex_paths[source] = paths
        for u, v, data in simple.edges(data=True):
            self._hop_edge[(u, v)] = data["edge"]
            self._hop_edge[(v, u)] = data["edge"]
        n = len(self.vertices)
        table = np.full((n, n), np.inf)
        for u, row in self._vertex_dist.items():
            for v, d in row.items():
                table[self._vertex_index[u], self._vertex_index[v]] = d
        self._dist_array = table

    def vertex_distance(self, u: VertexId, v: VertexId) -> float:
        self._ensure_vertex_distances()
        return self._vertex_dist[u].get(v, math.inf)

    def _anchors(self, p: GraphPoint) -> List[Tuple[VertexId, float, Optional[Segment]]]:
        vertex = self.vertex_at(p)
        if vertex is not None:
            return [(vertex, 0.0, None)]
        edge = self._edges[p.edge]
        return [
            (edge.endpoint0, p.s, Segment(edge.id, p.s, 0.0)),
            (edge.endpoint1, edge.length - p.s, Segment(edge.id, p.s, edge.length)),
        ]

    def _vertex_route(self, u: VertexId, v: VertexId) -> List[Segment]:
        path = self._vertex_paths[u][v]
        segments = []
        for a, b in zip(path[:-1], path[1:]):
            edge = self._hop_edge[(a, b)]
            if edge.endpoint0 == a:
                segments.append(Segment(edge.id, 0.0, edge.length))
            else:
                segments.append(Segment(edge.id, edge.length, 0.0))
        return segments

    def shortest_route(self, x: GraphPoint, y: GraphPoint) -> List[Segment]:
        """
        Intra-edge segments of a shortest unit-speed geodesic from x to y.
        Ties are broken by the lexicographically smallest edge sequence.
        """
        x, y = self.canonicalize(x), self.canonicalize(y)
        if x == y:
            return []
        self._ensure_vertex_distances()
        candidates: List[Tuple[float, List[Segment]]] = []
        if x.edge == y.edge and self.vertex_at(x) is None and self.vertex_at(y) is None:
            candidates.append((abs(x.s - y.s), [Segment(x.edge, x.s, y.s)]))
        for u, a, seg_x in self._anchors(x):
            for v, b, seg_y in self._anchors(y):
                d_uv = self._vertex_dist[u].get(v)
                if d_uv is None:
                    continue
                route = ([seg_x] if seg_x else []) + self._vertex_route(u, v)
                if seg_y:
                    route.append(seg_y.reversed())
                candidates.append((a + d_uv + b, route))
        if not candidates:
            raise GraphError(f"no path between {x} and {y}")
        best = min(length for length, _ in candidates)
        ties = [route for length, route in candidates if length <= best + TIE_TOL]
        return min(ties, key=lambda route: tuple(seg.edge for seg in route))

    def distance(self, x: GraphPoint, y: GraphPoint) -> float:
        return float(sum(seg.length for seg in self.shortest_route(x, y)))

    def geodesic(self, x: GraphPoint, y: GraphPoint) -> List[GraphPoint]:
        x = self.canonicalize(x)
        points = [x]
        for seg in self.shortest_route(x, y):
            points.append(self.canonicalize(GraphPoint(edge=seg.edge, s=seg.s_to)))
        return points

    def distance_matrix(self, points: Sequence[GraphPoint]) -> np.ndarray:
        """Pairwise distances between canonical points, vectorized over vertex anchors."""
        self._ensure_vertex_distances()
        n = len(points)
        # Every point gets two anchors; vertices use the same vertex twice at offset 0.
        idx = np.zeros((n, 2), dtype=int)
        off = np.zeros((n, 2))
        for i, p in enumerate(points):
            anchors = self._anchors(p)
            if len(anchors) == 1:
                anchors = anchors * 2
            for k, (v, a, _) in enumerate(anchors):
                idx[i, k] = self._vertex_index[v]
                off[i, k] = a
        table = np.full((n, n), np.inf)
        for i_end in (0, 1):
            for j_end in (0, 1):
                via = off[:, i_end][:, None] + self._dist_array[np.ix_(idx[:, i_end], idx[:, j_end])] + off[:, j_end][None, :]
                np.minimum(table, via, out=table)
        edges = np.array([p.edge for p in points])
        interior = np.array([self.vertex_at(p) is None for p in points])
        s = np.array([p.s for p in points])
        same = (edges[:, None] == edges[None, :]) & interior[:, None] & interior[None, :]
        direct = np.where(same, np.abs(s[:, None] - s[None, :]), np.inf)
        np.minimum(table, direct, out=table)
        np.fill_diagonal(table, 0.0)
        return np.minimum(table, table.T)

    def diameter(self, samples_per_edge: int = 4) -> float:
        points = [self.vertex_point(v) for v in self.vertices if self.incidence[v]]
        for edge in self.edges:
            for k in range(1, samples_per_edge):
                points.append(GraphPoint(edge=edge.id, s=edge.length * k / samples_per_edge))
        if not points:
            return 0.0
        return float(self.distance_matrix(points).max())


def validate_graph(g: MetricGraph) -> List[Violation]:
    """All invariant violations of `g`; empty means every downstream module can use it."""
    violations: List[Violation] = []
    if not g.edges:
        violations.append(Violation(kind="empty graph", location="graph", message="graph has no edges"))
    seen = set()
    for edge in g.edges:
        if edge.id in seen:
            violations.append(Violation(kind="duplicate edge", location=edge.id, message=f"edge id {edge.id} declared twice"))
        seen.add(edge.id)
        if not (math.isfinite(edge.length) and edge.length > 0):
            violations.append(Violation(kind="non-positive length", location=edge.id, message=f"length {edge.length} must be positive"))
        for v in (edge.endpoint0, edge.endpoint1):
            if v not in g.incidence:
                violations.append(Violation(kind="unknown endpoint", location=edge.id, message=f"unknown endpoint {v}"))
    for v in g.vertices:
        degree = g.degree(v)
        if degree == 0:
            violations.append(Violation(kind="isolated vertex", location=v, message=f"vertex {v} meets no edge"))
        elif degree == 1:
            logger.warning(f"vertex {v} has degree 1 (graph has boundary)")

    multigraph = nx.MultiGraph()
    multigraph.add_nodes_from(g.vertices)
    multigraph.add_edges_from(
        (e.endpoint0, e.endpoint1) for e in g.edges if e.endpoint0 in g.incidence and e.endpoint1 in g.incidence
    )
    if multigraph.number_of_nodes() and not nx.is_connected(multigraph):
        components = sorted(sorted(c) for c in nx.connected_components(multigraph))
        violations.append(Violation(
            kind="disconnected",
            location="graph",
            message="components " + " | ".join(",".join(c) for c in components),
        ))
    return violations
