from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from src.exceptions import ConfigurationError, GraphError
from src.lagrangian import GraphLagrangian
from src.metric_graph import EdgeId, GraphPoint, MetricGraph, Segment, VertexId

logger = logging.getLogger(__name__)

StateId = int
SENTINEL = np.inf
REACH_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    """Discrete states: one per vertex plus the interior nodes of every edge."""
    graph: MetricGraph
    dx_target: float
    node_counts: Dict[EdgeId, int]
    spacing: Dict[EdgeId, float]
    points: Tuple[GraphPoint, ...]
    vertex_states: Dict[VertexId, StateId]
    edge_states: Dict[EdgeId, np.ndarray]
    _lookup: Dict[Tuple[EdgeId, int], StateId] = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.points)

    def is_vertex(self, state: StateId) -> bool:
        return self.graph.vertex_at(self.points[state]) is not None

    def offsets(self, edge_id: EdgeId) -> np.ndarray:
        return np.arange(self.node_counts[edge_id] + 1) * self.spacing[edge_id]

    def state_of(self, point: GraphPoint) -> StateId:
        p = self.graph.canonicalize(point)
        vertex = self.graph.vertex_at(p)
        if vertex is not None:
            return self.vertex_states[vertex]
        h = self.spacing[p.edge]
        k = int(round(p.s / h))
        if abs(k * h - p.s) > 1e-9 * max(1.0, self.graph.edge(p.edge).length):
            raise GraphError(f"{p} is not a grid node (spacing {h})")
        return self._lookup[(p.edge, k)]

    def nearest_state(self, point: GraphPoint) -> StateId:
        p = self.graph.canonicalize(point)
        if self.graph.vertex_at(p) is not None:
            return self.state_of(p)
        k = int(round(p.s / self.spacing[p.edge]))
        return int(self.edge_states[p.edge][k])

    def max_spacing(self) -> float:
        return max(self.spacing.values())


def build_grid(g: MetricGraph, dx_target: float) -> Grid:
    if not dx_target > 0:
        raise ConfigurationError(f"dx must be positive, got {dx_target}")
    g.require_valid()
    points: List[GraphPoint] = []
    vertex_states: Dict[VertexId, StateId] = {}
    for v in g.vertices:
        vertex_states[v] = len(points)
        points.append(g.vertex_point(v))

    node_counts, spacing, edge_states, lookup = {}, {}, {}, {}
    for edge_id in g.edge_ids:
        edge = g.edge(edge_id)
        n = max(2, math.ceil(edge.length / dx_target - 1e-9))
        h = edge.length / n
        ids = [vertex_states[edge.endpoint0]]
        for k in range(1, n):
            lookup[(edge_id, k)] = len(points)
            ids.append(len(points))
            points.append(GraphPoint(edge=edge_id, s=k * h))
        ids.append(vertex_states[edge.endpoint1])
        node_counts[edge_id] = n
        spacing[edge_id] = h
        edge_states[edge_id] = np.asarray(ids, dtype=int)

    grid = Grid(
        graph=g,
        dx_target=dx_target,
        node_counts=node_counts,
        spacing=spacing,
        points=tuple(points),
        vertex_states=vertex_states,
        edge_states=edge_states,
        _lookup=lookup,
    )
    logger.info(f"Built grid: {grid.n_states} states on {len(node_counts)} edges (dx <= {dx_target:g})")
    return grid


@dataclass(eq=False)
class GridFunction:
    """Real values on the states of a Grid; +inf marks unreachable states."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_states,):
            raise ValueError(f"expected {self.grid.n_states} values, got shape {self.values.shape}")

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "GridFunction":
        return cls(grid, np.full(grid.n_states, float(value)))

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable[[GraphPoint], float]) -> "GridFunction":
        return cls(grid, np.array([fn(p) for p in grid.points], dtype=float))

    @classmethod
    def sentinel_at(cls, grid: Grid, source: StateId) -> "GridFunction":
        values = np.full(grid.n_states, SENTINEL)
        values[source] = 0.0
        return cls(grid, values)

    def __getitem__(self, state: StateId) -> float:
        return float(self.values[state])

    def shifted(self, a: float) -> "GridFunction":
        return GridFunction(self.grid, self.values + a)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def sup_distance(self, other: "GridFunction") -> float:
        return sup_gap(self.values, other.values)


def sup_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Sup-norm of a - b, treating matching +inf entries as equal."""
    both_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    diff = np.where(both_inf, 0.0, np.abs(a - b))
    return float(diff.max()) if diff.size else 0.0


class TransitionArc(NamedTuple):
    source: StateId
    target: StateId
    displacement: float
    weight: float


def pad_in_arcs(n: int, source: np.ndarray, target: np.ndarray, weight: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Incoming arcs per target as (n, k) tables sorted by source; padding has
    weight +inf. Parallel arcs keep their minimum weight.
    """
    best: Dict[Tuple[int, int], float] = {}
    for s, t, w in zip(source.tolist(), target.tolist(), weight.tolist()):
        if (s, t) not in best or w < best[(s, t)]:
            best[(s, t)] = w
    incoming: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
    for (s, t), w in sorted(best.items()):
        incoming[t].append((s, w))
    width = max(1, max((len(row) for row in incoming), default=1))
    in_source = np.zeros((n, width), dtype=int)
    in_weight = np.full((n, width), np.inf)
    for t, row in enumerate(incoming):
        for k, (s, w) in enumerate(row):
            in_source[t, k] = s
            in_weight[t, k] = w
    return in_source, in_weight


def one_step_cost(grid: Grid, gl: GraphLagrangian, dt: float, x: StateId, y: StateId) -> float:
    """Midpoint-rule action of the constant-speed move x -> y lasting dt."""
    px, py = grid.points[x], grid.points[y]
    if x == y:
        return dt * gl.lagrangian_eval(px, 0.0)[0]
    route = grid.graph.shortest_route(px, py)
    return _route_cost(grid, gl, dt, route)


def _route_cost(grid: Grid, gl: GraphLagrangian, dt: float, route: List[Segment]) -> float:
    length = sum(seg.length for seg in route)
    speed = length / dt
    cost = 0.0
    for seg in route:
        if seg.length == 0.0:
            continue
        edge = grid.graph.edge(seg.edge)
        lag = gl.for_edge(seg.edge)
        v = speed if seg.s_to > seg.s_from else -speed
        cells = max(1, math.ceil(seg.length / grid.spacing[seg.edge] - 1e-9))
        h = (seg.s_to - seg.s_from) / cells
        mids = seg.s_from + h * (np.arange(cells) + 0.5)
        integrand = np.atleast_1d(lag.value(mids / edge.length, v))
        cost += (abs(h) / speed) * float(integrand.sum())
    return cost


@dataclass(eq=False)
class TransitionGraph:
    """
    One-step state digraph. Arcs are stored sorted by (target, source) and
    also as padded incoming tables for the vectorized Bellman step.
    """
    grid: Grid
    lagrangian: GraphLagrangian
    dt: float
    vmax: float
    source: np.ndarray
    target: np.ndarray
    displacement: np.ndarray
    weight: np.ndarray
    in_source: np.ndarray
    in_weight: np.ndarray

    @property
    def n_states(self) -> int:
        return self.grid.n_states

    @property
    def n_arcs(self) -> int:
        return int(self.source.size)

    def arcs(self) -> Iterator[TransitionArc]:
        for s, t, d, w in zip(self.source, self.target, self.displacement, self.weight):
            yield TransitionArc(int(s), int(t), float(d), float(w))

    def has_arc(self, x: StateId, y: StateId) -> bool:
        return bool(np.any(self.in_source[y][np.isfinite(self.in_weight[y])] == x))

    def arc_weight(self, x: StateId, y: StateId) -> float:
        row = self.in_source[y]
        hits = np.nonzero((row == x) & np.isfinite(self.in_weight[y]))[0]
        if hits.size == 0:
            raise GraphError(f"no arc {x} -> {y}")
        return float(self.in_weight[y, hits[0]])

    def corrected_in_weight(self, c: float) -> np.ndarray:
        return self.in_weight + c * self.dt

    def route(self, x: StateId, y: StateId) -> List[Segment]:
        return self.grid.graph.shortest_route(self.grid.points[x], self.grid.points[y])

    def one_step_cost(self, x: StateId, y: StateId) -> float:
        return one_step_cost(self.grid, self.lagrangian, self.dt, x, y)

    def weight_bounds(self) -> Tuple[float, float]:
        """dt * [min L, max L] over |v| <= vmax."""
        u_min, u_max = self.lagrangian.potential_range()
        kinetic_max = max(lag.kinetic for lag in self.lagrangian.per_edge.values())
        return self.dt * (-u_max), self.dt * (0.5 * kinetic_max * self.vmax ** 2 - u_min)


def build_transitions(grid: Grid, gl: GraphLagrangian, dt: float, vmax: float) -> TransitionGraph:
    if not (dt > 0 and vmax > 0):
        raise ConfigurationError(f"dt and vmax must be positive (dt={dt}, vmax={vmax})")
    reach = vmax * dt
    if reach < min(grid.spacing.values()) - REACH_TOL:
        raise ConfigurationError(
            f"vmax*dt = {reach:g} is below the finest spacing {min(grid.spacing.values()):g}: no state is reachable"
        )
    distances = grid.graph.distance_matrix(grid.points)
    rows: List[Tuple[int, int, float, float]] = []
    for y in range(grid.n_states):
        for x in np.nonzero(distances[:, y] <= reach + REACH_TOL)[0].tolist():
            if x == y:
                rows.append((x, y, 0.0, dt * gl.lagrangian_eval(grid.points[x], 0.0)[0]))
                continue
            route = grid.graph.shortest_route(grid.points[x], grid.points[y])
            length = sum(seg.length for seg in route)
            sign = 1.0 if route[0].s_to > route[0].s_from else -1.0
            rows.append((x, y, sign * length, _route_cost(grid, gl, dt, route)))

    source = np.array([r[0] for r in rows], dtype=int)
    target = np.array([r[1] for r in rows], dtype=int)
    displacement = np.array([r[2] for r in rows])
    weight = np.array([r[3] for r in rows])
    in_source, in_weight = pad_in_arcs(grid.n_states, source, target, weight)
    tg = TransitionGraph(
        grid=grid,
        lagrangian=gl,
        dt=dt,
        vmax=vmax,
        source=source,
        target=target,
        displacement=displacement,
        weight=weight,
        in_source=in_source,
        in_weight=in_weight,
    )
    logger.info(f"Built transitions: {tg.n_arcs} arcs, dt={dt:g}, vmax={vmax:g}, max in-degree {in_source.shape[1]}")
    return tg
