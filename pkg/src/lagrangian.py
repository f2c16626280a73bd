from __future__ import annotations

import logging
from enum import Enum
from typing import Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize_scalar

from src.exceptions import GraphError
from src.metric_graph import EdgeId, GraphPoint, MetricGraph, VertexId

logger = logging.getLogger(__name__)

COMPATIBILITY_TOL = 1e-9


class Cone(str, Enum):
    FULL_LINE = "full_line"
    INCOMING_OR_ZERO = "incoming_or_zero"


class EdgeLagrangian(BaseModel):
    """
    Mechanical Lagrangian L(tau, v) = kinetic*v^2/2 - U(tau) on one edge,
    with U a polynomial in the normalized coordinate tau = s/length.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    kind: Literal["mechanical"] = "mechanical"
    kinetic: float = Field(default=1.0, gt=0)
    potential: Tuple[float, ...] = (0.0,)

    def potential_at(self, tau):
        return P.polyval(tau, np.asarray(self.potential, dtype=float))

    def value(self, tau, v):
        return 0.5 * self.kinetic * np.square(v) - self.potential_at(tau)

    def velocity_derivative(self, v):
        return self.kinetic * np.asarray(v, dtype=float)

    def hamiltonian(self, tau, momentum: float) -> float:
        return momentum * momentum / (2.0 * self.kinetic) + float(self.potential_at(tau))


class HamiltonianValue(BaseModel):
    value: float
    maximizer: float


class SymmetryReport(BaseModel):
    symmetric: bool
    per_vertex: Dict[VertexId, bool]


class GraphLagrangian:
    """Per-edge Lagrangians on a metric graph. Immutable and reentrant."""

    def __init__(self, graph: MetricGraph, per_edge: Mapping[EdgeId, EdgeLagrangian]):
        missing = [e for e in graph.edge_ids if e not in per_edge]
        if missing:
            raise GraphError(f"edges without a Lagrangian: {', '.join(missing)}")
        self.graph = graph
        self.per_edge: Dict[EdgeId, EdgeLagrangian] = dict(per_edge)

    def for_edge(self, edge_id: EdgeId) -> EdgeLagrangian:
        return self.per_edge[edge_id]

    @property
    def kinetic_min(self) -> float:
        return min(lag.kinetic for lag in self.per_edge.values())

    def potential_range(self, samples: int = 1001) -> Tuple[float, float]:
        tau = np.linspace(0.0, 1.0, samples)
        values = np.concatenate([np.atleast_1d(lag.potential_at(tau)) for lag in self.per_edge.values()])
        return float(values.min()), float(values.max())

    def _locate(self, p: GraphPoint, edge: Optional[EdgeId]) -> Tuple[EdgeId, float, Optional[int]]:
        """Edge, normalized coordinate, and vertex end (None for interior points)."""
        p = self.graph.canonicalize(p)
        vertex = self.graph.vertex_at(p)
        if edge is None or edge == p.edge:
            e = self.graph.edge(p.edge)
            end = None if vertex is None else (0 if p.s == 0.0 else 1)
            return p.edge, p.s / e.length, end
        if vertex is None:
            raise GraphError(f"point {p} does not lie on edge {edge}")
        ends = [end for eid, end in self.graph.incidence[vertex] if eid == edge]
        if not ends:
            raise GraphError(f"vertex {vertex} is not an endpoint of edge {edge}")
        return edge, float(ends[0]), ends[0]

    def lagrangian_eval(self, p: GraphPoint, v: float, edge: Optional[EdgeId] = None) -> Tuple[float, float]:
        """(L, L_v) at (p, v). At a vertex a moving velocity needs an edge."""
        if edge is None and v != 0.0 and self.graph.vertex_at(self.graph.canonicalize(p)) is not None:
            raise GraphError(f"velocity {v} at vertex point {p} needs an incident edge")
        edge_id, tau, _ = self._locate(p, edge)
        lag = self.per_edge[edge_id]
        return float(lag.value(tau, v)), float(lag.velocity_derivative(v))

    def _cone_bounds(self, end: Optional[int], cone: Cone) -> Tuple[float, float]:
        if cone is Cone.FULL_LINE or end is None:
            return -np.inf, np.inf
        # Incoming-or-zero vectors point into the edge: z >= 0 at offset 0, z <= 0 at the far end.
        return (0.0, np.inf) if end == 0 else (-np.inf, 0.0)

    def hamiltonian_eval(
        self,
        p: GraphPoint,
        momentum: float,
        cone: Cone = Cone.FULL_LINE,
        edge: Optional[EdgeId] = None,
    ) -> HamiltonianValue:
        """
        max over z in the cone of -momentum*z - L(p, z). `momentum` is the
        derivative along the edge's own orientation. For interior points the
        cone is always the full line.
        """
        edge_id, tau, end = self._locate(p, edge)
        lag = self.per_edge[edge_id]
        lo, hi = self._cone_bounds(end, Cone(cone))
        z = float(np.clip(-momentum / lag.kinetic, lo, hi))
        value = -momentum * z - float(lag.value(tau, z))
        return HamiltonianValue(value=value, maximizer=z)

    def numerical_hamiltonian(
        self,
        p: GraphPoint,
        momentum: float,
        cone: Cone = Cone.FULL_LINE,
        edge: Optional[EdgeId] = None,
    ) -> HamiltonianValue:
        """Bounded golden-section/Brent maximization on |z| <= (|p|+1)*10/kappa."""
        edge_id, tau, end = self._locate(p, edge)
        lag = self.per_edge[edge_id]
        z_max = (abs(momentum) + 1.0) * 10.0 / lag.kinetic
        lo, hi = self._cone_bounds(end, Cone(cone))
        lo, hi = max(lo, -z_max), min(hi, z_max)
        result = minimize_scalar(
            lambda z: momentum * z + float(lag.value(tau, z)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        z = float(result.x)
        return HamiltonianValue(value=-momentum * z - float(lag.value(tau, z)), maximizer=z)

    def check_vertex_compatibility(self) -> List[str]:
        mismatches = []
        for vertex, incident in self.graph.incidence.items():
            values = [
                (edge_id, -float(self.per_edge[edge_id].potential_at(float(end))))
                for edge_id, end in incident
                if edge_id in self.per_edge
            ]
            for edge_id, value in values[1:]:
                if abs(value - values[0][1]) > COMPATIBILITY_TOL:
                    mismatches.append(f"L mismatch at vertex {vertex}: {values[0][1]:g} vs {value:g}")
        return mismatches

    def require_compatible(self) -> None:
        mismatches = self.check_vertex_compatibility()
        if mismatches:
            raise GraphError("; ".join(mismatches))

    def check_symmetric_at_vertices(self, speeds: Optional[np.ndarray] = None) -> SymmetryReport:
        """L restricted to every incident edge must be one even function of z per vertex."""
        if speeds is None:
            speeds = np.linspace(0.25, 3.0, 12)
        per_vertex: Dict[VertexId, bool] = {}
        for vertex, incident in self.graph.incidence.items():
            profiles = []
            ok = True
            for edge_id, end in incident:
                lag = self.per_edge[edge_id]
                forward = np.asarray(lag.value(float(end), speeds), dtype=float)
                backward = np.asarray(lag.value(float(end), -speeds), dtype=float)
                ok &= bool(np.allclose(forward, backward, atol=COMPATIBILITY_TOL, rtol=0))
                profiles.append(forward)
            ok &= all(np.allclose(profiles[0], prof, atol=COMPATIBILITY_TOL, rtol=0) for prof in profiles[1:])
            per_vertex[vertex] = ok
            if not ok:
                logger.warning(f"Lagrangian is not symmetric at vertex {vertex}")
        return SymmetryReport(symmetric=all(per_vertex.values()), per_vertex=per_vertex)
