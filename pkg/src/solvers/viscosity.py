from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.discretization import Grid, GridFunction
from src.exceptions import PreconditionError
from src.lagrangian import Cone, GraphLagrangian
from src.metric_graph import EdgeId, VertexId

logger = logging.getLogger(__name__)

DIFFERENTIABLE = "differentiable"
CONCAVE_KINK = "concave-kink"
CONVEX_KINK = "convex-kink"
VERTEX = "vertex"

KINK_SAMPLES = 9
KINK_CURVATURE = 8.0
VERTEX_CONES = ("eikonal", "half_line")


@dataclass(eq=False)
class SlopeProfile:
    left: np.ndarray
    right: np.ndarray
    # vertex -> [(edge, end, outward slope)]
    vertex_slopes: Dict[VertexId, List[Tuple[EdgeId, int, float]]]

    @property
    def lipschitz(self) -> float:
        slopes = [np.abs(self.left[np.isfinite(self.left)]), np.abs(self.right[np.isfinite(self.right)])]
        slopes.append(np.array([abs(d) for row in self.vertex_slopes.values() for _, _, d in row]))
        flat = np.concatenate(slopes)
        return float(flat.max()) if flat.size else 0.0


@dataclass(eq=False)
class ViscosityReport:
    grid: Grid
    classification: np.ndarray
    sub_residuals: np.ndarray
    super_residuals: np.ndarray
    tol: float

    @property
    def sub_residual(self) -> float:
        return float(self.sub_residuals.max()) if self.sub_residuals.size else 0.0

    @property
    def super_residual(self) -> float:
        return float(self.super_residuals.max()) if self.super_residuals.size else 0.0

    @property
    def passed(self) -> bool:
        return self.sub_residual <= self.tol and self.super_residual <= self.tol

    def counts(self) -> Dict[str, int]:
        labels, counts = np.unique(self.classification, return_counts=True)
        return {str(label): int(count) for label, count in zip(labels, counts)}


@dataclass(frozen=True)
class ComparisonResult:
    passed: bool
    max_violation: float


def default_slope_tol(dx: float) -> float:
    return 2.0 * dx * KINK_CURVATURE


class ViscosityChecker:
    """Finite-difference sub/supersolution tests for H(x, Du) = level on a Grid."""

    def __init__(self, grid: Grid, gl: GraphLagrangian):
        self.grid = grid
        self.gl = gl
        n = grid.n_states
        self._kinetic = np.full(n, np.nan)
        self._potential = np.full(n, np.nan)
        for edge_id, ids in grid.edge_states.items():
            lag = gl.for_edge(edge_id)
            tau = np.arange(ids.size) / (ids.size - 1)
            inner = ids[1:-1]
            self._kinetic[inner] = lag.kinetic
            self._potential[inner] = np.atleast_1d(lag.potential_at(tau[1:-1]))

    def one_sided_slopes(self, u: GridFunction) -> SlopeProfile:
        if not u.is_finite():
            raise PreconditionError("slopes need a finite grid function")
        left = np.full(self.grid.n_states, np.nan)
        right = np.full(self.grid.n_states, np.nan)
        vertex_slopes: Dict[VertexId, List[Tuple[EdgeId, int, float]]] = {v: [] for v in self.grid.graph.vertices}
        for edge_id in sorted(self.grid.edge_states):
            ids = self.grid.edge_states[edge_id]
            h = self.grid.spacing[edge_id]
            diffs = np.diff(u.values[ids]) / h
            left[ids[1:-1]] = diffs[:-1]
            right[ids[1:-1]] = diffs[1:]
            edge = self.grid.graph.edge(edge_id)
            vertex_slopes[edge.endpoint0].append((edge_id, 0, float(diffs[0])))
            vertex_slopes[edge.endpoint1].append((edge_id, 1, float(-diffs[-1])))
        return SlopeProfile(left=left, right=right, vertex_slopes=vertex_slopes)

    def _interior_h(self, states: np.ndarray, p: np.ndarray) -> np.ndarray:
        kinetic = self._kinetic[states]
        potential = self._potential[states]
        if p.ndim == 2:
            kinetic, potential = kinetic[:, None], potential[:, None]
        return p * p / (2.0 * kinetic) + potential

    def _vertex_h(self, vertex: VertexId, row: Sequence[Tuple[EdgeId, int, float]], cone: str) -> float:
        values = []
        for edge_id, end, d in row:
            lag = self.gl.for_edge(edge_id)
            if cone == "eikonal":
                values.append(d * d / (2.0 * lag.kinetic) + float(lag.potential_at(float(end))))
            else:
                point = self.grid.points[self.grid.vertex_states[vertex]]
                momentum = d if end == 0 else -d
                values.append(self.gl.hamiltonian_eval(point, momentum, cone=Cone.INCOMING_OR_ZERO, edge=edge_id).value)
        return max(values)

    def _classify(
        self,
        u: GridFunction,
        level: np.ndarray,
        tol: float,
        slope_tol: float,
        vertex_cone: str,
    ) -> ViscosityReport:
        if vertex_cone not in VERTEX_CONES:
            raise PreconditionError(f"unknown vertex cone {vertex_cone!r}; expected one of {VERTEX_CONES}")
        if not self.gl.check_symmetric_at_vertices().symmetric:
            raise PreconditionError("vertex conditions are only checked for Lagrangians symmetric at the vertices")
        profile = self.one_sided_slopes(u)
        n = self.grid.n_states
        labels = np.full(n, VERTEX, dtype=object)
        sub = np.zeros(n)
        sup = np.zeros(n)

        interior = np.nonzero(np.isfinite(profile.left))[0]
        left, right = profile.left[interior], profile.right[interior]
        jump = right - left
        smooth = np.abs(jump) <= slope_tol
        concave = (~smooth) & (left > right)
        convex = (~smooth) & (left < right)

        idx = interior[smooth]
        gap = self._interior_h(idx, 0.5 * (left[smooth] + right[smooth])) - level[idx]
        labels[idx] = DIFFERENTIABLE
        sub[idx] = np.maximum(gap, 0.0)
        sup[idx] = np.maximum(-gap, 0.0)

        fractions = np.linspace(0.0, 1.0, KINK_SAMPLES)
        idx = interior[concave]
        samples = right[concave][:, None] + fractions[None, :] * (left[concave] - right[concave])[:, None]
        labels[idx] = CONCAVE_KINK
        sub[idx] = np.maximum(self._interior_h(idx, samples).max(axis=1) - level[idx], 0.0)

        idx = interior[convex]
        samples = left[convex][:, None] + fractions[None, :] * (right[convex] - left[convex])[:, None]
        labels[idx] = CONVEX_KINK
        sup[idx] = np.maximum(level[idx] - self._interior_h(idx, samples).min(axis=1), 0.0)

        for vertex, row in profile.vertex_slopes.items():
            state = self.grid.vertex_states[vertex]
            value = self._vertex_h(vertex, row, vertex_cone)
            sub[state] = max(value - level[state], 0.0)
            sup[state] = max(level[state] - value, 0.0)

        report = ViscosityReport(grid=self.grid, classification=labels, sub_residuals=sub, super_residuals=sup, tol=tol)
        logger.info(
            f"Viscosity check: sub {report.sub_residual:.3g}, super {report.super_residual:.3g}, "
            f"tol {tol:g}, {report.counts()}"
        )
        return report

    def check_stationary(
        self,
        u: GridFunction,
        c: float,
        tol: float,
        slope_tol: Optional[float] = None,
        vertex_cone: str = "eikonal",
    ) -> ViscosityReport:
        slope_tol = default_slope_tol(self.grid.max_spacing()) if slope_tol is None else slope_tol
        return self._classify(u, np.full(self.grid.n_states, float(c)), tol, slope_tol, vertex_cone)

    def check_time_dependent(
        self,
        frames: Sequence[GridFunction],
        dt: float,
        tol: float,
        k: Optional[int] = None,
        slope_tol: Optional[float] = None,
        vertex_cone: str = "eikonal",
    ) -> ViscosityReport:
        """
        u_t + H(x, Du) = 0 at frame k from uncorrected evolution frames, with
        u_t the centered difference. Each state is tested against level -u_t.
        """
        if len(frames) < 3:
            raise PreconditionError(f"time-dependent check needs at least 3 frames, got {len(frames)}")
        k = len(frames) // 2 if k is None else k
        if not 1 <= k <= len(frames) - 2:
            raise PreconditionError(f"frame index {k} has no neighbours on both sides")
        u_t = (frames[k + 1].values - frames[k - 1].values) / (2.0 * dt)
        slope_tol = default_slope_tol(self.grid.max_spacing()) if slope_tol is None else slope_tol
        return self._classify(frames[k], -u_t, tol, slope_tol, vertex_cone)


def comparison_probe(
    u_sub: Sequence[GridFunction],
    v_super: Sequence[GridFunction],
    tol: float = 0.0,
) -> ComparisonResult:
    """Empirical comparison principle: ordered initial data must stay ordered."""
    if len(u_sub) != len(v_super):
        raise PreconditionError("frame sequences differ in length")

    def excess(a: GridFunction, b: GridFunction) -> float:
        both_inf = np.isinf(a.values) & np.isinf(b.values)
        diff = np.where(both_inf, 0.0, a.values - b.values)
        return float(diff.max()) if diff.size else 0.0

    if excess(u_sub[0], v_super[0]) > tol:
        raise PreconditionError("initial data are not ordered: u_sub(., 0) > v_super(., 0)")
    worst = max(0.0, max(excess(a, b) for a, b in zip(u_sub, v_super)))
    return ComparisonResult(passed=worst <= tol, max_violation=worst)
