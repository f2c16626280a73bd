from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.discretization import Grid, GridFunction, StateId, TransitionGraph, pad_in_arcs, sup_gap
from src.exceptions import NegativeCycleError, PreconditionError, UnreachableStateError
from src.lax_oleinik import DiscreteCurve, LaxOleinik

logger = logging.getLogger(__name__)

WINDOW_TIE_TOL = 1e-9
MONOTONE_SLACK = 1e-12
SLOPE_FIT_TOL = 1e-6


class MeanCycle(NamedTuple):
    mean: float
    cycle: Tuple[int, ...]


def _relax(values: np.ndarray, in_source: np.ndarray, in_weight: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One min-plus layer for a batch of rows: values has shape (batch, n)."""
    candidates = values[:, in_source] + in_weight[None, :, :]
    best = np.argmin(candidates, axis=2)
    out = np.take_along_axis(candidates, best[:, :, None], axis=2)[:, :, 0]
    pred = in_source[np.arange(in_source.shape[0])[None, :], best]
    return out, pred


def min_mean_cycle(n: int, source: Sequence[int], target: Sequence[int], weight: Sequence[float]) -> MeanCycle:
    """
    Karp's minimum mean cycle with a virtual start (D_0 = 0 everywhere), so
    the digraph need not be strongly connected. Returns +inf for acyclic input.
    """
    source = np.asarray(source, dtype=int)
    target = np.asarray(target, dtype=int)
    weight = np.asarray(weight, dtype=float)
    if n == 0 or source.size == 0:
        return MeanCycle(math.inf, ())
    in_source, in_weight = pad_in_arcs(n, source, target, weight)

    table = np.empty((n + 1, n))
    preds = np.empty((n + 1, n), dtype=int)
    table[0] = 0.0
    preds[0] = -1
    for k in range(1, n + 1):
        out, pred = _relax(table[k - 1][None, :], in_source, in_weight)
        table[k], preds[k] = out[0], pred[0]

    final = table[n]
    reachable = np.isfinite(final)
    if not reachable.any():
        return MeanCycle(math.inf, ())
    ks = np.arange(n)
    with np.errstate(invalid="ignore"):
        ratios = (final[None, :] - table[:n]) / (n - ks)[:, None]
    ratios = np.where(np.isfinite(table[:n]), ratios, -np.inf)
    worst = ratios.max(axis=0)
    worst = np.where(reachable, worst, np.inf)
    v = int(np.argmin(worst))
    mean = float(worst[v])

    walk = [v]
    for k in range(n, 0, -1):
        walk.append(int(preds[k][walk[-1]]))
    walk.reverse()
    return MeanCycle(mean, _best_cycle_in_walk(walk, in_source, in_weight))


def _best_cycle_in_walk(walk: List[int], in_source: np.ndarray, in_weight: np.ndarray) -> Tuple[int, ...]:
    def arc(x: int, y: int) -> float:
        row = in_source[y]
        return float(in_weight[y][(row == x) & np.isfinite(in_weight[y])].min())

    best: Tuple[float, Tuple[int, ...]] = (math.inf, ())
    last_seen: Dict[int, int] = {}
    for i, node in enumerate(walk):
        if node in last_seen:
            j = last_seen[node]
            cycle = walk[j:i + 1]
            mean = sum(arc(a, b) for a, b in zip(cycle[:-1], cycle[1:])) / (i - j)
            if mean < best[0] - 1e-15:
                best = (mean, tuple(cycle[:-1]))
        last_seen[node] = i
    return best[1]


class CriticalMethod(str, Enum):
    MIN_MEAN_CYCLE = "min_mean_cycle"
    LONG_TIME_SLOPE = "long_time_slope"


class CriticalValue(BaseModel):
    c: float
    method: CriticalMethod
    diagnostics: Dict[str, Any] = {}


@dataclass(eq=False)
class BarrierMatrix:
    """values[i, y] = Phi or h from sources[i] to state y."""
    kind: str
    grid: Grid
    sources: Tuple[StateId, ...]
    values: np.ndarray
    c: float
    argmin_n: Optional[np.ndarray] = None
    boundary: Optional[np.ndarray] = None
    predecessors: Optional[np.ndarray] = None

    @property
    def window_ok(self) -> bool:
        return self.boundary is None or not bool(self.boundary.any())

    @property
    def full(self) -> bool:
        return self.sources == tuple(range(self.values.shape[1]))

    def row(self, source: StateId) -> np.ndarray:
        try:
            return self.values[self.sources.index(source)]
        except ValueError:
            raise PreconditionError(f"state {source} is not a source of this {self.kind} matrix") from None

    def column(self, target: StateId) -> np.ndarray:
        self.require_full()
        return self.values[:, target]

    def diagonal(self) -> np.ndarray:
        return np.array([self.values[i, s] for i, s in enumerate(self.sources)])

    def require_full(self) -> None:
        if not self.full:
            raise PreconditionError(f"{self.kind} matrix must have every state as a source")


@dataclass(eq=False)
class AubrySet:
    grid: Grid
    members: Tuple[StateId, ...]
    tol: float
    diagonal: np.ndarray
    sources: Tuple[StateId, ...]
    margin: float
    diagnostic: Optional[str] = None


@dataclass(eq=False)
class WeakKamSolution:
    value: GridFunction
    aubry_restricted: GridFunction
    rf_gap: float


@dataclass(eq=False)
class ConvergenceTable:
    times: np.ndarray
    gaps: np.ndarray
    final_gap: float
    eventually_nonincreasing: bool


class WeakKamSolver:
    """Critical value, barriers, Aubry set and weak KAM solutions on one TransitionGraph."""

    def __init__(self, tg: TransitionGraph):
        self.tg = tg
        self.lo = LaxOleinik(tg)

    # --------------------------------------------------------- critical value

    def critical_value(self, method: CriticalMethod = CriticalMethod.MIN_MEAN_CYCLE, n_steps: int = 512) -> CriticalValue:
        method = CriticalMethod(method)
        if method is CriticalMethod.MIN_MEAN_CYCLE:
            cycle = min_mean_cycle(self.tg.n_states, self.tg.source, self.tg.target, self.tg.weight)
            c = -cycle.mean / self.tg.dt + 0.0
            logger.info(f"Critical value (min mean cycle): c = {c:.6g}, cycle of {len(cycle.cycle)} states")
            return CriticalValue(c=c, method=method, diagnostics={"mean": cycle.mean, "cycle": list(cycle.cycle)})

        values = np.zeros(self.tg.n_states)
        minima = np.empty(n_steps)
        for k in range(n_steps):
            values, _ = self.lo._step_values(values)
            minima[k] = values.min()
        start = n_steps // 2
        steps = np.arange(start + 1, n_steps + 1, dtype=float)
        (slope, intercept), residuals, *_ = np.polyfit(steps, minima[start:], 1, full=True)
        rms = math.sqrt(float(residuals[0]) / steps.size) if residuals.size else 0.0
        converged = rms <= SLOPE_FIT_TOL * max(1.0, abs(slope) * n_steps)
        if not converged:
            logger.warning(f"Long-time slope fit residual {rms:.3g} exceeds tolerance; increase n_steps")
        c = -float(slope) / self.tg.dt + 0.0
        logger.info(f"Critical value (long-time slope): c = {c:.6g} over {n_steps} steps")
        return CriticalValue(
            c=c,
            method=method,
            diagnostics={"slope": float(slope), "intercept": float(intercept), "residual": rms, "converged": converged},
        )

    # ---------------------------------------------------------------- barriers

    def _sources(self, sources: Optional[Sequence[StateId]]) -> Tuple[StateId, ...]:
        return tuple(range(self.tg.n_states)) if sources is None else tuple(int(s) for s in sources)

    def _sentinel_rows(self, sources: Tuple[StateId, ...]) -> np.ndarray:
        rows = np.full((len(sources), self.tg.n_states), np.inf)
        rows[np.arange(len(sources)), sources] = 0.0
        return rows

    def mane_potential(
        self,
        c: float,
        sources: Optional[Sequence[StateId]] = None,
        keep_predecessors: bool = False,
    ) -> BarrierMatrix:
        """
        Phi by Bellman-Ford on weights w + c*dt. The empty walk is admitted,
        so Phi(x, x) = min(0, cheapest closed walk through x).
        """
        sources = self._sources(sources)
        weights = self.tg.corrected_in_weight(c)
        finite = weights[np.isfinite(weights)]
        eps_neg = 10.0 * np.finfo(float).eps * self.tg.n_states * max(1.0, float(np.abs(finite).max()))

        dist, pred = _relax(self._sentinel_rows(sources), self.tg.in_source, weights)
        for iteration in range(self.tg.n_states + 1):
            candidate, candidate_pred = _relax(dist, self.tg.in_source, weights)
            with np.errstate(invalid="ignore"):
                gain = np.where(np.isfinite(candidate), dist - candidate, 0.0)
            improved = gain > 0.0
            dist = np.where(improved, candidate, dist)
            pred = np.where(improved, candidate_pred, pred)
            biggest = float(gain.max()) if gain.size else 0.0
            if biggest <= eps_neg:
                break
        else:
            raise NegativeCycleError(
                f"corrected weights still improve by {biggest:.3g} after {self.tg.n_states} rounds; "
                f"c = {c:.6g} is below the critical value"
            )
        rows = np.arange(len(sources))
        cols = np.asarray(sources, dtype=int)
        at_source = dist[rows, cols]
        empty = at_source > 0.0
        dist[rows, cols] = np.minimum(at_source, 0.0)
        pred[rows[empty], cols[empty]] = -1
        logger.info(f"Mane potential from {len(sources)} sources settled after {iteration + 1} rounds")
        return BarrierMatrix(
            kind="mane",
            grid=self.tg.grid,
            sources=sources,
            values=dist,
            c=c,
            predecessors=pred if keep_predecessors else None,
        )

    def mane_curve(self, c: float, source: StateId, target: StateId) -> DiscreteCurve:
        if source == target:
            return DiscreteCurve(states=(source,), dt=self.tg.dt)
        phi = self.mane_potential(c, [source], keep_predecessors=True)
        if not np.isfinite(phi.values[0, target]):
            raise UnreachableStateError(f"state {target} is unreachable from {source}")
        pred = phi.predecessors[0]
        states = [target]
        current = target
        for _ in range(self.tg.n_states + 1):
            current = int(pred[current])
            states.append(current)
            if current == source:
                break
        else:
            raise PreconditionError(f"predecessor chain from {target} does not return to {source}")
        return DiscreteCurve(states=tuple(reversed(states)), dt=self.tg.dt)

    def peierls_barrier(
        self,
        c: float,
        window: Tuple[int, int],
        sources: Optional[Sequence[StateId]] = None,
    ) -> BarrierMatrix:
        """Windowed minimum over n in [n_min, n_max] of the corrected n-step DP value."""
        n_min, n_max = window
        if not 1 <= n_min < n_max:
            raise PreconditionError(f"window must satisfy 1 <= n_min < n_max, got {window}")
        graph = self.tg.grid.graph
        reach_time = 4.0 * graph.diameter() / self.tg.vmax
        if n_min * self.tg.dt < reach_time:
            logger.warning(f"Peierls window starts at t = {n_min * self.tg.dt:g} < 4*diam/vmax = {reach_time:g}")

        sources = self._sources(sources)
        shift = c * self.tg.dt
        rows = self._sentinel_rows(sources)
        best = np.full_like(rows, np.inf)
        best_n = np.zeros(rows.shape, dtype=int)
        at_min = at_max = None
        inner = np.full_like(rows, np.inf)
        for n in range(1, n_max + 1):
            rows, _ = _relax(rows, self.tg.in_source, self.tg.in_weight)
            if n < n_min:
                continue
            corrected = rows + n * shift
            better = corrected < best
            best = np.where(better, corrected, best)
            best_n = np.where(better, n, best_n)
            if n == n_min:
                at_min = corrected
            elif n == n_max:
                at_max = corrected
            else:
                inner = np.minimum(inner, corrected)

        with np.errstate(invalid="ignore"):
            boundary = (at_min < np.minimum(inner, at_max) - WINDOW_TIE_TOL) | (
                at_max < np.minimum(inner, at_min) - WINDOW_TIE_TOL
            )
        if boundary.any():
            logger.warning(f"Peierls minimum sits on the window boundary for {int(boundary.sum())} pairs; widen the window")
        logger.info(f"Peierls barrier from {len(sources)} sources over n in [{n_min}, {n_max}]")
        return BarrierMatrix(kind="peierls", grid=self.tg.grid, sources=sources, values=best, c=c, argmin_n=best_n, boundary=boundary)

    # ------------------------------------------------------------- Aubry set

    def aubry_set(self, peierls: BarrierMatrix, tol: float) -> AubrySet:
        diagonal = peierls.diagonal()
        accepted = diagonal <= tol
        members = tuple(s for s, ok in zip(peierls.sources, accepted) if ok)
        accepted_max = float(diagonal[accepted].max()) if accepted.any() else -math.inf
        rejected_min = float(diagonal[~accepted].min()) if (~accepted).any() else math.inf
        margin = rejected_min - accepted_max
        if float(diagonal.min()) < -tol:
            logger.warning(f"h(x,x) = {diagonal.min():.3g} is below -tol; the critical value may be underestimated")
        diagnostic = None
        if not members:
            diagnostic = (
                f"empty Aubry set at tol {tol:g} (smallest h(x,x) = {diagonal.min():.3g}); refine the grid or raise tol"
            )
            logger.warning(diagnostic)
        else:
            logger.info(f"Aubry set: {len(members)} of {len(diagonal)} states at tol {tol:g} (margin {margin:.3g})")
        return AubrySet(grid=self.tg.grid, members=members, tol=tol, diagonal=diagonal, sources=peierls.sources, margin=margin, diagnostic=diagnostic)

    # ---------------------------------------------------- weak KAM solutions

    def weak_kam_solution(self, u0: GridFunction, peierls: BarrierMatrix, aubry: AubrySet) -> WeakKamSolution:
        """v(x) = min_z u0(z) + h(z, x), cross-checked against the Aubry-restricted formula."""
        peierls.require_full()
        value = np.min(u0.values[:, None] + peierls.values, axis=0)
        members = list(aubry.members)
        if members:
            restricted = np.min(value[members][:, None] + peierls.values[members], axis=0)
        else:
            restricted = np.full_like(value, np.inf)
        rf_gap = sup_gap(value, restricted)
        logger.info(f"Weak KAM solution built; representation-formula gap {rf_gap:.3g}")
        return WeakKamSolution(
            value=GridFunction(u0.grid, value),
            aubry_restricted=GridFunction(u0.grid, restricted),
            rf_gap=rf_gap,
        )

    def convergence_run(self, u0: GridFunction, c: float, v_target: GridFunction, n_max: int) -> ConvergenceTable:
        shift = c * self.tg.dt
        values = u0.values.copy()
        gaps = np.empty(n_max + 1)
        gaps[0] = sup_gap(values, v_target.values)
        for k in range(1, n_max + 1):
            values, _ = self.lo._step_values(values)
            gaps[k] = sup_gap(values + k * shift, v_target.values)
        tail = gaps[n_max // 2:]
        nonincreasing = bool(np.all(np.diff(tail) <= MONOTONE_SLACK))
        return ConvergenceTable(
            times=np.arange(n_max + 1) * self.tg.dt,
            gaps=gaps,
            final_gap=float(gaps[-1]),
            eventually_nonincreasing=nonincreasing,
        )

    def forward_solution(self, peierls: BarrierMatrix, x0: StateId) -> GridFunction:
        return GridFunction(self.tg.grid, -peierls.column(x0))

    def factorization_gap(
        self,
        peierls: BarrierMatrix,
        mane: BarrierMatrix,
        aubry: AubrySet,
        pairs: Optional[np.ndarray] = None,
    ) -> float:
        """max |h(x,y) - min_{q in A} Phi(x,q) + Phi(q,y)| over `pairs` (all pairs by default)."""
        peierls.require_full()
        mane.require_full()
        if not aubry.members:
            raise PreconditionError("factorization needs a non-empty Aubry set")
        members = list(aubry.members)
        through = np.min(mane.values[:, members].T[:, :, None] + mane.values[members][:, None, :], axis=0)
        if pairs is None:
            return sup_gap(peierls.values, through)
        xs, ys = np.asarray(pairs, dtype=int).T
        return sup_gap(peierls.values[xs, ys], through[xs, ys])
