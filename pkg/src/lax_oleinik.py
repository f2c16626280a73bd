from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from src.discretization import GridFunction, StateId, TransitionGraph, sup_gap
from src.exceptions import PreconditionError, UnreachableStateError
from src.metric_graph import GraphPoint

logger = logging.getLogger(__name__)

DOMINATION_TOL = 1e-9
DEFAULT_PATIENCE = 10


class FrameSeries(NamedTuple):
    times: np.ndarray
    frames: List[GridFunction]


@dataclass(eq=False)
class EvolutionResult:
    """
    Output of lo_evolve. `final` carries the +n*c*dt correction when a
    critical value was supplied; `raw_final` never does.
    """
    initial: GridFunction
    final: GridFunction
    raw_final: GridFunction
    deltas: List[float]
    steps: int
    dt: float
    c: Optional[float] = None
    argmins: Optional[List[np.ndarray]] = None
    frames: Optional[List[GridFunction]] = None
    converged: bool = False

    @property
    def time(self) -> float:
        return self.steps * self.dt

    def frame_series(self, every: int = 1) -> FrameSeries:
        if self.frames is None:
            raise PreconditionError("frames were not kept; rerun lo_evolve with keep_frames=True")
        picked = list(range(0, len(self.frames), max(1, every)))
        if picked[-1] != len(self.frames) - 1:
            picked.append(len(self.frames) - 1)
        return FrameSeries(times=np.array(picked) * self.dt, frames=[self.frames[k] for k in picked])


@dataclass(frozen=True)
class DiscreteCurve:
    states: Tuple[StateId, ...]
    dt: float

    @property
    def steps(self) -> int:
        return len(self.states) - 1


@dataclass(eq=False)
class LaxOleinik:
    """Discrete backward Lax-Oleinik operator on a TransitionGraph."""
    tg: TransitionGraph
    _rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._rows = np.arange(self.tg.n_states)

    def _step_values(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # Padding and sentinel entries are +inf and never produce a NaN.
        candidates = values[self.tg.in_source] + self.tg.in_weight
        best = np.argmin(candidates, axis=1)
        out = candidates[self._rows, best]
        argmin = self.tg.in_source[self._rows, best]
        argmin = np.where(np.isfinite(out), argmin, -1)
        return out, argmin

    def lo_step(self, u: GridFunction) -> Tuple[GridFunction, np.ndarray]:
        out, argmin = self._step_values(u.values)
        return GridFunction(u.grid, out), argmin

    def lo_evolve(
        self,
        u0: GridFunction,
        n: int,
        c: Optional[float] = None,
        keep_argmin: bool = False,
        keep_frames: bool = False,
        stop_tol: Optional[float] = None,
        patience: int = DEFAULT_PATIENCE,
    ) -> EvolutionResult:
        if n < 1:
            raise PreconditionError(f"lo_evolve needs n >= 1, got {n}")
        shift = 0.0 if c is None else c * self.tg.dt
        values = u0.values.copy()
        argmins: List[np.ndarray] = []
        frames: List[GridFunction] = [GridFunction(u0.grid, values.copy())] if keep_frames else []
        deltas: List[float] = []
        quiet = 0
        converged = False
        steps = 0
        for k in range(n):
            nxt, argmin = self._step_values(values)
            deltas.append(sup_gap(nxt + shift, values))
            values = nxt
            steps = k + 1
            if keep_argmin:
                argmins.append(argmin)
            if keep_frames:
                frames.append(GridFunction(u0.grid, values + steps * shift))
            if stop_tol is not None:
                quiet = quiet + 1 if deltas[-1] < stop_tol else 0
                if quiet >= patience:
                    converged = True
                    logger.info(f"Lax-Oleinik evolution converged after {steps} steps (tol {stop_tol:g})")
                    break

        raw = GridFunction(u0.grid, values)
        return EvolutionResult(
            initial=u0,
            final=raw.shifted(steps * shift) if c is not None else raw,
            raw_final=raw,
            deltas=deltas,
            steps=steps,
            dt=self.tg.dt,
            c=c,
            argmins=argmins if keep_argmin else None,
            frames=frames if keep_frames else None,
            converged=converged,
        )

    def finite_time_cost(self, source: StateId, n: int, keep_argmin: bool = False) -> EvolutionResult:
        """Discrete h_{n dt}(source, .) as the final layer of a source-initialized DP."""
        u0 = GridFunction.sentinel_at(self.tg.grid, source)
        return self.lo_evolve(u0, n, keep_argmin=keep_argmin)

    def backtrack_curve(self, result: EvolutionResult, target: StateId, n: Optional[int] = None) -> DiscreteCurve:
        if result.argmins is None:
            raise PreconditionError("argmin tables were not kept; rerun lo_evolve with keep_argmin=True")
        n = result.steps if n is None else n
        if n > len(result.argmins):
            raise PreconditionError(f"only {len(result.argmins)} argmin tables kept, {n} requested")
        if not np.isfinite(result.raw_final.values[target]):
            raise UnreachableStateError(f"state {target} is unreachable after {result.steps} steps")
        states = [target]
        current = target
        for k in range(n - 1, -1, -1):
            current = int(result.argmins[k][current])
            states.append(current)
        return DiscreteCurve(states=tuple(reversed(states)), dt=result.dt)

    def curve_weight(self, curve: DiscreteCurve) -> float:
        return float(sum(self.tg.arc_weight(x, y) for x, y in zip(curve.states[:-1], curve.states[1:])))

    def _step_midpoint(self, x: StateId, y: StateId) -> Tuple[GraphPoint, float, Optional[str]]:
        """Midpoint of the x -> y move, its signed speed along that edge, and the edge."""
        grid = self.tg.grid
        if x == y:
            return grid.points[x], 0.0, None
        route = self.tg.route(x, y)
        length = sum(seg.length for seg in route)
        speed = length / self.tg.dt
        remaining = 0.5 * length
        for seg in route:
            if remaining <= seg.length or seg is route[-1]:
                sign = 1.0 if seg.s_to > seg.s_from else -1.0
                s = seg.s_from + sign * min(remaining, seg.length)
                return GraphPoint(edge=seg.edge, s=s), sign * speed, seg.edge
            remaining -= seg.length
        raise AssertionError("unreachable")

    def energy_residual(self, curve: DiscreteCurve, c: float) -> float:
        """max |L_v v - L - c| at step midpoints; end steps are skipped on curves of 3+ steps."""
        gl = self.tg.lagrangian
        pairs = list(zip(curve.states[:-1], curve.states[1:]))
        if len(pairs) >= 3:
            pairs = pairs[1:-1]
        residual = 0.0
        for x, y in pairs:
            point, v, edge = self._step_midpoint(x, y)
            value, derivative = gl.lagrangian_eval(point, v, edge=edge)
            residual = max(residual, abs(derivative * v - value - c))
        return residual

    def is_dominated(self, u: GridFunction, c: float, tol: float = DOMINATION_TOL) -> bool:
        stepped, _ = self.lo_step(u)
        return bool(np.all(u.values <= stepped.values + c * self.tg.dt + tol))
