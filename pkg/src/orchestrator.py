from typing import Any, Dict, Optional
import argparse
import logging
from functools import cached_property

import numpy as np

from src.config import ResolvedRun, RunConfig
from src.discretization import Grid, GridFunction, TransitionGraph, build_grid, build_transitions
from src.exceptions import ConfigurationError, NumericalDiagnostic, WindowTooSmallError
from src.lagrangian import GraphLagrangian
from src.metric_graph import MetricGraph, validate_graph

logger = logging.getLogger(__name__)


class Orchestrator:
    """
    Builds the discretization for one (graph, Lagrangian, RunConfig) triple
    and routes CLI subcommands to the solvers. Heavy intermediates (critical
    value, full barrier matrices) are computed once and shared.
    """

    def __init__(self, graph: MetricGraph, gl: GraphLagrangian, config: RunConfig):
        self.graph = graph
        self.gl = gl
        self.config = config

    def route_command(self, command: str, args: Optional[argparse.Namespace] = None) -> Dict[str, Any]:
        logger.info(f"Routing command: {command}")
        handlers = {
            "validate": self._run_validate,
            "critical": self._run_critical,
            "barrier": self._run_barrier,
            "potential": self._run_potential,
            "aubry": self._run_aubry,
            "evolve": self._run_evolve,
            "solve": self._run_solve,
            "check": self._run_check,
        }
        if command not in handlers:
            raise ConfigurationError(f"unknown command {command!r}")
        return handlers[command](args)

    # --------------------------------------------------------------- building

    @cached_property
    def run(self) -> ResolvedRun:
        self.graph.require_valid()
        return self.config.resolved(self.graph, self.gl)

    @cached_property
    def grid(self) -> Grid:
        return build_grid(self.graph, self.run.dx)

    @cached_property
    def transitions(self) -> TransitionGraph:
        return build_transitions(self.grid, self.gl, self.run.dt, self.run.vmax)

    @cached_property
    def solver(self):
        from src.solvers.weak_kam import WeakKamSolver
        return WeakKamSolver(self.transitions)

    @cached_property
    def critical_pair(self):
        from src.solvers.weak_kam import CriticalMethod
        exact = self.solver.critical_value(CriticalMethod.MIN_MEAN_CYCLE)
        slope = self.solver.critical_value(CriticalMethod.LONG_TIME_SLOPE, n_steps=self.run.n_steps)
        return exact, slope

    @property
    def c(self) -> float:
        return self.critical_pair[0].c

    @cached_property
    def peierls(self):
        return self.solver.peierls_barrier(self.c, self.run.window)

    @cached_property
    def mane(self):
        return self.solver.mane_potential(self.c)

    @cached_property
    def aubry(self):
        exact, slope = self.critical_pair
        tol = self.config.aubry_tolerance(exact.c - slope.c)
        return self.solver.aubry_set(self.peierls, tol)

    def _source_state(self) -> int:
        from src.cli_io import parse_point
        if not self.config.source:
            raise ConfigurationError("this command needs --source edge:s")
        point = parse_point(self.config.source)
        state = self.grid.nearest_state(point)
        node = self.grid.points[state]
        if self.graph.distance(point, node) > 1e-9:
            logger.warning(f"source {self.config.source} is not a grid node; using {node.edge}:{node.s:g}")
        return state

    def _initial(self, args: Optional[argparse.Namespace]) -> GridFunction:
        from src.cli_io import parse_init
        text = getattr(args, "init", None) or "const:0"
        return parse_init(text, self.grid, seed=self.config.seed)

    # --------------------------------------------------------------- commands

    def _run_validate(self, args) -> Dict[str, Any]:
        violations = validate_graph(self.graph)
        for v in violations:
            logger.error(f"{v.kind} at {v.location}: {v.message}")
        symmetric = self.gl.check_symmetric_at_vertices().symmetric
        summary = [f"violations: {len(violations)}", f"symmetric at vertices: {symmetric}"]
        return {"summary": summary, "exit_code": 1 if violations else 0}

    def _run_critical(self, args) -> Dict[str, Any]:
        exact, slope = self.critical_pair
        disagreement = abs(exact.c - slope.c)
        summary = [
            f"c (min mean cycle): {exact.c:.12g}",
            f"c (long-time slope): {slope.c:.12g}",
            f"disagreement: {disagreement:.3g}",
        ]
        exit_code = 0 if slope.diagnostics.get("converged", True) else NumericalDiagnostic.exit_code
        return {"summary": summary, "exit_code": exit_code}

    def _run_barrier(self, args) -> Dict[str, Any]:
        source = self._source_state()
        barrier = self.solver.peierls_barrier(self.c, self.run.window, sources=[source])
        result = {
            "artifacts": {"barrier.csv": ("grid_function", GridFunction(self.grid, barrier.values[0]))},
            "summary": [f"c: {self.c:.12g}", f"h(source, source): {barrier.values[0, source]:.6g}"],
            "exit_code": 0,
        }
        if not barrier.window_ok:
            logger.warning(f"window {self.run.window} too small for source {source}")
            result["exit_code"] = WindowTooSmallError.exit_code
        return result

    def _run_potential(self, args) -> Dict[str, Any]:
        source = self._source_state()
        phi = self.solver.mane_potential(self.c, sources=[source])
        return {
            "artifacts": {"potential.csv": ("grid_function", GridFunction(self.grid, phi.values[0]))},
            "summary": [f"c: {self.c:.12g}", f"max Phi from source: {np.max(phi.values[0]):.6g}"],
            "exit_code": 0,
        }

    def _run_aubry(self, args) -> Dict[str, Any]:
        aubry = self.aubry
        summary = [f"c: {self.c:.12g}", f"tol_aubry: {aubry.tol:.3g}", f"members: {len(aubry.members)}"]
        exit_code = 0
        if aubry.diagnostic or not self.peierls.window_ok:
            exit_code = NumericalDiagnostic.exit_code
        return {"artifacts": {"aubry.csv": ("aubry", aubry)}, "summary": summary, "exit_code": exit_code}

    def _run_evolve(self, args) -> Dict[str, Any]:
        from src.lax_oleinik import LaxOleinik
        from src.solvers.weak_kam import ConvergenceTable

        u0 = self._initial(args)
        result = LaxOleinik(self.transitions).lo_evolve(u0, self.run.n_steps, c=self.c, keep_frames=True)
        every = getattr(args, "frame_every", None) or max(1, self.run.n_steps // 16)
        deltas = np.array(result.deltas)
        table = ConvergenceTable(
            times=np.arange(1, deltas.size + 1) * self.run.dt,
            gaps=deltas,
            final_gap=float(deltas[-1]),
            eventually_nonincreasing=bool(np.all(np.diff(deltas[deltas.size // 2:]) <= 1e-12)),
        )
        return {
            "artifacts": {
                "frames.csv": ("frames", result.frame_series(every)),
                "final.csv": ("grid_function", result.final),
                "deltas.csv": ("gap_table", table),
            },
            "summary": [f"c: {self.c:.12g}", f"steps: {result.steps}", f"last step delta: {table.final_gap:.3g}"],
            "exit_code": 0,
        }

    def _run_solve(self, args) -> Dict[str, Any]:
        u0 = self._initial(args)
        solution = self.solver.weak_kam_solution(u0, self.peierls, self.aubry)
        convergence = self.solver.convergence_run(u0, self.c, solution.value, self.run.n_steps)
        summary = [
            f"c: {self.c:.12g}",
            f"aubry members: {len(self.aubry.members)}",
            f"representation-formula gap: {solution.rf_gap:.3g}",
            f"final convergence gap: {convergence.final_gap:.3g}",
            f"eventually nonincreasing: {convergence.eventually_nonincreasing}",
        ]
        exit_code = 0 if self.peierls.window_ok else WindowTooSmallError.exit_code
        return {
            "artifacts": {
                "solution.csv": ("grid_function", solution.value),
                "solution_rf.csv": ("grid_function", solution.aubry_restricted),
                "convergence.csv": ("gap_table", convergence),
            },
            "summary": summary,
            "exit_code": exit_code,
        }

    def _run_check(self, args) -> Dict[str, Any]:
        from src.cli_io import read_grid_function
        from src.solvers.viscosity import ViscosityChecker

        u = read_grid_function(args.solution, self.grid)
        level = args.c if getattr(args, "c", None) is not None else self.c
        report = ViscosityChecker(self.grid, self.gl).check_stationary(
            u,
            level,
            tol=self.config.viscosity_tol,
            slope_tol=self.run.slope_tol,
            vertex_cone=self.config.vertex_cone,
        )
        summary = [
            f"level: {level:.12g}",
            f"sub residual: {report.sub_residual:.3g}",
            f"super residual: {report.super_residual:.3g}",
            f"pass: {report.passed}",
        ]
        if not report.passed:
            logger.error(f"viscosity check failed at tol {report.tol:g}")
        return {
            "artifacts": {"viscosity.csv": ("viscosity", report)},
            "summary": summary,
            "exit_code": 0 if report.passed else 1,
        }
