from __future__ import annotations

import logging
import math
import os
from typing import Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.exceptions import ConfigurationError
from src.lagrangian import GraphLagrangian
from src.metric_graph import MetricGraph
from src.solvers.viscosity import default_slope_tol

logger = logging.getLogger(__name__)

load_dotenv()

DEFAULT_DX = 1.0 / 64.0
DEFAULT_REACH = 16
DEFAULT_TMAX = 64.0
DEFAULT_TOL = 1e-2
DEFAULT_VISCOSITY_TOL = 0.1
AUBRY_TOL_FLOOR = 1e-3


def output_dir() -> str:
    return os.environ.get("WEAKKAM_OUTPUT_DIR", "output")


def log_level() -> str:
    return os.environ.get("WEAKKAM_LOG_LEVEL", "INFO").upper()


class RunConfig(BaseModel):
    """Every CLI flag. `None` means: derive from the graph in `resolved`."""
    model_config = ConfigDict(frozen=True)

    dx: float = Field(default=DEFAULT_DX, gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    vmax: Optional[float] = Field(default=None, gt=0)
    reach: int = Field(default=DEFAULT_REACH, ge=1)
    tmax: float = Field(default=DEFAULT_TMAX, gt=0)
    tol: float = Field(default=DEFAULT_TOL, gt=0)
    viscosity_tol: float = Field(default=DEFAULT_VISCOSITY_TOL, gt=0)
    tol_aubry: Optional[float] = Field(default=None, ge=0)
    source: Optional[str] = None
    window: Optional[Tuple[int, int]] = None
    seed: int = 0  # seeds random:lo,hi initial data
    vertex_cone: Literal["eikonal", "half_line"] = "eikonal"
    slope_tol: Optional[float] = Field(default=None, gt=0)
    out: str = Field(default_factory=output_dir)

    @model_validator(mode="after")
    def _check_coupling(self) -> "RunConfig":
        if self.dt is not None and self.vmax is not None and self.dt * self.vmax < self.dx * (1 - 1e-12):
            raise ValueError(f"dt*vmax = {self.dt * self.vmax:g} must be at least dx = {self.dx:g}")
        if self.window is not None and not 1 <= self.window[0] < self.window[1]:
            raise ValueError(f"window must satisfy 1 <= n_min < n_max, got {self.window}")
        return self

    def resolved(self, graph: MetricGraph, gl: GraphLagrangian) -> "ResolvedRun":
        diameter = graph.diameter()
        u_min, u_max = gl.potential_range()
        if self.vmax is not None:
            vmax = self.vmax
        else:
            # Fast enough to cross the graph twice in a quarter of tmax and to climb any potential well.
            vmax = max(1.0, 2.0 * diameter / (self.tmax / 4.0), 2.0 * math.sqrt(2.0 * (u_max - u_min) / gl.kinetic_min))
        dt = self.dt if self.dt is not None else self.reach * self.dx / vmax
        if dt * vmax < self.dx * (1 - 1e-12):
            raise ConfigurationError(f"dt*vmax = {dt * vmax:g} is below dx = {self.dx:g}")
        t_min = max(4.0 * diameter / vmax, self.tmax / 4.0)
        if self.window is not None:
            window = self.window
        else:
            n_min = math.ceil(t_min / dt - 1e-9)
            window = (n_min, 2 * n_min)
        run = ResolvedRun(
            dx=self.dx,
            dt=dt,
            vmax=vmax,
            n_steps=max(1, math.ceil(self.tmax / dt - 1e-9)),
            window=window,
            slope_tol=self.slope_tol if self.slope_tol is not None else default_slope_tol(self.dx),
            diameter=diameter,
        )
        logger.info(
            f"Resolved run: dx={run.dx:g} dt={run.dt:g} vmax={run.vmax:g} steps={run.n_steps} window={run.window}"
        )
        return run

    def aubry_tolerance(self, disagreement: float) -> float:
        return self.tol_aubry if self.tol_aubry is not None else 2.0 * abs(disagreement) + AUBRY_TOL_FLOOR


class ResolvedRun(BaseModel):
    model_config = ConfigDict(frozen=True)

    dx: float
    dt: float
    vmax: float
    n_steps: int
    window: Tuple[int, int]
    slope_tol: float
    diameter: float
