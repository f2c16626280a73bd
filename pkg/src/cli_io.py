from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.discretization import Grid, GridFunction
from src.exceptions import ConfigurationError, SpecParseError, WeakKamError
from src.lagrangian import EdgeLagrangian, GraphLagrangian
from src.metric_graph import Edge, GraphPoint, MetricGraph

logger = logging.getLogger(__name__)

COMMANDS = ("validate", "critical", "barrier", "potential", "aubry", "evolve", "solve", "check")
CSV_KINDS = ("grid_function", "matrix", "gap_table", "aubry", "viscosity", "frames")
S_FORMAT = "{:.9g}"
VALUE_FORMAT = "%.12g"


# ---------------------------------------------------------------- spec format

def _parse_float(raw: str, lineno: int, what: str, errors: List[str]) -> Optional[float]:
    try:
        return float(raw)
    except ValueError:
        errors.append(f"line {lineno}: {what} {raw!r} is not a number")
        return None


def _parse_edge(tokens: List[str], lineno: int, errors: List[str]) -> Optional[Tuple[Edge, EdgeLagrangian]]:
    if len(tokens) < 4:
        errors.append(f"line {lineno}: expected 'edge <name> <v0> <v1> length=...'")
        return None
    _, name, v0, v1, *options = tokens
    fields: Dict[str, str] = {}
    for option in options:
        key, sep, value = option.partition("=")
        if not sep or key not in ("length", "kinetic", "potential"):
            errors.append(f"line {lineno}: unknown option {option!r}")
            continue
        fields[key] = value
    if "length" not in fields:
        errors.append(f"line {lineno}: edge {name} has no length")
        return None
    length = _parse_float(fields["length"], lineno, "length", errors)
    kinetic = _parse_float(fields.get("kinetic", "1.0"), lineno, "kinetic", errors)
    potential = fields.get("potential", "poly:0")
    if not potential.startswith("poly:"):
        errors.append(f"line {lineno}: potential must be 'poly:<c0>,<c1>,...', got {potential!r}")
        return None
    coefficients = [_parse_float(c, lineno, "coefficient", errors) for c in potential[len("poly:"):].split(",")]
    if length is None or kinetic is None or any(c is None for c in coefficients):
        return None
    try:
        lagrangian = EdgeLagrangian(kinetic=kinetic, potential=tuple(coefficients))
    except ValidationError as e:
        errors.append(f"line {lineno}: invalid Lagrangian for edge {name}: {e.errors()[0]['msg']}")
        return None
    return Edge(id=name, endpoint0=v0, endpoint1=v1, length=length), lagrangian


def parse_spec(text: str) -> Tuple[MetricGraph, GraphLagrangian]:
    """
    Parse the line-oriented graph format:

        vertex a
        edge e1 a b length=1.0 kinetic=1.0 potential=poly:0,4,-4

    Raises SpecParseError with every line-numbered problem found.
    """
    errors: List[str] = []
    vertices: List[str] = []
    edges: List[Edge] = []
    per_edge: Dict[str, EdgeLagrangian] = {}
    edge_lines: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if tokens[0] == "vertex":
            if len(tokens) != 2:
                errors.append(f"line {lineno}: expected 'vertex <name>'")
            elif tokens[1] in vertices:
                errors.append(f"line {lineno}: vertex {tokens[1]} declared twice")
            else:
                vertices.append(tokens[1])
        elif tokens[0] == "edge":
            parsed = _parse_edge(tokens, lineno, errors)
            if parsed is None:
                continue
            edge, lagrangian = parsed
            if edge.id in per_edge:
                errors.append(f"line {lineno}: edge {edge.id} declared twice")
                continue
            edges.append(edge)
            per_edge[edge.id] = lagrangian
            edge_lines[edge.id] = lineno
        else:
            errors.append(f"line {lineno}: unknown directive {tokens[0]!r}")

    for edge in edges:
        for v in (edge.endpoint0, edge.endpoint1):
            if v not in vertices:
                errors.append(f"line {edge_lines[edge.id]}: unknown vertex {v}")
    if errors:
        raise SpecParseError(errors)

    graph = MetricGraph(vertices, edges)
    gl = GraphLagrangian(graph, per_edge)
    mismatches = gl.check_vertex_compatibility()
    if mismatches:
        raise SpecParseError(mismatches)
    logger.info(f"Parsed spec: {len(graph.vertices)} vertices, {len(graph.edges)} edges")
    return graph, gl


def emit_spec(graph: MetricGraph, gl: GraphLagrangian) -> str:
    lines = [f"vertex {v}" for v in graph.vertices]
    for edge_id in graph.edge_ids:
        edge, lag = graph.edge(edge_id), gl.for_edge(edge_id)
        potential = ",".join(repr(float(c)) for c in lag.potential)
        lines.append(
            f"edge {edge.id} {edge.endpoint0} {edge.endpoint1} "
            f"length={edge.length!r} kinetic={lag.kinetic!r} potential=poly:{potential}"
        )
    return "\n".join(lines) + "\n"


def read_spec(path: str) -> Tuple[MetricGraph, GraphLagrangian]:
    with open(path, encoding="utf-8") as handle:
        return parse_spec(handle.read())


# ------------------------------------------------------------ points and data

def parse_point(text: str) -> GraphPoint:
    edge, sep, s = text.rpartition(":")
    if not sep or not edge:
        raise ConfigurationError(f"point must look like 'edge:s', got {text!r}")
    try:
        return GraphPoint(edge=edge, s=float(s))
    except ValueError:
        raise ConfigurationError(f"offset {s!r} in {text!r} is not a number") from None


def parse_init(text: str, grid: Grid, seed: int = 0) -> GridFunction:
    """
    const:x, linear:a,b (a + b*s), cos:a,b (cos(a + b*s)), random:lo,hi
    (uniform draws seeded by `seed`), or a grid_function CSV path.
    """
    kind, sep, params = text.partition(":")
    if sep and kind in ("const", "linear", "cos", "random"):
        try:
            numbers = [float(p) for p in params.split(",")]
        except ValueError:
            raise ConfigurationError(f"bad initial data {text!r}") from None
        expected = 1 if kind == "const" else 2
        if len(numbers) != expected:
            raise ConfigurationError(f"{kind} initial data takes {expected} parameter(s), got {text!r}")
        if kind == "const":
            return GridFunction.constant(grid, numbers[0])
        a, b = numbers
        if kind == "random":
            if not a < b:
                raise ConfigurationError(f"random initial data needs lo < hi, got {text!r}")
            return GridFunction(grid, np.random.default_rng(seed).uniform(a, b, grid.n_states))
        if kind == "linear":
            return GridFunction.from_callable(grid, lambda p: a + b * p.s)
        return GridFunction.from_callable(grid, lambda p: math.cos(a + b * p.s))
    if not os.path.exists(text):
        raise ConfigurationError(f"initial data {text!r} is neither an expression nor a CSV file")
    return read_grid_function(text, grid)


def _grid_rows(grid: Grid) -> pd.DataFrame:
    frame = pd.DataFrame({
        "state": np.arange(grid.n_states),
        "edge_id": [p.edge for p in grid.points],
        "s_value": [p.s for p in grid.points],
    })
    frame["s"] = frame["s_value"].map(S_FORMAT.format)
    return frame


def _sorted_rows(grid: Grid) -> pd.DataFrame:
    return _grid_rows(grid).sort_values(["edge_id", "s_value"], kind="mergesort").reset_index(drop=True)


def _table(kind: str, data: Any) -> pd.DataFrame:
    if kind == "grid_function":
        rows = _sorted_rows(data.grid)
        rows["value"] = data.values[rows["state"].to_numpy()]
        return rows[["edge_id", "s", "value"]]
    if kind == "matrix":
        grid = data.grid
        rows = _sorted_rows(grid)
        blocks = []
        for i, source in enumerate(data.sources):
            p = grid.points[source]
            blocks.append(pd.DataFrame({
                "src_edge": p.edge,
                "src_s": S_FORMAT.format(p.s),
                "dst_edge": rows["edge_id"],
                "dst_s": rows["s"],
                "value": data.values[i][rows["state"].to_numpy()],
            }))
        return pd.concat(blocks, ignore_index=True)
    if kind == "gap_table":
        return pd.DataFrame({"t": data.times, "gap": data.gaps})
    if kind == "aubry":
        grid = data.grid
        rows = _grid_rows(grid).set_index("state").loc[list(data.sources)].reset_index()
        rows["h_diag"] = data.diagonal
        rows["member"] = rows["state"].isin(data.members).astype(int)
        rows = rows.sort_values(["edge_id", "s_value"], kind="mergesort")
        return rows[["edge_id", "s", "h_diag", "member"]]
    if kind == "viscosity":
        rows = _sorted_rows(data.grid)
        order = rows["state"].to_numpy()
        rows["class"] = data.classification[order]
        rows["sub"] = data.sub_residuals[order]
        rows["super"] = data.super_residuals[order]
        return rows[["edge_id", "s", "class", "sub", "super"]]
    if kind == "frames":
        blocks = []
        for t, frame in zip(data.times, data.frames):
            block = _table("grid_function", frame)
            block.insert(0, "t", t)
            blocks.append(block)
        return pd.concat(blocks, ignore_index=True)
    raise ConfigurationError(f"unknown CSV kind {kind!r}; expected one of {CSV_KINDS}")


def write_csv(kind: str, data: Any, path: str) -> None:
    """Deterministic CSV for one artifact kind. Vertices appear once, at their canonical edge."""
    table = _table(kind, data)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    table.to_csv(path, index=False, float_format=VALUE_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {kind} CSV with {len(table)} rows to {path}")


def read_grid_function(path: str, grid: Grid) -> GridFunction:
    frame = pd.read_csv(path, dtype={"edge_id": str})
    missing = {"edge_id", "s", "value"} - set(frame.columns)
    if missing:
        raise ConfigurationError(f"{path} lacks columns {sorted(missing)}")
    values = np.full(grid.n_states, np.nan)
    for edge_id, s, value in frame[["edge_id", "s", "value"]].itertuples(index=False):
        values[grid.state_of(GraphPoint(edge=edge_id, s=float(s)))] = float(value)
    if np.isnan(values).any():
        raise ConfigurationError(f"{path} leaves {int(np.isnan(values).sum())} grid states without a value")
    return GridFunction(grid, values)


# ------------------------------------------------------------- command line

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("spec", help="graph spec file")
    common.add_argument("--dx", type=float, default=None)
    common.add_argument("--dt", type=float, default=None)
    common.add_argument("--vmax", type=float, default=None)
    common.add_argument("--reach", type=int, default=None, help="grid cells covered per step at vmax")
    common.add_argument("--tmax", type=float, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--viscosity-tol", type=float, default=None)
    common.add_argument("--tol-aubry", type=float, default=None)
    common.add_argument("--source", default=None, help="point as edge:s")
    common.add_argument("--window", type=int, nargs=2, metavar=("N_MIN", "N_MAX"), default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--vertex-cone", choices=("eikonal", "half_line"), default=None)
    common.add_argument("--slope-tol", type=float, default=None)
    common.add_argument("--out", default=None, help="artifact directory")

    parser = argparse.ArgumentParser(prog="weakkam", description="Weak KAM solver on metric graphs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="report graph violations")
    sub.add_parser("critical", parents=[common], help="critical value by both methods")
    sub.add_parser("barrier", parents=[common], help="Peierls barrier from --source")
    sub.add_parser("potential", parents=[common], help="Mane potential from --source")
    sub.add_parser("aubry", parents=[common], help="Aubry set members")
    evolve = sub.add_parser("evolve", parents=[common], help="Lax-Oleinik evolution frames")
    evolve.add_argument("--init", default="const:0")
    evolve.add_argument("--frame-every", type=int, default=None)
    solve = sub.add_parser("solve", parents=[common], help="weak KAM solution of --init")
    solve.add_argument("--init", default="const:0")
    check = sub.add_parser("check", parents=[common], help="viscosity certification of --solution")
    check.add_argument("--solution", required=True)
    check.add_argument("--c", type=float, default=None, help="level; defaults to the critical value")
    return parser


CONFIG_FLAGS = (
    "dx", "dt", "vmax", "reach", "tmax", "tol", "viscosity_tol", "tol_aubry",
    "source", "window", "seed", "vertex_cone", "slope_tol", "out",
)


def config_from_args(args: argparse.Namespace):
    from src.config import RunConfig

    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS if getattr(args, name, None) is not None}
    if "window" in overrides:
        overrides["window"] = tuple(overrides["window"])
    return RunConfig(**overrides)


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run one subcommand, write its artifacts. Returns the exit code."""
    args = build_parser().parse_args(argv)
    from src.orchestrator import Orchestrator

    try:
        graph, gl = read_spec(args.spec)
        config = config_from_args(args)
        result = Orchestrator(graph, gl, config).route_command(args.command, args)
    except SpecParseError as e:
        for message in e.errors:
            logger.error(message)
        return e.exit_code
    except WeakKamError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"invalid configuration: {e}")
        return 1
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1

    for name, (kind, data) in result.get("artifacts", {}).items():
        write_csv(kind, data, os.path.join(config.out, name))
    for line in result.get("summary", []):
        print(line, file=sys.stdout)
    return int(result.get("exit_code", 0))
