import logging

import numpy as np
import pandas as pd
import pytest

from src.cli_io import (
    emit_spec,
    parse_init,
    parse_point,
    parse_spec,
    read_grid_function,
    run_command,
    write_csv,
)
from src.config import RunConfig
from src.discretization import GridFunction, build_grid
from src.exceptions import ConfigurationError, SpecParseError
from src.metric_graph import GraphPoint
from src.solvers.viscosity import default_slope_tol

from conftest import G2_SPEC, SPECS

G2_FLAGS = ["--dx", "0.015625", "--dt", "0.5", "--vmax", "2", "--tmax", "32", "--window", "32", "64"]


def test_parse_desk_graph():
    graph, gl = parse_spec(G2_SPEC)
    assert graph.vertices == ["a", "b"]
    assert graph.edge_ids == ["e1", "e2"]
    assert gl.for_edge("e2").potential == (0.0, 4.0, -4.0)
    assert gl.for_edge("e1").kinetic == 1.0


def test_spec_files_match_the_inline_desk_graphs():
    assert emit_spec(*parse_spec((SPECS / "g2.graph").read_text())) == emit_spec(*parse_spec(G2_SPEC))


def test_emitted_spec_parses_back():
    graph, gl = parse_spec(G2_SPEC)
    again_graph, again_gl = parse_spec(emit_spec(graph, gl))
    assert again_graph.edge_ids == graph.edge_ids
    assert again_gl.for_edge("e2") == gl.for_edge("e2")


def test_parse_errors_are_line_numbered():
    text = "vertex a\nvertex a\nedge e1 a c length=1.0\nbogus\nedge e2 a a length=x\n"
    with pytest.raises(SpecParseError) as excinfo:
        parse_spec(text)
    errors = excinfo.value.errors
    assert "line 2: vertex a declared twice" in errors
    assert "line 4: unknown directive 'bogus'" in errors
    assert "line 5: length 'x' is not a number" in errors
    assert "line 3: unknown vertex c" in errors


def test_incompatible_vertex_values_are_a_parse_error():
    text = "vertex a\nvertex b\nedge e1 a b length=1 potential=poly:1\nedge e2 a b length=1 potential=poly:0\n"
    with pytest.raises(SpecParseError) as excinfo:
        parse_spec(text)
    assert excinfo.value.errors[0] == "L mismatch at vertex a: -1 vs -0"
    assert excinfo.value.exit_code == 1


def test_parse_point():
    assert parse_point("e2:0.5") == GraphPoint(edge="e2", s=0.5)
    with pytest.raises(ConfigurationError):
        parse_point("0.5")
    with pytest.raises(ConfigurationError):
        parse_point("e2:half")


def test_parse_init_expressions(g1):
    grid = build_grid(g1[0], 0.25)
    assert np.all(parse_init("const:2", grid).values == 2.0)
    linear = parse_init("linear:1,2", grid)
    assert linear[grid.state_of(GraphPoint(edge="e1", s=0.5))] == pytest.approx(2.0)
    wave = parse_init("cos:0,3.141592653589793", grid)
    assert wave[grid.vertex_states["b"]] == pytest.approx(-1.0)
    for bad in ("const:1,2", "linear:x,1", "no-such-file.csv"):
        with pytest.raises(ConfigurationError):
            parse_init(bad, grid)


def test_grid_function_csv_lists_vertices_once(g2, tmp_path):
    grid = build_grid(g2[0], 0.25)
    u = GridFunction.from_callable(grid, lambda p: p.s)
    path = tmp_path / "u.csv"
    write_csv("grid_function", u, str(path))
    table = pd.read_csv(path, dtype={"edge_id": str})
    assert list(table.columns) == ["edge_id", "s", "value"]
    assert len(table) == grid.n_states
    assert list(table["edge_id"]) == ["e1"] * 5 + ["e2"] * 3
    assert list(table["s"][:5]) == [0.0, 0.25, 0.5, 0.75, 1.0]
    again = read_grid_function(str(path), grid)
    assert np.allclose(again.values, u.values)


def test_unknown_csv_kind(g1, tmp_path):
    grid = build_grid(g1[0], 0.5)
    with pytest.raises(ConfigurationError):
        write_csv("histogram", GridFunction.constant(grid, 0.0), str(tmp_path / "x.csv"))


def test_incomplete_grid_function_csv_is_rejected(g1, tmp_path):
    grid = build_grid(g1[0], 0.5)
    path = tmp_path / "partial.csv"
    path.write_text("edge_id,s,value\ne1,0,1.0\n")
    with pytest.raises(ConfigurationError):
        read_grid_function(str(path), grid)


def test_validate_and_critical_commands(capsys, tmp_path):
    spec = str(SPECS / "g2.graph")
    assert run_command(["validate", spec, "--out", str(tmp_path)]) == 0
    assert "violations: 0" in capsys.readouterr().out
    assert run_command(["critical", spec, *G2_FLAGS, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "c (min mean cycle): 1" in out


def test_broken_spec_exits_with_one(tmp_path):
    spec = tmp_path / "broken.graph"
    spec.write_text("vertex a\nedge e1 a z length=1\n")
    assert run_command(["validate", str(spec)]) == 1


def test_missing_source_is_a_usage_error(tmp_path):
    spec = str(SPECS / "g2.graph")
    assert run_command(["barrier", spec, *G2_FLAGS, "--out", str(tmp_path)]) == 1


def test_solve_then_check(tmp_path, capsys):
    spec = str(SPECS / "g2.graph")
    assert run_command(["solve", spec, *G2_FLAGS, "--out", str(tmp_path)]) == 0
    solution = tmp_path / "solution.csv"
    assert solution.exists()
    capsys.readouterr()
    assert run_command(["check", spec, *G2_FLAGS, "--solution", str(solution), "--out", str(tmp_path)]) == 0
    assert "pass: True" in capsys.readouterr().out
    report = pd.read_csv(tmp_path / "viscosity.csv", dtype={"edge_id": str})
    assert list(report.columns) == ["edge_id", "s", "class", "sub", "super"]


def test_outputs_are_byte_identical_across_runs(tmp_path):
    spec = str(SPECS / "g2.graph")
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        assert run_command(["potential", spec, *G2_FLAGS, "--source", "e2:0.5", "--out", str(out)]) == 0
        assert run_command(["aubry", spec, *G2_FLAGS, "--out", str(out)]) in (0, 2)
    for name in ("potential.csv", "aubry.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


@pytest.mark.parametrize("option", ["potential=poly:nan", "potential=poly:0,inf", "kinetic=inf", "kinetic=nan"])
def test_non_finite_lagrangian_coefficients_are_rejected(option):
    text = f"vertex a\nvertex b\nedge e1 a b length=1 {option}\n"
    with pytest.raises(SpecParseError) as excinfo:
        parse_spec(text)
    assert excinfo.value.errors[0].startswith("line 3: invalid Lagrangian for edge e1")


def test_random_initial_data_follows_the_seed(g1):
    grid = build_grid(g1[0], 0.25)
    first = parse_init("random:-1,1", grid, seed=7)
    assert np.array_equal(first.values, parse_init("random:-1,1", grid, seed=7).values)
    assert not np.array_equal(first.values, parse_init("random:-1,1", grid, seed=8).values)
    assert first.values.min() >= -1.0 and first.values.max() < 1.0
    with pytest.raises(ConfigurationError):
        parse_init("random:1,-1", grid)


def test_default_slope_tolerance_comes_from_the_checker(g2):
    run = RunConfig(dx=1 / 64, dt=0.5, vmax=2.0).resolved(*g2)
    assert run.slope_tol == default_slope_tol(1 / 64)
    assert RunConfig(dx=1 / 64, dt=0.5, vmax=2.0, slope_tol=0.3).resolved(*g2).slope_tol == 0.3


def test_off_grid_source_is_snapped_with_a_warning(tmp_path, caplog):
    spec = str(SPECS / "g2.graph")
    with caplog.at_level(logging.WARNING, logger="src.orchestrator"):
        code = run_command(["potential", spec, *G2_FLAGS, "--source", "e2:0.501", "--out", str(tmp_path)])
    assert code == 0
    assert any("e2:0.501 is not a grid node" in r.getMessage() for r in caplog.records)
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="src.orchestrator"):
        run_command(["potential", spec, *G2_FLAGS, "--source", "e2:0.5", "--out", str(tmp_path)])
    assert not any("not a grid node" in r.getMessage() for r in caplog.records)
