from pathlib import Path

import pytest

from src.cli_io import parse_spec
from src.discretization import build_grid, build_transitions
from src.metric_graph import GraphPoint
from src.solvers.weak_kam import WeakKamSolver

SPECS = Path(__file__).parent / "specs"

# Desk resolutions: speed quantum dx/dt of 1/16 on G1 and 1/32 on G2.
G1_RUN = dict(dx=1 / 32, dt=0.5, vmax=1.0)
G2_RUN = dict(dx=1 / 64, dt=0.5, vmax=2.0)
G2_WINDOW = (32, 64)
G1_WINDOW = (64, 128)

G1_SPEC = """\
vertex a
vertex b
edge e1 a b length=1.0 kinetic=1.0 potential=poly:0
"""

G2_SPEC = """\
vertex a
vertex b
edge e1 a b length=1.0 kinetic=1.0 potential=poly:0
edge e2 a b length=1.0 kinetic=1.0 potential=poly:0,4,-4
"""

TRIANGLE_SPEC = """\
vertex a
vertex b
vertex c
edge e1 a b length=1.0 potential=poly:0
edge e2 b c length=2.0 potential=poly:0
edge e3 a c length=2.5 potential=poly:0
"""

Q_STAR = GraphPoint(edge="e2", s=0.5)


def bump(tau):
    return 4.0 * tau - 4.0 * tau * tau


@pytest.fixture(scope="session")
def g1():
    return parse_spec(G1_SPEC)


@pytest.fixture(scope="session")
def g2():
    return parse_spec(G2_SPEC)


@pytest.fixture(scope="session")
def triangle():
    return parse_spec(TRIANGLE_SPEC)


@pytest.fixture(scope="session")
def g1_tg(g1):
    graph, gl = g1
    return build_transitions(build_grid(graph, G1_RUN["dx"]), gl, G1_RUN["dt"], G1_RUN["vmax"])


@pytest.fixture(scope="session")
def g2_tg(g2):
    graph, gl = g2
    return build_transitions(build_grid(graph, G2_RUN["dx"]), gl, G2_RUN["dt"], G2_RUN["vmax"])


@pytest.fixture(scope="session")
def g1_solver(g1_tg):
    return WeakKamSolver(g1_tg)


@pytest.fixture(scope="session")
def g2_solver(g2_tg):
    return WeakKamSolver(g2_tg)


@pytest.fixture(scope="session")
def g2_q_star(g2_tg):
    return g2_tg.grid.state_of(Q_STAR)


@pytest.fixture(scope="session")
def g1_barriers(g1_solver):
    c = g1_solver.critical_value().c
    return c, g1_solver.mane_potential(c), g1_solver.peierls_barrier(c, G1_WINDOW)


@pytest.fixture(scope="session")
def g2_barriers(g2_solver):
    c = g2_solver.critical_value().c
    return c, g2_solver.mane_potential(c), g2_solver.peierls_barrier(c, G2_WINDOW)
