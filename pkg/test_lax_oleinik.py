import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.discretization import GridFunction, build_grid, build_transitions
from src.exceptions import PreconditionError, UnreachableStateError
from src.lax_oleinik import DiscreteCurve, LaxOleinik
from src.metric_graph import GraphPoint

from conftest import Q_STAR

A, B, MID = 0, 1, 2


@pytest.fixture(scope="module")
def three_state(g1):
    graph, gl = g1
    return LaxOleinik(build_transitions(build_grid(graph, 0.5), gl, dt=0.5, vmax=1.0))


@pytest.fixture(scope="module")
def quarter_grid(g1):
    graph, gl = g1
    return LaxOleinik(build_transitions(build_grid(graph, 0.25), gl, dt=0.5, vmax=1.0))


def finite_values(n):
    return arrays(np.float64, n, elements=st.floats(-10.0, 10.0))


def test_one_step_on_three_states(three_state):
    grid = three_state.tg.grid
    u = GridFunction(grid, np.array([0.0, np.inf, np.inf]))
    stepped, argmin = three_state.lo_step(u)
    assert stepped[A] == 0.0
    assert stepped[MID] == pytest.approx(0.25)
    assert np.isinf(stepped[B])
    assert argmin[MID] == A
    assert argmin[B] == -1


@settings(max_examples=40, deadline=None)
@given(finite_values(5), finite_values(5), st.floats(-5.0, 5.0))
def test_operator_laws(quarter_grid, u, bump_up, a):
    grid = quarter_grid.tg.grid
    lower = GridFunction(grid, u)
    upper = GridFunction(grid, u + np.abs(bump_up))
    t_lower, _ = quarter_grid.lo_step(lower)
    t_upper, _ = quarter_grid.lo_step(upper)
    assert np.all(t_lower.values <= t_upper.values)
    t_shifted, _ = quarter_grid.lo_step(lower.shifted(a))
    assert np.allclose(t_shifted.values, t_lower.values + a, atol=1e-12, rtol=0.0)


def test_operator_is_non_expansive_on_the_bump_graph(g2_tg):
    lo = LaxOleinik(g2_tg)
    grid = g2_tg.grid
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = rng.uniform(-2.0, 2.0, grid.n_states)
        v = rng.uniform(-2.0, 2.0, grid.n_states)
        t_u, _ = lo.lo_step(GridFunction(grid, u))
        t_v, _ = lo.lo_step(GridFunction(grid, v))
        assert np.max(np.abs(t_u.values - t_v.values)) <= np.max(np.abs(u - v)) + 1e-12


@settings(max_examples=25, deadline=None)
@given(finite_values(5), st.integers(1, 6), st.integers(1, 6))
def test_semigroup_law_is_exact(quarter_grid, u, n, m):
    u0 = GridFunction(quarter_grid.tg.grid, u)
    whole = quarter_grid.lo_evolve(u0, n + m).final
    halves = quarter_grid.lo_evolve(quarter_grid.lo_evolve(u0, n).final, m).final
    assert np.array_equal(whole.values, halves.values)


def test_single_evolution_step_equals_lo_step(quarter_grid):
    u0 = GridFunction.from_callable(quarter_grid.tg.grid, lambda p: np.sin(3 * p.s))
    stepped, _ = quarter_grid.lo_step(u0)
    assert np.array_equal(quarter_grid.lo_evolve(u0, 1).final.values, stepped.values)
    with pytest.raises(PreconditionError):
        quarter_grid.lo_evolve(u0, 0)


def test_free_particle_relaxes_to_the_minimum(g1_tg):
    lo = LaxOleinik(g1_tg)
    u0 = GridFunction.from_callable(g1_tg.grid, lambda p: np.cos(2 * np.pi * p.s))
    result = lo.lo_evolve(u0, 64)
    assert result.final.values.min() >= -1.0 - 1e-12
    assert result.final.values.max() <= -1.0 + 0.032
    assert result.time == pytest.approx(32.0)


def test_critical_shift_and_frames(g1_tg):
    lo = LaxOleinik(g1_tg)
    u0 = GridFunction.from_callable(g1_tg.grid, lambda p: p.s)
    result = lo.lo_evolve(u0, 6, c=0.5, keep_frames=True)
    assert np.allclose(result.final.values, result.raw_final.values + 6 * 0.5 * 0.5)
    assert len(result.frames) == 7
    series = result.frame_series(every=4)
    assert list(series.times) == [0.0, 2.0, 3.0]
    with pytest.raises(PreconditionError):
        lo.lo_evolve(u0, 2).frame_series()


def test_stopping_rule_reports_convergence(g2_tg):
    lo = LaxOleinik(g2_tg)
    q = g2_tg.grid.state_of(Q_STAR)
    u0 = GridFunction.constant(g2_tg.grid, 0.0)
    result = lo.lo_evolve(u0, 400, c=1.0, stop_tol=1e-12, patience=5)
    assert result.converged
    assert result.steps < 400
    assert result.final[q] == pytest.approx(0.0, abs=1e-12)


def test_finite_time_cost_of_a_half_unit_move(quarter_grid):
    grid = quarter_grid.tg.grid
    mid = grid.state_of(GraphPoint(edge="e1", s=0.5))
    result = quarter_grid.finite_time_cost(A, 2)
    # Two quarter steps at speed 1/2: 2 * dt * v^2 / 2
    assert result.final[mid] == pytest.approx(0.125)
    assert result.final[A] == 0.0


def test_backtracked_curve_telescopes(quarter_grid):
    grid = quarter_grid.tg.grid
    mid = grid.state_of(GraphPoint(edge="e1", s=0.5))
    result = quarter_grid.finite_time_cost(A, 3, keep_argmin=True)
    curve = quarter_grid.backtrack_curve(result, mid)
    assert curve.states[0] == A and curve.states[-1] == mid
    assert curve.steps == 3
    assert quarter_grid.curve_weight(curve) == pytest.approx(result.raw_final[mid], abs=1e-12)


def test_backtracking_needs_a_reachable_target(three_state):
    result = three_state.finite_time_cost(A, 1, keep_argmin=True)
    with pytest.raises(UnreachableStateError):
        three_state.backtrack_curve(result, B)
    with pytest.raises(PreconditionError):
        three_state.backtrack_curve(three_state.finite_time_cost(A, 1), MID)


def test_resting_at_the_potential_top_has_critical_energy(g2_tg):
    lo = LaxOleinik(g2_tg)
    q = g2_tg.grid.state_of(Q_STAR)
    curve = DiscreteCurve(states=(q, q, q, q), dt=g2_tg.dt)
    assert lo.energy_residual(curve, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert lo.curve_weight(curve) == pytest.approx(-3 * g2_tg.dt)


def test_uniform_motion_energy(g1_tg):
    lo = LaxOleinik(g1_tg)
    grid = g1_tg.grid
    states = tuple(grid.state_of(GraphPoint(edge="e1", s=k * 0.25)) for k in range(5))
    curve = DiscreteCurve(states=states, dt=g1_tg.dt)
    assert lo.energy_residual(curve, 0.0) == pytest.approx(0.125)
    assert lo.energy_residual(curve, 0.125) == pytest.approx(0.0, abs=1e-12)


def test_domination(g2_tg):
    lo = LaxOleinik(g2_tg)
    zero = GridFunction.constant(g2_tg.grid, 0.0)
    assert lo.is_dominated(zero, 1.0)
    assert not lo.is_dominated(zero, 0.5)
