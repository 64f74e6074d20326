import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from hypothesis import given, settings, strategies as st

from online_gne.bregman import FeasibleSet
from online_gne.game import ActionProfile, GameBounds, GameOracle, QuadraticGame, nash_cournot
from online_gne.graph import named_graph
from online_gne.learner import StepSchedule, run
from online_gne.metrics import (
    MissingGNE, consensus_residual, dual_bound_ratio, hindsight_comparator, regret, sublinearity_fit,
    tracking_error, violation,
)

from conftest import make_log


def one_player_quadratic(center=5.0, upper=30.0, cap=100.0):
    # J = (x - center)^2 up to a constant, constraint x <= cap
    box = FeasibleSet.box([0], [upper])
    return QuadraticGame([1], [[2.0]], [-2 * center], [0.0], [[[1.0]]], [[cap]], [[0.0]], [box])


def test_comparator_single_round():
    g = one_player_quadratic()
    log = make_log([[1.0]], [[[1.0 - 100.0]]])
    c = hindsight_comparator(log, g, 0, 1)
    assert c.point[0] == pytest.approx(5.0, abs=1e-8) and not c.empty


def test_comparator_binding_constraint():
    g = one_player_quadratic(cap=3.0)
    log = make_log([[1.0]] * 3, [[[1.0 - 3.0]]] * 3)
    assert hindsight_comparator(log, g, 0, 3).point[0] == pytest.approx(3.0, abs=1e-8)


def test_cournot_comparator_is_clipped_vertex():
    g = nash_cournot("oscillating", 5)
    log = run(g, named_graph("ring", 5), StepSchedule(0.8, 0.3), horizon=150, seed=0, init="random")
    for i in range(5):
        for T in (10, 80, 150):
            c = hindsight_comparator(log, g, i, T)
            # accumulated cost is T y^2 + y * sum_t (S_{-i,t} + q_t); the constraint
            # set is the clipped interval of running bounds
            lin = sum(g.own_quadratic(i, t, _prof(log, t))[1][0] for t in range(1, T + 1))
            vertex = -lin / (2 * T)
            hi = np.min(-(log.C[:T].sum(axis=1)[:, 0] - log.C[:T, i, 0])
                        + 2 + np.sin(np.arange(1, T + 1) / 12))
            lo, up = (0.0, 30.0) if hi < 0 else (0.0, min(30.0, hi))
            assert c.point[0] == pytest.approx(np.clip(vertex, lo, up), abs=1e-8)
            assert c.empty == (hi < 0)


def _prof(log, t):
    return ActionProfile(log.x[t - 1].copy(), tuple(log.dims))


def test_stationary_play_at_comparator_has_zero_regret():
    g = one_player_quadratic()
    T = 7
    x = np.full((T, 1), 5.0)
    R = np.array([[g.cost_value(0, t, _single(5.0))] for t in range(1, T + 1)])
    log = make_log(x, np.full((T, 1, 1), -95.0), R=R)
    assert regret(log, g, 0, [1, 4, 7]).regret == pytest.approx(0.0, abs=1e-9)


def _single(v):
    return ActionProfile(np.array([v]), (1,))


def test_regret_prefix_consistency():
    g = nash_cournot("oscillating", 4)
    log = run(g, named_graph("ring", 4), StepSchedule(0.8, 0.3), horizon=400, seed=1, init="random")
    grid = regret(log, g, 2, [50, 100, 250, 400]).regret
    for k, T in enumerate([50, 100, 250, 400]):
        assert grid[k] == pytest.approx(regret(log, g, 2, [T]).regret[0], abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_comparator_beats_random_feasible_points(seed):
    g = nash_cournot("oscillating", 3)
    log = run(g, named_graph("ring", 3), StepSchedule(0.8, 0.3), horizon=60, seed=seed, init="random")
    rng = np.random.default_rng(seed)
    i = int(rng.integers(3))
    T = int(rng.integers(1, 61))
    c = hindsight_comparator(log, g, i, T)
    assert c.residual <= 1e-8
    total = lambda y: sum(g.cost_value(i, t, _prof(log, t).with_block(i, [y])) for t in range(1, T + 1))
    rhs = -(log.C[:T].sum(axis=1)[:, 0] - log.C[:T, i, 0]) + 2 + np.sin(np.arange(1, T + 1) / 12)
    hi = min(30.0, rhs.min()) if not c.empty else 30.0
    for y in rng.uniform(0, hi, 30):
        assert total(c.point[0]) <= total(y) + 1e-7 * (1 + abs(total(y)))


class GenericGame(GameOracle):
    """Two players on a disc with a nonlinear coupling, no quadratic hooks."""

    def __init__(self):
        self.n_players = 2
        self.action_dims = (2, 2)
        self.constraint_dim = 1
        self.feasible_sets = (FeasibleSet.ball([0, 0], 1.0),) * 2
        self.bounds = GameBounds(L=50.0, M=50.0)

    def cost_value(self, i, t, x):
        y = x.block(i)
        return float(np.sum((y - [0.8, 0.8]) ** 2) + 0.1 * y @ x.block(1 - i))

    def cost_grad(self, i, t, x):
        return 2 * (x.block(i) - [0.8, 0.8]) + 0.1 * x.block(1 - i)

    def constraint_value(self, i, t, xi):
        return np.array([xi[0] + xi[1] - 0.5])

    def constraint_jacobian(self, i, t, xi):
        return np.ones((2, 1))


def test_generic_solver_matches_brute_force():
    g = GenericGame()
    rng = np.random.default_rng(0)
    T = 5
    x = rng.uniform(-0.3, 0.3, (T, 4))
    C = np.array([[[xr[0] + xr[1] - 0.5], [xr[2] + xr[3] - 0.5]] for xr in x])
    log = make_log(x, C, dims=(2, 2))
    c = hindsight_comparator(log, g, 0, T)
    # oracle: dense polar grid of the disc filtered by the running constraints
    rhs = (-C[:, 1, 0]).min()
    r, th = np.meshgrid(np.linspace(0, 1, 801), np.linspace(0, 2 * np.pi, 1601))
    Y = np.stack([r.ravel() * np.cos(th.ravel()), r.ravel() * np.sin(th.ravel())], axis=1)
    Y = Y[Y.sum(axis=1) - 0.5 <= rhs]
    obj = sum(np.sum((Y - 0.8) ** 2, axis=1) + 0.1 * Y @ x[t, 2:] for t in range(T))
    f = lambda y: sum(np.sum((y - 0.8) ** 2) + 0.1 * y @ x[t, 2:] for t in range(T))
    assert not c.empty
    assert c.point.sum() - 0.5 <= rhs + 1e-7 and np.linalg.norm(c.point) <= 1 + 1e-9
    assert f(c.point) <= obj.min() + 1e-7
    # the grid optimum touches the line, so refine along it with a 1-D search
    s0 = 0.5 + rhs
    line = lambda u: f(np.array([s0 / 2 + u, s0 / 2 - u]))
    half = np.sqrt(max(1 - s0**2 / 2, 0) / 2)
    u = minimize_scalar(line, bounds=(-half, half), method="bounded", options={"xatol": 1e-12}).x
    assert f(c.point) == pytest.approx(line(u), abs=1e-8)


def test_violation_cancellation():
    log = make_log(np.zeros((3, 1)), [[[1.0]], [[-2.0]], [[1.0]]])
    v = violation(log)
    assert np.allclose(v.cumulative[:, 0], [1, -1, 0])
    assert np.allclose(v.R_g, [1, 0, 0])


def test_violation_zero_when_feasible():
    log = make_log(np.zeros((5, 2)), -np.ones((5, 2, 2)))
    assert np.all(violation(log, horizons=[1, 3, 5]).R_g == 0)


def test_tracking_error_at_gne():
    lim = nash_cournot("converging", 3).limit_game()
    log = make_log(np.tile(lim.gne, (4, 1)), np.zeros((4, 3, 1)))
    assert np.all(tracking_error(log, lim) == 0) and np.all(tracking_error(log, lim, averaged=True) == 0)


def test_averaged_error_two_points():
    lim = nash_cournot("converging", 3).limit_game()
    v = np.array([1.0, -2.0, 0.5])
    log = make_log(np.vstack([lim.gne, lim.gne + v]), np.zeros((2, 3, 1)))
    assert tracking_error(log, lim, averaged=True)[1] == pytest.approx(np.sum((v / 2) ** 2))


def test_missing_gne():
    box = FeasibleSet.box([0], [1])
    g = QuadraticGame([1], [[1.0]], [0.0], [0.0], [[[1.0]]], [[1.0]], [[0.0]], [box])
    with pytest.raises(MissingGNE):
        tracking_error(make_log(np.zeros((2, 1)), np.zeros((2, 1, 1))), g.limit_game())


def test_consensus_residual_complete_graph_and_bound():
    g = nash_cournot("oscillating", 5)
    log = run(g, named_graph("complete", 5), StepSchedule(0.8, 0.3), horizon=300, seed=0, init="random")
    resid, _ = consensus_residual(log, named_graph("complete", 5), g.bounds)
    assert np.allclose(resid, 0, atol=1e-12)
    graph = named_graph("ring", 5)
    log = run(g, graph, StepSchedule(0.8, 0.3), horizon=300, seed=0, init="random")
    resid, bound = consensus_residual(log, graph, g.bounds)
    assert resid[0] == 0 and np.all(resid <= bound)
    assert np.all(dual_bound_ratio(log, g.bounds) <= 1)


def test_fit_exact_powers():
    T = np.arange(1, 1001)
    assert sublinearity_fit(T, T).slope == pytest.approx(1.0)
    assert sublinearity_fit(T, np.sqrt(T)).slope == pytest.approx(0.5)
    assert sublinearity_fit(T, np.sqrt(T)).r2 == pytest.approx(1.0)


def test_fit_noisy_power():
    rng = np.random.default_rng(0)
    T = np.arange(100, 5001, 10)
    v = 3.0 * T ** 0.8 * (1 + 0.01 * rng.normal(size=T.size))
    f = sublinearity_fit(T, v)
    assert 0.75 <= f.slope <= 0.85 and f.r2 > 0.99


def test_fit_needs_positive_values():
    T = np.arange(1, 20)
    with pytest.raises(ValueError):
        sublinearity_fit(T, np.zeros(T.size))
    assert sublinearity_fit(T, np.zeros(T.size), epsilon=1e-12).slope == pytest.approx(0.0)


def test_fit_window():
    T = np.arange(1, 101)
    v = np.where(T <= 50, T ** 2.0, 2500.0 * (T / 50.0))
    assert sublinearity_fit(T, v, window=(60, 100)).slope == pytest.approx(1.0)
