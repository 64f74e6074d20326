import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from online_gne.bregman import FeasibleSet
from online_gne.game import (
    ActionProfile, NoConvergence, QuadraticGame, check_gradients, closed_form_gne,
    closed_form_gne_profile, limit_gne_bruteforce, nash_cournot, stabilization_gaps,
)

seeds = st.integers(0, 2**32 - 1)


def t_with_sin(s):
    """Round index (real) where sin(t/12) = s."""
    return 12.0 * np.arcsin(s)


def test_cost_at_zero_and_gradient():
    g = nash_cournot("oscillating", 20)
    x = g.zero_profile()
    for s in (-0.7, 0.0, 0.4):
        t = t_with_sin(s)
        assert g.cost_value(0, t, x) == 0.0
        assert g.cost_grad(0, t, x)[0] == pytest.approx((s + 1) - (22 + 1 / 9 - 0.5 * s), abs=1e-12)


def test_constraint_value():
    g = nash_cournot("oscillating", 20)
    assert g.constraint_value(3, 0.0, [5.0])[0] == pytest.approx(3.0)
    for s in (-1.0, 0.3):
        assert g.constraint_value(0, t_with_sin(s), [0.0])[0] == pytest.approx(-(2 + s))


@pytest.mark.parametrize("variant", ["oscillating", "converging"])
def test_gradients_match_finite_differences(variant):
    g = nash_cournot(variant, 20)
    assert check_gradients(g, np.random.default_rng(0), n_probes=100) < 1e-4


def test_quadratic_form_matches_benchmark():
    for variant in ("oscillating", "converging"):
        nc = nash_cournot(variant, 6)
        qg = nc.as_quadratic()
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = ActionProfile(rng.uniform(0, 30, 6), (1,) * 6)
            t = int(rng.integers(1, 5000))
            for i in range(6):
                assert qg.cost_value(i, t, x) == pytest.approx(nc.cost_value(i, t, x), rel=1e-12, abs=1e-9)
                assert np.allclose(qg.cost_grad(i, t, x), nc.cost_grad(i, t, x))
                assert np.allclose(qg.constraint_value(i, t, x.block(i)),
                                   nc.constraint_value(i, t, x.block(i)))


def test_bounds_dominate_sampled_values():
    g = nash_cournot("oscillating", 20)
    rng = np.random.default_rng(2)
    for _ in range(300):
        x = ActionProfile(rng.uniform(0, 30, 20), (1,) * 20)
        t = int(rng.integers(1, 10000))
        i = int(rng.integers(20))
        assert abs(g.cost_value(i, t, x)) <= g.bounds.L
        assert np.linalg.norm(g.cost_grad(i, t, x)) <= g.bounds.M
        assert np.linalg.norm(g.coupled_constraint(t, x)) <= g.bounds.L


def test_slater_point():
    g = nash_cournot("oscillating", 20)
    x = g.zero_profile()
    for t in range(1, 2000):
        assert g.coupled_constraint(t, x)[0] < 0


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_own_cost_midpoint_convex(seed):
    g = nash_cournot("oscillating", 20)
    rng = np.random.default_rng(seed)
    x = ActionProfile(rng.uniform(0, 30, 20), (1,) * 20)
    i = int(rng.integers(20))
    t = int(rng.integers(1, 1000))
    a, b = rng.uniform(0, 30, 2)
    f = lambda v: g.cost_value(i, t, x.with_block(i, [v]))
    assert f(0.5 * (a + b)) <= 0.5 * (f(a) + f(b)) + 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_limit_strongly_monotone(seed):
    lim = nash_cournot("converging", 20).limit_game()
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 30, (2, 20))
    d = x - y
    assert (lim.pseudo_gradient(x) - lim.pseudo_gradient(y)) @ d >= lim.mu * d @ d - 1e-9


def test_closed_form_examples():
    assert closed_form_gne(0, 0.0) == 0.0
    assert closed_form_gne(9, 0.0) == pytest.approx(1.0)
    # firm 20 at s = 1: 19/9 + (5 - 1/21 - 10) < 0 -> clipped
    assert closed_form_gne(19, t_with_sin(1.0)) == 0.0


def test_bruteforce_matches_closed_form_at_limit():
    lim = nash_cournot("converging", 20).limit_game()
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = limit_gne_bruteforce(lim, x0=rng.uniform(0, 30, 20))
        assert np.max(np.abs(x - closed_form_gne_profile(20, None))) <= 1e-5


def test_bruteforce_single_player_quadratic():
    box = FeasibleSet.box([0], [10])
    g = QuadraticGame([1], [[2.0]], [-6.0], [0.0], [[[0.0]]], [[1.0]], [[0.0]], [box])
    assert limit_gne_bruteforce(g.limit_game())[0] == pytest.approx(3.0, abs=1e-8)


def test_bruteforce_binding_coupling():
    box = FeasibleSet.box([-5], [5])
    g = QuadraticGame([1, 1], np.diag([2.0, 2.0]), [0, 0], [0, 0], [[[1.0]], [[1.0]]],
                      [[-0.5], [-0.5]], [[0.0], [0.0]], [box, box])
    x = limit_gne_bruteforce(g.limit_game())
    # oracle: grid search of the potential sum x_i^2 on the coupled set
    grid = np.linspace(-5, 5, 1001)
    X, Y = np.meshgrid(grid, grid)
    P = np.where(X + Y + 1 <= 1e-12, X**2 + Y**2, np.inf)
    k = np.unravel_index(np.argmin(P), P.shape)
    assert np.allclose(x, [X[k], Y[k]], atol=1e-2)
    assert np.allclose(x, [-0.5, -0.5], atol=1e-8)


def test_bruteforce_reports_failure():
    lim = nash_cournot("converging", 20).limit_game()
    with pytest.raises(NoConvergence):
        limit_gne_bruteforce(lim, max_iter=3)


def test_constraint_gap_exact():
    g = nash_cournot("converging", 20)
    lim = g.limit_game()
    for t in (1000, 10000, 37):
        H, K = stabilization_gaps(g, lim, t, n_samples=64)
        assert K == pytest.approx(20 * abs(np.sin(12 / t)), rel=1e-9)
        assert H == pytest.approx(np.abs(np.sin(12 / t)) * (1 + 0.5 * 20), rel=1e-9)
    assert stabilization_gaps(g, lim, 10000)[1] < stabilization_gaps(g, lim, 1000)[1]


def test_constraint_gap_vanishes_where_sine_is_zero():
    # 12/t = pi is not an integer round, but the gap formula holds for real t
    g = nash_cournot("converging", 20)
    H, K = stabilization_gaps(g, g.limit_game(), 12.0 / np.pi, n_samples=16)
    assert K == pytest.approx(0.0, abs=1e-12)


def test_oscillating_has_no_limit():
    assert nash_cournot("oscillating", 20).limit_game() is None


def test_profile_blocks_roundtrip():
    x = ActionProfile.from_blocks([[1.0], [2.0, 3.0], [4.0]])
    assert x.offsets == (0, 1, 3, 4)
    assert np.array_equal(x.block(1), [2.0, 3.0])
    y = x.with_block(1, [9.0, 9.0])
    assert np.array_equal(y.flat, [1, 9, 9, 4]) and np.array_equal(x.flat, [1, 2, 3, 4])
