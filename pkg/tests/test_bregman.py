import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from conftest import entropy_step_oracle
from online_gne.bregman import (
    DomainViolation, FeasibleSet, MirrorMap, NoClosedForm, bregman, check_triangle, mirror_step,
    project_simplex,
)

seeds = st.integers(0, 2**32 - 1)


def test_squared_norm_value():
    m = MirrorMap.squared_norm(FeasibleSet.box([-5, -5], [5, 5]))
    assert bregman(m, [1, 2], [0, 0]) == pytest.approx(5.0)


def test_kl_value():
    m = MirrorMap.negative_entropy(FeasibleSet.simplex(2))
    expected = 0.5 * np.log(2) + 0.5 * np.log(2 / 3)
    assert bregman(m, [0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.14384, abs=1e-5)


def test_identity_zero():
    m = MirrorMap.negative_entropy(FeasibleSet.simplex(3))
    x = np.array([0.2, 0.3, 0.5])
    assert bregman(m, x, x) == pytest.approx(0.0, abs=1e-15)


def test_entropy_domain():
    m = MirrorMap.negative_entropy(FeasibleSet.simplex(2))
    with pytest.raises(DomainViolation):
        bregman(m, [1.0, 0.0], [0.5, 0.5])


def test_entropy_needs_simplex():
    with pytest.raises(NoClosedForm):
        MirrorMap.negative_entropy(FeasibleSet.box([0], [1]))


def test_no_closed_form_for_entropy_on_ball():
    ball = FeasibleSet.ball([0.5, 0.5], 0.4)
    m = MirrorMap("negative-entropy", 2, 1.0, 1.0)
    with pytest.raises(NoClosedForm):
        mirror_step(m, ball, [0.5, 0.5], [1.0, 0.0], 1.0)


def test_box_step_example():
    box = FeasibleSet.box([0], [30])
    m = MirrorMap.squared_norm(box)
    assert mirror_step(m, box, [10.0], [4.0], 1.0)[0] == pytest.approx(8.0)
    # oracle: 1-D bounded minimisation of the inner objective
    res = minimize_scalar(lambda y: 4.0 * y + (y - 10.0) ** 2, bounds=(0, 30), method="bounded",
                          options={"xatol": 1e-10})
    assert res.x == pytest.approx(8.0, abs=1e-6)


def test_entropy_step_example():
    s = FeasibleSet.simplex(2)
    m = MirrorMap.negative_entropy(s)
    assert np.allclose(mirror_step(m, s, [0.5, 0.5], [np.log(2), 0.0], 1.0), [1 / 3, 2 / 3])


@pytest.mark.parametrize("kind", ["box", "simplex"])
def test_zero_gradient_is_fixed_point(kind):
    s = FeasibleSet.box([0, 0, 0], [1, 2, 3]) if kind == "box" else FeasibleSet.simplex(3)
    m = MirrorMap.squared_norm(s) if kind == "box" else MirrorMap.negative_entropy(s)
    x = np.array([0.2, 0.3, 0.5])
    assert np.allclose(mirror_step(m, s, x, np.zeros(3), 0.7), x)


def test_box_step_matches_grid_search():
    # oracle: coordinate-wise grid search, refined around the best node
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = rng.integers(1, 4)
        lo = rng.uniform(-5, 0, n)
        hi = lo + rng.uniform(0.5, 10, n)
        box = FeasibleSet.box(lo, hi)
        m = MirrorMap.squared_norm(box)
        x = rng.uniform(lo, hi)
        g = rng.normal(scale=5, size=n)
        a = rng.uniform(0.01, 3)
        got = mirror_step(m, box, x, g, a)
        for j in range(n):
            f = lambda y: a * g[j] * y + (y - x[j]) ** 2
            grid = np.linspace(lo[j], hi[j], 20001)
            best = grid[np.argmin(f(grid))]
            h = grid[1] - grid[0]
            fine = np.linspace(max(lo[j], best - h), min(hi[j], best + h), 20001)
            assert got[j] == pytest.approx(fine[np.argmin(f(fine))], abs=1e-6)


def test_entropy_step_matches_projected_gradient():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = rng.integers(2, 5)
        s = FeasibleSet.simplex(n)
        m = MirrorMap.negative_entropy(s)
        x = rng.dirichlet(np.ones(n) * 3)
        g = rng.normal(size=n)
        a = rng.uniform(0.1, 1.0)
        assert np.allclose(mirror_step(m, s, x, g, a), entropy_step_oracle(x, g, a), atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_box_step_optimality(seed):
    rng = np.random.default_rng(seed)
    box = FeasibleSet.box([0, -1], [30, 4])
    m = MirrorMap.squared_norm(box)
    x = box.sample(rng, 1)[0]
    g = rng.normal(scale=20, size=2)
    a = rng.uniform(0.01, 2)
    xs = mirror_step(m, box, x, g, a)
    obj = lambda y: a * y @ g + bregman(m, y, x)
    assert box.contains(xs)
    for y in box.sample(rng, 100):
        assert obj(xs) <= obj(y) + 1e-8


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_entropy_step_optimality(seed):
    rng = np.random.default_rng(seed)
    s = FeasibleSet.simplex(4, scale=2.0)
    m = MirrorMap.negative_entropy(s)
    x = 2.0 * rng.dirichlet(np.ones(4))
    x = np.maximum(x, 1e-3)
    x *= 2.0 / x.sum()
    g = rng.normal(size=4)
    a = rng.uniform(0.01, 2)
    xs = mirror_step(m, s, x, g, a)
    obj = lambda y: a * y @ g + bregman(m, y, x)
    assert s.contains(xs)
    for y in s.sample(rng, 100):
        assert obj(xs) <= obj(y) + 1e-8


def _maps():
    box = FeasibleSet.box([-1, -1, -1], [2, 2, 2])
    simp = FeasibleSet.simplex(3, scale=1.5)
    return [(MirrorMap.squared_norm(box), box), (MirrorMap.negative_entropy(simp), simp)]


@pytest.mark.parametrize("pair", _maps(), ids=["squared-norm", "negative-entropy"])
def test_triangle_strong_convexity_lipschitz(pair):
    m, s = pair
    rng = np.random.default_rng(3)
    pts = s.sample(rng, 3000).reshape(1000, 3, -1)
    if m.kind == "negative-entropy":
        pts = np.maximum(pts, 1e-6)
        pts *= s.scale / pts.sum(axis=2, keepdims=True)
    for a, b, c in pts:
        assert abs(check_triangle(m, a, b, c)) <= 1e-9
        assert bregman(m, a, b) >= 0.5 * m.mu * np.sum((a - b) ** 2) - 1e-12
        assert abs(bregman(m, a, c) - bregman(m, b, c)) <= m.lipschitz_K * np.linalg.norm(a - b) + 1e-9


def test_triangle_zero_at_coincident_points():
    m, s = _maps()[1]
    x = np.array([0.5, 0.5, 0.5])
    assert check_triangle(m, x, x, x) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(0.1, 10))
def test_project_simplex_properties(y, scale):
    y = np.array(y)
    p = project_simplex(y, scale)
    assert p.min() >= 0 and p.sum() == pytest.approx(scale, rel=1e-12, abs=1e-12)
    # projection is the closest point: no random simplex point beats it
    rng = np.random.default_rng(0)
    for q in scale * rng.dirichlet(np.ones(y.size), 20):
        assert np.sum((p - y) ** 2) <= np.sum((q - y) ** 2) + 1e-9


@pytest.mark.parametrize("s", [FeasibleSet.box([0, 1], [2, 5]), FeasibleSet.simplex(3, 2.0),
                               FeasibleSet.ball([1, 1], 2.0)], ids=["box", "simplex", "ball"])
def test_sample_and_project_stay_inside(s):
    rng = np.random.default_rng(5)
    for p in s.sample(rng, 200):
        assert s.contains(p)
    for y in rng.normal(scale=10, size=(200, s.dimension)):
        assert s.contains(s.project(y))
