import numpy as np
import pytest

from online_gne.trajectory import _LogBuilder


class ReversedExecutor:
    """Runs tasks in reverse order but returns results in input order."""

    def map(self, fn, items):
        items = list(items)
        out = {i: fn(i) for i in reversed(items)}
        return [out[i] for i in items]


def make_log(x, C, R=None, dims=None):
    """Minimal full-information log from played actions and constraint values."""
    x = np.asarray(x, dtype=float)
    C = np.asarray(C, dtype=float)
    T, n = x.shape
    dims = dims or (1,) * n
    m = C.shape[2]
    b = _LogBuilder(dims, m, T)
    b.x[:] = x
    b.C[:] = C
    if R is not None:
        b.R[:] = R
    b.sched[:] = 1.0
    return b.finish({"kind": "full"})


@pytest.fixture
def reversed_executor():
    return ReversedExecutor()


def entropy_step_oracle(x, g, a, tol=1e-13, max_iter=100_000):
    """min_y a<y,g> + KL(y, x) over the unit simplex by projected gradient.

    Armijo backtracking keeps iterates strictly positive (the objective is
    +inf on the boundary), so no closed-form update is involved.
    """
    from online_gne.bregman import project_simplex

    def f(y):
        if np.any(y <= 0):
            return np.inf
        return float(a * y @ g + np.sum(y * np.log(y / x) - y + x))

    y = x.copy()
    step = 1.0
    for _ in range(max_iter):
        grad = a * g + np.log(y / x)
        fy = f(y)
        while True:
            cand = project_simplex(y - step * grad)
            d = cand - y
            if f(cand) <= fy + grad @ d + (0.5 / step) * (d @ d):
                break
            step *= 0.5
        if np.max(np.abs(d)) < tol:
            return cand
        y = cand
        step *= 2.0
    return y
