"""Regret, constraint violation, equilibrium tracking and consensus metrics
computed from trajectory logs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .game import ActionProfile, GameBounds, GameOracle, LimitGame
from .graph import CommGraph
from .trajectory import TrajectoryLog

COMPARATOR_TOL = 1e-8


class EmptyComparatorSet(UserWarning):
    """The hindsight feasible set is empty; the comparator falls back to the action set."""


class MissingGNE(ValueError):
    pass


class NonPositiveValues(ValueError):
    pass


@dataclass
class Comparator:
    point: np.ndarray
    empty: bool          # True when the fallback to the action set was used
    residual: float


@dataclass
class RegretReport:
    player: int
    horizons: np.ndarray
    regret: np.ndarray
    comparators: list
    empty: np.ndarray

    @property
    def averaged(self) -> np.ndarray:
        return self.regret / self.horizons


@dataclass
class ViolationReport:
    horizons: np.ndarray
    R_g: np.ndarray
    cumulative: np.ndarray  # (H, m) running sum of g_t(x_t)

    @property
    def averaged(self) -> np.ndarray:
        return self.R_g / self.horizons


@dataclass
class FitResult:
    slope: float
    r2: float
    epsilon: float = 0.0


# ---------------------------------------------------------------------------
# hindsight comparator


def _box_qp(Q, c, lo, hi, x0=None, tol=COMPARATOR_TOL, max_iter=100_000):
    """min 0.5 y'Qy + c'y over [lo, hi] by projected gradient (step 1/||Q||)."""
    lip = float(np.linalg.norm(Q, 2))
    if lip == 0.0:
        y = np.where(c > 0, lo, hi)
        y = np.where(c == 0, np.clip(0.0, lo, hi), y)
        return y, 0.0
    y = np.clip(np.zeros_like(c) if x0 is None else x0, lo, hi)
    for _ in range(max_iter):
        grad = Q @ y + c
        y_new = np.clip(y - grad / lip, lo, hi)
        res = float(np.linalg.norm(y - np.clip(y - grad, lo, hi)))
        y = y_new
        if res <= tol:
            break
    grad = Q @ y + c
    return y, float(np.linalg.norm(y - np.clip(y - grad, lo, hi)))


class _ComparatorProblem:
    """Per-round data of the hindsight problem for one player.

    Round t contributes the cost J_{i,t}(., x_{-i,t}) and the coupled constraint
    g_{i,t}(y) <= -sum_{j != i} g_{j,t}(x_{j,t}).
    """

    def __init__(self, log: TrajectoryLog, oracle: GameOracle, i: int, T_max: int):
        self.log, self.oracle, self.i = log, oracle, i
        self.fset = oracle.feasible_sets[i]
        played = log.played[:T_max]
        self.profiles = [ActionProfile(np.array(played[r]), tuple(log.dims)) for r in range(T_max)]
        others = log.C[:T_max].sum(axis=1) - log.C[:T_max, i]
        self.rhs = -others  # (T, m)
        quads = [oracle.own_quadratic(i, r + 1, self.profiles[r]) for r in range(T_max)]
        self.quadratic = all(q is not None for q in quads)
        if self.quadratic:
            self.Qcum = np.cumsum([q[0] for q in quads], axis=0)
            self.ccum = np.cumsum([q[1] for q in quads], axis=0)
            self.kcum = np.cumsum([q[2] for q in quads])
        aff = [oracle.constraint_affine(i, r + 1) for r in range(T_max)]
        self.affine = all(a is not None for a in aff)
        self.box_bounds = None
        if self.affine and self.fset.kind == "box":
            self._build_box_bounds(aff)

    def _build_box_bounds(self, aff):
        n = self.fset.dimension
        T = len(aff)
        lo = np.full((T, n), -np.inf)
        hi = np.full((T, n), np.inf)
        infeasible = np.zeros(T, dtype=bool)
        for r, (G, h) in enumerate(aff):
            bound = self.rhs[r] - h
            for k in range(G.shape[1]):
                a = G[:, k]
                nz = np.flatnonzero(a)
                if nz.size == 0:
                    infeasible[r] |= bound[k] < 0
                elif nz.size == 1:
                    j = nz[0]
                    if a[j] > 0:
                        hi[r, j] = min(hi[r, j], bound[k] / a[j])
                    else:
                        lo[r, j] = max(lo[r, j], bound[k] / a[j])
                else:
                    return  # not box-reducible; the generic solver handles it
        self.box_bounds = (np.maximum.accumulate(lo, axis=0), np.minimum.accumulate(hi, axis=0),
                           np.logical_or.accumulate(infeasible))

    # -- objective over the first T rounds ---------------------------------
    def objective(self, y, T):
        if self.quadratic:
            return float(0.5 * y @ self.Qcum[T - 1] @ y + self.ccum[T - 1] @ y + self.kcum[T - 1])
        return float(sum(self.oracle.cost_value(self.i, r + 1, self.profiles[r].with_block(self.i, y))
                         for r in range(T)))

    def gradient(self, y, T):
        if self.quadratic:
            return self.Qcum[T - 1] @ y + self.ccum[T - 1]
        return sum(self.oracle.cost_grad(self.i, r + 1, self.profiles[r].with_block(self.i, y))
                   for r in range(T))

    def solve(self, T) -> Comparator:
        fs = self.fset
        if self.box_bounds is not None:
            lo_t, hi_t, bad = (b[T - 1] for b in self.box_bounds)
            lo = np.maximum(fs.lower, lo_t)
            hi = np.minimum(fs.upper, hi_t)
            empty = bool(bad) or bool(np.any(lo > hi))
            if empty:
                lo, hi = fs.lower, fs.upper
            y, res = self._solve_box(T, lo, hi)
            return Comparator(y, empty, res)
        return self._solve_general(T)

    def _solve_box(self, T, lo, hi):
        if self.quadratic:
            y, res = _box_qp(self.Qcum[T - 1] / T, self.ccum[T - 1] / T, lo, hi)
            return y, res
        return _projected_gradient(lambda y: self.objective(y, T) / T,
                                   lambda y: self.gradient(y, T) / T,
                                   lambda y: np.clip(y, lo, hi), 0.5 * (lo + hi))

    def _solve_general(self, T):
        """Generic convex solve with SLSQP over the action set and all rounds' constraints."""
        fs, i = self.fset, self.i
        cons = []
        for r in range(T):
            cons.append({"type": "ineq",
                         "fun": (lambda y, r=r: self.rhs[r] - self.oracle.constraint_value(i, r + 1, y)),
                         "jac": (lambda y, r=r: -self.oracle.constraint_jacobian(i, r + 1, y).T)})
        if fs.kind == "ball":
            cons.append({"type": "ineq", "fun": lambda y: fs.radius ** 2 - np.sum((y - fs.center) ** 2),
                         "jac": lambda y: -2.0 * (y - fs.center)})
            bnds = None
        elif fs.kind == "simplex":
            cons.append({"type": "eq", "fun": lambda y: np.array([y.sum() - fs.scale]),
                         "jac": lambda y: np.ones((1, y.size))})
            bnds = [(0.0, fs.scale)] * fs.dimension
        else:
            bnds = list(zip(fs.lower, fs.upper))
        x0 = np.array(fs.interior_point)
        f = lambda y: self.objective(y, T) / T
        g = lambda y: self.gradient(y, T) / T
        out = minimize(f, x0, jac=g, bounds=bnds, constraints=cons, method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": 1000})
        y = out.x
        viol = max([0.0] + [float(-np.min(c["fun"](y))) for c in cons if c["type"] == "ineq"])
        if not out.success or viol > 1e-7:
            # fall back to the action set alone
            y = _projected_gradient(f, g, fs.project, x0)[0]
            return Comparator(y, True, float(np.linalg.norm(y - fs.project(y - g(y)))))
        return Comparator(fs.project(y), False, float(np.linalg.norm(y - fs.project(y - g(y)))))


def _projected_gradient(f, grad, proj, y0, tol=COMPARATOR_TOL, max_iter=20_000):
    """Projected gradient with Armijo backtracking; returns (y, residual)."""
    y = proj(np.asarray(y0, dtype=float))
    step = 1.0
    res = np.inf
    for _ in range(max_iter):
        g = grad(y)
        res = float(np.linalg.norm(y - proj(y - g)))
        if res <= tol:
            break
        fy = f(y)
        while True:
            y_new = proj(y - step * g)
            d = y_new - y
            if f(y_new) <= fy + g @ d + (0.5 / step) * (d @ d) or step < 1e-16:
                break
            step *= 0.5
        y = y_new
        step *= 2.0
    return y, res


def hindsight_comparator(log: TrajectoryLog, oracle: GameOracle, i: int, T: int) -> Comparator:
    """Best fixed action of player ``i`` in hindsight over the first ``T`` rounds."""
    if T > log.horizon:
        raise ValueError("horizon exceeds log length")
    return _ComparatorProblem(log, oracle, i, T).solve(T)


def regret(log: TrajectoryLog, oracle: GameOracle, i: int, horizons) -> RegretReport:
    """Reg_i(T) for each horizon, each with its own comparator."""
    horizons = np.asarray(horizons, dtype=int)
    if np.any(np.diff(horizons) <= 0) or horizons[0] < 1:
        raise ValueError("horizons must be positive and strictly increasing")
    if horizons[-1] > log.horizon:
        raise ValueError("horizon exceeds log length")
    prob = _ComparatorProblem(log, oracle, i, int(horizons[-1]))
    actual = np.cumsum(log.R[:, i])
    regs, comps, empty = [], [], []
    for T in horizons:
        comp = prob.solve(int(T))
        regs.append(actual[T - 1] - prob.objective(comp.point, int(T)))
        comps.append(comp)
        empty.append(comp.empty)
    if any(empty):
        warnings.warn(f"player {i}: coupled comparator set empty at {sum(empty)} of {len(empty)} "
                      "horizons; fell back to the action set", EmptyComparatorSet, stacklevel=2)
    return RegretReport(i, horizons, np.array(regs), comps, np.array(empty))


def regret_all(log, oracle, horizons) -> list:
    return [regret(log, oracle, i, horizons) for i in range(log.n_players)]


def violation(log: TrajectoryLog, oracle: Optional[GameOracle] = None, horizons=None) -> ViolationReport:
    """R_g(T) = || [sum_{t<=T} g_t(x_t)]_+ ||_2 from the logged constraint values."""
    horizons = np.arange(1, log.horizon + 1) if horizons is None else np.asarray(horizons, dtype=int)
    cum = np.cumsum(log.C.sum(axis=1), axis=0)[horizons - 1]
    return ViolationReport(horizons, np.linalg.norm(np.maximum(cum, 0.0), axis=1), cum)


def tracking_error(log: TrajectoryLog, limit: LimitGame, averaged: bool = False,
                   gne: Optional[np.ndarray] = None) -> np.ndarray:
    """||x_t - x*|| per round, or ||mean_{s<=T} x_s - x*||^2 when averaged."""
    xstar = limit.gne if gne is None else gne
    if xstar is None:
        raise MissingGNE("limit game has no known variational GNE")
    x = log.x
    if averaged:
        avg = np.cumsum(x, axis=0) / np.arange(1, x.shape[0] + 1)[:, None]
        return np.sum((avg - xstar) ** 2, axis=1)
    return np.linalg.norm(x - xstar, axis=1)


def consensus_residual(log: TrajectoryLog, graph: CommGraph, bounds: GameBounds):
    """Per-round max_i ||mixed_i - mean|| and its consensus bound."""
    mix = log.lam_mix
    resid = np.max(np.linalg.norm(mix - mix.mean(axis=1, keepdims=True), axis=2), axis=1)
    geo = np.empty(log.horizon)
    acc = 0.0
    prev_gamma = 1.0  # gamma_0
    for r in range(log.horizon):
        acc = prev_gamma + graph.sigma * acc
        geo[r] = acc
        prev_gamma = log.gamma[r]
    bound = 2.0 * np.sqrt(log.n_players) * bounds.L * geo
    return resid, bound


def dual_bound_ratio(log: TrajectoryLog, bounds: GameBounds) -> np.ndarray:
    """Per-round max over players of ||lambda_i|| and ||mixed_i|| divided by L/beta_t."""
    cap = bounds.L / log.beta
    a = np.max(np.linalg.norm(log.lam, axis=2), axis=1)
    b = np.max(np.linalg.norm(log.lam_mix, axis=2), axis=1)
    return np.maximum(a, b) / cap


def sublinearity_fit(horizons, values, window=None, epsilon: float = 0.0) -> FitResult:
    """Least-squares slope of log(values) against log(T).

    By default the last half of the horizon grid is used; ``window=(lo, hi)``
    selects horizons in that closed range instead.  ``epsilon`` is added to
    every value (record it when a metric can be exactly zero).
    """
    h = np.asarray(horizons, dtype=float)
    v = np.asarray(values, dtype=float) + epsilon
    if window is None:
        sel = np.arange(h.size) >= h.size // 2
    else:
        sel = (h >= window[0]) & (h <= window[1])
    h, v = h[sel], v[sel]
    if h.size < 5:
        raise ValueError("need at least 5 horizons for a slope fit")
    if np.any(v <= 0):
        raise NonPositiveValues("log-log fit needs positive values; pass epsilon")
    lx, ly = np.log(h), np.log(v)
    slope, icpt = np.polyfit(lx, ly, 1)
    ss_res = float(np.sum((ly - (slope * lx + icpt)) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(r2), epsilon)
