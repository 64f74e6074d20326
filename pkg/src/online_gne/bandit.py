"""Payoff-based learner: one-point gradient estimates at shrunk query points."""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .game import ActionProfile, GameOracle
from .graph import CommGraph, mix_duals
from .learner import (
    REGRET, ZERO, InvariantMonitor, InvariantViolation, LearnerState, ScheduleError,
    ScheduleExhausted, StepSchedule, _map_players, default_maps, init_state, player_update,
)
from .trajectory import TrajectoryLog, _LogBuilder

RNG_ALGORITHM = "numpy PCG64 seeded by SeedSequence(seed, spawn_key=(1, t, i))"
DELTA_CAP = 0.99


class RadiusViolation(ValueError):
    pass


@dataclass(frozen=True)
class BanditConfig:
    """Exponents and query geometry of the payoff-based learner.

    The query radius is delta_{i,t} = min(0.99 r_i, c_i t^-d3) with
    c_i = ``delta_scale[i]`` (default 0.99 r_i).
    """

    d1: float
    d2: float
    d3: float
    interior_points: tuple
    interior_radii: tuple
    delta_scale: Optional[tuple] = None
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 < 2 * self.d2 < self.d1 < 1):
            raise ScheduleError(f"bandit exponents rejected: need 0 < 2*d2 < d1 < 1, got "
                                f"d1={self.d1}, d2={self.d2}")
        if not (self.d2 < self.d3 < self.d1):
            raise ScheduleError(f"bandit exponents rejected: need d2 < d3 < d1, got "
                                f"d2={self.d2}, d3={self.d3}, d1={self.d1}")
        if any(r <= 0 for r in self.interior_radii):
            raise RadiusViolation("interior radii must be positive")
        if self.delta_scale is not None:
            for c, r in zip(self.delta_scale, self.interior_radii):
                if not 0 < c < r:
                    raise RadiusViolation(f"delta scale {c} must lie in (0, r_i = {r})")

    @classmethod
    def for_sets(cls, sets, d1, d2, d3, delta_scale=None, rng_seed=0):
        for s in sets:
            if not s.full_dimensional:
                raise RadiusViolation(f"{s.kind} sets have no interior ball for query points")
        pts = tuple(np.array(s.interior_point) for s in sets)
        radii = tuple(float(s.interior_radius) for s in sets)
        if delta_scale is not None and np.isscalar(delta_scale):
            delta_scale = (float(delta_scale),) * len(sets)
        return cls(d1, d2, d3, pts, radii, delta_scale, rng_seed)

    def schedule(self, horizon=None) -> StepSchedule:
        return StepSchedule(self.d1, self.d2, REGRET, horizon=horizon)

    def delta(self, i: int, t: int) -> float:
        r = self.interior_radii[i]
        c = DELTA_CAP * r if self.delta_scale is None else self.delta_scale[i]
        return min(DELTA_CAP * r, c * float(t) ** (-self.d3))


@dataclass(frozen=True)
class PerturbationDraw:
    """Direction sign * e_coord."""

    coord: int
    sign: int
    dim: int

    @property
    def vector(self) -> np.ndarray:
        w = np.zeros(self.dim)
        w[self.coord] = float(self.sign)
        return w

    @property
    def code(self) -> int:
        return self.sign * (self.coord + 1)


def draw_direction(seed: int, t: int, i: int, dim: int) -> PerturbationDraw:
    """Uniform draw from {+-e_1, ..., +-e_dim}, keyed by (seed, round, player)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, t, i)))
    k = int(rng.integers(0, 2 * dim))
    return PerturbationDraw(coord=k // 2, sign=1 if k % 2 == 0 else -1, dim=dim)


def query_point(x, delta: float, r: float, p, w) -> np.ndarray:
    """(1 - delta/r) x + (delta/r)(p + r w): shrink towards p, then perturb."""
    if not 0 < delta < r:
        raise RadiusViolation(f"query radius {delta} must lie in (0, r = {r})")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    return x - (delta / r) * (x - p) + delta * w


def estimate_gradients(J_hat: float, g_hat, n_i: int, delta: float, w):
    """One-point estimates (n/delta) J w and (n/delta) g_j w for each column j."""
    w = np.asarray(w, dtype=float)
    g_hat = np.atleast_1d(np.asarray(g_hat, dtype=float))
    scale = n_i / delta
    return scale * J_hat * w, scale * np.outer(w, g_hat)


def _advance_bandit(state, oracle, graph, schedule, bandit, maps, sets, executor=None):
    t = state.t
    if schedule.horizon is not None and t > schedule.horizon:
        raise ScheduleExhausted(f"round {t} is past the declared horizon {schedule.horizon}")
    N = oracle.n_players
    draws = [draw_direction(bandit.rng_seed, t, i, oracle.action_dims[i]) for i in range(N)]
    deltas = [bandit.delta(i, t) for i in range(N)]
    x_hat = ActionProfile.from_blocks([
        query_point(state.actions.block(i), deltas[i], bandit.interior_radii[i],
                    bandit.interior_points[i], draws[i].vector)
        for i in range(N)
    ])
    J_hat = np.array([oracle.cost_value(i, t, x_hat) for i in range(N)])
    g_hat = [np.atleast_1d(oracle.constraint_value(i, t, x_hat.block(i))) for i in range(N)]
    mixed = mix_duals(graph, state.duals)
    a, b, g = schedule.alpha(t), schedule.beta(t), schedule.gamma(t)
    grads = [estimate_gradients(J_hat[i], g_hat[i], oracle.action_dims[i], deltas[i],
                                draws[i].vector) for i in range(N)]

    def upd(i):
        V, G = grads[i]
        return player_update(maps[i], sets[i], state.actions.block(i), V, G, g_hat[i],
                             mixed[i], a, b, g)

    res = _map_players(upd, N, executor)
    new_state = LearnerState(t + 1, ActionProfile.from_blocks([r[0] for r in res]),
                             np.vstack([r[1] for r in res]))
    return new_state, dict(mixed=mixed, x_hat=x_hat, J_hat=J_hat, g_hat=g_hat,
                           draws=draws, deltas=deltas, grads=grads)


def step_bandit(state: LearnerState, oracle: GameOracle, graph: CommGraph,
                schedule: StepSchedule, bandit: BanditConfig, maps, sets,
                executor: Optional[Executor] = None) -> LearnerState:
    return _advance_bandit(state, oracle, graph, schedule, bandit, maps, sets, executor)[0]


def run_bandit(oracle: GameOracle, graph: CommGraph, schedule: StepSchedule,
               bandit: BanditConfig, maps=None, sets=None, horizon: int = 1, seed: int = 0,
               init: str = ZERO, check_invariants: bool = True,
               executor: Optional[Executor] = None) -> TrajectoryLog:
    """Play ``horizon`` payoff-based rounds; regret is measured on ``x_hat``.

    ``seed`` fixes the initial actions; the perturbation stream is keyed by
    ``bandit.rng_seed``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    sets = tuple(oracle.feasible_sets if sets is None else sets)
    maps = default_maps(sets) if maps is None else tuple(maps)
    state = init_state(oracle, seed, init)
    monitor = InvariantMonitor(graph, oracle.bounds, schedule, sets) if check_invariants else None
    log = _LogBuilder(oracle.action_dims, oracle.constraint_dim, horizon, bandit=True)
    L = oracle.bounds.L
    for r in range(horizon):
        new_state, info = _advance_bandit(state, oracle, graph, schedule, bandit, maps, sets,
                                          executor)
        t = state.t
        if monitor is not None:
            monitor.check(state, info["mixed"])
            for i, s in enumerate(sets):
                if not s.contains(info["x_hat"].block(i)):
                    raise InvariantViolation(f"t={t}: query point of player {i} is infeasible")
                cap = oracle.action_dims[i] * L / info["deltas"][i]
                if np.linalg.norm(info["grads"][i][0]) > cap * (1 + 1e-9):
                    raise InvariantViolation(f"t={t}: cost-gradient estimate exceeds n_i L / delta")
        log.x[r] = state.actions.flat
        log.x_hat[r] = info["x_hat"].flat
        log.lam[r] = state.duals
        log.lam_mix[r] = info["mixed"]
        log.R[r] = info["J_hat"]
        log.C[r] = info["g_hat"]
        log.direction[r] = [d.code for d in info["draws"]]
        log.delta[r] = info["deltas"]
        log.sched[r] = (schedule.alpha(t), schedule.beta(t), schedule.gamma(t))
        state = new_state
    return log.finish({"kind": "bandit", "seed": seed, "init": init,
                       "rng_seed": bandit.rng_seed, "rng": RNG_ALGORITHM})
