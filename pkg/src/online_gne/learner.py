"""Decentralized online primal-dual dynamic mirror descent (gradient feedback)."""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bregman import MirrorMap, FeasibleSet, mirror_step, default_map, SQUARED_NORM
from .game import ActionProfile, GameOracle, GameBounds
from .graph import CommGraph, mix_duals
from .trajectory import TrajectoryLog, _LogBuilder

REGRET = "regret"
TRACKING = "tracking"
AVERAGED = "averaged"

BOUND_RTOL = 1e-9
ZERO = "zero"
RANDOM = "random"


class ScheduleError(ValueError):
    pass


class ScheduleExhausted(RuntimeError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """Power-law stepsizes alpha_t = t^-e1, beta_t = t^-e2, gamma_t = t^-(1-e2).

    ``mode`` selects which exponent conditions are enforced:

    * ``regret``:   0 < 2 e2 < e1 < 1
    * ``tracking``: 0 < e2 < 0.5, 0.5 + e2 < e1 <= 1, e1 + e2 > 1, and with
      gap orders (p, q): e1 + p > 1, e1 - e2 + q > 1
    * ``averaged``: 0 < 2 e2 < e1 < 1 and e2 < q

    All three sequences equal 1 at t = 0.
    """

    primal_exp: float
    dual_exp: float
    mode: str = REGRET
    gap_rates: Optional[tuple] = None
    horizon: Optional[int] = None

    def __post_init__(self):
        e1, e2 = self.primal_exp, self.dual_exp
        if self.mode == REGRET:
            ok = 0 < 2 * e2 < e1 < 1
            why = "need 0 < 2*a2 < a1 < 1"
        elif self.mode == TRACKING:
            ok = 0 < e2 < 0.5 and 0.5 + e2 < e1 <= 1 and e1 + e2 > 1
            why = "need 0 < b2 < 0.5, 0.5 + b2 < b1 <= 1, b1 + b2 > 1"
            if ok and self.gap_rates is not None:
                p, q = self.gap_rates
                ok = e1 + p > 1 and e1 - e2 + q > 1
                why = "need b1 + p > 1 and b1 - b2 + q > 1"
        elif self.mode == AVERAGED:
            ok = 0 < 2 * e2 < e1 < 1
            why = "need 0 < 2*b2 < b1 < 1"
            if ok and self.gap_rates is not None:
                ok = e2 < self.gap_rates[1]
                why = "need b2 < q"
        else:
            raise ScheduleError(f"unknown schedule mode {self.mode!r}")
        if not ok:
            raise ScheduleError(f"{self.mode} exponents ({e1}, {e2}) rejected: {why}")
        if self.horizon is not None:
            self.check_dual_chain(self.horizon)

    def alpha(self, t: int) -> float:
        return 1.0 if t == 0 else float(t) ** (-self.primal_exp)

    def beta(self, t: int) -> float:
        return 1.0 if t == 0 else float(t) ** (-self.dual_exp)

    def gamma(self, t: int) -> float:
        return 1.0 if t == 0 else float(t) ** (-(1.0 - self.dual_exp))

    def check_dual_chain(self, horizon: int):
        """Verify 1/gamma_t - 1/gamma_{t-1} - beta_t <= 0 for 1 <= t <= horizon."""
        t = np.arange(1, horizon + 1, dtype=float)
        inv = t ** (1.0 - self.dual_exp)
        prev = np.concatenate([[1.0], inv[:-1]])
        slack = inv - prev - t ** (-self.dual_exp)
        bad = np.flatnonzero(slack > 1e-12)
        if bad.size:
            raise ScheduleError(f"dual stepsize chain fails at t = {int(t[bad[0]])}")


@dataclass(frozen=True)
class LearnerState:
    t: int
    actions: ActionProfile
    duals: np.ndarray  # (N, m)


@dataclass(frozen=True)
class FeedbackBundle:
    R: float
    C: np.ndarray
    V: np.ndarray
    G: np.ndarray  # n_i x m


def default_maps(sets: Sequence[FeasibleSet], kind: str = SQUARED_NORM):
    return tuple(default_map(kind, s) for s in sets)


def init_state(oracle: GameOracle, seed: int = 0, init: str = ZERO) -> LearnerState:
    """Round-1 state: duals at zero, actions at the projected origin or random."""
    sets = oracle.feasible_sets
    if init == ZERO:
        blocks = [s.project(np.zeros(s.dimension)) for s in sets]
    elif init == RANDOM:
        blocks = []
        for i, s in enumerate(sets):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, i)))
            blocks.append(s.sample(rng, 1)[0])
    else:
        raise ValueError(f"unknown init {init!r}")
    duals = np.zeros((oracle.n_players, oracle.constraint_dim))
    return LearnerState(1, ActionProfile.from_blocks(blocks), duals)


def collect_feedback(oracle: GameOracle, state: LearnerState) -> list:
    x, t = state.actions, state.t
    out = []
    for i in range(oracle.n_players):
        xi = x.block(i)
        out.append(FeedbackBundle(
            R=oracle.cost_value(i, t, x),
            C=np.atleast_1d(oracle.constraint_value(i, t, xi)),
            V=np.atleast_1d(oracle.cost_grad(i, t, x)),
            G=np.atleast_2d(oracle.constraint_jacobian(i, t, xi)),
        ))
    return out


def player_update(mmap: MirrorMap, fset: FeasibleSet, xi, V, G, C, lam_mix_i,
                  alpha: float, beta: float, gamma: float):
    """Primal mirror step and regularized dual ascent for one player."""
    x_new = mirror_step(mmap, fset, xi, V + G @ lam_mix_i, alpha)
    lam_new = np.maximum(0.0, lam_mix_i + gamma * (C - beta * lam_mix_i))
    return x_new, lam_new


def _map_players(fn, n, executor: Optional[Executor]):
    if executor is None:
        return [fn(i) for i in range(n)]
    return list(executor.map(fn, range(n)))


def _advance(state, feedback, graph, schedule, maps, sets, executor=None):
    t = state.t
    if schedule.horizon is not None and t > schedule.horizon:
        raise ScheduleExhausted(f"round {t} is past the declared horizon {schedule.horizon}")
    mixed = mix_duals(graph, state.duals)
    a, b, g = schedule.alpha(t), schedule.beta(t), schedule.gamma(t)

    def upd(i):
        fb = feedback[i]
        return player_update(maps[i], sets[i], state.actions.block(i), fb.V, fb.G, fb.C,
                             mixed[i], a, b, g)

    res = _map_players(upd, graph.n_players, executor)
    new_x = ActionProfile.from_blocks([r[0] for r in res])
    new_lam = np.vstack([r[1] for r in res])
    return LearnerState(t + 1, new_x, new_lam), mixed


def step(state: LearnerState, feedback, graph: CommGraph, schedule: StepSchedule,
         maps, sets, executor: Optional[Executor] = None) -> LearnerState:
    """One synchronous round: every player reads round-t state, writes round t+1."""
    return _advance(state, feedback, graph, schedule, maps, sets, executor)[0]


class InvariantMonitor:
    """Online checks of the dual bounds and primal feasibility.

    Checks ||lambda_i|| <= L/beta_t, ||mixed_i|| <= L/beta_t and
    max_i ||mixed_i - mean|| <= 2 sqrt(N) L sum_s sigma^s gamma_{t-1-s}.
    """

    def __init__(self, graph: CommGraph, bounds: GameBounds, schedule: StepSchedule, sets):
        self.graph = graph
        self.L = bounds.L
        self.schedule = schedule
        self.sets = sets
        self._geo = 0.0  # sum_{s<t} sigma^s gamma_{t-1-s}
        self.violations = []

    def consensus_bound(self) -> float:
        return 2.0 * np.sqrt(self.graph.n_players) * self.L * self._geo

    def check(self, state: LearnerState, mixed: np.ndarray, raise_on_fail: bool = True):
        t = state.t
        self._geo = self.schedule.gamma(t - 1) + self.graph.sigma * self._geo
        cap = self.L / self.schedule.beta(t) * (1.0 + BOUND_RTOL)
        msgs = []
        if np.max(np.linalg.norm(state.duals, axis=1)) > cap:
            msgs.append(f"t={t}: ||lambda_i|| exceeds L/beta_t [dual-bound]")
        if np.max(np.linalg.norm(mixed, axis=1)) > cap:
            msgs.append(f"t={t}: ||mixed lambda_i|| exceeds L/beta_t [mixed-dual-bound]")
        if np.any(state.duals < 0):
            msgs.append(f"t={t}: negative dual entry [dual-sign]")
        resid = np.max(np.linalg.norm(mixed - mixed.mean(axis=0), axis=1))
        if resid > self.consensus_bound() * (1.0 + BOUND_RTOL) + 1e-12:
            msgs.append(f"t={t}: consensus residual {resid:.3g} exceeds its bound [consensus-bound]")
        for i, s in enumerate(self.sets):
            if not s.contains(state.actions.block(i)):
                msgs.append(f"t={t}: player {i} action left its feasible set [primal-feasibility]")
        if msgs:
            self.violations.extend(msgs)
            if raise_on_fail:
                raise InvariantViolation("; ".join(msgs))


def run(oracle: GameOracle, graph: CommGraph, schedule: StepSchedule, maps=None, sets=None,
        horizon: int = 1, seed: int = 0, init: str = ZERO, check_invariants: bool = True,
        executor: Optional[Executor] = None) -> TrajectoryLog:
    """Play ``horizon`` rounds of the full-information learner and log them."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    sets = tuple(oracle.feasible_sets if sets is None else sets)
    maps = default_maps(sets) if maps is None else tuple(maps)
    if graph.n_players != oracle.n_players:
        raise ValueError("graph and game disagree on the number of players")
    state = init_state(oracle, seed, init)
    monitor = InvariantMonitor(graph, oracle.bounds, schedule, sets) if check_invariants else None
    log = _LogBuilder(oracle.action_dims, oracle.constraint_dim, horizon)
    for r in range(horizon):
        fb = collect_feedback(oracle, state)
        new_state, mixed = _advance(state, fb, graph, schedule, maps, sets, executor)
        if monitor is not None:
            monitor.check(state, mixed)
        t = state.t
        log.x[r] = state.actions.flat
        log.lam[r] = state.duals
        log.lam_mix[r] = mixed
        log.R[r] = [f.R for f in fb]
        log.C[r] = [f.C for f in fb]
        log.sched[r] = (schedule.alpha(t), schedule.beta(t), schedule.gamma(t))
        state = new_state
    return log.finish({"kind": "full", "seed": seed, "init": init})
