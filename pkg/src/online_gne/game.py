"""Time-varying games with coupled constraints, their limit games, and the
Nash-Cournot benchmark.

Player indices are 0-based everywhere in code.  In the Nash-Cournot formulas
the firm number is ``k = i + 1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .bregman import FeasibleSet

OSCILLATING = "oscillating"
CONVERGING = "converging"


class NoConvergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# joint actions


@dataclass(frozen=True)
class ActionProfile:
    """Joint action stored as one flat vector with per-player block sizes."""

    flat: np.ndarray
    dims: tuple

    def __post_init__(self):
        if self.flat.shape != (sum(self.dims),):
            raise ValueError("flat vector does not match block dimensions")
        self.flat.setflags(write=False)
        object.__setattr__(self, "_off", (0,) + tuple(itertools.accumulate(self.dims)))

    @classmethod
    def from_blocks(cls, blocks: Sequence) -> "ActionProfile":
        blocks = [np.atleast_1d(np.asarray(b, dtype=float)) for b in blocks]
        return cls(np.concatenate(blocks), tuple(b.size for b in blocks))

    @property
    def offsets(self) -> tuple:
        return self._off

    @property
    def n_players(self) -> int:
        return len(self.dims)

    def block(self, i: int) -> np.ndarray:
        off = self.offsets
        return self.flat[off[i]:off[i + 1]]

    def blocks(self) -> list:
        off = self.offsets
        return [self.flat[off[i]:off[i + 1]] for i in range(len(self.dims))]

    def with_block(self, i: int, xi) -> "ActionProfile":
        off = self.offsets
        flat = self.flat.copy()
        flat[off[i]:off[i + 1]] = xi
        return ActionProfile(flat, self.dims)


@dataclass(frozen=True)
class GameBounds:
    L: float
    M: float
    mu_limit: float = 0.0
    Lambda: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.M > 0 and self.mu_limit >= 0 and self.Lambda > 0):
            raise ValueError("need L > 0, M > 0, mu_limit >= 0, Lambda > 0")


# ---------------------------------------------------------------------------
# oracle interface


class GameOracle:
    """Time-indexed cost and constraint oracle of an N-player game.

    Subclasses provide the four evaluators.  ``own_quadratic`` and
    ``constraint_affine`` are optional structure hints used by the hindsight
    comparator; returning ``None`` selects the generic solver.
    """

    n_players: int
    action_dims: tuple
    constraint_dim: int
    feasible_sets: tuple
    bounds: GameBounds
    # (p, q) decay orders of the stabilization gaps, when known
    gap_rates: Optional[tuple] = None

    def cost_value(self, i: int, t: int, x: ActionProfile) -> float:
        raise NotImplementedError

    def cost_grad(self, i: int, t: int, x: ActionProfile) -> np.ndarray:
        raise NotImplementedError

    def constraint_value(self, i: int, t: int, xi) -> np.ndarray:
        raise NotImplementedError

    def constraint_jacobian(self, i: int, t: int, xi) -> np.ndarray:
        """n_i x m matrix whose columns are the constraint gradients."""
        raise NotImplementedError

    def own_quadratic(self, i: int, t: int, x: ActionProfile):
        """(Q, c, k) with J_{i,t}(y, x_{-i}) = 0.5 y'Qy + c'y + k, or None."""
        return None

    def constraint_affine(self, i: int, t: int):
        """(G, h) with g_{i,t}(y) = G'y + h, or None."""
        return None

    def limit_game(self) -> Optional["LimitGame"]:
        return None

    def coupled_constraint(self, t: int, x: ActionProfile) -> np.ndarray:
        return sum(self.constraint_value(i, t, x.block(i)) for i in range(self.n_players))

    def zero_profile(self) -> ActionProfile:
        return ActionProfile(np.zeros(sum(self.action_dims)), tuple(self.action_dims))


# ---------------------------------------------------------------------------
# limit game and variational GNE


@dataclass
class LimitGame:
    """Strongly monotone game that a converging online game settles to."""

    action_dims: tuple
    constraint_dim: int
    feasible_sets: tuple
    pseudo_gradient: Callable[[np.ndarray], np.ndarray]
    constraint: Callable[[np.ndarray], np.ndarray]
    constraint_jacobian: Callable[[np.ndarray], np.ndarray]  # n x m
    mu: float
    gne: Optional[np.ndarray] = None
    player_constraint: Optional[Callable[[int, np.ndarray], np.ndarray]] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(sum(self.action_dims))

    def project(self, x: np.ndarray) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.action_dims)])
        return np.concatenate([s.project(x[off[i]:off[i + 1]])
                               for i, s in enumerate(self.feasible_sets)])

    def vi_residual(self, x: np.ndarray, lam: np.ndarray) -> float:
        """Natural-map residual of the KKT system of the variational GNE."""
        gx = self.constraint(x)
        Fx = self.pseudo_gradient(x) + self.constraint_jacobian(x) @ lam
        rx = x - self.project(x - Fx)
        rl = lam - np.maximum(lam + gx, 0.0)
        return float(np.sqrt(rx @ rx + rl @ rl))


def limit_gne_bruteforce(limit: LimitGame, tol: float = 1e-10, x0=None,
                         max_iter: int = 200_000) -> np.ndarray:
    """Variational GNE of ``limit`` by extragradient on the Lagrangian saddle.

    Works on the joint operator (F(x) + Jg(x) lam, -g(x)) over the product of
    the action sets and the nonnegative orthant, with a Khobotov-style
    backtracking step.  Raises :class:`NoConvergence` if the natural residual
    does not reach ``tol``.
    """
    x = limit.project(np.zeros(limit.n) if x0 is None else np.asarray(x0, dtype=float))
    lam = np.zeros(limit.constraint_dim)

    def op(x, lam):
        return (limit.pseudo_gradient(x) + limit.constraint_jacobian(x) @ lam,
                -limit.constraint(x))

    tau = 1.0
    nu = 0.9
    for _ in range(max_iter):
        if limit.vi_residual(x, lam) <= tol:
            return x
        fx, fl = op(x, lam)
        while True:
            xb = limit.project(x - tau * fx)
            lb = np.maximum(lam - tau * fl, 0.0)
            fxb, flb = op(xb, lb)
            num = np.sqrt(np.sum((fxb - fx) ** 2) + np.sum((flb - fl) ** 2))
            den = np.sqrt(np.sum((xb - x) ** 2) + np.sum((lb - lam) ** 2))
            if tau * num <= nu * den or den == 0.0:
                break
            tau *= 0.5
        x = limit.project(x - tau * fxb)
        lam = np.maximum(lam - tau * flb, 0.0)
        # let the step grow again after easy iterations
        tau = min(tau * 1.2, 1e3)
    raise NoConvergence("extragradient did not reach the requested VI residual; "
                        "check mu and the coupled constraint")


def _product_samples(sets, n_samples: int, seed: int) -> np.ndarray:
    n = sum(s.dimension for s in sets)
    lo = np.concatenate([s.bounding_box()[0] for s in sets])
    hi = np.concatenate([s.bounding_box()[1] for s in sets])
    m = max(int(np.ceil(np.log2(max(n_samples, 2)))), 1)
    pts = qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(m)[:n_samples]
    pts = qmc.scale(pts, lo, hi) if n > 0 else pts
    if n <= 10:
        corners = np.array(list(itertools.product(*zip(lo, hi))))
    else:
        corners = np.vstack([lo, hi])
    pts = np.vstack([pts, corners])
    off = np.concatenate([[0], np.cumsum([s.dimension for s in sets])])
    for k, s in enumerate(sets):
        if s.kind != "box":
            sl = slice(off[k], off[k + 1])
            pts[:, sl] = np.array([s.project(p) for p in pts[:, sl]])
    return pts


def stabilization_gaps(oracle: GameOracle, limit: LimitGame, t: int,
                       n_samples: int = 1024, seed: int = 0):
    """Sampled estimates of (max_i H_{i,t}, K_t).

    Maxima are taken over Sobol points plus box corners, so the values are
    lower bounds on the true suprema (exact when the gaps are constant or
    affine in x, as for Nash-Cournot).
    """
    pts = _product_samples(oracle.feasible_sets, n_samples, seed)
    dims = tuple(oracle.action_dims)
    off = np.concatenate([[0], np.cumsum(dims)])
    H = 0.0
    K = 0.0
    for p in pts:
        x = ActionProfile(p.copy(), dims)
        F = limit.pseudo_gradient(p)
        for i in range(oracle.n_players):
            d = oracle.cost_grad(i, t, x) - F[off[i]:off[i + 1]]
            H = max(H, float(np.linalg.norm(d)))
        K = max(K, float(np.linalg.norm(oracle.coupled_constraint(t, x) - limit.constraint(p))))
    return H, K


# ---------------------------------------------------------------------------
# quadratic games


def time_profile(kind: str, period: float) -> Callable[[float], float]:
    if kind == "none":
        return lambda t: 0.0
    if kind == "sin(t/P)":
        return lambda t: float(np.sin(t / period))
    if kind == "sin(P/t)":
        return lambda t: float(np.sin(period / t))
    raise ValueError(f"unknown time profile {kind!r}")


class QuadraticGame(GameOracle):
    """Declarative quadratic game with affine coupled constraints.

    Costs are J_{i,t}(x) = 0.5 x_i'Q_ii x_i + x_i' sum_{j!=i} Q_ij x_j
    + (q0_i + h(t) q1_i)'x_i and local constraints
    g_{i,t}(x_i) = G_i'x_i - (b0_i + h(t) b1_i), with a scalar time profile
    ``h`` in [-1, 1].
    """

    def __init__(self, dims, Q, q0, q1, G, b0, b1, feasible_sets,
                 profile: str = "none", period: float = 12.0, Lambda: float = 1.0):
        self.action_dims = tuple(int(d) for d in dims)
        self.n_players = len(self.action_dims)
        n = sum(self.action_dims)
        self.Q = np.asarray(Q, dtype=float).reshape(n, n)
        self.q0 = np.asarray(q0, dtype=float).reshape(n)
        self.q1 = np.asarray(q1, dtype=float).reshape(n)
        self.G = [np.atleast_2d(np.asarray(g, dtype=float)) for g in G]
        self.constraint_dim = self.G[0].shape[1]
        for i, g in enumerate(self.G):
            if g.shape != (self.action_dims[i], self.constraint_dim):
                raise ValueError(f"G[{i}] must have shape (n_i, m)")
        self.b0 = np.asarray(b0, dtype=float).reshape(self.n_players, self.constraint_dim)
        self.b1 = np.asarray(b1, dtype=float).reshape(self.n_players, self.constraint_dim)
        self.feasible_sets = tuple(feasible_sets)
        if [s.dimension for s in self.feasible_sets] != list(self.action_dims):
            raise ValueError("feasible set dimensions do not match action dimensions")
        self._off = np.concatenate([[0], np.cumsum(self.action_dims)])
        for i in range(self.n_players):
            sl = self._sl(i)
            Qii = self.Q[sl, sl]
            if np.min(np.linalg.eigvalsh(0.5 * (Qii + Qii.T))) < -1e-12:
                raise ValueError(f"player {i} cost is not convex in its own action")
        self.profile_kind = profile
        self.period = float(period)
        self.h = time_profile(profile, period)
        if profile == "sin(P/t)":
            self.gap_rates = (1.0, 1.0)
        sym = 0.5 * (self.Q + self.Q.T)
        self._mu = max(float(np.min(np.linalg.eigvalsh(sym))), 0.0)
        self.bounds = self._analytic_bounds(Lambda)

    def _sl(self, i):
        return slice(self._off[i], self._off[i + 1])

    def _analytic_bounds(self, Lambda):
        r = [s.max_norm() for s in self.feasible_sets]
        L = 1.01 * np.sqrt(np.sum(np.square(r)))
        M = 0.0
        for i in range(self.n_players):
            sl = self._sl(i)
            cross = sum(np.linalg.norm(self.Q[sl, self._sl(j)], 2) * r[j]
                        for j in range(self.n_players) if j != i)
            qn = np.linalg.norm(self.q0[sl]) + np.linalg.norm(self.q1[sl])
            Qii = np.linalg.norm(self.Q[sl, sl], 2)
            L = max(L, 0.5 * Qii * r[i] ** 2 + r[i] * cross + qn * r[i])
            Gn = np.linalg.norm(self.G[i], 2)
            L = max(L, Gn * r[i] + np.linalg.norm(self.b0[i]) + np.linalg.norm(self.b1[i]))
            M = max(M, Qii * r[i] + cross + qn, Gn)
        return GameBounds(L=float(L) * 1.01, M=float(max(M, 1e-12)) * 1.01,
                          mu_limit=self._mu if self.profile_kind != "sin(t/P)" else 0.0,
                          Lambda=Lambda)

    def _linear(self, i, t, x: ActionProfile):
        sl = self._sl(i)
        xf = x.flat
        cross = self.Q[sl, :] @ xf - self.Q[sl, sl] @ xf[sl]
        return cross + self.q0[sl] + self.h(t) * self.q1[sl]

    def cost_value(self, i, t, x):
        sl = self._sl(i)
        xi = x.flat[sl]
        return float(0.5 * xi @ self.Q[sl, sl] @ xi + xi @ self._linear(i, t, x))

    def cost_grad(self, i, t, x):
        sl = self._sl(i)
        Qii = self.Q[sl, sl]
        xi = x.flat[sl]
        return 0.5 * (Qii + Qii.T) @ xi + self._linear(i, t, x)

    def constraint_value(self, i, t, xi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return self.G[i].T @ xi - (self.b0[i] + self.h(t) * self.b1[i])

    def constraint_jacobian(self, i, t, xi):
        return self.G[i].copy()

    def own_quadratic(self, i, t, x):
        sl = self._sl(i)
        Qii = self.Q[sl, sl]
        return 0.5 * (Qii + Qii.T), self._linear(i, t, x), 0.0

    def constraint_affine(self, i, t):
        return self.G[i], -(self.b0[i] + self.h(t) * self.b1[i])

    def limit_game(self):
        if self.profile_kind == "sin(t/P)":
            return None
        Gfull = np.vstack(self.G)
        b = self.b0.sum(axis=0)
        return LimitGame(
            action_dims=self.action_dims,
            constraint_dim=self.constraint_dim,
            feasible_sets=self.feasible_sets,
            pseudo_gradient=lambda x: self._block_sym_diag() @ x + self._offdiag() @ x + self.q0,
            constraint=lambda x: Gfull.T @ x - b,
            constraint_jacobian=lambda x: Gfull,
            mu=self._mu,
        )

    def _block_sym_diag(self):
        D = np.zeros_like(self.Q)
        for i in range(self.n_players):
            sl = self._sl(i)
            D[sl, sl] = 0.5 * (self.Q[sl, sl] + self.Q[sl, sl].T)
        return D

    def _offdiag(self):
        O = self.Q.copy()
        for i in range(self.n_players):
            sl = self._sl(i)
            O[sl, sl] = 0.0
        return O


# ---------------------------------------------------------------------------
# Nash-Cournot benchmark

COURNOT_LOWER = 0.0
COURNOT_UPPER = 30.0


class NashCournot(GameOracle):
    """Time-varying Nash-Cournot market with a shared capacity constraint.

    Firm k = i + 1 pays production cost x_i (s_t + 1) and receives price
    22 + k/9 - 0.5 k s_t - sum_j x_j, so
    J_{i,t}(x) = x_i (s_t + 1) - x_i (22 + k/9 - 0.5 k s_t - sum_j x_j).
    Capacity: g_{i,t}(x_i) = x_i - (2 + s_t).  Here s_t = sin(t/12) for the
    oscillating variant and sin(12/t) for the converging one.
    """

    def __init__(self, variant: str = OSCILLATING, n_players: int = 20,
                 interior_point: float = 3.0, interior_radius: float = 1.5,
                 Lambda: float = 1.0):
        if variant not in (OSCILLATING, CONVERGING):
            raise ValueError(f"unknown Nash-Cournot variant {variant!r}")
        if n_players < 2:
            raise ValueError("Nash-Cournot needs at least two firms")
        self.variant = variant
        self.n_players = int(n_players)
        self.action_dims = (1,) * self.n_players
        self.constraint_dim = 1
        self.firm = np.arange(1, self.n_players + 1, dtype=float)
        box = FeasibleSet.box([COURNOT_LOWER], [COURNOT_UPPER],
                              interior_point=[interior_point], interior_radius=interior_radius)
        self.feasible_sets = (box,) * self.n_players
        if variant == CONVERGING:
            self.gap_rates = (1.0, 1.0)
        self.bounds = self._exact_bounds(Lambda)

    def s(self, t: float) -> float:
        if self.variant == OSCILLATING:
            return float(np.sin(t / 12.0))
        return float(np.sin(12.0 / t))

    def _q(self, i: int, s: float) -> float:
        k = self.firm[i]
        return (s + 1.0) - (22.0 + k / 9.0 - 0.5 * k * s)

    def _exact_bounds(self, Lambda):
        # J is affine in (s, S_{-i}) and convex in x_i, so |J| and |grad| peak on
        # vertices of the (s, S_{-i}) box with x_i at 0, 30 or the clipped vertex.
        N = self.n_players
        others = (0.0, COURNOT_UPPER * (N - 1))
        supJ = supG = 0.0
        for i in range(N):
            for s, S in itertools.product((-1.0, 1.0), others):
                q = self._q(i, s)
                cands = {COURNOT_LOWER, COURNOT_UPPER,
                         float(np.clip(-(S + q) / 2.0, COURNOT_LOWER, COURNOT_UPPER))}
                for xi in cands:
                    supJ = max(supJ, abs(xi * xi + xi * S + q * xi))
                    supG = max(supG, abs(2 * xi + S + q))
        supg = max(abs(COURNOT_UPPER - 1.0), abs(COURNOT_LOWER - 3.0))
        L = 1.01 * max(COURNOT_UPPER * np.sqrt(N), supJ, supg)
        M = 1.01 * max(supG, 1.0)
        return GameBounds(L=float(L), M=float(M),
                          mu_limit=1.0 if self.variant == CONVERGING else 0.0, Lambda=Lambda)

    def cost_value(self, i, t, x):
        s = self.s(t)
        xi = x.flat[i]
        k = self.firm[i]
        return float(xi * (s + 1.0) - xi * (22.0 + k / 9.0 - 0.5 * k * s - x.flat.sum()))

    def cost_grad(self, i, t, x):
        s = self.s(t)
        return np.array([self._q(i, s) + x.flat.sum() + x.flat[i]])

    def constraint_value(self, i, t, xi):
        return np.atleast_1d(np.asarray(xi, dtype=float)) - (2.0 + self.s(t))

    def constraint_jacobian(self, i, t, xi):
        return np.ones((1, 1))

    def own_quadratic(self, i, t, x):
        others = x.flat.sum() - x.flat[i]
        return np.array([[2.0]]), np.array([others + self._q(i, self.s(t))]), 0.0

    def constraint_affine(self, i, t):
        return np.ones((1, 1)), np.array([-(2.0 + self.s(t))])

    def limit_game(self):
        if self.variant != CONVERGING:
            return None
        N = self.n_players
        q = np.array([self._q(i, 0.0) for i in range(N)])
        return LimitGame(
            action_dims=self.action_dims,
            constraint_dim=1,
            feasible_sets=self.feasible_sets,
            pseudo_gradient=lambda x: q + x.sum() + x,
            constraint=lambda x: np.array([x.sum() - 2.0 * N]),
            constraint_jacobian=lambda x: np.ones((N, 1)),
            mu=1.0,
            gne=closed_form_gne_profile(N, None),
        )

    def as_quadratic(self) -> QuadraticGame:
        """Same game written in the declarative quadratic schema."""
        N = self.n_players
        k = self.firm
        return QuadraticGame(
            dims=self.action_dims,
            Q=np.eye(N) + np.ones((N, N)),
            q0=-21.0 - k / 9.0,
            q1=1.0 + 0.5 * k,
            G=[np.ones((1, 1))] * N,
            b0=np.full((N, 1), 2.0),
            b1=np.ones((N, 1)),
            feasible_sets=self.feasible_sets,
            profile="sin(t/P)" if self.variant == OSCILLATING else "sin(P/t)",
            period=12.0,
        )


def nash_cournot(variant: str = OSCILLATING, n_players: int = 20, **kw) -> NashCournot:
    return NashCournot(variant, n_players, **kw)


def closed_form_gne(i: int, t: Optional[float], variant: str = OSCILLATING) -> float:
    """Reference GNE formula for firm ``i + 1``, clipped to [0, 30].

    ``xi = (k-1)/9 + (5 - 1/21 - k/2) s`` with s = sin(t/12), sin(12/t) for the
    converging variant, or 0 when ``t`` is None (the limit game).  The formula
    ignores the capacity constraint and the clipping of other firms, so it is
    only exact when neither is active (always the case for s = 0, N = 20).
    """
    k = i + 1
    if t is None:
        s = 0.0
    elif variant == OSCILLATING:
        s = float(np.sin(t / 12.0))
    else:
        s = float(np.sin(12.0 / t))
    xi = (k - 1) / 9.0 + (5.0 - 1.0 / 21.0 - k / 2.0) * s
    return float(np.clip(xi, COURNOT_LOWER, COURNOT_UPPER))


def closed_form_gne_profile(n_players: int, t: Optional[float],
                            variant: str = OSCILLATING) -> np.ndarray:
    return np.array([closed_form_gne(i, t, variant) for i in range(n_players)])


def check_gradients(oracle: GameOracle, rng: np.random.Generator, n_probes: int = 10,
                    t_max: int = 1000, h: float = 1e-5, tol: float = 1e-4):
    """Central finite-difference check of cost and constraint gradients.

    Returns the worst absolute discrepancy; raises ValueError above ``tol``.
    """
    worst = 0.0
    for _ in range(n_probes):
        t = int(rng.integers(1, t_max + 1))
        blocks = []
        for s in oracle.feasible_sets:
            p = s.sample(rng, 1)[0]
            # pull towards the interior so +-h stays feasible
            blocks.append(0.9 * p + 0.1 * s.interior_point)
        x = ActionProfile.from_blocks(blocks)
        for i in range(oracle.n_players):
            xi = x.block(i)
            grad = oracle.cost_grad(i, t, x)
            jac = oracle.constraint_jacobian(i, t, xi)
            for j in range(xi.size):
                e = np.zeros(xi.size)
                e[j] = h
                fp = oracle.cost_value(i, t, x.with_block(i, xi + e))
                fm = oracle.cost_value(i, t, x.with_block(i, xi - e))
                worst = max(worst, abs((fp - fm) / (2 * h) - grad[j]))
                gp = oracle.constraint_value(i, t, xi + e)
                gm = oracle.constraint_value(i, t, xi - e)
                worst = max(worst, float(np.max(np.abs((gp - gm) / (2 * h) - jac[j]))))
    if worst > tol:
        raise ValueError(f"oracle gradients disagree with finite differences (worst {worst:.3g})")
    return worst
