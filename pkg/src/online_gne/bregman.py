"""Mirror maps, Bregman divergences and the constrained mirror step."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ENTROPY_FLOOR = 1e-12
MEMBERSHIP_TOL = 1e-10

SQUARED_NORM = "squared-norm"
NEGATIVE_ENTROPY = "negative-entropy"


class DomainViolation(ValueError):
    pass


class NoClosedForm(NotImplementedError):
    pass


# ---------------------------------------------------------------------------
# feasible sets


@dataclass(frozen=True)
class FeasibleSet:
    """Compact convex action set: a box, a scaled simplex or a Euclidean ball.

    ``interior_point`` and ``interior_radius`` describe a ball contained in the
    set (for the simplex, a ball inside its affine hull).
    """

    kind: str
    dimension: int
    lower: Optional[np.ndarray] = field(default=None, repr=False)
    upper: Optional[np.ndarray] = field(default=None, repr=False)
    center: Optional[np.ndarray] = field(default=None, repr=False)
    radius: float = 0.0
    scale: float = 1.0
    interior_point: Optional[np.ndarray] = field(default=None, repr=False)
    interior_radius: float = 0.0

    # -- constructors -----------------------------------------------------
    @classmethod
    def box(cls, lower, upper, interior_point=None, interior_radius=None):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        lo, hi = lo.copy(), hi.copy()
        if np.any(hi <= lo):
            raise ValueError("box needs lower < upper in every coordinate")
        p = 0.5 * (lo + hi) if interior_point is None else np.broadcast_to(
            np.asarray(interior_point, dtype=float), lo.shape).copy()
        r = 0.5 * float(np.min(hi - lo)) if interior_radius is None else float(interior_radius)
        s = cls("box", lo.size, lower=lo, upper=hi, interior_point=p, interior_radius=r)
        s._check_interior()
        return s

    @classmethod
    def simplex(cls, dimension: int, scale: float = 1.0):
        if dimension < 2:
            raise ValueError("simplex needs dimension >= 2")
        p = np.full(dimension, scale / dimension)
        # inradius of the scaled simplex within its affine hull
        r = scale / np.sqrt(dimension * (dimension - 1))
        return cls("simplex", dimension, scale=float(scale), interior_point=p,
                   interior_radius=float(r))

    @classmethod
    def ball(cls, center, radius: float, interior_radius=None):
        c = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        r = float(radius) if interior_radius is None else float(interior_radius)
        s = cls("ball", c.size, center=c, radius=float(radius), interior_point=c.copy(),
                interior_radius=r)
        s._check_interior()
        return s

    def __post_init__(self):
        if self.kind not in ("box", "simplex", "ball"):
            raise ValueError(f"unknown feasible set kind {self.kind!r}")
        for name in ("lower", "upper", "center", "interior_point"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    def _check_interior(self):
        if self.interior_radius <= 0:
            raise ValueError("interior radius must be positive")
        p, r = self.interior_point, self.interior_radius
        for u in self._spot_directions():
            for sgn in (1.0, -1.0):
                if not self.contains(p + sgn * r * u, tol=1e-9):
                    raise ValueError("interior ball is not contained in the feasible set")

    def _spot_directions(self):
        eye = np.eye(self.dimension)
        if self.kind == "simplex":
            # unit directions within the affine hull
            d = eye - 1.0 / self.dimension
            return d / np.linalg.norm(d, axis=1, keepdims=True)
        return eye

    # -- geometry ----------------------------------------------------------
    @property
    def full_dimensional(self) -> bool:
        return self.kind != "simplex"

    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        if self.kind == "ball":
            return 2.0 * self.radius
        return float(np.sqrt(2.0) * self.scale)

    def bounding_box(self):
        if self.kind == "box":
            return self.lower, self.upper
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        return np.zeros(self.dimension), np.full(self.dimension, self.scale)

    def max_norm(self) -> float:
        """Largest Euclidean norm of a point in the set."""
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        if self.kind == "ball":
            return float(np.linalg.norm(self.center) + self.radius)
        return float(self.scale)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            return False
        if self.kind == "box":
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        if self.kind == "ball":
            return bool(np.linalg.norm(x - self.center) <= self.radius + tol)
        return bool(np.all(x >= -tol) and abs(x.sum() - self.scale) <= tol * max(1.0, self.dimension))

    def project(self, y) -> np.ndarray:
        """Euclidean projection onto the set."""
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return np.clip(y, self.lower, self.upper)
        if self.kind == "ball":
            d = y - self.center
            nrm = np.linalg.norm(d)
            if nrm <= self.radius:
                return y.copy()
            return self.center + d * (self.radius / nrm)
        return project_simplex(y, self.scale)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw points of the set (not necessarily uniform for ball/simplex)."""
        if self.kind == "box":
            return rng.uniform(self.lower, self.upper, size=(size, self.dimension))
        if self.kind == "ball":
            d = rng.standard_normal((size, self.dimension))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            rad = self.radius * rng.uniform(size=(size, 1)) ** (1.0 / self.dimension)
            return self.center + rad * d
        return self.scale * rng.dirichlet(np.ones(self.dimension), size=size)


def project_simplex(y, scale: float = 1.0) -> np.ndarray:
    """Projection onto {x >= 0, sum x = scale} by the sort-and-threshold rule."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - scale
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


# ---------------------------------------------------------------------------
# mirror maps


@dataclass(frozen=True)
class MirrorMap:
    kind: str
    dimension: int
    mu: float
    lipschitz_K: float

    def __post_init__(self):
        if self.kind not in (SQUARED_NORM, NEGATIVE_ENTROPY):
            raise ValueError(f"unknown mirror map {self.kind!r}")
        if not self.mu > 0 or not np.isfinite(self.lipschitz_K) or self.lipschitz_K <= 0:
            raise ValueError("mirror map needs mu > 0 and finite positive K")

    @classmethod
    def squared_norm(cls, fset: FeasibleSet):
        # phi = ||x||^2, so D = ||x - y||^2 and |D(a,z) - D(b,z)| <= 2*diam*||a-b||
        return cls(SQUARED_NORM, fset.dimension, mu=2.0, lipschitz_K=2.0 * fset.diameter())

    @classmethod
    def negative_entropy(cls, fset: FeasibleSet):
        if fset.kind != "simplex":
            raise NoClosedForm("negative entropy is only paired with simplex sets")
        # Pinsker on the scaled simplex gives modulus 1/scale w.r.t. l1 (hence l2)
        K = np.sqrt(fset.dimension) * (np.log(fset.scale / ENTROPY_FLOOR) + 1.0)
        return cls(NEGATIVE_ENTROPY, fset.dimension, mu=1.0 / fset.scale, lipschitz_K=float(K))

    # -- phi and its gradient ---------------------------------------------
    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise DomainViolation(f"expected a point of dimension {self.dimension}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainViolation("point has non-finite coordinates")
        if self.kind == NEGATIVE_ENTROPY and np.any(x <= 0):
            raise DomainViolation("negative entropy needs strictly positive coordinates")
        return x

    def phi(self, x) -> float:
        x = self._check(x)
        if self.kind == SQUARED_NORM:
            return float(x @ x)
        return float(np.sum(x * np.log(x)))

    def grad_phi(self, x) -> np.ndarray:
        x = self._check(x)
        if self.kind == SQUARED_NORM:
            return 2.0 * x
        return np.log(x) + 1.0


def bregman(mmap: MirrorMap, xi, zeta) -> float:
    """D(xi, zeta) = phi(xi) - phi(zeta) - <grad phi(zeta), xi - zeta>."""
    xi = mmap._check(xi)
    zeta = mmap._check(zeta)
    if mmap.kind == SQUARED_NORM:
        d = xi - zeta
        return float(d @ d)
    # generalized KL, evaluated directly for accuracy
    return float(np.sum(xi * np.log(xi / zeta)) - xi.sum() + zeta.sum())


def mirror_step(mmap: MirrorMap, fset: FeasibleSet, x, g, alpha: float) -> np.ndarray:
    """Minimizer of ``alpha*<y, g> + D(y, x)`` over ``fset``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != x.shape or x.shape != (fset.dimension,):
        raise DomainViolation("point, gradient and set dimensions disagree")
    if not np.all(np.isfinite(g)):
        raise DomainViolation("gradient has non-finite entries")
    if alpha <= 0:
        raise ValueError("stepsize must be positive")
    if mmap.kind == SQUARED_NORM:
        return fset.project(x - 0.5 * alpha * g)
    if fset.kind != "simplex":
        raise NoClosedForm(f"no exact solver for {mmap.kind} on a {fset.kind}")
    x = np.maximum(x, ENTROPY_FLOOR)
    logits = np.log(x) - alpha * g
    logits -= logits.max()
    y = np.exp(logits)
    y = np.maximum(fset.scale * y / y.sum(), ENTROPY_FLOOR)
    return fset.scale * y / y.sum()


def check_triangle(mmap: MirrorMap, xi, zeta, theta) -> float:
    """Residual of the three-point identity for Bregman divergences."""
    xi, zeta, theta = (mmap._check(v) for v in (xi, zeta, theta))
    lhs = float((xi - zeta) @ (mmap.grad_phi(zeta) - mmap.grad_phi(theta)))
    rhs = bregman(mmap, xi, theta) - bregman(mmap, xi, zeta) - bregman(mmap, zeta, theta)
    return lhs - rhs


def default_map(kind: str, fset: FeasibleSet) -> MirrorMap:
    if kind == SQUARED_NORM:
        return MirrorMap.squared_norm(fset)
    if kind == NEGATIVE_ENTROPY:
        return MirrorMap.negative_entropy(fset)
    raise ValueError(f"unknown mirror map {kind!r}")
