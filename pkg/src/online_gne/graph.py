"""Communication graph with doubly stochastic weights and dual mixing."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

STOCHASTIC_TOL = 1e-12
EDGE_TOL = 1e-12


class GraphError(ValueError):
    pass


class NotSymmetric(GraphError):
    pass


class NotStochastic(GraphError):
    pass


class ZeroDiagonal(GraphError):
    pass


class Disconnected(GraphError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CommGraph:
    """Fixed undirected graph with symmetric, row-stochastic weights.

    ``sigma`` is the spectral norm of ``A - 11^T/N`` and is cached at
    construction; it governs how fast dual mixing contracts to consensus.
    """

    n_players: int
    weights: np.ndarray = field(repr=False)
    sigma: float

    def __post_init__(self):
        self.weights.setflags(write=False)


def _is_connected(weights: np.ndarray) -> bool:
    n = weights.shape[0]
    adj = (np.abs(weights) > EDGE_TOL) & ~np.eye(n, dtype=bool)
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u] & ~seen):
            seen[v] = True
            queue.append(v)
    return bool(seen.all())


def spectral_gap_norm(weights: np.ndarray) -> float:
    n = weights.shape[0]
    centered = weights - np.full((n, n), 1.0 / n)
    # symmetric, so the spectral norm is the largest |eigenvalue|
    eig = np.linalg.eigvalsh(0.5 * (centered + centered.T))
    return float(np.max(np.abs(eig)))


def build_graph(weights) -> CommGraph:
    """Validate a weight matrix and wrap it in a :class:`CommGraph`.

    Raises one of :class:`NotSymmetric`, :class:`NotStochastic`,
    :class:`ZeroDiagonal` or :class:`Disconnected` naming the failed
    assumption.
    """
    A = np.array(weights, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"weight matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("weight matrix has non-finite entries")
    n = A.shape[0]
    if np.max(np.abs(A - A.T)) > STOCHASTIC_TOL:
        raise NotSymmetric("graph assumption violated: weights must satisfy A = A^T")
    if np.any(A < 0):
        raise NotStochastic("graph assumption violated: weights must be nonnegative")
    if np.max(np.abs(A.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise NotStochastic("graph assumption violated: rows must sum to 1 (A 1 = 1)")
    if np.any(np.diag(A) <= 0):
        raise ZeroDiagonal("graph assumption violated: self weights a_ii must be positive")
    if n > 1 and not _is_connected(A):
        raise Disconnected("graph assumption violated: support graph is not connected")
    sigma = spectral_gap_norm(A)
    # exact averaging matrices can produce ~1e-16 instead of 0
    if sigma < 1e-14:
        sigma = 0.0
    return CommGraph(n_players=n, weights=A, sigma=sigma)


def metropolis_weights(adjacency) -> np.ndarray:
    """Metropolis-Hastings weights for a 0/1 undirected adjacency matrix."""
    adj = np.array(adjacency, dtype=bool)
    np.fill_diagonal(adj, False)
    deg = adj.sum(axis=1)
    n = adj.shape[0]
    W = np.zeros((n, n))
    for i, j in zip(*np.nonzero(adj)):
        W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return W


def ring_adjacency(n: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = True
    return adj


def star_adjacency(n: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    adj[0, 1:] = adj[1:, 0] = True
    return adj


def named_graph(kind: str, n: int) -> CommGraph:
    """Build one of the named generators: complete, ring, star-metropolis."""
    if n < 1:
        raise ValueError("need at least one player")
    if kind == "complete":
        return build_graph(np.full((n, n), 1.0 / n))
    if kind == "ring":
        if n < 3:
            return build_graph(np.full((n, n), 1.0 / n))
        return build_graph(metropolis_weights(ring_adjacency(n)))
    if kind == "star-metropolis":
        return build_graph(metropolis_weights(star_adjacency(n)))
    raise ValueError(f"unknown graph generator {kind!r}")


def mix_duals(graph: CommGraph, duals) -> np.ndarray:
    """Return ``A @ duals``: row i is sum_j a_ij * lambda_j."""
    lam = np.asarray(duals, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != graph.n_players:
        raise DimensionMismatch(
            f"expected {graph.n_players} dual vectors, got array of shape {lam.shape}"
        )
    return graph.weights @ lam
