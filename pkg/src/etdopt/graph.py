"""Undirected communication topology.

Random connected graphs with a prescribed edge budget, Laplacian
construction, spectral quantities (power iteration with a dense Jacobi
fallback), and the positive-definiteness margins used to validate
primal-dual stepsizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class GraphConfigError(ValueError):
    """Rejected graph configuration (infeasible edge count, bad ratio, ...)."""


class EigensolveError(RuntimeError):
    """Eigenvalue iteration failed to converge."""

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class StepsizeCheck(NamedTuple):
    ok: bool
    margin: float


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes 0..n-1.

    `edges` is a lexicographically sorted tuple of (i, j) pairs with i < j;
    `neighbors[i]` is the ascending tuple of nodes adjacent to i.
    """

    n: int
    edges: tuple
    neighbors: tuple
    degrees: tuple

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        if n < 1:
            raise GraphConfigError(f"node count must be >= 1, got {n}")
        normalized = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphConfigError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphConfigError(f"edge ({i},{j}) out of range for n={n}")
            key = (i, j) if i < j else (j, i)
            if key in normalized:
                raise GraphConfigError(f"duplicate edge {key}")
            normalized.add(key)
        sorted_edges = tuple(sorted(normalized))
        nbrs = [[] for _ in range(n)]
        for i, j in sorted_edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        neighbors = tuple(tuple(sorted(v)) for v in nbrs)
        degrees = tuple(len(v) for v in neighbors)
        return cls(n=n, edges=sorted_edges, neighbors=neighbors, degrees=degrees)

    @property
    def num_edges(self) -> int:
        return len(self.edges)


def generate_random_graph(n: int, r: float, seed: int, max_attempts: int = 1000) -> Graph:
    """Sample a connected graph with round(r * n(n-1)/2) edges, uniformly.

    `r` is the fraction of all possible links that are present. Sampling is
    repeated with an incremented sub-seed until the graph is connected, so
    the result is deterministic in (n, r, seed).
    """
    if n < 2:
        raise GraphConfigError(f"need at least 2 nodes, got {n}")
    if not (0.0 < r <= 1.0):
        raise GraphConfigError(f"connectivity ratio must be in (0, 1], got {r}")
    total = n * (n - 1) // 2
    m_edges = int(round(r * total))
    if m_edges < n - 1:
        raise GraphConfigError(
            f"edge budget {m_edges} cannot connect {n} nodes (needs >= {n - 1})"
        )
    iu, ju = np.triu_indices(n, 1)
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        pick = rng.choice(total, size=m_edges, replace=False)
        pick.sort()
        g = Graph.from_edges(n, [(int(iu[p]), int(ju[p])) for p in pick])
        if is_connected(g):
            return g
    raise GraphConfigError(
        f"no connected graph with {m_edges} edges on {n} nodes after {max_attempts} attempts"
    )


def is_connected(g: Graph) -> bool:
    """Breadth-first search from node 0 reaches every node."""
    if g.n == 1:
        return True
    seen = [False] * g.n
    seen[0] = True
    frontier = [0]
    count = 1
    while frontier:
        nxt = []
        for i in frontier:
            for j in g.neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    count += 1
                    nxt.append(j)
        frontier = nxt
    return count == g.n


def adjacency(g: Graph) -> np.ndarray:
    a = np.zeros((g.n, g.n), dtype=np.int64)
    for i, j in g.edges:
        a[i, j] = 1
        a[j, i] = 1
    return a


def laplacian(g: Graph) -> np.ndarray:
    """Degree matrix minus adjacency. Built in integers, then cast, so each
    row sums to zero exactly."""
    a = adjacency(g)
    lap = np.diag(np.asarray(g.degrees, dtype=np.int64)) - a
    return lap.astype(np.float64)


def laplacian_quadratic_norm(lap: np.ndarray, v: np.ndarray) -> float:
    """sqrt(sum over coordinates of v^T lap v); the square-root factor of the
    Laplacian is never formed explicitly.

    For an exact Laplacian (zero row sums, nonpositive off-diagonal) the
    quadratic form is expanded over edge differences, which is exact at
    consensus points where the matrix-product route leaves sqrt(eps) noise.
    """
    v = np.asarray(v, dtype=np.float64)
    mat = v[:, None] if v.ndim == 1 else v
    n = lap.shape[0]
    off = lap - np.diag(np.diag(lap))
    if np.all(lap @ np.ones(n) == 0.0) and np.all(off <= 0.0):
        ii, jj = np.nonzero(np.triu(off, 1) != 0.0)
        diff = mat[ii] - mat[jj]
        quad = float(np.sum((-lap[ii, jj]) * np.sum(diff * diff, axis=1)))
    else:
        quad = float(np.sum(mat * (lap @ mat)))
    return float(np.sqrt(max(quad, 0.0)))


def _check_symmetric(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if not np.array_equal(mat, mat.T):
        raise ValueError("matrix is not exactly symmetric")
    return mat


def jacobi_eigh(mat: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60):
    """Dense symmetric eigendecomposition by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns). Intended for
    modest sizes (n <= 512); used as the fallback when power iteration
    stalls and wherever a full spectrum is needed.
    """
    a = np.array(_check_symmetric(mat), copy=True)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a**2) - np.sum(a.diagonal() ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:  # theta**2 would overflow
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _power_iteration_top(mat: np.ndarray, tol: float, max_iter: int):
    """Largest eigenvalue of a PSD matrix via power iteration with a fixed
    seeded start vector. Returns (value, converged, iterations)."""
    n = mat.shape[0]
    rng = np.random.default_rng(0x5EED)
    vec = rng.standard_normal(n)
    vec /= np.linalg.norm(vec)
    prev = np.inf
    for it in range(1, max_iter + 1):
        nxt = mat @ vec
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return 0.0, True, it
        vec = nxt / norm
        est = float(vec @ (mat @ vec))
        if abs(est - prev) <= tol * max(abs(est), 1.0):
            return est, True, it
        prev = est
    return prev, False, max_iter


_DENSE_FALLBACK_LIMIT = 512


def max_eigenvalue(mat: np.ndarray, tol: float = 1e-12, max_iter: int = 20000) -> float:
    """Largest eigenvalue of a symmetric matrix.

    A Gershgorin shift makes the operator PSD so that power iteration tracks
    the largest signed eigenvalue; if the iteration stalls, small matrices
    fall back to the dense Jacobi solve.
    """
    mat = _check_symmetric(mat)
    n = mat.shape[0]
    if n == 1:
        return float(mat[0, 0])
    shift = float(np.max(np.sum(np.abs(mat), axis=1)))
    if shift == 0.0:
        return 0.0
    shifted = mat + shift * np.eye(n)
    est, converged, its = _power_iteration_top(shifted, tol, max_iter)
    if converged:
        return est - shift
    if n <= _DENSE_FALLBACK_LIMIT:
        w, _ = jacobi_eigh(mat)
        return float(w[-1])
    raise EigensolveError("power iteration did not converge", its)


def min_eigenvalue(mat: np.ndarray, tol: float = 1e-12, max_iter: int = 20000) -> float:
    """Smallest eigenvalue via the shifted spectrum c*I - M with
    c = max_eigenvalue(M) + 1."""
    mat = _check_symmetric(mat)
    c = max_eigenvalue(mat, tol, max_iter) + 1.0
    flipped = c * np.eye(mat.shape[0]) - mat
    return c - max_eigenvalue(flipped, tol, max_iter)


def _as_diag_vector(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or length-{n} vector, got shape {arr.shape}")
    return arr


def check_stepsize_composite(eta, beta: float, lap: np.ndarray, lipschitz) -> StepsizeCheck:
    """Margin of the weight matrix over the gradient curvature.

    Returns (ok, margin) with margin = smallest eigenvalue of
    diag(eta) - beta*lap - diag(lipschitz); ok means margin > 0.
    """
    lap = _check_symmetric(lap)
    n = lap.shape[0]
    eta = _as_diag_vector(eta, n, "eta")
    lf = _as_diag_vector(lipschitz, n, "lipschitz")
    if np.any(eta <= 0):
        raise ValueError("all eta entries must be positive")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    mat = np.diag(eta) - beta * lap - np.diag(lf)
    margin = min_eigenvalue(mat)
    return StepsizeCheck(margin > 0.0, margin)


def check_stepsize_strongly_convex(
    eta, beta: float, lap: np.ndarray, lipschitz, strong_convexity, k1: float
) -> StepsizeCheck:
    """Stricter margin used in the strongly convex regime.

    Requires 0 < k1 < 2*min(strong_convexity); checks
    diag(eta) - beta*lap - diag(lipschitz**2)/k1 for positive definiteness
    and asserts 2*diag(strong_convexity) - k1*I is positive definite.
    """
    lap = _check_symmetric(lap)
    n = lap.shape[0]
    eta = _as_diag_vector(eta, n, "eta")
    lf = _as_diag_vector(lipschitz, n, "lipschitz")
    mu = _as_diag_vector(strong_convexity, n, "strong_convexity")
    if np.any(eta <= 0):
        raise ValueError("all eta entries must be positive")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    mu_min = float(np.min(mu))
    if not (0.0 < k1 < 2.0 * mu_min):
        raise ValueError(f"k1 must lie in (0, {2.0 * mu_min}), got {k1}")
    q_min = 2.0 * mu_min - k1
    assert q_min > 0.0
    mat = np.diag(eta) - beta * lap - np.diag(lf**2) / k1
    margin = min_eigenvalue(mat)
    return StepsizeCheck(margin > 0.0, margin)


def graph_to_text(g: Graph) -> str:
    """Plain edge-list format: first line "n m", then one "i j" line per edge."""
    lines = [f"{g.n} {g.num_edges}"]
    lines.extend(f"{i} {j}" for i, j in g.edges)
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> Graph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GraphConfigError("empty edge-list text")
    head = lines[0].split()
    if len(head) != 2:
        raise GraphConfigError(f"bad header line: {lines[0]!r}")
    n, m = int(head[0]), int(head[1])
    if len(lines) - 1 != m:
        raise GraphConfigError(f"header declares {m} edges, found {len(lines) - 1}")
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise GraphConfigError(f"bad edge line: {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return Graph.from_edges(n, edges)
