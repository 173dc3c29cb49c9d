"""Cyber graph of the microgrid: adjacency, Laplacian, and the
row-stochastic attack-distribution matrix used by coordinated injections.

The communication graph is undirected with nonnegative edge weights and a
zero diagonal. Consensus control requires a connected graph; a disconnected
adjacency matrix is rejected at construction time.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetricAdjacency,
    DisconnectedGraph,
    DimensionMismatch,
    NegativeWeight,
)

# Pivot tolerance of the rank-revealing elimination used for null spaces.
NULLSPACE_PIVOT_TOL = 1e-10


@dataclass(frozen=True)
class GraphTopology:
    """Validated cyber graph.

    Attributes
    ----------
    n : int
        Agent count (>= 2).
    adjacency : ndarray, shape (n, n)
        Symmetric nonnegative weights, zero diagonal.
    in_degree : ndarray, shape (n,)
        Row sums of the adjacency (weighted in-degree).
    out_degree : ndarray, shape (n,)
        Column sums of the adjacency; equals in_degree for undirected graphs.
    laplacian : ndarray, shape (n, n)
        diag(in_degree) - adjacency. Every row sums to zero.
    """

    n: int
    adjacency: np.ndarray
    in_degree: np.ndarray
    out_degree: np.ndarray
    laplacian: np.ndarray

    def neighbors(self, k):
        """Indices j with a_kj > 0."""
        return np.flatnonzero(self.adjacency[k] > 0.0)


@dataclass(frozen=True)
class AttackDistribution:
    """Row-stochastic attack-distribution matrix and its null-space basis.

    Rows follow the neighbor-count rule: weight 1/(|N_k|+1) on each neighbor
    and on the agent itself, zero elsewhere. Coordinated injections lying in
    the null space of ``w`` leave every weighted combination unchanged.
    """

    w: np.ndarray
    null_basis: list = field(default_factory=list)


def _check_connected(adjacency):
    """Union-find over the nonzero edges."""
    n = adjacency.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if adjacency[i, j] > 0.0:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    root = find(0)
    return all(find(k) == root for k in range(n))


def build_graph(adjacency) -> GraphTopology:
    """Validate an adjacency matrix and derive degree/Laplacian structure.

    Parameters
    ----------
    adjacency : array_like, shape (n, n)
        Nonnegative symmetric weights with a zero diagonal.

    Raises
    ------
    NegativeWeight, AsymmetricAdjacency, DisconnectedGraph
    """
    a = np.array(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"adjacency must be square, got shape {a.shape}")
    n = a.shape[0]
    if n < 2:
        raise DisconnectedGraph("need at least 2 agents")
    if np.any(a < 0.0):
        raise NegativeWeight("adjacency entries must be >= 0")
    if np.any(np.diag(a) != 0.0):
        raise AsymmetricAdjacency("adjacency diagonal must be zero")
    if not np.array_equal(a, a.T):
        raise AsymmetricAdjacency("adjacency must be symmetric (undirected graph)")
    if not _check_connected(a):
        raise DisconnectedGraph("cyber graph is not connected")

    d_in = a.sum(axis=1)
    d_out = a.sum(axis=0)
    lap = np.diag(d_in) - a
    a.setflags(write=False)
    d_in.setflags(write=False)
    d_out.setflags(write=False)
    lap.setflags(write=False)
    return GraphTopology(n=n, adjacency=a, in_degree=d_in, out_degree=d_out, laplacian=lap)


def null_space_basis(m, tol=NULLSPACE_PIVOT_TOL):
    """Null-space basis of ``m`` by rank-revealing Gaussian elimination.

    Row-echelon reduction with partial pivoting; columns whose pivot falls
    below ``tol`` are treated as free. Returns a list of basis vectors (may
    be empty for full-rank matrices), each normalized to unit max-abs entry.
    """
    m = np.array(m, dtype=float)
    rows, cols = m.shape
    r = m.copy()
    pivot_cols = []
    piv_r = 0
    for c in range(cols):
        if piv_r >= rows:
            break
        sub = np.abs(r[piv_r:, c])
        i_max = int(np.argmax(sub)) + piv_r
        if np.abs(r[i_max, c]) <= tol:
            continue
        if i_max != piv_r:
            r[[piv_r, i_max]] = r[[i_max, piv_r]]
        r[piv_r] = r[piv_r] / r[piv_r, c]
        for i in range(rows):
            if i != piv_r and r[i, c] != 0.0:
                r[i] -= r[i, c] * r[piv_r]
        pivot_cols.append(c)
        piv_r += 1

    free_cols = [c for c in range(cols) if c not in pivot_cols]
    basis = []
    for fc in free_cols:
        v = np.zeros(cols)
        v[fc] = 1.0
        for pr, pc in enumerate(pivot_cols):
            v[pc] = -r[pr, fc]
        v = v / np.max(np.abs(v))
        basis.append(v)
    return basis


def attack_distribution_matrix(g: GraphTopology) -> AttackDistribution:
    """Row-stochastic weight matrix over the cyber graph plus its null basis.

    Each agent weights itself and each neighbor by 1/(|N_k|+1); rows sum to
    exactly 1. The null basis is computed numerically and may be empty.
    """
    n = g.n
    w = np.zeros((n, n))
    for k in range(n):
        nk = g.neighbors(k)
        share = 1.0 / (len(nk) + 1)
        w[k, nk] = share
        w[k, k] = 1.0 - share * len(nk)
    basis = null_space_basis(w)
    w.setflags(write=False)
    return AttackDistribution(w=w, null_basis=basis)


def stealth_vector(ad: AttackDistribution, magnitude):
    """A null-space injection vector scaled to a given peak magnitude.

    Returns ``None`` when the null space is trivial (the scenario may then
    fall back to a plain balanced injection). ``magnitude`` must be > 0 and
    becomes the largest absolute entry of the returned vector.
    """
    if magnitude <= 0.0:
        raise ValueError("magnitude must be positive")
    if not ad.null_basis:
        return None
    v = ad.null_basis[0]
    return v * (magnitude / np.max(np.abs(v)))


def is_stealthy(ad: AttackDistribution, vector, tol=1e-9):
    """True when ``w @ vector`` vanishes, i.e. the injection is invisible
    to every row-stochastic combination of the attacked signal."""
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (ad.w.shape[0],):
        raise DimensionMismatch(
            f"vector length {vector.shape} does not match {ad.w.shape[0]} agents"
        )
    scale = max(np.max(np.abs(vector)), 1.0)
    return bool(np.max(np.abs(ad.w @ vector)) <= tol * scale)
