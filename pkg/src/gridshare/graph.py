"""Network topology: physical incidence matrix and communication Laplacian.

The physical graph (directed edges = power lines) yields the incidence
matrix used by the circuit dynamics.  The communication graph (undirected)
yields the Laplacian that couples the distributed controllers, together
with a factor E satisfying E @ E.T == L exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DisconnectedGraphError",
    "Topology",
    "LaplacianFactor",
    "build_incidence",
    "build_laplacian",
    "factor_laplacian",
    "factor_psd",
    "connected_components",
    "fiedler_value",
]

# Reconstruction bound for E @ E.T against L (signed incidence is exact in
# integer arithmetic; eigenfactors of general PSD matrices stay well below).
RECONSTRUCTION_TOL = 1e-12


class DisconnectedGraphError(ValueError):
    """Communication graph does not connect the required node set."""


def _check_edges(edges, nu, allow_self_loops=False):
    for k, (a, b) in enumerate(edges):
        if not (0 <= a < nu and 0 <= b < nu):
            raise ValueError(f"edge {k} = ({a}, {b}) out of range for {nu} nodes")
        if a == b and not allow_self_loops:
            raise ValueError(f"edge {k} is a self-loop at node {a}")


def connected_components(nu: int, edges) -> int:
    """Number of connected components (union-find on the edge list)."""
    parent = list(range(nu))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(nu)})


def fiedler_value(l_mat: np.ndarray) -> float:
    """Second-smallest eigenvalue of a symmetric PSD matrix."""
    eigs = np.linalg.eigvalsh(np.asarray(l_mat, dtype=float))
    return float(eigs[1])


@dataclass(frozen=True)
class Topology:
    """Node count plus physical (directed) and communication (undirected) edges."""

    nu: int
    phys_edges: tuple = field(default_factory=tuple)
    comm_edges: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError("need at least one node")
        object.__setattr__(self, "phys_edges", tuple((int(a), int(b)) for a, b in self.phys_edges))
        object.__setattr__(self, "comm_edges", tuple((int(a), int(b)) for a, b in self.comm_edges))
        _check_edges(self.phys_edges, self.nu)
        _check_edges(self.comm_edges, self.nu)

    @property
    def mu(self) -> int:
        return len(self.phys_edges)

    @property
    def n_comm(self) -> int:
        return len(self.comm_edges)


def build_incidence(topology: Topology) -> np.ndarray:
    """Incidence matrix of the physical graph: +1 at the tail, -1 at the head."""
    d = np.zeros((topology.nu, topology.mu))
    for k, (tail, head) in enumerate(topology.phys_edges):
        d[tail, k] = 1.0
        d[head, k] = -1.0
    return d


def build_laplacian(comm_edges, nu: int, weights=None, subset=None) -> np.ndarray:
    """Laplacian (degree minus adjacency) of the communication graph.

    With ``subset`` given, the edges must all lie inside the subset and
    connect it; the Laplacian of the sub-graph is embedded in the full
    ``nu`` x ``nu`` dimension with zero padding (nodes outside the subset
    stay uncoupled).  Rejects graphs that do not connect the required
    node set, since consensus is not guaranteed on a disconnected graph.
    """
    comm_edges = [(int(a), int(b)) for a, b in comm_edges]
    _check_edges(comm_edges, nu)
    if weights is None:
        weights = np.ones(len(comm_edges))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(comm_edges),) or np.any(weights <= 0):
        raise ValueError("edge weights must be positive, one per edge")

    nodes = range(nu) if subset is None else sorted(set(int(i) for i in subset))
    nodes = list(nodes)
    if subset is not None:
        inside = set(nodes)
        for a, b in comm_edges:
            if a not in inside or b not in inside:
                raise ValueError(f"communication edge ({a}, {b}) leaves the consensus subset")

    l_mat = np.zeros((nu, nu))
    for (a, b), w in zip(comm_edges, weights):
        l_mat[a, a] += w
        l_mat[b, b] += w
        l_mat[a, b] -= w
        l_mat[b, a] -= w

    # Connectivity on the required node set; single node is trivially connected.
    if len(nodes) > 1:
        remap = {n: i for i, n in enumerate(nodes)}
        sub_edges = [(remap[a], remap[b]) for a, b in comm_edges]
        if connected_components(len(nodes), sub_edges) != 1:
            raise DisconnectedGraphError(
                f"communication graph does not connect nodes {nodes}"
            )
        sub = l_mat[np.ix_(nodes, nodes)]
        lam2 = fiedler_value(sub)
        if lam2 <= 1e-10 * max(1.0, float(np.abs(sub).max())):
            raise DisconnectedGraphError(
                f"algebraic connectivity {lam2:.3e} is not positive"
            )
    return l_mat


@dataclass(frozen=True)
class LaplacianFactor:
    """Pair (L, E) with L = E @ E.T, L symmetric PSD, L @ 1 = 0."""

    l_mat: np.ndarray
    e_mat: np.ndarray

    def validate(self, tol: float = RECONSTRUCTION_TOL) -> float:
        """Check symmetry, kernel, PSD-ness, and the factorization; return the
        max-abs reconstruction error."""
        l_mat, e_mat = self.l_mat, self.e_mat
        if not np.allclose(l_mat, l_mat.T, atol=1e-12):
            raise ValueError("Laplacian is not symmetric")
        ones = np.ones(l_mat.shape[0])
        if np.abs(l_mat @ ones).max() > 1e-9 * max(1.0, np.abs(l_mat).max()):
            raise ValueError("Laplacian kernel does not contain the all-ones vector")
        if np.linalg.eigvalsh(l_mat)[0] < -1e-9 * max(1.0, np.abs(l_mat).max()):
            raise ValueError("Laplacian has a negative eigenvalue")
        err = float(np.abs(e_mat @ e_mat.T - l_mat).max())
        if err >= tol:
            raise ValueError(f"factor reconstruction error {err:.3e} >= {tol:.1e}")
        return err

    @property
    def n_edges(self) -> int:
        return self.e_mat.shape[1]


def factor_laplacian(comm_edges, nu: int, weights=None, subset=None) -> LaplacianFactor:
    """Laplacian together with its signed-incidence factor.

    Edge orientation is deterministic: the lower-index endpoint gets +1.
    For unit weights the factorization L = E @ E.T is exact in integer
    arithmetic; weighted edges use sqrt-scaled columns.
    """
    l_mat = build_laplacian(comm_edges, nu, weights=weights, subset=subset)
    n = len(comm_edges)
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    e_mat = np.zeros((nu, n))
    for k, (a, b) in enumerate(comm_edges):
        lo, hi = (a, b) if a < b else (b, a)
        s = np.sqrt(weights[k])
        e_mat[lo, k] = s
        e_mat[hi, k] = -s
    factor = LaplacianFactor(l_mat=l_mat, e_mat=e_mat)
    factor.validate()
    return factor


def factor_psd(l_mat: np.ndarray) -> LaplacianFactor:
    """Factor an arbitrary symmetric PSD matrix with ker = span{1}.

    Covers couplings that are not graph Laplacians; columns of E are the
    sqrt-scaled eigenvectors of the nonzero eigenvalues.
    """
    l_mat = np.asarray(l_mat, dtype=float)
    eigs, vecs = np.linalg.eigh(0.5 * (l_mat + l_mat.T))
    scale = max(1.0, float(np.abs(eigs).max()))
    if eigs[0] < -1e-12 * scale:
        raise ValueError("matrix is not positive semidefinite")
    keep = eigs > 1e-12 * scale
    e_mat = vecs[:, keep] * np.sqrt(eigs[keep])
    factor = LaplacianFactor(l_mat=l_mat, e_mat=e_mat)
    factor.validate()
    return factor
