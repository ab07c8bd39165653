"""Undirected graph in CSR form with normalized operators and graph calculus.

All structures are immutable after construction and safe to share across
threads. Degrees exclude self-loops; the +1 from added self-loops is applied
explicitly where an operator calls for it.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .autodiff import SparseOperator


class GraphError(ValueError):
    pass


class Graph:
    """Canonical undirected graph.

    edges holds each undirected edge once as (i, j) with i < j, deduplicated
    and free of self-loops. row_offsets/col_indices give CSR neighbor lists
    containing both orientations.
    """

    def __init__(self, n, row_offsets, col_indices, edges, degrees, dropped_self_loops=0):
        self.n = int(n)
        self.row_offsets = row_offsets
        self.col_indices = col_indices
        self.edges = edges
        self.degrees = degrees
        self.dropped_self_loops = int(dropped_self_loops)
        self._prop = None
        self._prop_op = None
        self._rw_op = None
        self._directed_loops = None

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.col_indices.shape[0])
        return sp.csr_matrix((data, self.col_indices, self.row_offsets), shape=(self.n, self.n))

    def propagation(self) -> "NormalizedPropagation":
        if self._prop is None:
            self._prop = normalized_propagation(self)
        return self._prop

    def propagation_operator(self) -> SparseOperator:
        if self._prop_op is None:
            self._prop_op = SparseOperator(self.propagation().to_scipy())
        return self._prop_op

    def row_stochastic_operator(self) -> SparseOperator:
        """D~^-1 A~: row-normalized adjacency with self-loops added."""
        if self._rw_op is None:
            a_tilde = self.adjacency() + sp.identity(self.n, format="csr")
            inv_deg = 1.0 / (self.degrees + 1.0)
            self._rw_op = SparseOperator(sp.diags(inv_deg) @ a_tilde)
        return self._rw_op

    def directed_with_self_loops(self):
        """(dst, src) arrays covering both edge orientations plus (i, i)."""
        if self._directed_loops is None:
            i, j = self.edges[:, 0], self.edges[:, 1]
            loops = np.arange(self.n, dtype=np.int64)
            dst = np.concatenate([i, j, loops])
            src = np.concatenate([j, i, loops])
            self._directed_loops = (dst, src)
        return self._directed_loops


class NormalizedPropagation:
    """Symmetric operator D~^-1/2 A~ D~^-1/2 on the pattern of A + I."""

    def __init__(self, csr: sp.csr_matrix):
        self._csr = csr

    @property
    def row_offsets(self):
        return self._csr.indptr

    @property
    def col_indices(self):
        return self._csr.indices

    @property
    def values(self):
        return self._csr.data

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()


class NodeWeights:
    """Per-node weights w_i = 1 / sqrt(d_i + 1)."""

    def __init__(self, w: np.ndarray):
        self.w = w

    @classmethod
    def from_graph(cls, g: Graph) -> "NodeWeights":
        return cls(1.0 / np.sqrt(g.degrees.astype(np.float64) + 1.0))


def build_graph(edge_pairs, n: int) -> Graph:
    """Canonicalize raw edge pairs into a Graph.

    Duplicates and mirrored orientations collapse to one undirected edge;
    self-loops are dropped and counted in dropped_self_loops.
    """
    pairs = np.asarray(list(edge_pairs), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
        raise GraphError(f"node id out of range [0, {n}): {tuple(bad)}")

    loops = pairs[:, 0] == pairs[:, 1]
    dropped = int(loops.sum())
    pairs = pairs[~loops]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0) if pairs.size else np.zeros((0, 2), np.int64)

    degrees = np.zeros(n, dtype=np.int64)
    if edges.size:
        np.add.at(degrees, edges[:, 0], 1)
        np.add.at(degrees, edges[:, 1], 1)

    # CSR over both orientations, neighbor lists sorted
    both_src = np.concatenate([edges[:, 0], edges[:, 1]])
    both_dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((both_dst, both_src))
    col_indices = both_dst[order]
    row_offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(row_offsets, both_src + 1, 1)
    row_offsets = np.cumsum(row_offsets)

    return Graph(n, row_offsets, col_indices, edges, degrees, dropped)


def normalized_propagation(g: Graph) -> NormalizedPropagation:
    """Entries 1/sqrt((d_i+1)(d_j+1)) off-diagonal, 1/(d_i+1) on the diagonal."""
    inv_sqrt = 1.0 / np.sqrt(g.degrees.astype(np.float64) + 1.0)
    a_tilde = g.adjacency() + sp.identity(g.n, format="csr")
    d = sp.diags(inv_sqrt)
    return NormalizedPropagation((d @ a_tilde @ d).tocsr())


def graph_gradient(f: np.ndarray, g: Graph, w: NodeWeights | None = None) -> np.ndarray:
    """Edge-indexed differences w_i f_i - w_j f_j on canonical edges (i < j)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f.reshape(-1, 1)
    if f.shape[0] != g.n:
        raise GraphError(f"feature rows {f.shape[0]} != node count {g.n}")
    if w is None:
        w = NodeWeights.from_graph(g)
    i, j = g.edges[:, 0], g.edges[:, 1]
    return w.w[i, None] * f[i] - w.w[j, None] * f[j]


def dirichlet_energy(f: np.ndarray, g: Graph) -> float:
    """Half the squared Frobenius norm of the graph gradient.

    The per-edge terms are (1/2) || f_i / sqrt(1+d_i) - f_j / sqrt(1+d_j) ||^2,
    so the total equals 0.5 * ||graph_gradient(f)||_F^2. The factor 1/2 lives
    here, not in graph_gradient.
    """
    grad = graph_gradient(f, g)
    return 0.5 * float(np.sum(grad * grad))


def homophily(g: Graph, labels) -> float:
    """Mean over nodes of the same-label neighbor fraction.

    Isolated nodes are excluded from the mean. Returns 0.0 when every node is
    isolated.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != g.n:
        raise GraphError("labels length must equal node count")
    fractions = []
    for v in range(g.n):
        nbrs = g.neighbors(v)
        if nbrs.size == 0:
            continue
        fractions.append(float(np.mean(labels[nbrs] == labels[v])))
    return float(np.mean(fractions)) if fractions else 0.0
