"""Sparse base graphs, periodic lattices and spectra of the random-walk matrix.

Adjacency convention: ``adjacency[i, j] = w_ij`` is the weight of the edge
i -> j.  For undirected graphs the matrix is symmetric.  Row sums give the
out-degrees, column sums the in-degrees.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidEdge, InvalidLattice, UnsupportedGraph


@dataclass(frozen=True, eq=False)
class GraphSpec:
    """Immutable sparse base graph.

    Attributes:
        n_nodes: number of nodes N.
        adjacency: CSR matrix of edge weights.
        degrees: row sums of ``adjacency`` (out-degrees for directed graphs).
        degrees_out, degrees_in: row and column sums.
        directed: whether ``adjacency`` may be asymmetric.
        normals_x, normals_y: optional CSR matrices with the same sparsity as
            ``adjacency`` holding the components of the unit vector n_ij.
        spectrum: sorted eigenvalues of D^-1 A (undirected graphs only).
        side: lattice side length for periodic lattices, else None.
    """

    n_nodes: int
    adjacency: sp.csr_matrix
    degrees: np.ndarray
    degrees_out: np.ndarray
    degrees_in: np.ndarray
    directed: bool = False
    normals_x: sp.csr_matrix | None = None
    normals_y: sp.csr_matrix | None = None
    spectrum: np.ndarray | None = None
    side: int | None = None

    @property
    def has_normals(self) -> bool:
        return self.normals_x is not None

    @property
    def log_degrees(self) -> np.ndarray:
        return np.log(self.degrees)

    @property
    def n_edges(self) -> int:
        """Number of stored (directed) adjacency entries."""
        return int(self.adjacency.nnz)

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.toarray()

    @property
    def stacked_operator(self) -> sp.csr_matrix:
        """[A; A*nx; A*ny] stacked row-wise, for one-pass advection products."""
        cached = self.__dict__.get("_stacked")
        if cached is None:
            if not self.has_normals:
                raise UnsupportedGraph("graph has no edge normals")
            wx = self.adjacency.multiply(self.normals_x).tocsr()
            wy = self.adjacency.multiply(self.normals_y).tocsr()
            cached = sp.vstack([self.adjacency, wx, wy], format="csr")
            object.__setattr__(self, "_stacked", cached)
        return cached

    @property
    def stacked_operator_t(self) -> sp.csr_matrix:
        cached = self.__dict__.get("_stacked_t")
        if cached is None:
            a = self.adjacency
            wx = a.multiply(self.normals_x)
            wy = a.multiply(self.normals_y)
            cached = sp.vstack([a.T, wx.T, wy.T], format="csr")
            object.__setattr__(self, "_stacked_t", cached)
        return cached

    @property
    def adjacency_t(self) -> sp.csr_matrix:
        cached = self.__dict__.get("_adj_t")
        if cached is None:
            cached = self.adjacency if not self.directed else self.adjacency.T.tocsr()
            object.__setattr__(self, "_adj_t", cached)
        return cached


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _make_graph(adj: sp.csr_matrix, directed: bool, nx=None, ny=None, side=None) -> GraphSpec:
    adj = adj.tocsr()
    adj.sort_indices()
    d_out = np.asarray(adj.sum(axis=1)).ravel()
    d_in = np.asarray(adj.sum(axis=0)).ravel()
    if directed:
        isolated = np.flatnonzero((d_out <= 0) & (d_in <= 0))
    else:
        isolated = np.flatnonzero(d_out <= 0)
    if isolated.size:
        raise InvalidEdge(f"isolated nodes not allowed: {isolated.tolist()}")
    if nx is not None:
        nx = nx.tocsr()
        ny = ny.tocsr()
        nx.sort_indices()
        ny.sort_indices()
    return GraphSpec(
        n_nodes=adj.shape[0],
        adjacency=adj,
        degrees=_freeze(d_out),
        degrees_out=_freeze(d_out),
        degrees_in=_freeze(d_in),
        directed=directed,
        normals_x=nx,
        normals_y=ny,
        side=side,
    )


def lattice_node(row: int, col: int, side: int) -> int:
    """Row-major node index on a periodic lattice."""
    return (row % side) * side + (col % side)


def build_periodic_lattice(side: int) -> GraphSpec:
    """4-nearest-neighbour lattice on a ``side x side`` torus.

    Node ``row * side + col`` sits at position (x=col, y=row); the normal to
    the eastern neighbour is (1, 0) and to the northern one (row + 1) is (0, 1).
    """
    if side < 3:
        raise InvalidLattice(f"periodic lattice needs side >= 3, got {side}")
    n = side * side
    idx = np.arange(n)
    rows, cols = np.divmod(idx, side)
    src, dst, nxs, nys = [], [], [], []
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src.append(idx)
        dst.append(((rows + dy) % side) * side + (cols + dx) % side)
        nxs.append(np.full(n, float(dx)))
        nys.append(np.full(n, float(dy)))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    adj = sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
    nx = sp.csr_matrix((np.concatenate(nxs), (src, dst)), shape=(n, n))
    ny = sp.csr_matrix((np.concatenate(nys), (src, dst)), shape=(n, n))
    return _make_graph(adj, directed=False, nx=nx, ny=ny, side=side)


def load_graph(
    edge_records: Iterable[Sequence[float]],
    directed: bool = False,
    n_nodes: int | None = None,
) -> GraphSpec:
    """Build a graph from ``(src, dst, weight[, nx, ny])`` records.

    Undirected records list each edge once; the reverse edge is added with
    the same weight and the negated normal.  Self-loops are kept as a single
    diagonal entry.
    """
    records = [tuple(r) for r in edge_records]
    if not records:
        raise InvalidEdge("no edges given")
    widths = {len(r) for r in records}
    if not widths <= {3, 5} or len(widths) != 1:
        raise InvalidEdge("records must all be (src, dst, w) or all (src, dst, w, nx, ny)")
    with_normals = widths == {5}
    src = np.array([int(r[0]) for r in records])
    dst = np.array([int(r[1]) for r in records])
    w = np.array([float(r[2]) for r in records])
    if np.any(np.array([r[0] for r in records], dtype=float) != src) or np.any(
        np.array([r[1] for r in records], dtype=float) != dst
    ):
        raise InvalidEdge("node ids must be integers")
    if n_nodes is None:
        n_nodes = int(max(src.max(), dst.max())) + 1
    if src.min() < 0 or dst.min() < 0 or src.max() >= n_nodes or dst.max() >= n_nodes:
        raise InvalidEdge(f"node index out of range [0, {n_nodes})")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InvalidEdge("edge weights must be positive")
    if with_normals:
        nxv = np.array([float(r[3]) for r in records])
        nyv = np.array([float(r[4]) for r in records])
    if not directed:
        off = src != dst
        pairs = set()
        for a, b in zip(src, dst):
            key = (min(a, b), max(a, b))
            if key in pairs:
                raise InvalidEdge(f"duplicate undirected edge {key}")
            pairs.add(key)
        src, dst = np.concatenate([src, dst[off]]), np.concatenate([dst, src[off]])
        w = np.concatenate([w, w[off]])
        if with_normals:
            nxv = np.concatenate([nxv, -nxv[off]])
            nyv = np.concatenate([nyv, -nyv[off]])
    else:
        if len(set(zip(src.tolist(), dst.tolist()))) != src.size:
            raise InvalidEdge("duplicate directed edge")
    shape = (n_nodes, n_nodes)
    adj = sp.csr_matrix((w, (src, dst)), shape=shape)
    nx = ny = None
    if with_normals:
        nx = sp.csr_matrix((nxv, (src, dst)), shape=shape)
        ny = sp.csr_matrix((nyv, (src, dst)), shape=shape)
    return _make_graph(adj, directed=directed, nx=nx, ny=ny)


def read_graph_csv(path: str | Path, directed: bool = False) -> GraphSpec:
    """Load a graph from a CSV with header ``src,dst,weight[,nx,ny]``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if fields[:3] != ["src", "dst", "weight"]:
            raise InvalidEdge(f"unexpected graph CSV header {fields}")
        has_n = "nx" in fields and "ny" in fields
        records = []
        for row in reader:
            rec = [int(row["src"]), int(row["dst"]), float(row["weight"])]
            if has_n:
                rec += [float(row["nx"]), float(row["ny"])]
            records.append(rec)
    return load_graph(records, directed=directed)


def write_graph_csv(g: GraphSpec, path: str | Path) -> None:
    """Write ``g`` in the CSV layout read by :func:`read_graph_csv`."""
    coo = g.adjacency.tocoo()
    keep = np.ones(coo.nnz, dtype=bool) if g.directed else coo.row <= coo.col
    header = ["src", "dst", "weight"] + (["nx", "ny"] if g.has_normals else [])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i, j, w in zip(coo.row[keep], coo.col[keep], coo.data[keep]):
            rec = [int(i), int(j), repr(float(w))]
            if g.has_normals:
                rec += [repr(float(g.normals_x[i, j])), repr(float(g.normals_y[i, j]))]
            wr.writerow(rec)


def precompute_spectrum(g: GraphSpec, method: str = "dense") -> GraphSpec:
    """Return a copy of ``g`` with the eigenvalues of D^-1 A.

    Args:
        g: undirected graph.
        method: ``"dense"`` runs a symmetric eigensolve on the similar matrix
            D^-1/2 A D^-1/2 (all eigenvalues real, in [-1, 1]).  ``"lattice"``
            uses the closed form (cos(2 pi p / s) + cos(2 pi q / s)) / 2 of a
            periodic lattice, which avoids the cubic eigensolve for large sides.
    """
    if g.directed:
        raise UnsupportedGraph("spectrum is only defined for undirected graphs")
    if method == "lattice":
        if g.side is None:
            raise UnsupportedGraph("closed-form spectrum needs a periodic lattice")
        c = np.cos(2.0 * np.pi * np.arange(g.side) / g.side)
        lam = 0.5 * (c[:, None] + c[None, :]).ravel()
    elif method == "dense":
        s = 1.0 / np.sqrt(g.degrees)
        sym = (g.adjacency.multiply(s[:, None]).multiply(s[None, :])).toarray()
        lam = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    else:
        raise ValueError(f"unknown spectrum method {method!r}")
    return dataclasses.replace(g, spectrum=_freeze(np.sort(lam)))


def lattice_offset(i: int, j: int, side: int) -> tuple[int, int]:
    """Canonical (dx, dy) offset from node i to node j on the torus."""
    ri, ci = divmod(i, side)
    rj, cj = divmod(j, side)
    half = side // 2

    def wrap(d):
        d %= side
        return d - side if d > half else d

    return wrap(cj - ci), wrap(rj - ri)
