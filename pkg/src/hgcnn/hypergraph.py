"""
Hypergraphs, incidence/degree structure and normalized Laplacians.

A hypergraph here is a vertex count plus a list of hyperedges, each a set of
vertex indices carrying a positive weight.  Everything is dense: the
landmark hypergraphs this package builds have a few hundred vertices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, eq=False, init=False)
class Hypergraph:
    """Weighted hypergraph on ``n_vertices`` vertices.

    Parameters
    ----------
    n_vertices : int
        Number of vertices.
    hyperedges : sequence of iterables of int
        Vertex sets.  Each is stored as a sorted tuple of distinct indices.
        Identical vertex sets may appear more than once.
    edge_weights : sequence of float, optional
        Positive weight per hyperedge, defaults to all ones.
    uniform_k : int, optional
        If given, every hyperedge must contain exactly this many vertices.
    """

    n_vertices: int
    hyperedges: tuple[tuple[int, ...], ...]
    edge_weights: np.ndarray
    uniform_k: int | None = None

    def __init__(self, n_vertices, hyperedges, edge_weights=None, uniform_k=None):
        edges = tuple(tuple(sorted(set(int(v) for v in e))) for e in hyperedges)
        if edge_weights is None:
            weights = np.ones(len(edges))
        else:
            weights = np.array(edge_weights, dtype=np.float64).reshape(-1)
        weights.setflags(write=False)
        object.__setattr__(self, "n_vertices", int(n_vertices))
        object.__setattr__(self, "hyperedges", edges)
        object.__setattr__(self, "edge_weights", weights)
        object.__setattr__(self, "uniform_k", uniform_k)
        self._validate()

    def _validate(self):
        if self.n_vertices < 1:
            raise ValueError("hypergraph needs at least one vertex")
        if len(self.edge_weights) != len(self.hyperedges):
            raise ValueError(
                f"{len(self.edge_weights)} weights for {len(self.hyperedges)} hyperedges")
        for i, e in enumerate(self.hyperedges):
            if len(e) < 2:
                raise ValueError(f"hyperedge {i} has fewer than 2 distinct vertices")
            if e[0] < 0 or e[-1] >= self.n_vertices:
                raise ValueError(f"hyperedge {i} references a vertex outside [0, {self.n_vertices})")
            if self.uniform_k is not None and len(e) != self.uniform_k:
                raise ValueError(
                    f"hyperedge {i} has {len(e)} vertices, expected {self.uniform_k}")
        if not np.all(np.isfinite(self.edge_weights)) or np.any(self.edge_weights <= 0):
            raise ValueError("edge weights must be finite and positive")

    @property
    def n_edges(self) -> int:
        return len(self.hyperedges)

    def permuted(self, perm: Sequence[int]) -> "Hypergraph":
        """Relabel vertices: old vertex ``v`` becomes ``perm[v]``."""
        perm = np.asarray(perm)
        return Hypergraph(self.n_vertices,
                          [[int(perm[v]) for v in e] for e in self.hyperedges],
                          self.edge_weights, self.uniform_k)


@dataclass(frozen=True, eq=False)
class DegreeDiagonals:
    vertex_degrees: np.ndarray
    hyperedge_degrees: np.ndarray


@dataclass(frozen=True, eq=False)
class HypergraphLaplacian:
    """Symmetric Laplacian matrix with an optional eigendecomposition.

    ``eigenvalues`` are ascending and ``eigenvectors`` holds them column-wise.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def with_eigendecomposition(self, tol: float = 1e-10) -> "HypergraphLaplacian":
        from .spectral import symmetric_eigendecomposition

        lam, vecs = symmetric_eigendecomposition(self.matrix, tol=tol)
        return HypergraphLaplacian(self.matrix, lam, vecs)


def build_incidence(hg: Hypergraph) -> np.ndarray:
    """Binary ``|V| x |E|`` incidence matrix, columns in hyperedge order."""
    if hg.n_edges == 0:
        raise ValueError("no hyperedges")
    H = np.zeros((hg.n_vertices, hg.n_edges))
    for j, e in enumerate(hg.hyperedges):
        H[list(e), j] = 1.0
    return H


def compute_degrees(hg: Hypergraph, H: np.ndarray | None = None) -> DegreeDiagonals:
    if H is None:
        H = build_incidence(hg)
    return DegreeDiagonals(vertex_degrees=H @ hg.edge_weights,
                           hyperedge_degrees=H.sum(axis=0).astype(np.int64))


def normalized_laplacian(hg: Hypergraph) -> HypergraphLaplacian:
    """``I - Dv^-1/2 H W De^-1 H^T Dv^-1/2``.

    Raises
    ------
    ValueError
        If some vertex belongs to no hyperedge.
    """
    H = build_incidence(hg)
    deg = compute_degrees(hg, H)
    isolated = np.flatnonzero(deg.vertex_degrees <= 0)
    if isolated.size:
        raise ValueError(f"isolated vertex {int(isolated[0])}")
    inv_sqrt_dv = 1.0 / np.sqrt(deg.vertex_degrees)
    Hn = H * inv_sqrt_dv[:, None]
    theta = (Hn * (hg.edge_weights / deg.hyperedge_degrees)) @ Hn.T
    L = np.eye(hg.n_vertices) - theta
    # the product is symmetric in exact arithmetic; remove rounding asymmetry
    L = 0.5 * (L + L.T)
    return HypergraphLaplacian(L)


def simple_graph_laplacian(A: np.ndarray) -> np.ndarray:
    """Normalized Laplacian ``I - D^-1/2 A D^-1/2`` of a weighted adjacency."""
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    isolated = np.flatnonzero(d <= 0)
    if isolated.size:
        raise ValueError(f"isolated vertex {int(isolated[0])}")
    s = 1.0 / np.sqrt(d)
    L = np.eye(len(d)) - s[:, None] * A * s[None, :]
    return 0.5 * (L + L.T)


def simple_complete_graph_laplacian(coords, bandwidth: float = 1.0) -> HypergraphLaplacian:
    """Complete graph with weights ``exp(-|c_i - c_j|^2 / bandwidth^2)``.

    ``coords`` is an ``(n, d)`` array or anything with a ``coords`` attribute
    (a ``PointSet``).  Coincident points get weight 1.
    """
    c = np.asarray(getattr(coords, "coords", coords), dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 2:
        raise ValueError("need at least 2 points")
    if not np.all(np.isfinite(c)):
        raise ValueError("coordinates must be finite")
    diff = c[:, None, :] - c[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    A = np.exp(-sq / bandwidth**2)
    np.fill_diagonal(A, 0.0)
    return HypergraphLaplacian(simple_graph_laplacian(A))


def graph_as_hypergraph(n: int, edges: Iterable[tuple[int, int]], weights=None) -> Hypergraph:
    """A simple graph seen as a 2-uniform hypergraph."""
    return Hypergraph(n, [tuple(e) for e in edges], weights, uniform_k=2)


# -- text serialization -------------------------------------------------------

_HEADER = "hypergraph v1"


def dumps(hg: Hypergraph) -> str:
    lines = [f"{_HEADER} {hg.n_vertices} {hg.n_edges}"]
    for w, e in zip(hg.edge_weights, hg.hyperedges):
        lines.append(f"w={float(w):.17g} " + " ".join(str(v) for v in e))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Hypergraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(_HEADER + " "):
        raise ValueError(f"missing '{_HEADER}' header")
    try:
        n_vertices, n_edges = (int(t) for t in lines[0][len(_HEADER):].split())
    except ValueError:
        raise ValueError(f"malformed header: {lines[0]!r}") from None
    body = lines[1:]
    if len(body) != n_edges:
        raise ValueError(f"header declares {n_edges} hyperedges, found {len(body)}")
    edges, weights = [], []
    for ln in body:
        head, *verts = ln.split()
        if not head.startswith("w="):
            raise ValueError(f"malformed hyperedge line: {ln!r}")
        weights.append(float(head[2:]))
        edges.append([int(v) for v in verts])
    return Hypergraph(n_vertices, edges, weights)


def save(hg: Hypergraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(hg))


def load(path) -> Hypergraph:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
