"""Conductance networks and discrete potential theory on them.

Sign convention: the Laplacian at ``i`` is ``sum_j c_ij (f(i) - f(j))``; the
flux through an oriented dual path sums ``c (f(right) - f(left))`` over the
crossed primal edges, i.e. the normal derivative evaluated at the vertices on
the right of the path.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.csgraph import connected_components

from ._io import atomic_open
from .errors import (
    DisconnectedNetwork,
    EmptyNeighborSet,
    MeshMismatch,
    NetworkError,
    NotCellAligned,
    NotClosed,
    OutsideSupport,
)
from .geometry import INTERIOR, Triangulation, VoronoiDiagram


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected graph with one nonnegative conductance per edge."""

    n: int
    edges: np.ndarray
    conductance: np.ndarray
    labels: np.ndarray
    mesh: Triangulation | None = None

    def __post_init__(self):
        c = np.asarray(self.conductance, dtype=float)
        if c.shape != (len(self.edges),):
            raise NetworkError("one conductance per edge required")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise NetworkError("conductances must be finite and nonnegative")

    @cached_property
    def matrix(self) -> csr_matrix:
        """Symmetric weighted adjacency ``C[i, j] = c_ij``."""
        e, c = self.edges, self.conductance
        return coo_matrix(
            (np.r_[c, c], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(self.n, self.n)
        ).tocsr()

    @cached_property
    def degree(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @cached_property
    def laplacian_matrix(self) -> csr_matrix:
        return (diags(self.degree) - self.matrix).tocsr()

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.edges)}

    def conductance_between(self, i: int, j: int) -> float:
        k = self.edge_index.get((min(i, j), max(i, j)))
        if k is None:
            raise NetworkError(f"vertices {i} and {j} are not adjacent")
        return float(self.conductance[k])

    def neighbors(self, i: int) -> np.ndarray:
        A = self.structure
        return A.indices[A.indptr[i]:A.indptr[i + 1]]

    @cached_property
    def structure(self) -> csr_matrix:
        e = self.edges
        ones = np.ones(2 * len(e))
        return coo_matrix((ones, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(self.n, self.n)).tocsr()

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.labels == INTERIOR)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Vertex values on a mesh, extended affinely over triangles."""

    values: np.ndarray
    mesh: Triangulation | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or (self.mesh is not None and len(v) != self.mesh.n_vertices):
            raise MeshMismatch(f"field has {v.shape} values for a mesh of {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(v)):
            raise NetworkError("field values must be finite")
        object.__setattr__(self, "values", v)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if other.mesh is not self.mesh:
            raise MeshMismatch("fields live on different meshes")
        return ScalarField(self.values + other.values, self.mesh)

    def evaluate(self, points) -> np.ndarray:
        if self.mesh is None:
            raise OutsideSupport("field has no mesh to interpolate on")
        t, bary = self.mesh.locate(points)
        if np.any(t < 0):
            raise OutsideSupport(f"point {np.atleast_2d(points)[int(np.flatnonzero(t < 0)[0])]} is outside the mesh")
        return np.einsum("ij,ij->i", self.values[self.mesh.triangles[t]], bary)

    def at_sites(self, vor: VoronoiDiagram) -> np.ndarray:
        """Barycentric values at the dual vertices (circumcenters lie in their closed triangles)."""
        mesh = self.mesh
        out = np.full(vor.n_sites, np.nan)
        tri = mesh.triangles
        first = np.full(vor.n_sites, -1, dtype=np.int64)
        first[vor.triangle_site[::-1]] = np.arange(mesh.n_triangles)[::-1]
        sel = first >= 0
        ts = first[sel]
        p = vor.points[sel]
        q = mesh.vertices[tri[ts]]
        a, b, c = q[:, 0], q[:, 1], q[:, 2]
        v0, v1, v2 = b - a, c - a, p - a
        den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
        l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
        vals = self.values[tri[ts]]
        out[sel] = (1 - l1 - l2) * vals[:, 0] + l1 * vals[:, 1] + l2 * vals[:, 2]
        # boundary midpoints: average of the edge endpoints
        e = mesh.edges
        be = np.flatnonzero(mesh.boundary_edge_mask)
        out[vor.edge_dual[be, 1]] = 0.5 * (self.values[e[be, 0]] + self.values[e[be, 1]])
        return out


def build_network(vor: VoronoiDiagram) -> Network:
    """Finite-volume conductances ``m_ij / d_ij``; edges along the boundary get 0."""
    t = vor.mesh
    c = np.where(vor.interior_edge_mask, vor.m / vor.d, 0.0)
    ncomp, _ = connected_components(t.adjacency, directed=False)
    if ncomp != 1:
        raise DisconnectedNetwork(f"mesh graph has {ncomp} components")
    return Network(t.n_vertices, t.edges.copy(), c, t.labels.copy(), t)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def laplacian(net: Network, f, i: int | None = None):
    """``sum_j c_ij (f(i) - f(j))`` at vertex ``i``, or at every vertex when ``i`` is None."""
    v = _values(f)
    if i is None:
        e = net.edges
        flow = net.conductance * (v[e[:, 0]] - v[e[:, 1]])
        return np.bincount(e[:, 0], flow, net.n) - np.bincount(e[:, 1], flow, net.n)
    nb = net.neighbors(i)
    if len(nb) == 0:
        raise EmptyNeighborSet(f"vertex {i} has no neighbours")
    c = np.array([net.conductance_between(int(i), int(j)) for j in nb])
    return float(np.sum(c * (v[i] - v[nb])))


def normal_derivative(net: Network, f, x: int, F: Iterable[int] | np.ndarray | None = None,
                      admissible: Iterable[int] | None = None) -> float:
    """``sum c(x, y) (f(x) - f(y))`` over neighbours ``y`` of ``x`` in ``F``.

    ``admissible`` further restricts the neighbours, which is how callers pass
    the "only edges crossing the path" filter used for conjugate integration.
    """
    v = _values(f)
    nb = net.neighbors(x)
    keep = np.ones(len(nb), dtype=bool)
    if F is not None:
        F = np.asarray(F)
        if F.dtype == bool:
            keep &= F[nb]
        else:
            keep &= np.isin(nb, F)
    if admissible is not None:
        keep &= np.isin(nb, np.fromiter(admissible, dtype=np.int64))
    nb = nb[keep]
    if len(nb) == 0:
        raise EmptyNeighborSet(f"vertex {x} has no neighbours in the given set")
    c = np.array([net.conductance_between(int(x), int(y)) for y in nb])
    return float(np.sum(c * (v[x] - v[nb])))


def segment_edge(vor: VoronoiDiagram, a: int, b: int) -> int:
    e = vor.segment_lookup.get((min(a, b), max(a, b)))
    if e is None:
        raise NotCellAligned(f"dual vertices {a} and {b} are not joined by a dual segment")
    return e


def right_left(vor: VoronoiDiagram, a: int, b: int, e: int) -> tuple[int, int]:
    """Primal endpoints of edge ``e`` to the right and left of segment ``a -> b``."""
    i, j = vor.mesh.edges[e]
    pa, pb = vor.points[a], vor.points[b]
    xi = vor.mesh.vertices[i]
    cross = (pb[0] - pa[0]) * (xi[1] - pa[1]) - (pb[1] - pa[1]) * (xi[0] - pa[0])
    return (int(i), int(j)) if cross < 0 else (int(j), int(i))


def segment_increments(net: Network, vor: VoronoiDiagram, f, path: Sequence[int]) -> np.ndarray:
    """``c (f(right) - f(left))`` for each consecutive pair of a dual path."""
    v = _values(f)
    out = np.empty(len(path) - 1)
    for k in range(len(path) - 1):
        a, b = int(path[k]), int(path[k + 1])
        e = segment_edge(vor, a, b)
        r, l = right_left(vor, a, b, e)
        out[k] = net.conductance[e] * (v[r] - v[l])
    return out


def loop_flux(net: Network, vor: VoronoiDiagram, f, loop: Sequence[int]) -> float:
    """Discrete flux of ``f`` through a closed dual loop.

    For a counter-clockwise loop around a set of whole cells this equals
    ``-sum(laplacian)`` over the enclosed vertices; around the hole of an
    annulus it is the period of the conjugate.
    """
    loop = list(loop)
    if len(loop) < 3 or loop[0] != loop[-1]:
        raise NotClosed("a loop must start and end at the same dual vertex")
    return float(segment_increments(net, vor, f, loop).sum())


def transition_rows(net: Network) -> csr_matrix:
    """Random-walk transition matrix ``p(i, j) = c_ij / sum_k c_ik``."""
    deg = net.degree
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (diags(inv) @ net.matrix).tocsr()


def green_identity_residual(net: Network, u, v, inside) -> float:
    """Relative residual of the first Green identity on a vertex set.

    Left side sums ``c (u_i - u_j)(v_i - v_j)`` over edges touching ``inside``;
    right side is ``sum_inside v * laplacian(u)`` plus the normal derivative
    of ``u`` times ``v`` over the outer vertex boundary.
    """
    u, v = _values(u), _values(v)
    mask = np.zeros(net.n, dtype=bool)
    mask[np.asarray(inside)] = True
    e, c = net.edges, net.conductance
    touch = mask[e[:, 0]] | mask[e[:, 1]]
    du = u[e[:, 0]] - u[e[:, 1]]
    dv = v[e[:, 0]] - v[e[:, 1]]
    lhs = np.sum(c[touch] * du[touch] * dv[touch])
    lap = net.laplacian_matrix @ u
    rhs = np.sum(lap[mask] * v[mask])
    # outer vertex boundary: y outside, adjacent to inside
    cross = mask[e[:, 0]] ^ mask[e[:, 1]]
    ys = np.where(mask[e[cross, 0]], e[cross, 1], e[cross, 0])
    xs = np.where(mask[e[cross, 0]], e[cross, 0], e[cross, 1])
    rhs += np.sum(c[cross] * (u[ys] - u[xs]) * v[ys])
    scale = np.sum(c[touch] * np.abs(du[touch] * dv[touch])) + np.sum(np.abs(lap[mask] * v[mask])) + 1e-300
    return float(abs(lhs - rhs) / scale)


# ---------------------------------------------------------------------------
# dump format
# ---------------------------------------------------------------------------

def write_network(net: Network, path) -> None:
    lines = ["net v1"] + [f"e {i} {j} {c:.17g}" for (i, j), c in zip(net.edges, net.conductance)]
    with atomic_open(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_network(path, n: int | None = None, labels=None) -> Network:
    edges, cond = [], []
    with open(path) as fh:
        if fh.readline().strip() != "net v1":
            raise NetworkError("bad network header")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] != "e" or len(parts) != 4:
                raise NetworkError(f"cannot parse {line.strip()!r}")
            edges.append((int(parts[1]), int(parts[2])))
            cond.append(float(parts[3]))
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    n = int(e.max()) + 1 if n is None else n
    lab = np.zeros(n, dtype=np.int8) if labels is None else np.asarray(labels, dtype=np.int8)
    return Network(n, e, np.array(cond), lab)
