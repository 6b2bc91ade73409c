"""Combinatorial conjugate of a discrete harmonic function.

The conjugate lives on dual (Voronoi) vertices.  Walking along a dual
segment ``a -> b`` that crosses the primal edge ``(left, right)`` adds
``c * (g(right) - g(left))``; this is the discrete normal derivative taken on
the flux fellow path, the mesh vertices to the right of the walk.

The annulus is cut along one primal path from E2 to E1 (the slit).  Dual
segments crossing the slit are removed, the remaining dual graph is simply
connected, and the conjugate is summed over a spanning tree of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import breadth_first_order, dijkstra

from .errors import (
    AmbiguousSide,
    BoundarySegment,
    EndpointMismatch,
    NoEnclosingLoop,
    NonHarmonicBeyondTolerance,
    NotAPath,
    OutsideSupport,
    UnreachableVertex,
)
from .geometry import BOUNDARY_MIDPOINT, CIRCUMCENTER, E1, E2, INTERIOR, VoronoiDiagram
from .network import Network, _values, laplacian

HARMONIC_TOL = 1e-8


# ---------------------------------------------------------------------------
# flux fellow paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FluxPath:
    """A dual path together with the mesh vertices on its right.

    ``fellow_path[k]`` and ``left_path[k]`` are the endpoints of the primal
    edge ``crossed_edges[k]`` crossed by segment ``k``.
    """

    voronoi_path: np.ndarray
    fellow_path: np.ndarray
    crossed_edges: np.ndarray
    left_path: np.ndarray

    @property
    def closed(self) -> bool:
        return len(self.voronoi_path) > 1 and self.voronoi_path[0] == self.voronoi_path[-1]


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def flux_fellow_path(vor: VoronoiDiagram, gamma: Sequence[int], *, tol: float = 1e-12) -> FluxPath:
    """Fellow vertices of a simple dual path (or a simple closed loop)."""
    gamma = np.asarray(gamma, dtype=np.int64)
    if len(gamma) < 2:
        raise NotAPath("a path needs at least two dual vertices")
    closed = gamma[0] == gamma[-1]
    body = gamma[:-1] if closed else gamma
    if len(np.unique(body)) != len(body):
        raise NotAPath("dual path revisits a vertex")
    mesh = vor.mesh
    crossed, right, left = [], [], []
    for a, b in zip(gamma[:-1], gamma[1:]):
        a, b = int(a), int(b)
        if vor.kind[a] == BOUNDARY_MIDPOINT or vor.kind[b] == BOUNDARY_MIDPOINT:
            raise BoundarySegment(f"segment ({a}, {b}) is a boundary half-segment")
        e = vor.segment_lookup.get((min(a, b), max(a, b)))
        if e is None:
            raise NotAPath(f"dual vertices {a} and {b} are not joined by a dual segment")
        i, j = (int(x) for x in mesh.edges[e])
        t = vor.points[b] - vor.points[a]
        s = mesh.vertices[j] - mesh.vertices[i]
        cr = float(_cross(t, s))
        if abs(cr) <= tol * np.linalg.norm(t) * np.linalg.norm(s):
            raise AmbiguousSide(f"edge ({i}, {j}) is parallel to dual segment ({a}, {b})")
        # s points to the left of t  =>  i is the right endpoint
        r, l = (i, j) if cr > 0 else (j, i)
        crossed.append(e)
        right.append(r)
        left.append(l)
    return FluxPath(gamma, np.array(right, dtype=np.int64), np.array(crossed, dtype=np.int64),
                    np.array(left, dtype=np.int64))


def path_increments(net: Network, fp: FluxPath, g) -> np.ndarray:
    v = _values(g)
    return net.conductance[fp.crossed_edges] * (v[fp.fellow_path] - v[fp.left_path])


def path_sum(net: Network, vor: VoronoiDiagram, g, gamma: Sequence[int]) -> float:
    return float(path_increments(net, flux_fellow_path(vor, gamma), g).sum())


def path_independence_residual(net: Network, vor: VoronoiDiagram, g, gamma1: Sequence[int],
                               gamma2: Sequence[int]) -> float:
    """``|sum along gamma1 - sum along gamma2|`` for two dual paths with common ends."""
    if gamma1[0] != gamma2[0] or gamma1[-1] != gamma2[-1]:
        raise EndpointMismatch("paths must share both endpoints")
    return abs(path_sum(net, vor, g, gamma1) - path_sum(net, vor, g, gamma2))


# ---------------------------------------------------------------------------
# the dual graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualGraph:
    """Positive-length interior dual segments, one per unordered site pair.

    ``pairs[k] = (a, b)`` with ``a < b``; ``right[k]``/``left[k]`` are the
    primal endpoints of ``edge[k]`` to the right/left of ``a -> b``.
    """

    vor: VoronoiDiagram
    pairs: np.ndarray
    edge: np.ndarray
    right: np.ndarray
    left: np.ndarray

    @cached_property
    def index(self) -> csr_matrix:
        """``index[a, b] = +(k + 1)`` and ``index[b, a] = -(k + 1)``."""
        n = self.vor.n_sites
        k = np.arange(1, len(self.pairs) + 1)
        a, b = self.pairs[:, 0], self.pairs[:, 1]
        return coo_matrix((np.r_[k, -k], (np.r_[a, b], np.r_[b, a])), shape=(n, n)).tocsr()

    def increments(self, net: Network, g) -> np.ndarray:
        v = _values(g)
        return net.conductance[self.edge] * (v[self.right] - v[self.left])

    def graph(self, drop: np.ndarray | None = None) -> csr_matrix:
        keep = np.ones(len(self.pairs), dtype=bool)
        if drop is not None:
            keep[drop] = False
        n = self.vor.n_sites
        a, b = self.pairs[keep, 0], self.pairs[keep, 1]
        ones = np.ones(len(a))
        return coo_matrix((np.r_[ones, ones], (np.r_[a, b], np.r_[b, a])), shape=(n, n)).tocsr()

    def lookup(self, a, b) -> tuple[np.ndarray, np.ndarray]:
        """Pair index and orientation sign for oriented site pairs."""
        s = np.asarray(self.index[np.atleast_1d(a), np.atleast_1d(b)]).ravel().astype(np.int64)
        if np.any(s == 0):
            k = int(np.flatnonzero(s == 0)[0])
            raise NotAPath(f"dual vertices {np.atleast_1d(a)[k]} and {np.atleast_1d(b)[k]} are not adjacent")
        return np.abs(s) - 1, np.sign(s)


def dual_graph(vor: VoronoiDiagram) -> DualGraph:
    mesh = vor.mesh
    sel = vor.interior_edge_mask & (vor.edge_dual[:, 0] != vor.edge_dual[:, 1])
    e = np.flatnonzero(sel)
    a, b = vor.edge_dual[e, 0], vor.edge_dual[e, 1]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    _, first = np.unique(lo * vor.n_sites + hi, return_index=True)
    e, lo, hi = e[first], lo[first], hi[first]
    i, j = mesh.edges[e, 0], mesh.edges[e, 1]
    t = vor.points[hi] - vor.points[lo]
    s = mesh.vertices[j] - mesh.vertices[i]
    i_right = _cross(t, s) > 0
    right = np.where(i_right, i, j)
    left = np.where(i_right, j, i)
    return DualGraph(vor, np.stack([lo, hi], axis=1), e, right, left)


# ---------------------------------------------------------------------------
# slit and enclosing loop
# ---------------------------------------------------------------------------

def _positive_graph(net: Network, weights: np.ndarray | None = None) -> csr_matrix:
    pos = net.conductance > 0
    e = net.edges[pos]
    w = np.ones(len(e)) if weights is None else weights[pos]
    return coo_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                      shape=(net.n, net.n)).tocsr()


def _angle_about(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    d = np.atleast_2d(points) - center
    return np.arctan2(d[:, 1], d[:, 0])


def slit_path(net: Network, vor: VoronoiDiagram, slit: float | int = 0.0) -> np.ndarray:
    """Primal vertex path from E2 to E1 through positive-conductance edges.

    ``slit`` is either an angle (float, radians about the hole) or the index
    of an E2 vertex (int) to start from.
    """
    mesh = vor.mesh
    labels = net.labels
    hole = mesh.hole_point
    e2 = np.flatnonzero(labels == E2)
    e1 = np.flatnonzero(labels == E1)
    if len(e1) == 0 or len(e2) == 0:
        raise NoEnclosingLoop("annulus needs vertices on both E1 and E2")
    if isinstance(slit, (int, np.integer)) and not isinstance(slit, bool):
        start = int(slit)
        if labels[start] != E2:
            raise NotAPath(f"slit start {start} is not an E2 vertex")
        theta = float(_angle_about(mesh.vertices[start], hole)[0])
    else:
        theta = float(slit)
        ang = _angle_about(mesh.vertices[e2], hole)
        start = int(e2[np.argmin(np.abs(np.angle(np.exp(1j * (ang - theta)))))])
    ang1 = _angle_about(mesh.vertices[e1], hole)
    target = int(e1[np.argmin(np.abs(np.angle(np.exp(1j * (ang1 - theta)))))])
    w = mesh.edge_lengths if net.mesh is mesh else None
    G = _positive_graph(net, w)
    _, pred = dijkstra(G, indices=start, return_predecessors=True)
    if pred[target] < 0:
        raise UnreachableVertex(f"E1 vertex {target} cannot be reached from E2 vertex {start}")
    path = [target]
    while path[-1] != start:
        path.append(int(pred[path[-1]]))
    path = np.array(path[::-1])
    # keep the piece between the last E2 vertex and the first E1 vertex after it
    lab = labels[path]
    k0 = int(np.flatnonzero(lab == E2).max())
    k1 = k0 + int(np.flatnonzero(lab[k0:] == E1).min())
    return path[k0:k1 + 1]


def _edges_of_path(net: Network, path: np.ndarray) -> np.ndarray:
    idx = net.edge_index
    return np.array([idx[(min(a, b), max(a, b))] for a, b in zip(path[:-1], path[1:])], dtype=np.int64)


def _distance_from(net: Network, sources: np.ndarray) -> np.ndarray:
    """Hop distance over positive-conductance edges from a vertex set."""
    G = _positive_graph(net)
    dist = np.full(net.n, np.inf)
    dist[sources] = 0
    frontier = np.zeros(net.n, dtype=bool)
    frontier[sources] = True
    k = 0
    while frontier.any():
        k += 1
        reach = np.asarray(G[frontier].sum(axis=0)).ravel() > 0
        new = reach & np.isinf(dist)
        dist[new] = k
        frontier = new
    return dist


def winding_number(points: np.ndarray, center) -> float:
    """Winding of a closed polyline (first point not repeated) about ``center``."""
    d = np.asarray(points, dtype=complex) if np.iscomplexobj(points) else None
    if d is None:
        p = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
        d = p[:, 0] + 1j * p[:, 1]
    else:
        d = d - center
    step = np.angle(np.roll(d, -1) / d)
    return float(step.sum() / (2 * math.pi))


def boundary_loop_of_cells(vor: VoronoiDiagram, inside: np.ndarray) -> list[np.ndarray]:
    """Closed dual loops bounding the union of the cells of ``inside``.

    Each loop runs with the cells on its left and is returned closed
    (first site repeated at the end).  Where two pieces of the region touch
    at a single dual vertex the tracing turns as sharply as possible, so
    the pieces come out as separate loops.
    """
    mesh = vor.mesh
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[np.asarray(inside)] = True
    dg = dual_graph(vor)
    cut = mask[dg.right] ^ mask[dg.left]
    a, b = dg.pairs[cut, 0], dg.pairs[cut, 1]
    # orient so the inside vertex is on the left
    flip = mask[dg.right[cut]]
    src = np.where(flip, b, a)
    dst = np.where(flip, a, b)
    out: dict[int, list[int]] = {}
    for k, s in enumerate(src):
        out.setdefault(int(s), []).append(k)
    used = np.zeros(len(src), dtype=bool)
    P = vor.points
    loops = []
    for k0 in range(len(src)):
        if used[k0]:
            continue
        loop = [int(src[k0])]
        k = k0
        while not used[k]:
            used[k] = True
            v = int(dst[k])
            loop.append(v)
            cands = [c for c in out.get(v, []) if not used[c]]
            if not cands:
                break
            if len(cands) > 1:
                back = P[src[k]] - P[v]
                ab = math.atan2(back[1], back[0])

                def cw_angle(c):
                    d = P[dst[c]] - P[v]
                    return (ab - math.atan2(d[1], d[0])) % (2 * math.pi) or 2 * math.pi

                cands.sort(key=cw_angle)
            k = cands[0]
        if loop[0] == loop[-1]:
            loops.append(np.array(loop, dtype=np.int64))
    return loops


def enclosing_loop(net: Network, vor: VoronoiDiagram, depth: int | None = None) -> np.ndarray:
    """A counter-clockwise dual loop winding once around the hole.

    It bounds the cells within ``depth`` hops of E2 (default: half the hop
    distance from E2 to E1).
    """
    mesh = vor.mesh
    e2 = np.flatnonzero(net.labels == E2)
    dist = _distance_from(net, e2)
    to_e1 = dist[net.labels == E1]
    if len(e2) == 0 or len(to_e1) == 0 or not np.isfinite(to_e1.min()):
        raise NoEnclosingLoop("E1 is not reachable from E2")
    D = int(to_e1.min())
    k = D // 2 if depth is None else int(depth)
    if not 0 <= k < D:
        raise NoEnclosingLoop(f"depth {k} must lie in [0, {D})")
    inside = np.flatnonzero(dist <= k)
    hole = mesh.hole_point
    for loop in boundary_loop_of_cells(vor, inside):
        if round(winding_number(vor.points[loop[:-1]], hole)) == 1:
            return loop
    raise NoEnclosingLoop("no dual loop winds once around the hole")


def period(net: Network, vor: VoronoiDiagram, g, loop: Sequence[int] | None = None) -> float:
    """Signed flux of ``g`` through a closed dual loop (default: :func:`enclosing_loop`)."""
    loop = enclosing_loop(net, vor) if loop is None else np.asarray(loop)
    if loop[0] != loop[-1]:
        raise NoEnclosingLoop("period needs a closed loop")
    dg = dual_graph(vor)
    k, sgn = dg.lookup(loop[:-1], loop[1:])
    inc = dg.increments(net, g)
    return float(np.sum(sgn * inc[k]))


# ---------------------------------------------------------------------------
# the conjugate field
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConjugateField:
    """Conjugate values on dual vertices; NaN where undefined.

    Values are single-valued on the dual graph cut along ``slit_edges``;
    crossing the slit changes the value by ``period``.
    """

    values: np.ndarray
    vor: VoronoiDiagram
    basepoint: int
    base_value: float
    period: float
    slit: np.ndarray
    slit_edges: np.ndarray
    loop: np.ndarray = field(repr=False)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def cell_values(self, i: int) -> np.ndarray:
        """Values around the cell of mesh vertex ``i``, unwrapped across the slit."""
        ids = self.vor.cells[i]
        v = self.values[ids]
        return _unwrap(v, self.period)

    def evaluate(self, points) -> np.ndarray:
        """Affine extension over fans of the interior cells."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        owner = self.vor.nearest_vertex(pts)
        out = np.empty(len(pts))
        for n, (p, i) in enumerate(zip(pts, owner)):
            out[n] = self._eval_in_cell(p, int(i))
        return out

    def _eval_in_cell(self, p: np.ndarray, i: int) -> float:
        vor = self.vor
        if vor.mesh.boundary_vertex_mask[i]:
            raise OutsideSupport(f"point {p} lies in the boundary cell of vertex {i}")
        ids = vor.cells[i]
        if np.any(np.isnan(self.values[ids])):
            raise OutsideSupport(f"cell of vertex {i} has undefined conjugate values")
        vals = self.cell_values(i)
        return _fan_interpolate(vor.points[ids], vals, p)


def _unwrap(v: np.ndarray, P: float) -> np.ndarray:
    if P == 0 or len(v) == 0:
        return v.copy()
    return v - np.round((v - v[0]) / P) * P


def _fan_interpolate(poly: np.ndarray, vals: np.ndarray, p: np.ndarray) -> complex | float:
    """Affine interpolation on the fan from ``poly[0]``; falls back to the best triangle."""
    a = poly[0]
    best, best_score = None, -np.inf
    for k in range(1, len(poly) - 1):
        b, c = poly[k], poly[k + 1]
        den = _cross(b - a, c - a)
        if abs(den) < 1e-300:
            continue
        l1 = _cross(p - a, c - a) / den
        l2 = _cross(b - a, p - a) / den
        l0 = 1.0 - l1 - l2
        score = min(l0, l1, l2)
        if score > best_score:
            best_score, best = score, (k, l0, l1, l2)
    if best is None:
        return vals.mean()
    k, l0, l1, l2 = best
    return l0 * vals[0] + l1 * vals[k] + l2 * vals[k + 1]


def harmonic_defects(net: Network, g) -> np.ndarray:
    """Per-vertex ``|Laplacian g|`` relative to the local flux scale (NaN on the boundary)."""
    v = _values(g)
    e, c = net.edges, net.conductance
    scale = np.zeros(net.n)
    flux = c * np.abs(v[e[:, 0]] - v[e[:, 1]])
    np.add.at(scale, e[:, 0], flux)
    np.add.at(scale, e[:, 1], flux)
    lap = np.abs(laplacian(net, v))
    rel = np.divide(lap, scale, out=np.where(lap > 0, np.inf, 0.0), where=scale > 0)
    rel[net.labels != INTERIOR] = np.nan
    return rel


def conjugate_field(net: Network, vor: VoronoiDiagram, g, basepoint: int | None = None,
                    base_value: float = 0.0, *, slit: float | int = 0.0,
                    tol: float | None = HARMONIC_TOL, loop: Sequence[int] | None = None) -> ConjugateField:
    """Integrate the normal derivative of ``g`` over the slit dual graph.

    ``tol`` bounds the relative per-cell Laplacian of ``g``; pass None to
    accept asymptotically harmonic input without the check.
    """
    v = _values(g)
    if tol is not None:
        rel = harmonic_defects(net, v)
        worst = np.nanmax(rel) if np.any(~np.isnan(rel)) else 0.0
        if worst > tol:
            i = int(np.nanargmax(rel))
            raise NonHarmonicBeyondTolerance(
                f"relative Laplacian {worst:.3e} at vertex {i} exceeds {tol:.1e}")
    dg = dual_graph(vor)
    spath = slit_path(net, vor, slit)
    sedges = _edges_of_path(net, spath)
    pair_of_edge = np.full(len(net.edges), -1, dtype=np.int64)
    pair_of_edge[dg.edge] = np.arange(len(dg.edge))
    drop = pair_of_edge[sedges]
    drop = drop[drop >= 0]

    full = dg.graph()
    deg = np.diff(full.indptr)
    candidates = np.flatnonzero((vor.kind == CIRCUMCENTER) & (deg > 0))
    if basepoint is None:
        basepoint = int(dg.pairs[drop[0], 0]) if len(drop) else int(candidates[0])
    if vor.kind[basepoint] != CIRCUMCENTER or deg[basepoint] == 0:
        raise UnreachableVertex(f"basepoint {basepoint} is not an interior dual vertex")

    cut = dg.graph(drop)
    order, pred = breadth_first_order(cut, basepoint, directed=False, return_predecessors=True)
    reached = np.zeros(vor.n_sites, dtype=bool)
    reached[order] = True
    missing = candidates[~reached[candidates]]
    if len(missing):
        raise UnreachableVertex(f"dual vertex {int(missing[0])} is cut off from the basepoint")

    inc = dg.increments(net, v)
    child = order[1:]
    k, sgn = dg.lookup(pred[child], child)
    step = sgn * inc[k]
    vals = np.full(vor.n_sites, np.nan)
    vals[basepoint] = base_value
    for c, p, s in zip(child.tolist(), pred[child].tolist(), step.tolist()):
        vals[c] = vals[p] + s

    loop = enclosing_loop(net, vor) if loop is None else np.asarray(loop)
    P = period(net, vor, v, loop)
    return ConjugateField(vals, vor, int(basepoint), float(base_value), P, spath, sedges, loop)


def slit_jump(cf: ConjugateField, net: Network, g) -> np.ndarray:
    """Value jumps across each removed segment, oriented like the enclosing loop.

    For harmonic ``g`` every entry equals the period.
    """
    vor = cf.vor
    dg = dual_graph(vor)
    pair_of_edge = np.full(len(net.edges), -1, dtype=np.int64)
    pair_of_edge[dg.edge] = np.arange(len(dg.edge))
    ks = pair_of_edge[cf.slit_edges]
    ks = ks[ks >= 0]
    inc = dg.increments(net, g)
    a, b = dg.pairs[ks, 0], dg.pairs[ks, 1]
    # orient each removed segment counter-clockwise about the hole
    hole = vor.mesh.hole_point
    pa, pb = vor.points[a] - hole, vor.points[b] - hole
    ccw = _cross(pa, pb) > 0
    sgn = np.where(ccw, 1.0, -1.0)
    # closing the tree path with the removed segment gives one loop around the hole
    return sgn * (inc[ks] - (cf.values[b] - cf.values[a]))
