"""Circle packings, Stephenson's radical-center conductance, and the Markov check.

For three mutually tangent circles the radical center is the incenter of the
triangle of centers; the segment joining the radical centers of the two
triangles flanking an edge ``(u, v)`` is orthogonal to it, and its length
over ``|z_u - z_v|`` is the conductance of the edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from ._io import atomic_open
from .errors import BoundaryEdge, CollinearCenters, IncompleteFlower, NonTriangulatedComplex, PackingError
from .geometry import MeshQualityReport, Triangulation, build_triangulation, validate_mesh
from .network import Network

TANGENCY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CirclePacking:
    """Circles with a tangency graph and contact triangles.

    With ``validate`` every tangency edge is checked to satisfy
    ``|z_u - z_v| = R_u + R_v`` to relative tolerance ``TANGENCY_TOL``.
    """

    centers: np.ndarray
    radii: np.ndarray
    edges: np.ndarray
    triangles: np.ndarray
    validate: bool = True

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        r = np.asarray(self.radii, dtype=float).ravel()
        e = np.sort(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2), axis=1)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(c) != len(r):
            raise PackingError("one radius per center required")
        if np.any(r <= 0):
            raise PackingError("radii must be positive")
        if np.any(e[:, 0] == e[:, 1]) or len(np.unique(e, axis=0)) != len(e):
            raise PackingError("tangency graph must be simple")
        for name, val in (("centers", c), ("radii", r), ("edges", e), ("triangles", t)):
            object.__setattr__(self, name, val)
        if self.validate:
            gap = self.tangency_gaps()
            if len(gap) and gap.max() > TANGENCY_TOL:
                k = int(np.argmax(gap))
                raise PackingError(f"circles {tuple(e[k])} are not tangent (relative gap {gap[k]:.3e})")

    @property
    def n(self) -> int:
        return len(self.radii)

    def tangency_gaps(self) -> np.ndarray:
        e = self.edges
        dist = np.linalg.norm(self.centers[e[:, 0]] - self.centers[e[:, 1]], axis=1)
        want = self.radii[e[:, 0]] + self.radii[e[:, 1]]
        return np.abs(dist - want) / want

    def circle(self, i: int) -> tuple[float, float, float]:
        return float(self.centers[i, 0]), float(self.centers[i, 1]), float(self.radii[i])

    @cached_property
    def edge_triangles(self) -> dict[tuple[int, int], list[int]]:
        """Contact triangles on each edge (the third vertex of each)."""
        out: dict[tuple[int, int], list[int]] = {}
        for a, b, c in self.triangles:
            for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
                out.setdefault((min(u, v), max(u, v)), []).append(int(w))
        for key, third in out.items():
            if len(third) > 2:
                raise NonTriangulatedComplex(f"edge {key} lies in {len(third)} contact triangles")
        return out

    def flower(self, v: int) -> list[int]:
        """Petals of an interior vertex in cyclic order."""
        nbrs: dict[int, list[int]] = {}
        for a, b, c in self.triangles:
            tri = [int(a), int(b), int(c)]
            if v in tri:
                k = tri.index(v)
                u, w = tri[(k + 1) % 3], tri[(k + 2) % 3]
                nbrs.setdefault(u, []).append(w)
                nbrs.setdefault(w, []).append(u)
        if not nbrs or any(len(x) != 2 for x in nbrs.values()):
            raise IncompleteFlower(f"vertex {v} does not have a closed flower")
        start = min(nbrs)
        order = [start, nbrs[start][0]]
        while len(order) < len(nbrs):
            a, b = nbrs[order[-1]]
            nxt = a if a != order[-2] else b
            if nxt == start:
                break
            order.append(nxt)
        if len(order) != len(nbrs):
            raise IncompleteFlower(f"petals of vertex {v} form more than one cycle")
        return order

    def scaled(self, s: float) -> "CirclePacking":
        return CirclePacking(self.centers * s, self.radii * s, self.edges, self.triangles, self.validate)


def radical_center(c1, c2, c3, *, tol: float = 1e-12) -> np.ndarray:
    """Point of equal power with respect to three circles ``(x, y, r)``."""
    (x1, y1, r1), (x2, y2, r2), (x3, y3, r3) = c1, c2, c3
    A = np.array([[x2 - x1, y2 - y1], [x3 - x1, y3 - y1]], dtype=float) * 2.0
    rhs = np.array([
        (x2 * x2 + y2 * y2 - r2 * r2) - (x1 * x1 + y1 * y1 - r1 * r1),
        (x3 * x3 + y3 * y3 - r3 * r3) - (x1 * x1 + y1 * y1 - r1 * r1),
    ])
    scale = max(np.abs(A).max(), 1e-300)
    if abs(np.linalg.det(A)) <= tol * scale * scale:
        raise CollinearCenters("circle centers are collinear")
    return np.linalg.solve(A, rhs)


def power(p, circle) -> float:
    x, y, r = circle
    return (p[0] - x) ** 2 + (p[1] - y) ** 2 - r * r


def stephenson_conductance(p: CirclePacking, u: int, v: int) -> float:
    """``|w_x - w_y| / |z_u - z_v|`` for the radical centers flanking edge ``(u, v)``."""
    key = (min(u, v), max(u, v))
    third = p.edge_triangles.get(key, [])
    if len(third) < 2:
        raise BoundaryEdge(f"edge {key} has {len(third)} flanking contact triangle(s)")
    x, y = third
    cu, cv = p.circle(u), p.circle(v)
    wx = radical_center(cu, cv, p.circle(x))
    wy = radical_center(cu, cv, p.circle(y))
    return float(np.linalg.norm(wx - wy) / np.linalg.norm(p.centers[u] - p.centers[v]))


def packing_conductances(p: CirclePacking) -> np.ndarray:
    """Conductance per tangency edge; 0 on edges with a single flanking triangle."""
    out = np.zeros(len(p.edges))
    for k, (u, v) in enumerate(p.edges):
        if len(p.edge_triangles.get((int(u), int(v)), [])) == 2:
            out[k] = stephenson_conductance(p, int(u), int(v))
    return out


def packing_to_network(p: CirclePacking, *, require_nonobtuse: bool = False
                       ) -> tuple[Triangulation, Network, MeshQualityReport]:
    """Triangulation on the centers, Stephenson network on it, and its quality report."""
    if len(p.triangles) == 0:
        raise NonTriangulatedComplex("packing has no contact triangles")
    _ = p.edge_triangles
    mesh = build_triangulation(p.centers, p.triangles, require_nonobtuse=require_nonobtuse)
    tri_edges = {(int(a), int(b)) for a, b in mesh.edges}
    pack_edges = {(int(a), int(b)) for a, b in p.edges}
    if tri_edges != pack_edges:
        raise NonTriangulatedComplex("tangency edges and contact triangles disagree")
    idx = {(int(a), int(b)): k for k, (a, b) in enumerate(p.edges)}
    cond = packing_conductances(p)
    c = np.array([cond[idx[(int(a), int(b))]] for a, b in mesh.edges])
    net = Network(mesh.n_vertices, mesh.edges.copy(), c, mesh.labels.copy(), mesh)
    return mesh, net, validate_mesh(mesh)


# ---------------------------------------------------------------------------
# example packings
# ---------------------------------------------------------------------------

def hexagonal_packing(rings: int = 1, radius: float = 1.0) -> CirclePacking:
    """Equal circles on the triangular lattice within hex distance ``rings`` of the origin."""
    coords = [(q, r) for q in range(-rings, rings + 1) for r in range(-rings, rings + 1)
              if max(abs(q), abs(r), abs(q + r)) <= rings]
    index = {c: k for k, c in enumerate(coords)}
    s3 = math.sqrt(3.0)
    centers = np.array([[2 * radius * (q + r / 2), radius * s3 * r] for q, r in coords])
    edges, tris = [], []
    for (q, r), k in index.items():
        for dq, dr in ((1, 0), (0, 1), (-1, 1)):
            j = index.get((q + dq, r + dr))
            if j is not None:
                edges.append((k, j))
        a, b, c = index.get((q + 1, r)), index.get((q, r + 1)), index.get((q - 1, r + 1))
        if a is not None and b is not None:
            tris.append((k, a, b))
        if b is not None and c is not None:
            tris.append((k, b, c))
    return CirclePacking(centers, np.full(len(coords), radius), np.array(edges), np.array(tris))


def tangent_angle(ra: float, rb: float, rc: float) -> float:
    """Angle at circle ``a`` in the triangle of centers of three mutually tangent circles."""
    ab, ac, bc = ra + rb, ra + rc, rb + rc
    cos = (ab * ab + ac * ac - bc * bc) / (2 * ab * ac)
    return math.acos(min(1.0, max(-1.0, cos)))


def closing_radius(petals: Sequence[float]) -> float:
    """Center radius whose angle sum against the given petals is ``2 pi``."""
    petals = list(petals)

    def excess(R):
        return sum(tangent_angle(R, a, b) for a, b in zip(petals, petals[1:] + petals[:1])) - 2 * math.pi

    lo, hi = 1e-6 * min(petals), 1e6 * max(petals)
    if excess(lo) * excess(hi) > 0:
        raise PackingError("no center radius closes this flower")
    return brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def flower_packing(center_radius: float, petals: Sequence[float]) -> CirclePacking:
    """A center circle and its petals, laid out by tangency propagation.

    Petal 0 sits on the positive x-axis; each next petal is placed tangent to
    the center and the previous petal.  The contact complex always includes
    the closing triangle; when the layout does not close up (angle sum away
    from ``2 pi``) the packing is returned without the tangency check.
    """
    petals = [float(r) for r in petals]
    k = len(petals)
    if k < 3:
        raise IncompleteFlower("a flower needs at least three petals")
    R = float(center_radius)
    centers = [(0.0, 0.0)]
    ang = 0.0
    for j, r in enumerate(petals):
        if j:
            ang += tangent_angle(R, petals[j - 1], r)
        centers.append(((R + r) * math.cos(ang), (R + r) * math.sin(ang)))
    edges = [(0, j + 1) for j in range(k)] + [(j + 1, (j + 1) % k + 1) for j in range(k)]
    tris = [(0, j + 1, (j + 1) % k + 1) for j in range(k)]
    total = ang + tangent_angle(R, petals[-1], petals[0])
    closed = abs(total - 2 * math.pi) <= 1e-12 * 2 * math.pi
    return CirclePacking(np.array(centers), np.array([R] + petals), np.array(edges), np.array(tris), validate=closed)


# ---------------------------------------------------------------------------
# Markov transition check
# ---------------------------------------------------------------------------

def _hinge_conductance(Rv: float, Ru: float, Rx: float, Ry: float) -> float:
    """Conductance of ``(v, u)`` from a local layout of its two flanking triangles."""
    du = Rv + Ru
    zv, zu = (0.0, 0.0), (du, 0.0)
    ax = tangent_angle(Rv, Ru, Rx)
    ay = tangent_angle(Rv, Ru, Ry)
    zx = ((Rv + Rx) * math.cos(-ax), (Rv + Rx) * math.sin(-ax))
    zy = ((Rv + Ry) * math.cos(ay), (Rv + Ry) * math.sin(ay))
    wx = radical_center((*zv, Rv), (*zu, Ru), (*zx, Rx))
    wy = radical_center((*zv, Rv), (*zu, Ru), (*zy, Ry))
    return float(np.linalg.norm(wx - wy) / du)


def markov_distributions(p: CirclePacking, v: int, h: float | None = None) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Conductance transition ``p(v, .)`` and angle transition ``rho(v, .)`` over the petals.

    ``rho(v, u) = dpsi_u/dR_v / sum_j dpsi_(u_j)/dR_v`` with central
    differences of step ``h`` (default ``1e-6 R_v``); only the two
    triangles on edge ``(v, u)`` contribute to ``dpsi_u/dR_v``.
    """
    petals = p.flower(v)
    R = p.radii
    Rv = float(R[v])
    h = 1e-6 * Rv if h is None else float(h)
    if not 0 < h < Rv:
        raise PackingError("finite-difference step must lie in (0, R_v)")
    k = len(petals)
    r = [float(R[u]) for u in petals]
    cond = np.array([_hinge_conductance(Rv, r[j], r[j - 1], r[(j + 1) % k]) for j in range(k)])

    def psi(j, rv):
        u, prev, nxt = r[j], r[j - 1], r[(j + 1) % k]
        return tangent_angle(u, rv, prev) + tangent_angle(u, rv, nxt)

    dpsi = np.array([(psi(j, Rv + h) - psi(j, Rv - h)) / (2 * h) for j in range(k)])
    return cond / cond.sum(), dpsi / dpsi.sum(), petals


def markov_equality_check(p: CirclePacking, v: int, h: float | None = None) -> float:
    """``max_u |p(v, u) - rho(v, u)|`` over the petals of ``v``."""
    pc, rho, _ = markov_distributions(p, v, h)
    return float(np.max(np.abs(pc - rho)))


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def write_packing(p: CirclePacking, path) -> None:
    lines = ["pack v1"]
    lines += [f"c {x:.17g} {y:.17g} {r:.17g}" for (x, y), r in zip(p.centers, p.radii)]
    lines += [f"e {i} {j}" for i, j in p.edges]
    lines += [f"t {a} {b} {c}" for a, b, c in p.triangles]
    with atomic_open(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_packing(path, *, validate: bool = True) -> CirclePacking:
    circles, edges, tris = [], [], []
    with open(path) as fh:
        if fh.readline().strip() != "pack v1":
            raise PackingError("bad packing header")
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "c" and len(parts) == 4:
                    circles.append(tuple(float(x) for x in parts[1:]))
                elif parts[0] == "e" and len(parts) == 3:
                    edges.append((int(parts[1]), int(parts[2])))
                elif parts[0] == "t" and len(parts) == 4:
                    tris.append(tuple(int(x) for x in parts[1:]))
                else:
                    raise ValueError(line)
            except ValueError as exc:
                raise PackingError(f"line {lineno}: cannot parse {line.strip()!r}") from exc
    c = np.array(circles).reshape(-1, 3)
    return CirclePacking(c[:, :2], c[:, 2], np.array(edges).reshape(-1, 2), np.array(tris).reshape(-1, 3), validate)
