"""Triangulations of polygonal annuli and their circumcentric dual.

Meshes here are nonobtuse, so every circumcenter lies in its closed triangle
and the perpendicular-bisector dual is the Voronoi diagram of the vertex set.
Right triangles are allowed; pairs of right triangles sharing a hypotenuse
have coincident circumcenters, which are merged into a single dual vertex
(the shared dual segment then has length zero).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Sequence

import numpy as np
import shapely
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from shapely.geometry import LinearRing, Polygon

from ._io import atomic_open
from .errors import (
    DegenerateAnnulus,
    GeometryError,
    InvalidAnnulus,
    MeshFormatError,
    NonConformingMesh,
    NumericallyDegenerate,
    ObtuseTriangle,
    UnlabeledBoundaryVertex,
)

INTERIOR, E1, E2 = 0, 1, 2

# relative slack on the right-angle test; lattice meshes sit exactly at 90 deg
ANGLE_TOL = 1e-12
# circumcenter system: |det| below this times scale**2 is treated as singular
DET_TOL = 1e-14
# circumcenters closer than this times the mesh size are the same dual vertex
MERGE_TOL = 1e-10


def _as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"expected an (n, 2) array of points, got shape {arr.shape}")
    if len(arr) > 1 and np.allclose(arr[0], arr[-1]):
        arr = arr[:-1]
    return arr


def _signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every point to every segment ``[a[k], b[k]]``; shape (P, S)."""
    p = points[:, None, :]
    ab = (b - a)[None, :, :]
    ap = p - a[None, :, :]
    denom = np.maximum(np.einsum("psk,psk->ps", ab, ab), 1e-300)
    s = np.clip(np.einsum("psk,psk->ps", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + s[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


@dataclass(frozen=True, eq=False)
class PolygonalAnnulus:
    """Region between two disjoint simple polygons.

    Loops are normalized on construction: the outer loop counter-clockwise,
    the inner loop clockwise.
    """

    outer: np.ndarray
    inner: np.ndarray

    def __post_init__(self):
        outer = _as_points(self.outer)
        inner = _as_points(self.inner)
        if len(outer) < 3 or len(inner) < 3:
            raise InvalidAnnulus("each loop needs at least three vertices")
        for name, loop in (("outer", outer), ("inner", inner)):
            ring = LinearRing(loop)
            if not ring.is_simple:
                raise InvalidAnnulus(f"{name} loop is not simple")
        if _signed_area(outer) < 0:
            outer = outer[::-1].copy()
        if _signed_area(inner) > 0:
            inner = inner[::-1].copy()
        po, pi = Polygon(outer), Polygon(inner)
        if not po.contains(pi) or LinearRing(outer).intersects(LinearRing(inner)):
            raise InvalidAnnulus("inner loop must lie strictly inside the outer loop")
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "inner", inner)

    @classmethod
    def square(cls, outer_half: float, inner_half: float, center=(0.0, 0.0)):
        cx, cy = center

        def box(h):
            return np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])

        return cls(box(outer_half), box(inner_half))

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.outer, [self.inner])

    @property
    def area(self) -> float:
        return float(self.polygon.area)

    @cached_property
    def hole_point(self) -> np.ndarray:
        p = Polygon(self.inner).representative_point()
        return np.array([p.x, p.y])

    def loop_distance(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Distances from ``points`` to the outer and to the inner loop."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = []
        for loop in (self.outer, self.inner):
            d = point_segment_distance(pts, loop, np.roll(loop, -1, axis=0))
            out.append(d.min(axis=1))
        return out[0], out[1]


@dataclass(frozen=True)
class RoundAnnulus:
    """``{a <= |z - center| <= b}``; meshed through an inscribed polygonal annulus."""

    inner_radius: float
    outer_radius: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise InvalidAnnulus("need 0 < inner_radius < outer_radius")

    @property
    def log_ratio(self) -> float:
        return math.log(self.outer_radius / self.inner_radius)

    def potential(self, points) -> np.ndarray:
        """Classical solution: 1 on the outer circle, 0 on the inner one."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.center)
        r = np.hypot(pts[:, 0], pts[:, 1])
        return np.log(r / self.inner_radius) / self.log_ratio

    def potential_laplacian(self, points) -> np.ndarray:
        return np.zeros(len(np.atleast_2d(points)))

    @property
    def period(self) -> float:
        return 2 * math.pi / self.log_ratio

    @property
    def hole_point(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


# ---------------------------------------------------------------------------
# triangulations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Triangulation:
    """Validated planar triangle mesh with per-vertex boundary labels.

    Triangles are stored counter-clockwise.  Use :func:`build_triangulation`
    rather than the constructor, which performs no checks.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray
    annulus: PolygonalAnnulus | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        tri = self.triangles
        nt = len(tri)
        # half-edge k of triangle t runs tri[t, k] -> tri[t, k+1]
        a = tri.reshape(-1)
        b = np.roll(tri, -1, axis=1).reshape(-1)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo.astype(np.int64) * self.n_vertices + hi
        uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        if counts.max(initial=0) > 2:
            bad = int(np.flatnonzero(counts > 2)[0])
            i, j = divmod(int(uniq[bad]), self.n_vertices)
            raise NonConformingMesh(f"edge ({i}, {j}) is shared by {counts[bad]} triangles")
        edges = np.stack(divmod(uniq, self.n_vertices), axis=1).astype(np.int64)
        edge_tris = np.full((len(uniq), 2), -1, dtype=np.int64)
        tri_of_he = np.repeat(np.arange(nt), 3)
        order = np.argsort(inv, kind="stable")
        inv_sorted = inv[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv_sorted[1:] != inv_sorted[:-1]
        edge_tris[inv_sorted[first], 0] = tri_of_he[order[first]]
        edge_tris[inv_sorted[~first], 1] = tri_of_he[order[~first]]
        tri_edges = inv.reshape(nt, 3)
        return edges, edge_tris, tri_edges

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs, shape (E, 2)."""
        return self._edge_data[0]

    @property
    def edge_triangles(self) -> np.ndarray:
        """The one or two triangles on each edge; -1 marks a missing side."""
        return self._edge_data[1]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of side ``(tri[t,k], tri[t,k+1])``, shape (T, 3)."""
        return self._edge_data[2]

    @cached_property
    def boundary_edge_mask(self) -> np.ndarray:
        return self.edge_triangles[:, 1] < 0

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edge_mask].ravel()] = True
        return mask

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == INTERIOR)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @cached_property
    def mesh_size(self) -> float:
        """Largest edge length over all triangles."""
        return float(self.edge_lengths.max())

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        u, v = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    @cached_property
    def vertex_triangles(self) -> csr_matrix:
        nt = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(nt), 3)
        return coo_matrix((np.ones(3 * nt), (rows, cols)), shape=(self.n_vertices, nt)).tocsr()

    @cached_property
    def adjacency(self) -> csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        return coo_matrix(
            (data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)
        ).tocsr()

    @cached_property
    def _kdtree(self) -> cKDTree:
        return cKDTree(self.vertices)

    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary edges chained into closed vertex loops, domain on the left."""
        tri = self.triangles
        nxt: dict[int, int] = {}
        be = np.flatnonzero(self.boundary_edge_mask)
        for e in be:
            t = self.edge_triangles[e, 0]
            i, j = self.edges[e]
            row = list(tri[t])
            k = row.index(i)
            # orient along the triangle (counter-clockwise => domain on the left)
            if row[(k + 1) % 3] == j:
                a, b = i, j
            else:
                a, b = j, i
            if a in nxt:
                raise DegenerateAnnulus(f"boundary pinches at vertex {a}")
            nxt[int(a)] = int(b)
        loops = []
        seen: set[int] = set()
        for start in nxt:
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                if cur in seen or cur not in nxt:
                    raise NonConformingMesh("boundary edges do not close into loops")
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            loops.append(np.asarray(loop))
        return loops

    @cached_property
    def hole_point(self) -> np.ndarray | None:
        """A point inside the hole bounded by E2, or None for a disk."""
        if self.annulus is not None:
            return self.annulus.hole_point
        for loop in self.boundary_loops():
            if np.all(self.labels[loop] == E2):
                pts = self.vertices[loop]
                p = Polygon(pts).representative_point()
                return np.array([p.x, p.y])
        return None

    def locate(self, points, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates for each point.

        Points outside the mesh get triangle index -1.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(8, self.n_vertices)
        _, near = self._kdtree.query(pts, k=k)
        near = np.atleast_2d(near)
        vt = self.vertex_triangles
        out_t = np.full(len(pts), -1, dtype=np.int64)
        out_b = np.zeros((len(pts), 3))
        for n, p in enumerate(pts):
            cands = np.unique(np.concatenate([vt.indices[vt.indptr[v]:vt.indptr[v + 1]] for v in near[n]]))
            t, bary = self._barycentric_in(p, cands, tol)
            if t < 0:
                t, bary = self._barycentric_in(p, np.arange(self.n_triangles), tol)
            out_t[n] = t
            if t >= 0:
                out_b[n] = bary
        return out_t, out_b

    def _barycentric_in(self, p, cands, tol):
        q = self.vertices[self.triangles[cands]]
        a, b, c = q[:, 0], q[:, 1], q[:, 2]
        v0, v1, v2 = b - a, c - a, p - a
        den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
        l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
        l0 = 1.0 - l1 - l2
        bary = np.stack([l0, l1, l2], axis=1)
        score = bary.min(axis=1)
        best = int(np.argmax(score))
        if score[best] < -tol * 1e3:
            return -1, None
        return int(cands[best]), bary[best]


def _triangle_angles_ok(pts: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle nonobtuse flag and max angle in degrees."""
    p = pts[tri]
    worst = np.full(len(tri), -np.inf)
    ok = np.ones(len(tri), dtype=bool)
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        dot = np.einsum("ij,ij->i", u, v)
        nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
        cosang = np.clip(dot / (nu * nv), -1.0, 1.0)
        worst = np.maximum(worst, np.degrees(np.arccos(cosang)))
        ok &= dot >= -ANGLE_TOL * nu * nv
    return ok, worst


def build_triangulation(
    vertices,
    triangles,
    annulus: PolygonalAnnulus | None = None,
    labels=None,
    *,
    require_nonobtuse: bool = True,
) -> Triangulation:
    """Validate a triangle complex and assign boundary labels.

    Labels come from ``labels`` when given, otherwise from loop membership in
    ``annulus`` (outer loop -> E1, inner loop -> E2).  Without either, every
    boundary vertex is labelled E1 (a disk).
    """
    pts = np.asarray(vertices, dtype=float)
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    n = len(pts)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError("vertices must have shape (n, 2)")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite vertex coordinates")
    if tri.size and (tri.min() < 0 or tri.max() >= n):
        raise NonConformingMesh("triangle index out of range")
    if np.any((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])):
        raise NonConformingMesh("triangle with repeated vertex")

    p = pts[tri]
    u, v = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    scale = max(np.ptp(pts, axis=0).max(), 1e-300)
    if np.any(np.abs(area2) <= 1e-14 * scale**2):
        bad = int(np.flatnonzero(np.abs(area2) <= 1e-14 * scale**2)[0])
        raise NumericallyDegenerate(f"triangle #{bad} has zero area")
    tri = tri.copy()
    flip = area2 < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]

    if require_nonobtuse:
        ok, worst = _triangle_angles_ok(pts, tri)
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise ObtuseTriangle(bad, float(worst[bad]))

    used = np.zeros(n, dtype=bool)
    used[tri.ravel()] = True
    if not used.all():
        raise NonConformingMesh(f"vertex {int(np.flatnonzero(~used)[0])} is not in any triangle")

    t = Triangulation(pts.copy(), tri, np.zeros(n, dtype=np.int8), annulus)
    _ = t.edges  # raises on edges shared by more than two triangles
    bmask = t.boundary_vertex_mask
    _check_no_hanging_nodes(t)

    if labels is not None:
        lab = np.asarray(labels, dtype=np.int8)
        if lab.shape != (n,) or not np.isin(lab, (INTERIOR, E1, E2)).all():
            raise GeometryError("labels must be one of 0, 1, 2 per vertex")
        if np.any(bmask & (lab == INTERIOR)):
            bad = int(np.flatnonzero(bmask & (lab == INTERIOR))[0])
            raise UnlabeledBoundaryVertex(f"boundary vertex {bad} labelled interior")
    elif annulus is not None:
        lab = np.zeros(n, dtype=np.int8)
        bidx = np.flatnonzero(bmask)
        d_out, d_in = annulus.loop_distance(pts[bidx])
        tol = 1e-9 * scale
        on_out, on_in = d_out <= tol, d_in <= tol
        if not np.all(on_out | on_in):
            bad = int(bidx[~(on_out | on_in)][0])
            raise UnlabeledBoundaryVertex(f"boundary vertex {bad} lies on neither loop")
        if np.any(on_out & on_in):
            raise DegenerateAnnulus("a boundary vertex touches both loops")
        lab[bidx[on_out]] = E1
        lab[bidx[on_in]] = E2
        if abs(t.area - annulus.area) > 1e-9 * annulus.area:
            raise NonConformingMesh(
                f"triangles cover area {t.area:.12g}, annulus has area {annulus.area:.12g}"
            )
    else:
        lab = np.where(bmask, E1, INTERIOR).astype(np.int8)

    return Triangulation(pts.copy(), tri, lab, annulus)


def _check_no_hanging_nodes(t: Triangulation) -> None:
    """Reject boundary vertices sitting inside another boundary edge."""
    be = t.edges[t.boundary_edge_mask]
    bverts = np.flatnonzero(t.boundary_vertex_mask)
    if len(be) == 0:
        return
    a, b = t.vertices[be[:, 0]], t.vertices[be[:, 1]]
    tol = 1e-10 * t.mesh_size
    for chunk in np.array_split(bverts, max(1, len(bverts) // 512)):
        d = point_segment_distance(t.vertices[chunk], a, b)
        hit = d <= tol
        # a vertex is trivially on the edges it is an endpoint of
        hit &= chunk[:, None] != be[None, :, 0]
        hit &= chunk[:, None] != be[None, :, 1]
        if hit.any():
            r, c = np.argwhere(hit)[0]
            raise NonConformingMesh(
                f"vertex {int(chunk[r])} lies inside boundary edge {tuple(be[c])} (partial-edge overlap)"
            )


# ---------------------------------------------------------------------------
# generators and refinement
# ---------------------------------------------------------------------------

def _grid_pitch(coords: np.ndarray) -> float:
    fr = [Fraction(float(x)).limit_denominator(1 << 20) for x in np.ravel(coords)]
    den = reduce(math.lcm, (f.denominator for f in fr), 1)
    num = reduce(math.gcd, (int(f * den) for f in fr), 0)
    if num == 0:
        raise InvalidAnnulus("cannot infer a lattice pitch from the loops")
    return num / den


def generate_annulus_mesh(annulus, level: int = 0, pitch: float | None = None, *,
                          radial: str = "uniform") -> Triangulation:
    """Structured nonobtuse mesh of an annulus at refinement ``level``.

    A :class:`PolygonalAnnulus` with axis-aligned loops is filled with the
    lattice of squares of pitch ``pitch / 2**level`` (``pitch`` defaults to the
    coarsest grid containing both loops), each square cut along a diagonal.
    A :class:`RoundAnnulus` gets a staggered polar mesh whose boundary
    vertices lie on the two circles; ``pitch`` (default 0.25) is the target
    spacing along the inner circle at level 0.  Rings are equally spaced by
    default; ``radial="geometric"`` gives the conformally self-similar layout,
    on which the discrete potential reproduces ``log r`` exactly at vertices.
    """
    if level < 0:
        raise GeometryError("level must be >= 0")
    if isinstance(annulus, RoundAnnulus):
        return _round_mesh(annulus, level, 0.25 if pitch is None else pitch, radial)
    if not isinstance(annulus, PolygonalAnnulus):
        raise GeometryError(f"unsupported domain type {type(annulus).__name__}")
    return _lattice_mesh(annulus, level, pitch)


def _lattice_mesh(annulus: PolygonalAnnulus, level: int, pitch: float | None) -> Triangulation:
    loops = np.vstack([annulus.outer, annulus.inner])
    for loop in (annulus.outer, annulus.inner):
        seg = np.roll(loop, -1, axis=0) - loop
        if np.any((np.abs(seg[:, 0]) > 0) & (np.abs(seg[:, 1]) > 0)):
            raise InvalidAnnulus("lattice generator needs axis-aligned loops")
    h0 = _grid_pitch(loops) if pitch is None else float(pitch)
    h = h0 / 2**level
    origin = loops.min(axis=0)
    grid = (loops - origin) / h
    if np.abs(grid - np.round(grid)).max() > 1e-9:
        raise InvalidAnnulus(f"loops are not on the lattice of pitch {h}")
    nx, ny = np.round(grid.max(axis=0)).astype(int)
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    cx = origin[0] + (ix + 0.5) * h
    cy = origin[1] + (iy + 0.5) * h
    keep = shapely.contains_xy(annulus.polygon, cx, cy)
    ix, iy = ix[keep], iy[keep]
    if len(ix) == 0:
        raise DegenerateAnnulus("no lattice squares fit between the loops")
    corners = np.stack(
        [np.stack([ix, iy], 1), np.stack([ix + 1, iy], 1), np.stack([ix + 1, iy + 1], 1), np.stack([ix, iy + 1], 1)],
        axis=1,
    )
    key = corners[..., 0].astype(np.int64) * (ny + 1) + corners[..., 1]
    uniq, inv = np.unique(key.ravel(), return_inverse=True)
    inv = inv.reshape(-1, 4)
    gx, gy = np.divmod(uniq, ny + 1)
    verts = np.stack([origin[0] + gx * h, origin[1] + gy * h], axis=1)
    tris = np.concatenate([inv[:, [0, 1, 2]], inv[:, [0, 2, 3]]])
    try:
        mesh = build_triangulation(verts, tris, annulus)
    except (NonConformingMesh, UnlabeledBoundaryVertex) as exc:
        raise DegenerateAnnulus(f"lattice pitch {h} does not resolve the annulus: {exc}") from exc
    mesh.boundary_loops()  # raises DegenerateAnnulus on pinched boundaries
    return mesh


def _staggered_ok(radii: np.ndarray, n: int) -> bool:
    """Both triangle types between consecutive rings are nonobtuse."""
    q = radii[1:] / radii[:-1]
    c, s = math.cos(math.pi / n), math.sin(math.pi / n)
    return bool(np.all(q >= c + s) and np.all(q * (c - s) >= 1.0))


def _ring_radii(annulus: RoundAnnulus, m: int, radial: str) -> np.ndarray:
    a, b = annulus.inner_radius, annulus.outer_radius
    j = np.arange(m + 1)
    if radial == "geometric":
        r = a * np.exp(j * annulus.log_ratio / m)
    else:
        r = a + j * (b - a) / m
    r[0], r[-1] = a, b
    return r


def round_mesh_counts(annulus: RoundAnnulus, pitch: float, radial: str = "uniform") -> tuple[int, int]:
    """Level-0 (angular, radial) subdivision counts for the staggered polar mesh.

    The angular count puts about ``pitch`` between inner-circle vertices; the
    radial count is the largest one that keeps every triangle nonobtuse.
    """
    if radial not in ("uniform", "geometric"):
        raise GeometryError(f"unknown radial spacing {radial!r}")
    n0 = 4 * max(1, math.ceil(2 * math.pi * annulus.inner_radius / pitch / 4))
    width = annulus.outer_radius - annulus.inner_radius
    m = max(1, math.ceil(2 * width / pitch))
    while m > 1 and not _staggered_ok(_ring_radii(annulus, m, radial), n0):
        m -= 1
    if not _staggered_ok(_ring_radii(annulus, m, radial), n0):
        raise DegenerateAnnulus(f"no nonobtuse staggered mesh with {n0} sectors; decrease pitch")
    return n0, m


def _round_mesh(annulus: RoundAnnulus, level: int, pitch: float, radial: str = "uniform") -> Triangulation:
    n0, m0 = round_mesh_counts(annulus, pitch, radial)
    n, m = n0 * 2**level, m0 * 2**level
    radii = _ring_radii(annulus, m, radial)
    if not _staggered_ok(radii, n):
        raise DegenerateAnnulus(f"level {level} staggered mesh has obtuse triangles")
    step = 2 * math.pi / n
    cx, cy = annulus.center
    j = np.arange(m + 1)[:, None]
    k = np.arange(n)[None, :]
    r = radii[:, None] * np.ones_like(k)
    theta = (k + 0.5 * j) * step
    verts = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=-1).reshape(-1, 2)
    idx = np.arange((m + 1) * n).reshape(m + 1, n)
    tris = []
    for jj in range(m):
        A, B = idx[jj], idx[jj + 1]
        A1 = np.roll(A, -1)
        B1 = np.roll(B, -1)
        tris.append(np.stack([A, A1, B], 1))
        tris.append(np.stack([B, A1, B1], 1))
    tris = np.concatenate(tris)
    poly = PolygonalAnnulus(verts[idx[-1]], verts[idx[0]])
    return build_triangulation(verts, tris, poly)


def refine(t: Triangulation) -> Triangulation:
    """Split every triangle into four through its edge midpoints."""
    n = t.n_vertices
    e = t.edges
    mids = 0.5 * (t.vertices[e[:, 0]] + t.vertices[e[:, 1]])
    mid_labels = np.zeros(len(e), dtype=np.int8)
    be = t.boundary_edge_mask
    mid_labels[be] = t.labels[e[be, 0]]
    verts = np.vstack([t.vertices, mids])
    labels = np.concatenate([t.labels, mid_labels])
    te = t.triangle_edges + n
    a, b, c = t.triangles.T
    ab, bc, ca = te[:, 0], te[:, 1], te[:, 2]
    tris = np.concatenate(
        [np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1), np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)]
    )
    return Triangulation(verts, tris, labels, t.annulus)


# ---------------------------------------------------------------------------
# quality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeshQualityReport:
    tau: float
    nonobtuse: bool
    max_neighbors: int
    v2_max_offset: float
    v1_ok: bool
    v2_ok: bool
    max_angle_deg: float
    worst_triangle: int

    def summary(self) -> str:
        return (
            f"tau={self.tau:.6g} nonobtuse={self.nonobtuse} m*={self.max_neighbors} "
            f"V1={'ok' if self.v1_ok else 'FAIL'} V2_offset={self.v2_max_offset:.3g} "
            f"V2={'ok' if self.v2_ok else 'FAIL'}"
        )


def triangle_quality(t: Triangulation) -> np.ndarray:
    """Diameter over inscribed-circle diameter, per triangle."""
    p = t.vertices[t.triangles]
    lengths = np.stack([np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)], axis=1)
    perim = lengths.sum(axis=1)
    incircle_diam = 4.0 * np.abs(t.triangle_areas) / perim
    return lengths.max(axis=1) / incircle_diam


def validate_mesh(t: Triangulation, *, v2_tol: float = 1e-9, max_neighbors: int = 12) -> MeshQualityReport:
    """Quasi-uniformity constant and the V0/V1/V2 conditions of a mesh."""
    ratios = triangle_quality(t)
    ok, worst = _triangle_angles_ok(t.vertices, t.triangles)
    wt = int(np.argmax(worst))
    nonobtuse = bool(ok.all())
    if nonobtuse:
        vor = build_voronoi(t)
        offsets = vor.v2_offsets()
        v2 = float(offsets.max(initial=0.0))
        essential = vor.m > MERGE_TOL * t.mesh_size
        e = t.edges[essential]
        counts = np.bincount(e.ravel(), minlength=t.n_vertices)
    else:
        v2 = float("nan")
        counts = np.bincount(t.edges.ravel(), minlength=t.n_vertices)
    mstar = int(counts.max(initial=0))
    return MeshQualityReport(
        tau=float(ratios.max()),
        nonobtuse=nonobtuse,
        max_neighbors=mstar,
        v2_max_offset=v2,
        v1_ok=mstar <= max_neighbors,
        v2_ok=bool(nonobtuse and v2 <= v2_tol),
        max_angle_deg=float(worst[wt]),
        worst_triangle=wt,
    )


# ---------------------------------------------------------------------------
# Voronoi control volumes
# ---------------------------------------------------------------------------

CIRCUMCENTER, BOUNDARY_MIDPOINT = 0, 1


def circumcenters(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Circumcenters from the 2x2 perpendicular-bisector systems."""
    p = points[triangles]
    a = p[:, 0]
    ba, ca = p[:, 1] - a, p[:, 2] - a
    A = 2.0 * np.stack([ba, ca], axis=1)
    rhs = np.stack([np.einsum("ij,ij->i", ba, ba), np.einsum("ij,ij->i", ca, ca)], axis=1)
    scale2 = np.maximum(np.einsum("ij,ij->i", ba, ba), np.einsum("ij,ij->i", ca, ca))
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    bad = np.abs(det) < DET_TOL * scale2
    if bad.any():
        raise NumericallyDegenerate(f"circumcenter of triangle #{int(np.flatnonzero(bad)[0])} is ill-conditioned")
    # LAPACK gesv: LU with partial pivoting
    return a + np.linalg.solve(A, rhs[..., None])[..., 0]


@dataclass(frozen=True, eq=False)
class VoronoiDiagram:
    """Circumcentric dual of a nonobtuse triangulation.

    Dual vertices are the distinct circumcenters plus the midpoints of
    boundary edges.  ``edge_dual[e]`` holds the dual segment of primal edge
    ``e``; for a boundary edge it is the half segment from the circumcenter to
    the edge midpoint.
    """

    mesh: Triangulation
    points: np.ndarray
    kind: np.ndarray
    triangle_site: np.ndarray
    edge_dual: np.ndarray
    m: np.ndarray
    d: np.ndarray
    crossing: np.ndarray
    cells: list = field(repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.points)

    @cached_property
    def interior_edge_mask(self) -> np.ndarray:
        return ~self.mesh.boundary_edge_mask

    @cached_property
    def lam_i(self) -> np.ndarray:
        """Per-cell ``sqrt(max dual-edge length)``, taken literally."""
        e = self.mesh.edges
        longest = np.zeros(self.mesh.n_vertices)
        np.maximum.at(longest, e[:, 0], self.m)
        np.maximum.at(longest, e[:, 1], self.m)
        return np.sqrt(longest)

    @property
    def lam(self) -> float:
        return float(self.lam_i.max())

    @cached_property
    def segment_lookup(self) -> dict[tuple[int, int], int]:
        """Unordered pair of dual vertices -> primal edge, for interior dual segments of positive length."""
        out: dict[tuple[int, int], int] = {}
        for e in np.flatnonzero(self.interior_edge_mask):
            a, b = self.edge_dual[e]
            if a == b:
                continue
            key = (min(a, b), max(a, b))
            out.setdefault(key, int(e))
        return out

    def cell_polygon(self, i: int) -> np.ndarray:
        """Closed-off cell of mesh vertex ``i`` (boundary cells include ``x_i``)."""
        ids = self.cells[i]
        pts = self.points[ids]
        if self.mesh.boundary_vertex_mask[i]:
            pts = np.vstack([self.mesh.vertices[i], pts])
        return pts

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return np.array([_signed_area(self.cell_polygon(i)) for i in range(self.mesh.n_vertices)])

    def v2_offsets(self) -> np.ndarray:
        """``|x_ij - midpoint(Gamma_ij)| / m_ij`` over interior edges with m_ij > 0."""
        sel = self.interior_edge_mask & (self.m > MERGE_TOL * self.mesh.mesh_size)
        ends = self.points[self.edge_dual[sel]]
        mid = 0.5 * (ends[:, 0] + ends[:, 1])
        return np.linalg.norm(mid - self.crossing[sel], axis=1) / self.m[sel]

    def perpendicular_bisector_error(self) -> float:
        """max over interior edges of ``| |x_i - x_ij| - |x_j - x_ij| |``."""
        e = self.mesh.edges[self.interior_edge_mask]
        x = self.crossing[self.interior_edge_mask]
        v = self.mesh.vertices
        return float(np.abs(np.linalg.norm(v[e[:, 0]] - x, axis=1) - np.linalg.norm(v[e[:, 1]] - x, axis=1)).max(initial=0.0))

    def nearest_vertex(self, points) -> np.ndarray:
        """Mesh vertex whose cell contains each point (Delaunay => nearest vertex)."""
        _, idx = self.mesh._kdtree.query(np.atleast_2d(points))
        return np.atleast_1d(idx)

    @cached_property
    def circumcenter_sites(self) -> np.ndarray:
        return np.flatnonzero(self.kind == CIRCUMCENTER)


def build_voronoi(t: Triangulation) -> VoronoiDiagram:
    ok, worst = _triangle_angles_ok(t.vertices, t.triangles)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise ObtuseTriangle(bad, float(worst[bad]))
    cc = circumcenters(t.vertices, t.triangles)
    edges, etris = t.edges, t.edge_triangles
    interior = etris[:, 1] >= 0
    ie = np.flatnonzero(interior)
    gap = np.linalg.norm(cc[etris[ie, 0]] - cc[etris[ie, 1]], axis=1)
    close = ie[gap <= MERGE_TOL * t.mesh_size]
    nt = t.n_triangles
    g = coo_matrix((np.ones(len(close)), (etris[close, 0], etris[close, 1])), shape=(nt, nt))
    ncomp, comp = connected_components(g, directed=False)
    # site position: mean of the merged circumcenters
    site_pts = np.zeros((ncomp, 2))
    np.add.at(site_pts, comp, cc)
    site_pts /= np.bincount(comp, minlength=ncomp)[:, None]

    be = np.flatnonzero(~interior)
    mids = 0.5 * (t.vertices[edges[:, 0]] + t.vertices[edges[:, 1]])
    mid_site = np.full(len(edges), -1, dtype=np.int64)
    mid_site[be] = ncomp + np.arange(len(be))
    points = np.vstack([site_pts, mids[be]])
    kind = np.concatenate([np.full(ncomp, CIRCUMCENTER), np.full(len(be), BOUNDARY_MIDPOINT)]).astype(np.int8)

    edge_dual = np.empty((len(edges), 2), dtype=np.int64)
    edge_dual[:, 0] = comp[etris[:, 0]]
    edge_dual[ie, 1] = comp[etris[ie, 1]]
    edge_dual[be, 1] = mid_site[be]

    # lengths from the raw circumcenters, not the merged site positions
    m = np.empty(len(edges))
    m[ie] = gap
    m[be] = np.linalg.norm(cc[etris[be, 0]] - mids[be], axis=1)
    m[ie[gap <= MERGE_TOL * t.mesh_size]] = 0.0
    d = t.edge_lengths

    cells = _order_cells(t, comp, mid_site)
    return VoronoiDiagram(
        mesh=t,
        points=points,
        kind=kind,
        triangle_site=comp.astype(np.int64),
        edge_dual=edge_dual,
        m=m,
        d=d,
        crossing=mids,
        cells=cells,
    )


def _order_cells(t: Triangulation, site: np.ndarray, mid_site: np.ndarray) -> list[np.ndarray]:
    """Dual vertices of each cell, counter-clockwise around the mesh vertex."""
    tri = t.triangles
    n = t.n_vertices
    # corner (t, k) at vertex i = tri[t, k]: incoming side (i, tri[t,k+1]),
    # outgoing side (i, tri[t,k+2]) when sweeping counter-clockwise around i
    incoming: dict[tuple[int, int], int] = {}
    for tt in range(len(tri)):
        a, b, c = (int(x) for x in tri[tt])
        incoming[(a, b)] = tt
        incoming[(b, c)] = tt
        incoming[(c, a)] = tt
    edge_index = {(int(i), int(j)): e for e, (i, j) in enumerate(t.edges)}

    def eidx(i, j):
        return edge_index[(i, j) if i < j else (j, i)]

    vt = t.vertex_triangles
    bmask = t.boundary_vertex_mask
    cells: list[np.ndarray] = []
    for i in range(n):
        ts = vt.indices[vt.indptr[i]:vt.indptr[i + 1]]
        # (prev, next) neighbour of i in each incident triangle
        info = {}
        for tt in ts:
            row = [int(x) for x in tri[tt]]
            k = row.index(i)
            info[int(tt)] = (row[(k + 1) % 3], row[(k + 2) % 3])
        if bmask[i]:
            start = None
            for tt, (j, kk) in info.items():
                if (j, i) not in incoming:  # no triangle on the far side of (i, j)
                    start = tt
                    break
            if start is None:
                raise NonConformingMesh(f"cannot open the fan around boundary vertex {i}")
        else:
            start = int(ts[0])
        order = [start]
        cur = start
        while True:
            _, kk = info[cur]
            nxt = incoming.get((i, kk))
            if nxt is None or nxt == start:
                break
            order.append(nxt)
            cur = nxt
            if len(order) > len(ts):
                raise NonConformingMesh(f"fan around vertex {i} does not close")
        if len(order) != len(ts):
            raise NonConformingMesh(f"vertex {i} has a non-manifold neighbourhood")
        ids = [int(site[tt]) for tt in order]
        if bmask[i]:
            j_first = info[order[0]][0]
            k_last = info[order[-1]][1]
            ids = [int(mid_site[eidx(i, j_first)])] + ids + [int(mid_site[eidx(i, k_last)])]
            dedup = [ids[0]]
            for s in ids[1:]:
                if s != dedup[-1]:
                    dedup.append(s)
        else:
            dedup = []
            for s in ids:
                if not dedup or s != dedup[-1]:
                    dedup.append(s)
            while len(dedup) > 1 and dedup[0] == dedup[-1]:
                dedup.pop()
        cells.append(np.asarray(dedup, dtype=np.int64))
    return cells


# ---------------------------------------------------------------------------
# mesh file format
# ---------------------------------------------------------------------------

def write_mesh(t: Triangulation, path) -> None:
    lines = ["mesh v1"]
    lines += [f"v {x:.17g} {y:.17g} {int(lab)}" for (x, y), lab in zip(t.vertices, t.labels)]
    lines += [f"t {a} {b} {c}" for a, b, c in t.triangles]
    with atomic_open(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path, *, require_nonobtuse: bool = True) -> Triangulation:
    verts: list[tuple[float, float]] = []
    labels: list[int] = []
    tris: list[tuple[int, int, int]] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "mesh v1":
            raise MeshFormatError(f"bad header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v" and len(parts) == 4:
                    verts.append((float(parts[1]), float(parts[2])))
                    labels.append(int(parts[3]))
                elif parts[0] == "t" and len(parts) == 4:
                    tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
                else:
                    raise ValueError(line)
            except ValueError as exc:
                raise MeshFormatError(f"line {lineno}: cannot parse {line.strip()!r}") from exc
    return build_triangulation(
        np.array(verts).reshape(-1, 2), np.array(tris, dtype=np.int64).reshape(-1, 3),
        labels=np.array(labels), require_nonobtuse=require_nonobtuse,
    )


def sample_round_annulus(annulus: RoundAnnulus, radii: Sequence[float], n_angles: int, phase: float = 0.0) -> np.ndarray:
    """Probe points on concentric circles."""
    th = phase + 2 * math.pi * np.arange(n_angles) / n_angles
    cx, cy = annulus.center
    return np.array([[cx + r * math.cos(a), cy + r * math.sin(a)] for r in radii for a in th])
