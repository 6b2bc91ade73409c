"""Discrete conformal maps of annuli and convergence studies.

The map is ``phi = exp((2 pi / P) (g + i g*))`` on dual vertices, where ``P``
is the period of the conjugate ``g*``.  With E1 at potential 1 the image is
the round annulus ``1 <= |w| <= exp(2 pi / P)``.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_open
from .conjugate import ConjugateField, conjugate_field, winding_number
from .errors import InsufficientLevels, MismatchedSupports, OutsideSupport, ZeroPeriod
from .geometry import (
    E1,
    E2,
    PolygonalAnnulus,
    RoundAnnulus,
    Triangulation,
    VoronoiDiagram,
    build_voronoi,
    generate_annulus_mesh,
)
from .network import Network, ScalarField, build_network
from .solver import DEFAULT_TOL, DirichletSpec, SolveReport, solve_dirichlet


def worker_count(n_tasks: int) -> int:
    """Thread budget, capped by ``UNIFORMIZER_THREADS``."""
    cap = os.environ.get("UNIFORMIZER_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            pass
    return max(1, min(n_tasks, limit))


def parallel_map(fn: Callable, items: Sequence) -> list:
    items = list(items)
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class AnnulusMap:
    g: ScalarField
    conj: ConjugateField
    period: float

    @property
    def scale(self) -> float:
        return 2 * math.pi / abs(self.period)

    @property
    def radii(self) -> tuple[float, float]:
        return 1.0, math.exp(self.scale)

    @property
    def R2(self) -> float:
        return self.radii[1]

    @property
    def vor(self) -> VoronoiDiagram:
        return self.conj.vor

    @property
    def g_sites(self) -> np.ndarray:
        return self.g.at_sites(self.vor)

    @property
    def site_values(self) -> np.ndarray:
        """``phi`` on dual vertices (NaN where the conjugate is undefined)."""
        return np.exp(self.scale * (self.g_sites + 1j * self.conj.values))

    def __call__(self, points) -> np.ndarray:
        return evaluate_map(self, points)


def annulus_map(g: ScalarField, conj: ConjugateField, period: float | None = None) -> AnnulusMap:
    """Assemble the map; ``period`` defaults to the one stored with ``conj``."""
    P = conj.period if period is None else float(period)
    if not math.isfinite(P) or abs(P) < 1e-300:
        raise ZeroPeriod(f"period {P!r} cannot scale the map")
    if g.mesh is None or g.mesh is not conj.vor.mesh:
        raise MismatchedSupports("potential and conjugate are defined on different meshes")
    return AnnulusMap(g, conj, P)


def evaluate_map(m: AnnulusMap, points) -> np.ndarray:
    """``phi`` at arbitrary points of the region covered by interior cells."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    gv = m.g.evaluate(pts)
    cv = m.conj.evaluate(pts)
    return np.exp(m.scale * (gv + 1j * cv))


def _ring_sites(vor: VoronoiDiagram, label: int) -> np.ndarray:
    """Circumcenter sites of triangles having an edge on the given boundary."""
    mesh = vor.mesh
    e = np.flatnonzero(mesh.boundary_edge_mask)
    e = e[mesh.labels[mesh.edges[e, 0]] == label]
    return np.unique(vor.triangle_site[mesh.edge_triangles[e, 0]])


def boundary_circularity(m: AnnulusMap) -> tuple[float, float]:
    """Relative deviation of ``|phi|`` from the target radius on the rings next to E2 and E1.

    Only ``|phi|`` enters, so the conjugate is not needed here.
    """
    mod = np.exp(m.scale * m.g_sites)
    R1, R2 = m.radii
    # which boundary sits at radius 1 depends on which one carries potential 0
    e2_low = m.period > 0
    inner = _ring_sites(m.vor, E2 if e2_low else E1)
    outer = _ring_sites(m.vor, E1 if e2_low else E2)
    return (float(np.max(np.abs(mod[inner] - R1)) / R1),
            float(np.max(np.abs(mod[outer] - R2)) / R2))


def log_modulus_spread(m: AnnulusMap) -> float:
    """``max log|phi| - min log|phi|`` over the defined dual vertices."""
    lm = m.scale * m.g_sites[m.conj.defined]
    return float(lm.max() - lm.min())


def map_winding(m: AnnulusMap, loop: Sequence[int] | None = None) -> float:
    """Winding number of ``phi`` about 0 along a closed dual loop."""
    loop = m.conj.loop if loop is None else np.asarray(loop)
    w = m.site_values[loop[:-1]]
    if np.any(np.isnan(w)):
        raise OutsideSupport("loop passes through dual vertices without conjugate values")
    return winding_number(w, 0.0)


# ---------------------------------------------------------------------------
# one pipeline level
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelResult:
    level: int
    mesh: Triangulation
    vor: VoronoiDiagram
    net: Network
    g: ScalarField
    conj: ConjugateField
    map: AnnulusMap
    report: SolveReport

    @property
    def rho(self) -> float:
        return self.mesh.mesh_size

    @property
    def lam(self) -> float:
        return self.vor.lam


def run_level(mesh: Triangulation, *, level: int = 0, spec: DirichletSpec | None = None,
              tol: float = DEFAULT_TOL, slit: float | int = 0.0) -> LevelResult:
    """mesh -> dual -> network -> potential -> conjugate -> map."""
    vor = build_voronoi(mesh)
    net = build_network(vor)
    g, rep = solve_dirichlet(net, spec, tol=tol)
    conj = conjugate_field(net, vor, g, slit=slit)
    return LevelResult(level, mesh, vor, net, g, conj, annulus_map(g, conj), rep)


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

COLUMNS = ("level", "rho", "lambda", "potential_error", "period_error", "circularity_error", "map_error")


@dataclass
class ConvergenceTable:
    """One row per level.

    For a round annulus the error columns are measured against the classical
    solution; otherwise against the finest level (whose row then holds NaN).
    ``successive`` holds ``max |g_k - g_(k+1)|`` over level-``k`` vertices.
    """

    rows: list[tuple] = field(default_factory=list)
    oracle: bool = True
    periods: list[float] = field(default_factory=list)
    successive: list[float] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        k = COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def write_csv(self, path) -> None:
        with atomic_open(path) as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([r[0]] + [format_number(x) for x in r[1:]])


def format_number(x: float) -> str:
    return "nan" if x != x else f"{x:.17g}"


def default_probes(annulus, n_angles: int = 32, phase: float = 0.1, pitch: float | None = None) -> np.ndarray:
    """Fixed interior probe points.

    Three concentric circles for a round annulus; otherwise the centroids of
    the triangles without boundary vertices on the coarsest lattice that has
    any.
    """
    if isinstance(annulus, RoundAnnulus):
        a, b = annulus.inner_radius, annulus.outer_radius
        radii = a + (b - a) * np.array([0.3, 0.5, 0.7])
        th = phase + 2 * math.pi * np.arange(n_angles) / n_angles
        cx, cy = annulus.center
        return np.array([[cx + r * math.cos(t), cy + r * math.sin(t)] for r in radii for t in th])
    for level in range(4):
        mesh = generate_annulus_mesh(annulus, level, pitch)
        inner = ~mesh.boundary_vertex_mask[mesh.triangles].any(axis=1)
        if inner.any():
            pts = mesh.vertices[mesh.triangles[inner]].mean(axis=1)
            return pts + 1e-3 * mesh.mesh_size
    raise InsufficientLevels("no triangle stays off the boundary within three refinements")


def _aligned_error(phi: np.ndarray, target: np.ndarray) -> float:
    """L-infinity distance after rotating ``phi`` to agree in argument at the first probe."""
    rot = target[0] / phi[0]
    rot /= abs(rot)
    return float(np.max(np.abs(rot * phi - target)))


def convergence_study(annulus, levels: int = 4, *, pitch: float | None = None, tol: float = DEFAULT_TOL,
                      slit: float | int = 0.0, probes: np.ndarray | None = None,
                      start_level: int = 0, keep: bool = False):
    """Run the pipeline on ``levels`` successive refinements.

    Returns the table, plus the per-level results when ``keep`` is set.
    """
    if levels < 3:
        raise InsufficientLevels("a convergence study needs at least three levels")
    probes = default_probes(annulus, pitch=pitch) if probes is None else np.asarray(probes, dtype=float)
    ks = list(range(start_level, start_level + levels))

    def one(k):
        res = run_level(generate_annulus_mesh(annulus, k, pitch), level=k, tol=tol, slit=slit)
        try:
            phi = res.map(probes)
        except OutsideSupport:
            # coarse levels may have no interior cells around some probes
            phi = None
        return res, phi

    results = parallel_map(one, ks)
    table = ConvergenceTable(oracle=isinstance(annulus, RoundAnnulus))
    table.periods = [r.conj.period for r, _ in results]
    finest, phi_f = results[-1]
    for n, (res, phi) in enumerate(results):
        circ = max(boundary_circularity(res.map))
        if table.oracle:
            pot = float(np.max(np.abs(res.g.values - annulus.potential(res.mesh.vertices))))
            per = abs(res.conj.period - annulus.period) / annulus.period
            z = (probes[:, 0] - annulus.center[0]) + 1j * (probes[:, 1] - annulus.center[1])
            mp = math.nan if phi is None else _aligned_error(phi, z / annulus.inner_radius)
        elif res is finest:
            pot = per = mp = math.nan
        else:
            pot = float(np.max(np.abs(res.g.values - finest.g.evaluate(res.mesh.vertices))))
            per = abs(res.conj.period - finest.conj.period) / abs(finest.conj.period)
            mp = math.nan if phi is None or phi_f is None else _aligned_error(phi, phi_f)
        table.rows.append((res.level, res.rho, res.lam, pot, per, circ, mp))
    for (a, _), (b, _) in zip(results[:-1], results[1:]):
        table.successive.append(float(np.max(np.abs(a.g.values - b.g.evaluate(a.mesh.vertices)))))
    if keep:
        return table, [r for r, _ in results]
    return table


def write_map_csv(m: AnnulusMap, path) -> None:
    """Dual vertex -> image point, for every dual vertex with a conjugate value."""
    w = m.site_values
    pts = m.vor.points
    with atomic_open(path) as fh:
        out = csv.writer(fh)
        out.writerow(("site", "x", "y", "re", "im"))
        for s in np.flatnonzero(m.conj.defined):
            out.writerow((int(s), format_number(pts[s, 0]), format_number(pts[s, 1]),
                          format_number(w[s].real), format_number(w[s].imag)))


def image_segments(m: AnnulusMap) -> np.ndarray:
    """Images of the dual segments whose two ends carry conjugate values, as complex pairs."""
    from .conjugate import dual_graph

    pairs = dual_graph(m.vor).pairs
    w = m.site_values
    ok = ~np.isnan(w[pairs[:, 0]]) & ~np.isnan(w[pairs[:, 1]])
    return np.stack([w[pairs[ok, 0]], w[pairs[ok, 1]]], axis=1)


def read_annulus_spec(path):
    """``annulus v1`` file: either ``round a b [cx cy]`` or ``outer x y`` / ``inner x y`` lines."""
    from .errors import InvalidAnnulus

    outer, inner, round_ = [], [], None
    with open(path) as fh:
        if fh.readline().strip() != "annulus v1":
            raise InvalidAnnulus(f"{path}: expected header 'annulus v1'")
        for lineno, line in enumerate(fh, start=2):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            try:
                vals = [float(x) for x in parts[1:]]
                if parts[0] == "round" and len(vals) in (2, 4):
                    round_ = vals
                elif parts[0] in ("outer", "inner") and len(vals) == 2:
                    (outer if parts[0] == "outer" else inner).append(vals)
                else:
                    raise ValueError(line)
            except ValueError as exc:
                raise InvalidAnnulus(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc
    if round_ is not None:
        center = tuple(round_[2:]) if len(round_) == 4 else (0.0, 0.0)
        return RoundAnnulus(round_[0], round_[1], center)
    return PolygonalAnnulus(np.array(outer), np.array(inner))
