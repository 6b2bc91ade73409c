"""Dirichlet and finite-volume Poisson solves on conductance networks."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from ._io import atomic_open
from .errors import InsufficientLevels, MeshMismatch, NoConvergence, SingularSystem, SolverError
from .geometry import E1, E2, INTERIOR, VoronoiDiagram
from .network import Network, ScalarField, laplacian

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class DirichletSpec:
    """Boundary data and optional source.

    ``source`` is the density ``F`` in ``sum_j c_ij (u_i - u_j) = int_cell F``,
    i.e. ``F = -Laplacian(u)``.  For the correction pipeline pass ``h_tilde``
    with its exact Laplacian; the correction ``u - h_tilde`` then has source
    ``Laplacian(h_tilde)``.
    """

    e1_value: float = 1.0
    e2_value: float = 0.0
    overrides: dict = field(default_factory=dict)
    source: Callable | None = None
    h_tilde: Callable | None = None
    h_tilde_laplacian: Callable | None = None

    def boundary_values(self, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indices and values of all Dirichlet vertices."""
        vals = np.full(len(labels), np.nan)
        vals[labels == E1] = self.e1_value
        vals[labels == E2] = self.e2_value
        for i, v in self.overrides.items():
            vals[int(i)] = float(v)
        idx = np.flatnonzero(~np.isnan(vals))
        return idx, vals[idx]

    def source_density(self) -> Callable | None:
        if self.source is not None:
            return self.source
        return self.h_tilde_laplacian


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    elapsed: float
    max_defect: float = 0.0


def pcg(apply_A, b, x0=None, *, tol=DEFAULT_TOL, maxiter=None, diag=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns ``(x, iterations, relative_residual)``; raises NoConvergence when
    the iteration cap is hit.
    """
    n = len(b)
    maxiter = int(50 * math.sqrt(max(n, 1))) + 1 if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    normb = np.linalg.norm(b)
    if normb == 0.0:
        return np.zeros(n), 0, 0.0
    r = b - apply_A(x)
    minv = np.ones(n) if diag is None else 1.0 / diag
    z = minv * r
    p = z.copy()
    gamma = r @ z
    relres = np.linalg.norm(r) / normb
    it = 0
    while relres > tol:
        if it >= maxiter:
            raise NoConvergence(f"CG stopped at relative residual {relres:.3e} after {it} iterations")
        Ap = apply_A(p)
        alpha = gamma / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        # refresh the residual now and then to stop recurrence drift
        if it % 50 == 0:
            r = b - apply_A(x)
        relres = np.linalg.norm(r) / normb
        z = minv * r
        gamma_new = r @ z
        p = z + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, it, relres


def _reduced_system(net: Network, fixed: np.ndarray):
    free = np.ones(net.n, dtype=bool)
    free[fixed] = False
    free_idx = np.flatnonzero(free)
    L = net.laplacian_matrix
    A = L[free_idx][:, free_idx].tocsr()
    diag = A.diagonal()
    if np.any(diag <= 0):
        bad = int(free_idx[np.flatnonzero(diag <= 0)[0]])
        raise SingularSystem(f"vertex {bad} has no positive-conductance edge")
    # every free component must touch the Dirichlet set through positive conductances
    pos = net.matrix.copy()
    pos.data = (pos.data > 0).astype(float)
    pos.eliminate_zeros()
    ncomp, comp = connected_components(pos, directed=False)
    anchored = np.zeros(ncomp, dtype=bool)
    anchored[comp[fixed]] = True
    if not anchored[comp[free_idx]].all():
        raise SingularSystem("a group of unknowns is not connected to any boundary vertex")
    return free_idx, A, L[free_idx][:, fixed]


def _solve(net: Network, fixed, fixed_vals, rhs_free_full, tol, maxiter, x0):
    t0 = time.perf_counter()
    if len(fixed) == 0:
        raise SingularSystem("no Dirichlet vertices")
    free_idx, A, B = _reduced_system(net, fixed)
    b = rhs_free_full[free_idx] - B @ fixed_vals
    guess = None if x0 is None else np.asarray(x0, dtype=float)[free_idx]
    x, it, res = pcg(lambda v: A @ v, b, guess, tol=tol, maxiter=maxiter, diag=A.diagonal())
    u = np.empty(net.n)
    u[fixed] = fixed_vals
    u[free_idx] = x
    resid = net.laplacian_matrix @ u - rhs_free_full
    deg = np.maximum(net.degree, 1e-300)
    defect = float(np.max(np.abs(resid[free_idx]) / deg[free_idx], initial=0.0))
    return u, SolveReport(it, float(res), time.perf_counter() - t0, defect)


def solve_dirichlet(net: Network, spec: DirichletSpec | None = None, *, tol: float = DEFAULT_TOL,
                    maxiter: int | None = None, x0=None) -> tuple[ScalarField, SolveReport]:
    """Discrete harmonic function with the given boundary values."""
    spec = DirichletSpec() if spec is None else spec
    fixed, vals = spec.boundary_values(net.labels)
    if spec.overrides == {} and (not np.any(net.labels == E1) or not np.any(net.labels == E2)):
        raise SingularSystem("both E1 and E2 need boundary vertices")
    u, rep = _solve(net, fixed, vals, np.zeros(net.n), tol, maxiter, x0)
    return ScalarField(u, net.mesh), rep


def cell_integrals(vor: VoronoiDiagram, f: Callable) -> np.ndarray:
    """``int_{cell_i} f`` by a fan from ``x_i`` and the edge-midpoint rule.

    The rule is exact for quadratics on every sub-triangle.
    """
    mesh = vor.mesh
    owners, A, B = [], [], []
    for i, ids in enumerate(vor.cells):
        pts = vor.points[ids]
        if mesh.boundary_vertex_mask[i]:
            a, b = pts[:-1], pts[1:]
        else:
            a, b = pts, np.roll(pts, -1, axis=0)
        owners.append(np.full(len(a), i))
        A.append(a)
        B.append(b)
    owners = np.concatenate(owners)
    A, B = np.vstack(A), np.vstack(B)
    X = mesh.vertices[owners]
    area = 0.5 * np.abs((A[:, 0] - X[:, 0]) * (B[:, 1] - X[:, 1]) - (A[:, 1] - X[:, 1]) * (B[:, 0] - X[:, 0]))
    mids = np.vstack([0.5 * (X + A), 0.5 * (A + B), 0.5 * (B + X)])
    fv = np.asarray(f(mids), dtype=float).reshape(3, -1).mean(axis=0)
    return np.bincount(owners, weights=area * fv, minlength=mesh.n_vertices)


def solve_poisson_fvm(net: Network, vor: VoronoiDiagram, spec: DirichletSpec, *, tol: float = DEFAULT_TOL,
                      maxiter: int | None = None, x0=None) -> tuple[ScalarField, SolveReport]:
    """Finite-volume solve with zero boundary values and cell-integrated source."""
    if vor.mesh is not net.mesh:
        raise MeshMismatch("network and Voronoi diagram come from different meshes")
    density = spec.source_density()
    rhs = np.zeros(net.n) if density is None else cell_integrals(vor, density)
    fixed = np.flatnonzero(net.labels != INTERIOR)
    u, rep = _solve(net, fixed, np.zeros(len(fixed)), rhs, tol, maxiter, x0)
    return ScalarField(u, net.mesh), rep


def compose_g(u_tilde: ScalarField, h_tilde) -> ScalarField:
    """``u_tilde`` plus the vertex projection of ``h_tilde``."""
    if isinstance(h_tilde, ScalarField):
        if h_tilde.mesh is not u_tilde.mesh:
            raise MeshMismatch("u_tilde and h_tilde are on different meshes")
        return ScalarField(u_tilde.values + h_tilde.values, u_tilde.mesh)
    if u_tilde.mesh is None:
        raise MeshMismatch("u_tilde has no mesh to project h_tilde onto")
    proj = np.asarray(h_tilde(u_tilde.mesh.vertices), dtype=float)
    return ScalarField(u_tilde.values + proj, u_tilde.mesh)


def cell_flux_residuals(net: Network, vor: VoronoiDiagram, g, f: Callable | None = None) -> np.ndarray:
    """Per-vertex ``| sum_j c_ij (g_i - g_j) - int_cell f |`` (NaN on the boundary)."""
    lap = laplacian(net, g)
    if f is not None:
        lap = lap - cell_integrals(vor, f)
    out = np.abs(lap)
    out[net.labels != INTERIOR] = np.nan
    return out


def flux_residual_per_cell(net: Network, vor: VoronoiDiagram, g, f: Callable | None = None,
                           region: Callable | None = None) -> float:
    res = cell_flux_residuals(net, vor, g, f)
    mask = net.labels == INTERIOR
    if region is not None:
        mask &= np.asarray(region(vor.mesh.vertices), dtype=bool)
    return float(np.nanmax(res[mask])) if mask.any() else 0.0


@dataclass(frozen=True)
class HarmonicSample:
    net: Network
    g: ScalarField
    lam: float
    rho: float


def max_laplacian(sample: HarmonicSample, region: Callable | None = None) -> float:
    mesh = sample.net.mesh
    mask = sample.net.labels == INTERIOR
    if region is not None:
        mask &= np.asarray(region(mesh.vertices), dtype=bool)
    lap = np.abs(laplacian(sample.net, sample.g))
    return float(lap[mask].max(initial=0.0))


def estimate_harmonic_order(samples: Sequence[HarmonicSample], region: Callable | None = None, *,
                            against: str = "lambda", floor: float = 1e-10) -> float:
    """Least-squares slope of ``log max|Laplacian g|`` against ``log lambda`` (or ``log rho``).

    Returns ``inf`` when every level is already harmonic to within ``floor``
    times the largest conductance sum.
    """
    if len(samples) < 3:
        raise InsufficientLevels("need at least three refinement levels")
    if against not in ("lambda", "rho"):
        raise SolverError("against must be 'lambda' or 'rho'")
    res = np.array([max_laplacian(s, region) for s in samples])
    scale = np.array([s.net.degree.max() for s in samples])
    if np.all(res <= floor * scale):
        return math.inf
    x = np.log([s.lam if against == "lambda" else s.rho for s in samples])
    slope = np.polyfit(x, np.log(res), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# dump format
# ---------------------------------------------------------------------------

def write_field(values, path, header: str = "field v1") -> None:
    v = values.values if isinstance(values, ScalarField) else np.asarray(values)
    lines = [header] + [f"{i} {x:.17g}" for i, x in enumerate(v)]
    with atomic_open(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path, header: str = "field v1") -> np.ndarray:
    with open(path) as fh:
        if fh.readline().strip() != header:
            raise SolverError(f"expected header {header!r}")
        pairs = [line.split() for line in fh if line.strip()]
    out = np.full(len(pairs), np.nan)
    for i, x in pairs:
        out[int(i)] = float(x)
    return out
