"""Riemann maps of polygonal Jordan domains by exhaustion with annuli.

A puncture ``p0`` is surrounded by shrinking squares ``Theta_n``.  Each
annulus ``Omega minus Theta_n`` is mapped to a round annulus with the outer
boundary at potential 0 and ``Theta_n`` at potential 1, so the image has the
outer boundary on the unit circle.  The inversion ``sigma(w) = 1/w`` swaps
the roles and an affine normalization fixes the value and derivative at an
anchor point ``z0``.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon, box
from shapely.ops import unary_union

from ._io import atomic_open
from .errors import DegenerateDerivative, PeriodNotDecreasing, PunctureTooCloseToBoundary, RiemannError
from .geometry import PolygonalAnnulus, generate_annulus_mesh
from .solver import DEFAULT_TOL, DirichletSpec
from .uniformize import AnnulusMap, LevelResult, format_number, parallel_map, run_level


@dataclass(frozen=True)
class ExhaustionSpec:
    """Domain, puncture and the schedule of inner squares.

    Level ``n`` (from 1) uses the inner square of half-width
    ``inner_halfwidth * shrink**(n-1)`` on the lattice of pitch
    ``pitch / 2**(n-1)``.
    """

    domain: np.ndarray
    puncture: tuple[float, float]
    levels: int = 3
    shrink: float = 0.5
    inner_halfwidth: float = 0.25
    pitch: float = 0.125
    probe_radius: float = 0.5
    n_probes: int = 64

    def __post_init__(self):
        object.__setattr__(self, "domain", np.asarray(self.domain, dtype=float))
        if self.levels < 1:
            raise RiemannError("need at least one level")
        if not 0 < self.shrink < 1:
            raise RiemannError("shrink factor must lie in (0, 1)")

    def halfwidth(self, n: int) -> float:
        return self.inner_halfwidth * self.shrink ** (n - 1)

    def level_pitch(self, n: int) -> float:
        return self.pitch / 2 ** (n - 1)

    @property
    def probes(self) -> np.ndarray:
        th = 0.01 + 2 * math.pi * np.arange(self.n_probes) / self.n_probes
        return self.puncture[0] + self.probe_radius * np.cos(th) + 1j * (self.puncture[1] + self.probe_radius * np.sin(th))


def lattice_disk(radius: float = 1.0, pitch: float = 0.125, center=(0.0, 0.0)) -> np.ndarray:
    """Staircase polygon: union of the lattice squares whose centers lie in the disk."""
    n = int(math.ceil(radius / pitch)) + 1
    k = np.arange(-n, n)
    cx, cy = np.meshgrid(k + 0.5, k + 0.5, indexing="ij")
    inside = np.hypot(cx, cy) * pitch < radius
    boxes = [box(center[0] + i * pitch, center[1] + j * pitch, center[0] + (i + 1) * pitch, center[1] + (j + 1) * pitch)
             for i, j in zip(np.floor(cx[inside]).astype(int), np.floor(cy[inside]).astype(int))]
    shape = unary_union(boxes).simplify(0)
    if not isinstance(shape, Polygon) or len(shape.interiors):
        raise RiemannError("staircase disk is not a simple polygon")
    return np.asarray(shape.exterior.coords)[:-1]


def nested_annuli(spec: ExhaustionSpec) -> list[PolygonalAnnulus]:
    dom = Polygon(spec.domain)
    if not dom.is_valid:
        raise RiemannError("domain polygon is not simple")
    px, py = spec.puncture
    if not dom.contains(shapely.Point(px, py)):
        raise PunctureTooCloseToBoundary(f"puncture {spec.puncture} is not inside the domain")
    s1 = spec.halfwidth(1)
    theta1 = box(px - s1, py - s1, px + s1, py + s1)
    if not dom.contains(theta1) or dom.exterior.distance(theta1) < spec.level_pitch(1) - 1e-12:
        raise PunctureTooCloseToBoundary(
            f"inner square of half-width {s1} around {spec.puncture} reaches the boundary")
    out = []
    for n in range(1, spec.levels + 1):
        s = spec.halfwidth(n)
        out.append(PolygonalAnnulus(spec.domain, _square(px, py, s)))
    return out


def _square(cx, cy, h) -> np.ndarray:
    return np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])


@dataclass(frozen=True, eq=False)
class NormalizedMap:
    """``w -> a * sigma(Psi(w)) + b`` with ``sigma(z) = 1/z``."""

    map: AnnulusMap
    a: complex
    b: complex

    def raw(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        pts = np.stack([z.real, z.imag], axis=1)
        return 1.0 / self.map(pts)

    def __call__(self, z) -> np.ndarray:
        return self.a * self.raw(z) + self.b


def invert_and_normalize(m: AnnulusMap, z0: complex, xi0: complex, step: float) -> NormalizedMap:
    """Fix ``value(z0) = xi0`` and unit centered-difference derivative at ``z0``.

    The difference quotient averages the horizontal and vertical central
    differences over the four stencil points ``z0 +- step``, ``z0 +- i step``.
    """
    z0 = complex(z0)
    stencil = np.array([z0 + step, z0 - step, z0 + 1j * step, z0 - 1j * step, z0])
    ident = NormalizedMap(m, 1.0, 0.0)
    F = ident.raw(stencil)
    D = 0.5 * ((F[0] - F[1]) / (2 * step) + (F[2] - F[3]) / (2j * step))
    if not abs(D) >= 1e-12:
        raise DegenerateDerivative(f"difference quotient {abs(D):.3e} at z0 = {z0}")
    a = 1.0 / D
    b = complex(xi0) - a * F[4]
    return NormalizedMap(m, complex(a), complex(b))


@dataclass
class RiemannLevel:
    n: int
    annulus: PolygonalAnnulus
    result: LevelResult
    normalized: NormalizedMap

    @property
    def period(self) -> float:
        return self.result.conj.period

    @property
    def inner_image_radius(self) -> float:
        """Radius of the image of ``Theta_n`` before normalization, ``1/R2``."""
        return 1.0 / self.result.map.R2


@dataclass
class RiemannApproximation:
    spec: ExhaustionSpec
    z0: complex
    xi0: complex
    levels: list[RiemannLevel]
    probe_values: list[np.ndarray] = field(default_factory=list)

    @property
    def periods(self) -> list[float]:
        return [lv.period for lv in self.levels]

    @property
    def cauchy(self) -> list[float]:
        """``max |Y_(n+1) - Y_n|`` over the probe circle."""
        v = self.probe_values
        return [float(np.max(np.abs(b - a))) for a, b in zip(v[:-1], v[1:])]

    def write_csv(self, directory) -> None:
        with atomic_open(os.path.join(directory, "periods.csv")) as fh:
            w = csv.writer(fh)
            w.writerow(("level", "pitch", "inner_halfwidth", "period", "inner_image_radius", "a_re", "a_im", "b_re", "b_im"))
            for lv in self.levels:
                nm = lv.normalized
                w.writerow((lv.n, format_number(self.spec.level_pitch(lv.n)), format_number(self.spec.halfwidth(lv.n)),
                            format_number(lv.period), format_number(lv.inner_image_radius),
                            format_number(nm.a.real), format_number(nm.a.imag), format_number(nm.b.real), format_number(nm.b.imag)))
        with atomic_open(os.path.join(directory, "cauchy.csv")) as fh:
            w = csv.writer(fh)
            w.writerow(("level", "next_level", "max_difference"))
            for n, d in enumerate(self.cauchy, start=1):
                w.writerow((n, n + 1, format_number(d)))
        probes = self.spec.probes
        for lv, vals in zip(self.levels, self.probe_values):
            with atomic_open(os.path.join(directory, f"map_level{lv.n}.csv")) as fh:
                w = csv.writer(fh)
                w.writerow(("x", "y", "re", "im"))
                for z, y in zip(probes, vals):
                    w.writerow((format_number(z.real), format_number(z.imag), format_number(y.real), format_number(y.imag)))


def riemann_map(spec: ExhaustionSpec, z0: complex | None = None, xi0: complex | None = None, *,
                tol: float = DEFAULT_TOL, slit: float | int = 0.0, check_periods: bool = True) -> RiemannApproximation:
    """Run every exhaustion level and normalize at ``z0`` (default: on the probe circle)."""
    annuli = nested_annuli(spec)
    px, py = spec.puncture
    z0 = complex(px + spec.probe_radius, py) if z0 is None else complex(z0)
    xi0 = z0 if xi0 is None else complex(xi0)
    bc = DirichletSpec(e1_value=0.0, e2_value=1.0)

    def one(n):
        ann = annuli[n - 1]
        mesh = generate_annulus_mesh(ann, level=n - 1, pitch=spec.pitch)
        res = run_level(mesh, level=n, spec=bc, tol=tol, slit=slit)
        nm = invert_and_normalize(res.map, z0, xi0, spec.level_pitch(n))
        return RiemannLevel(n, ann, res, nm)

    levels = parallel_map(one, range(1, spec.levels + 1))
    approx = RiemannApproximation(spec, z0, xi0, levels)
    approx.probe_values = [lv.normalized(spec.probes) for lv in levels]
    if check_periods:
        mags = [abs(p) for p in approx.periods]
        for n in range(1, len(mags)):
            if not mags[n] < mags[n - 1]:
                raise PeriodNotDecreasing(f"|period| at level {n + 1} ({mags[n]:.6g}) is not below level {n} ({mags[n - 1]:.6g})")
    return approx


def read_polygon(path) -> np.ndarray:
    """Polygon file: one ``x y`` pair per line; ``#`` starts a comment."""
    pts = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line or line.startswith("polygon"):
                continue
            x, y = line.replace(",", " ").split()
            pts.append((float(x), float(y)))
    if len(pts) < 3:
        raise RiemannError(f"{path}: a polygon needs at least three points")
    return np.array(pts)
