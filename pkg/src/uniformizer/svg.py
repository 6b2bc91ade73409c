"""Plain SVG renderings of meshes, fields and image annuli (presentational only)."""
from __future__ import annotations

import numpy as np

from ._io import atomic_open
from .geometry import Triangulation

# a short perceptual ramp, dark blue -> teal -> yellow
_RAMP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=float)


def color(t: float) -> str:
    t = float(np.clip(t, 0.0, 1.0)) * (len(_RAMP) - 1)
    k = min(int(t), len(_RAMP) - 2)
    c = _RAMP[k] + (t - k) * (_RAMP[k + 1] - _RAMP[k])
    return "#%02x%02x%02x" % tuple(int(round(x)) for x in c)


class _Panel:
    def __init__(self, points: np.ndarray, x0: float, size: float, pad: float = 10.0):
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = max(hi[0] - lo[0], hi[1] - lo[1], 1e-300)
        self.lo, self.k = lo, (size - 2 * pad) / span
        self.x0, self.size, self.pad = x0, size, pad

    def __call__(self, p):
        p = np.atleast_2d(p)
        x = self.x0 + self.pad + (p[:, 0] - self.lo[0]) * self.k
        y = self.size - self.pad - (p[:, 1] - self.lo[1]) * self.k
        return np.stack([x, y], axis=1)


def _polygon(pts: np.ndarray, fill: str, stroke: str = "none") -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    return f'<polygon points="{coords}" fill="{fill}" stroke="{stroke}" stroke-width="0.3"/>'


def mesh_field_svg(mesh: Triangulation, values: np.ndarray, size: float = 480.0) -> list[str]:
    panel = _Panel(mesh.vertices, 0.0, size)
    v = np.asarray(values, dtype=float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    span = hi - lo if hi > lo else 1.0
    out = []
    for tri in mesh.triangles:
        t = (np.mean(v[tri]) - lo) / span
        out.append(_polygon(panel(mesh.vertices[tri]), color(t), "#333333"))
    return out


def write_map_svg(path, mesh: Triangulation, values: np.ndarray, segments: np.ndarray | None = None,
                  size: float = 480.0) -> None:
    """Mesh colored by ``values``; optionally a second panel with image segments (complex pairs)."""
    parts = mesh_field_svg(mesh, values, size)
    width = size
    if segments is not None and len(segments):
        seg = np.asarray(segments, dtype=complex)
        pts = np.stack([seg.real.ravel(), seg.imag.ravel()], axis=1)
        panel = _Panel(pts, size, size)
        a = panel(np.stack([seg[:, 0].real, seg[:, 0].imag], axis=1))
        b = panel(np.stack([seg[:, 1].real, seg[:, 1].imag], axis=1))
        for (x1, y1), (x2, y2) in zip(a, b):
            parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="#1f3b73" stroke-width="0.4"/>')
        width = 2 * size
    with atomic_open(path) as fh:
        fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{size:.0f}" '
                 f'viewBox="0 0 {width:.0f} {size:.0f}">\n')
        fh.write('<rect width="100%" height="100%" fill="white"/>\n')
        fh.write("\n".join(parts))
        fh.write("\n</svg>\n")
