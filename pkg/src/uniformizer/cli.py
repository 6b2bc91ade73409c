"""Command-line front end.

Every subcommand writes CSV files with a header row and 17 significant
digits.  Stage errors end the process with the exit code of the error class
and a one-line diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._io import atomic_open
from .errors import UniformizerError
from .geometry import RoundAnnulus, build_voronoi, generate_annulus_mesh, read_mesh, validate_mesh, write_mesh
from .network import build_network
from .solver import DEFAULT_TOL, DirichletSpec, HarmonicSample, compose_g, estimate_harmonic_order, max_laplacian, \
    solve_dirichlet, solve_poisson_fvm, write_field

EXIT_IO = 3


@dataclass
class RunConfig:
    command: str
    inputs: dict = field(default_factory=dict)
    levels: int = 1
    tol: float = DEFAULT_TOL
    out: str = "."
    seed: int = 0


def _fmt(x: float) -> str:
    from .uniformize import format_number
    return format_number(float(x))


def _slit(text: str | None):
    if text is None:
        return 0.0
    if text.startswith("v"):
        return int(text[1:])
    return float(text)


def _annulus(args):
    from .uniformize import read_annulus_spec
    if getattr(args, "round", None):
        a, b = args.round
        return RoundAnnulus(a, b)
    if getattr(args, "spec", None):
        return read_annulus_spec(args.spec)
    raise UniformizerError("give --round A B or --spec FILE")


def _mesh_from_args(args):
    if getattr(args, "mesh", None):
        return read_mesh(args.mesh)
    return generate_annulus_mesh(_annulus(args), args.level, args.pitch)


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path


def _write_rows(path, header, rows) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, (int, np.integer, str)) else _fmt(x) for x in r])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_mesh(args) -> int:
    if args.validate:
        mesh = read_mesh(args.validate)
    else:
        mesh = _mesh_from_args(args)
    rep = validate_mesh(mesh)
    print(f"{mesh.n_vertices} vertices, {mesh.n_triangles} triangles, rho={mesh.mesh_size:.6g}; {rep.summary()}")
    if args.out:
        write_mesh(mesh, args.out)
    return 0


def cmd_solve(args) -> int:
    mesh = _mesh_from_args(args)
    net = build_network(build_voronoi(mesh))
    g, rep = solve_dirichlet(net, tol=args.tol)
    print(f"{rep.iterations} CG iterations, relative residual {rep.residual:.3e}, max defect {rep.max_defect:.3e}")
    if args.out:
        out = _outdir(args.out)
        write_field(g, os.path.join(out, "field.txt"))
        _write_rows(os.path.join(out, "potential.csv"), ("vertex", "x", "y", "label", "value"),
                    [(i, x, y, int(l), v) for i, ((x, y), l, v) in enumerate(zip(mesh.vertices, mesh.labels, g.values))])
    return 0


def cmd_conjugate(args) -> int:
    from .conjugate import conjugate_field
    mesh = _mesh_from_args(args)
    vor = build_voronoi(mesh)
    net = build_network(vor)
    g, _ = solve_dirichlet(net, tol=args.tol)
    cf = conjugate_field(net, vor, g, slit=_slit(args.slit))
    print(f"period {cf.period:.17g}")
    if args.out:
        out = _outdir(args.out)
        rows = [(int(s), vor.points[s, 0], vor.points[s, 1], cf.values[s]) for s in np.flatnonzero(cf.defined)]
        _write_rows(os.path.join(out, "conjugate.csv"), ("site", "x", "y", "value"), rows)
        _write_rows(os.path.join(out, "period.csv"), ("period",), [(cf.period,)])
    return 0


def cmd_uniformize(args) -> int:
    from .svg import write_map_svg
    from .uniformize import COLUMNS, convergence_study, default_probes, image_segments, write_map_csv
    ann = _annulus(args)
    out = _outdir(args.out)
    rng = np.random.default_rng(args.seed)
    probes = None
    if isinstance(ann, RoundAnnulus):
        probes = default_probes(ann, phase=float(rng.uniform(0, 2 * math.pi / 32)))
    table, results = convergence_study(ann, args.levels, pitch=args.pitch, tol=args.tol, slit=_slit(args.slit),
                                       probes=probes, keep=True)
    table.write_csv(os.path.join(out, "table.csv"))
    for res in results:
        write_map_csv(res.map, os.path.join(out, f"map_level{res.level}.csv"))
        write_map_svg(os.path.join(out, f"map_level{res.level}.svg"), res.mesh,
                      np.exp(res.map.scale * res.g.values), image_segments(res.map))
    _print_table(COLUMNS, table.rows)
    return 0


def _print_table(header, rows) -> None:
    print(" ".join(f"{h:>14s}" for h in header))
    for r in rows:
        print(" ".join(f"{x:>14d}" if isinstance(x, (int, np.integer)) else f"{x:14.6e}" for x in r))


def cmd_convergence(args) -> int:
    from .uniformize import COLUMNS, convergence_study
    ann = _annulus(args)
    out = _outdir(args.out)
    table = convergence_study(ann, args.levels, pitch=args.pitch, tol=args.tol, slit=_slit(args.slit))
    table.write_csv(os.path.join(out, "table.csv"))
    _print_table(COLUMNS, table.rows)
    if isinstance(ann, RoundAnnulus):
        rows, alpha_l, alpha_r = harmonic_order_study(ann, args.levels, args.pitch, args.tol)
        _write_rows(os.path.join(out, "harmonic.csv"), ("level", "lambda", "rho", "max_laplacian"), rows)
        print(f"asymptotic harmonic order: {alpha_l:.4g} against lambda, {alpha_r:.4g} against rho")
    return 0


def harmonic_order_study(ann: RoundAnnulus, levels: int, pitch=None, tol=DEFAULT_TOL):
    """Poisson pipeline with the radial ramp ``h = (r - a)/(b - a)`` and its exact Laplacian.

    The residual is measured on the middle half of the annulus.
    """
    a, b = ann.inner_radius, ann.outer_radius
    c = np.asarray(ann.center)

    def radius(p):
        p = np.atleast_2d(p) - c
        return np.hypot(p[:, 0], p[:, 1])

    def h_tilde(p):
        return (radius(p) - a) / (b - a)

    def h_lap(p):
        return 1.0 / (radius(p) * (b - a))

    def region(p):
        r = radius(p)
        return (r >= a + 0.25 * (b - a)) & (r <= b - 0.25 * (b - a))

    spec = DirichletSpec(h_tilde=h_tilde, h_tilde_laplacian=h_lap)
    samples, rows = [], []
    for k in range(levels):
        mesh = generate_annulus_mesh(ann, k, pitch)
        vor = build_voronoi(mesh)
        net = build_network(vor)
        ut, _ = solve_poisson_fvm(net, vor, spec, tol=tol)
        s = HarmonicSample(net, compose_g(ut, h_tilde), vor.lam, mesh.mesh_size)
        samples.append(s)
        rows.append((k, s.lam, s.rho, max_laplacian(s, region)))
    return (rows, estimate_harmonic_order(samples, region),
            estimate_harmonic_order(samples, region, against="rho"))


def cmd_riemann(args) -> int:
    from .riemann import ExhaustionSpec, lattice_disk, read_polygon, riemann_map
    from .svg import write_map_svg
    from .uniformize import image_segments
    if args.domain == "disk":
        domain = lattice_disk(1.0, args.pitch)
    else:
        domain = read_polygon(args.domain)
    px, py = (float(x) for x in args.puncture.split(","))
    spec = ExhaustionSpec(domain, (px, py), levels=args.levels, inner_halfwidth=args.halfwidth,
                          pitch=args.pitch, probe_radius=args.probe_radius)
    approx = riemann_map(spec, tol=args.tol, slit=_slit(args.slit))
    out = _outdir(args.out)
    approx.write_csv(out)
    last = approx.levels[-1]
    nm = last.normalized
    seg = image_segments(last.result.map)
    write_map_svg(os.path.join(out, "riemann.svg"), last.result.mesh, last.result.g.values,
                  nm.a / seg + nm.b)
    for lv in approx.levels:
        print(f"level {lv.n}: period {lv.period:.12g}, inner image radius {lv.inner_image_radius:.6g}")
    for n, d in enumerate(approx.cauchy, start=1):
        print(f"cauchy {n}->{n + 1}: {d:.6e}")
    return 0


def cmd_packing_check(args) -> int:
    from .packing import flower_packing, markov_distributions, read_packing
    if args.flower == "default":
        pack = flower_packing(1.0, [1.0, 1.0, 1.2, 1.0, 0.8, 1.0])
        v = 0
    else:
        pack = read_packing(args.flower, validate=False)
        v = args.vertex
    if v is None:
        v = _first_interior(pack)
    h = args.h * pack.radii[v]
    pc, rho, petals = markov_distributions(pack, v, h)
    dev = float(np.max(np.abs(pc - rho)))
    print(f"markov deviation {dev:.3e} at vertex {v} (h = {h:.3g})")
    if args.out:
        out = _outdir(args.out)
        _write_rows(os.path.join(out, "markov.csv"), ("petal", "p_conductance", "p_angle"),
                    [(int(u), a, b) for u, a, b in zip(petals, pc, rho)])
    return 0


def _first_interior(pack) -> int:
    from .errors import IncompleteFlower
    for v in range(pack.n):
        try:
            pack.flower(v)
            return v
        except IncompleteFlower:
            continue
    raise IncompleteFlower("packing has no vertex with a complete flower")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_domain(p, level=True):
    p.add_argument("--round", nargs=2, type=float, metavar=("A", "B"), help="round annulus A <= r <= B")
    p.add_argument("--spec", help="annulus spec file (annulus v1)")
    p.add_argument("--pitch", type=float, default=None, help="coarse lattice pitch")
    if level:
        p.add_argument("--level", type=int, default=0, help="refinement level")


def _add_common(p):
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="CG relative residual tolerance")
    p.add_argument("--seed", type=int, default=0, help="seed for probe sampling")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uniformizer", description="Discrete conformal uniformization of annuli.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate or validate a mesh")
    _add_domain(p)
    p.add_argument("--validate", metavar="FILE", help="validate an existing mesh file")
    p.add_argument("--out", help="write the mesh here")
    _add_common(p)
    p.set_defaults(func=cmd_mesh)

    for name, func, helptext in (("solve", cmd_solve, "solve the Dirichlet problem"),
                                 ("conjugate", cmd_conjugate, "solve and build the conjugate")):
        p = sub.add_parser(name, help=helptext)
        _add_domain(p)
        p.add_argument("--mesh", help="mesh file instead of a generated mesh")
        p.add_argument("--out", help="output directory")
        p.add_argument("--slit", help="slit angle in radians, or vN for E2 vertex N")
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("uniformize", help="map an annulus across refinement levels")
    p.add_argument("target", choices=["annulus"])
    _add_domain(p, level=False)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--out", default=".")
    p.add_argument("--slit")
    _add_common(p)
    p.set_defaults(func=cmd_uniformize)

    p = sub.add_parser("convergence", help="convergence table (and harmonic order for round annuli)")
    _add_domain(p, level=False)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--out", default=".")
    p.add_argument("--slit")
    _add_common(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("riemann", help="Riemann map by exhaustion")
    p.add_argument("--domain", required=True, help="polygon file, or 'disk' for the staircase unit disk")
    p.add_argument("--puncture", default="0,0", help="x,y")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--pitch", type=float, default=0.125)
    p.add_argument("--halfwidth", type=float, default=0.25, help="half-width of the first inner square")
    p.add_argument("--probe-radius", type=float, default=0.5)
    p.add_argument("--out", default=".")
    p.add_argument("--slit")
    _add_common(p)
    p.set_defaults(func=cmd_riemann)

    p = sub.add_parser("packing-check", help="Markov transition equality on a flower")
    p.add_argument("--flower", default="default", help="'default' or a pack v1 file")
    p.add_argument("--vertex", type=int, default=None)
    p.add_argument("--h", type=float, default=1e-6, help="relative finite-difference step")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_packing_check)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "levels", 1) < 1:
        print("uniformizer: --levels must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UniformizerError as exc:
        print(f"uniformizer {exc.stage}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"uniformizer io: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
