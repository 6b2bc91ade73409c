"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line with the measured numbers; the
lines are printed in the terminal summary (see conftest) and when the
module is run as a script.
"""
import math
import time

import numpy as np
import pytest

from meshes import ring16
from uniformizer.cli import harmonic_order_study
from uniformizer.conjugate import boundary_loop_of_cells, enclosing_loop, path_independence_residual, period
from uniformizer.geometry import INTERIOR, PolygonalAnnulus, RoundAnnulus, build_voronoi, generate_annulus_mesh
from uniformizer.network import build_network, green_identity_residual, loop_flux, transition_rows
from uniformizer.packing import flower_packing, hexagonal_packing, markov_equality_check, packing_to_network, \
    stephenson_conductance
from uniformizer.riemann import ExhaustionSpec, lattice_disk, riemann_map
from uniformizer.solver import solve_dirichlet
from uniformizer.uniformize import boundary_circularity, convergence_study, map_winding

RESULTS: list[str] = []

ROUND = RoundAnnulus(1.0, 2.0)


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.3e}" for x in xs) + "]"


@pytest.fixture(scope="module")
def round_study():
    t0 = time.perf_counter()
    table = convergence_study(ROUND, 4, pitch=0.25)
    return table, time.perf_counter() - t0


def test_period_convergence(round_study):
    table, elapsed = round_study
    err = table.column("period_error")
    ok = err[-1] < 0.01 and bool(np.all(np.diff(err) < 0)) and elapsed < 60
    report("period convergence", ok,
           f"periods {fmt(table.periods)} vs {ROUND.period:.5f}, rel errors {fmt(err)}, {elapsed:.1f} s")


def test_potential_convergence(round_study):
    table, _ = round_study
    err = table.column("potential_error")
    rho = table.column("rho")
    ratios = err[1:] / err[:-1]
    slope = np.polyfit(np.log(rho), np.log(err), 1)[0]
    ok = bool(np.all(ratios <= 0.6)) and slope >= 0.8
    report("potential L-inf convergence", ok, f"errors {fmt(err)}, ratios {fmt(ratios)}, log-log slope {slope:.2f}")


def test_exact_identities(round_level):
    mesh, vor, net, g = round_level
    flux_scale = float(np.sum(net.conductance * np.abs(np.diff(g.values[net.edges], axis=1).ravel())))
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(2, net.n))
    green = green_identity_residual(net, u, v, np.flatnonzero(mesh.labels == INTERIOR))

    x, y = mesh.vertices.T
    r = np.hypot(x, y)
    inside = (mesh.labels == INTERIOR) & (r > 1.3) & (r < 1.7) & (np.abs(y) < 0.4) & (x > 0)
    (cell_loop,) = boundary_loop_of_cells(vor, inside)
    flux = abs(loop_flux(net, vor, g, cell_loop)) / flux_scale
    h = len(cell_loop) // 2
    g1, g2 = list(cell_loop[: h + 1]), list(cell_loop[h:][::-1])
    path = path_independence_residual(net, vor, g, g1, g2) / flux_scale

    loop = enclosing_loop(net, vor)
    p = period(net, vor, g, loop)
    wind = max(abs(loop_flux(net, vor, g, np.concatenate([loop] + [loop[1:]] * (k - 1))) - k * p) / (k * abs(p))
               for k in (2, 3))
    P = transition_rows(net)
    sums = np.asarray(P.sum(axis=1)).ravel()
    rows = float(np.abs(sums[net.degree > 0] - 1).max())
    vals = {"green": green, "null-loop flux": flux, "path independence": path, "winding-k": wind, "row sums": rows}
    ok = max(vals.values()) <= 1e-10
    report("exact discrete identities", ok, ", ".join(f"{k} {v:.1e}" for k, v in vals.items()))


def test_map_geometry():
    table, results = convergence_study(ROUND, 5, pitch=0.25, keep=True)
    finest = results[-1].map
    circ = max(boundary_circularity(finest))
    merr = table.column("map_error")[-1]
    wind = map_winding(finest)
    ok = circ < 1e-2 and merr < 2e-2 and round(wind) == 1 and abs(wind - 1) < 1e-6
    report("map geometry", ok, f"5 levels, circularity {circ:.2e}, map error {merr:.2e}, winding {wind:.6f}")


def test_asymptotic_harmonicity():
    rows, alpha_l, alpha_r = harmonic_order_study(ROUND, 4, 0.25)
    res = [r[3] for r in rows]
    ok = alpha_l >= 2.5
    report("asymptotic harmonicity", ok, f"residuals {fmt(res)}, order {alpha_l:.2f} vs lambda ({alpha_r:.2f} vs rho)")


def test_riemann_map():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    sq = riemann_map(ExhaustionSpec(square, (0.5, 0.5), levels=3, pitch=1 / 16, inner_halfwidth=1 / 8,
                                    probe_radius=0.3))
    mags = np.abs(sq.periods)
    disk = riemann_map(ExhaustionSpec(lattice_disk(1.0, 1 / 8), (0.0, 0.0), levels=4, pitch=1 / 8,
                                      inner_halfwidth=1 / 4, probe_radius=0.5))
    c = disk.cauchy
    ok = bool(np.all(np.diff(mags) < 0)) and all(a > b for a, b in zip(c, c[1:])) and c[-1] < 5e-2
    report("riemann map", ok, f"square |periods| {fmt(mags)}; disk cauchy {fmt(c)}")


def test_packing_cross_checks():
    hexp = hexagonal_packing(1)
    center = int(np.argmin(np.hypot(*hexp.centers.T)))
    cond = np.array([stephenson_conductance(hexp, center, u) for u in hexp.flower(center)])
    hex_err = float(np.abs(cond - 1 / math.sqrt(3)).max())
    mesh, net, _ = packing_to_network(hexagonal_packing(2))
    fvm = build_network(build_voronoi(mesh))
    live = net.conductance > 0
    fvm_err = float(np.abs(net.conductance[live] - fvm.conductance[live]).max())
    markov = markov_equality_check(flower_packing(1.0, [1.0, 1.0, 1.2, 1.0, 0.8, 1.0]), 0, h=1e-6)
    ok = hex_err <= 1e-12 and fvm_err <= 1e-12 and markov <= 1e-3
    report("packing cross-checks", ok, f"hex |c - 1/sqrt3| {hex_err:.1e}, vs FVM {fvm_err:.1e}, markov {markov:.1e}")


def _dense(net):
    n = net.n
    L = np.zeros((n, n))
    for (i, j), c in zip(net.edges, net.conductance):
        L[[i, j], [j, i]] -= c
        L[i, i] += c
        L[j, j] += c
    fixed = net.labels != INTERIOR
    vals = np.where(net.labels == 1, 1.0, 0.0)
    u = vals.copy()
    u[~fixed] = np.linalg.solve(L[np.ix_(~fixed, ~fixed)], -L[np.ix_(~fixed, fixed)] @ vals[fixed])
    return u


def test_brute_force_equivalence():
    meshes = {
        "square l1": generate_annulus_mesh(PolygonalAnnulus.square(2.0, 1.0), 1, 1.0),
        "round pitch 0.5": generate_annulus_mesh(ROUND, 0, 0.5),
        "ring16": ring16(),
    }
    errs = {}
    for name, mesh in meshes.items():
        assert mesh.n_vertices <= 100
        net = build_network(build_voronoi(mesh))
        g, _ = solve_dirichlet(net)
        errs[name] = float(np.abs(g.values - _dense(net)).max())
    ok = max(errs.values()) <= 1e-9
    report("brute-force oracle", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
