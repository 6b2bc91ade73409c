import math

import numpy as np
import pytest

from meshes import equilateral_flower
from uniformizer.conjugate import (
    boundary_loop_of_cells,
    conjugate_field,
    dual_graph,
    enclosing_loop,
    flux_fellow_path,
    path_independence_residual,
    path_sum,
    period,
    slit_jump,
    slit_path,
    winding_number,
)
from uniformizer.errors import (
    BoundarySegment,
    EndpointMismatch,
    NoEnclosingLoop,
    NonHarmonicBeyondTolerance,
    NotAPath,
    UnreachableVertex,
)
from uniformizer.geometry import (
    BOUNDARY_MIDPOINT,
    E1,
    E2,
    INTERIOR,
    PolygonalAnnulus,
    build_voronoi,
    generate_annulus_mesh,
)
from uniformizer.network import ScalarField, build_network, loop_flux


def flux_scale(net, g):
    v = g.values if isinstance(g, ScalarField) else g
    return float(np.sum(net.conductance * np.abs(v[net.edges[:, 0]] - v[net.edges[:, 1]])))


# -- flux fellow paths -------------------------------------------------------------------

def test_single_segment(round_level):
    mesh, vor, net, g = round_level
    pairs = sorted(vor.segment_lookup.items())
    (a, b), e = pairs[len(pairs) // 2]
    fp = flux_fellow_path(vor, [a, b])
    assert list(fp.crossed_edges) == [e]
    i, j = mesh.edges[e]
    r = fp.fellow_path[0]
    assert {r, fp.left_path[0]} == {i, j}
    t = vor.points[b] - vor.points[a]
    d = mesh.vertices[r] - vor.points[a]
    assert t[0] * d[1] - t[1] * d[0] < 0  # strictly on the right
    back = flux_fellow_path(vor, [b, a])
    assert back.fellow_path[0] == fp.left_path[0]


def test_reversal_swaps_fellows(round_level):
    mesh, vor, net, g = round_level
    loop = enclosing_loop(net, vor)
    path = loop[:12]
    fwd = flux_fellow_path(vor, path)
    rev = flux_fellow_path(vor, path[::-1])
    assert np.array_equal(rev.fellow_path[::-1], fwd.left_path)
    assert np.array_equal(rev.crossed_edges[::-1], fwd.crossed_edges)


def test_loop_around_flower_center():
    mesh = equilateral_flower()
    vor = build_voronoi(mesh)
    inside = np.zeros(mesh.n_vertices, dtype=bool)
    inside[0] = True
    (loop,) = boundary_loop_of_cells(vor, inside)
    assert len(loop) == 7
    ccw = flux_fellow_path(vor, loop)
    # the center is on the left of a counter-clockwise loop
    assert set(ccw.fellow_path) == set(range(1, 7))
    assert np.all(ccw.left_path == 0)
    cw = flux_fellow_path(vor, loop[::-1])
    assert np.all(cw.fellow_path == 0)
    star = {k for k, (i, j) in enumerate(mesh.edges) if i == 0 or j == 0}
    assert set(ccw.crossed_edges) == star


def test_fellow_path_errors(round_level):
    mesh, vor, net, g = round_level
    loop = enclosing_loop(net, vor)
    with pytest.raises(NotAPath):
        flux_fellow_path(vor, [loop[0], loop[1], loop[0], loop[1]])
    with pytest.raises(NotAPath):
        flux_fellow_path(vor, [loop[0], loop[5]])
    with pytest.raises(NotAPath):
        flux_fellow_path(vor, [loop[0]])
    be = int(np.flatnonzero(mesh.boundary_edge_mask)[0])
    a, b = vor.edge_dual[be]
    assert vor.kind[b] == BOUNDARY_MIDPOINT
    with pytest.raises(BoundarySegment):
        flux_fellow_path(vor, [a, b])


# -- conjugate field ----------------------------------------------------------------------------

def test_constant_potential_gives_constant_conjugate(round_level):
    mesh, vor, net, g = round_level
    cf = conjugate_field(net, vor, np.full(net.n, 0.4), base_value=2.5)
    vals = cf.values[cf.defined]
    assert np.all(vals == 2.5)
    assert cf.period == 0


def test_lattice_conjugate_of_x_is_y():
    mesh = generate_annulus_mesh(PolygonalAnnulus.square(2.0, 1.0), 2, 1.0)
    vor = build_voronoi(mesh)
    net = build_network(vor)
    x = mesh.vertices[:, 0]
    cf = conjugate_field(net, vor, x)
    ok = cf.defined
    diff = cf.values[ok] - vor.points[ok, 1]
    assert np.ptp(diff) <= 1e-12
    assert abs(cf.period) <= 1e-12


def test_conjugate_increases_with_angle(round_level):
    mesh, vor, net, g = round_level
    cf = conjugate_field(net, vor, g)
    loop = cf.loop
    vals = cf.values[loop]
    step = np.diff(vals)
    # one slit crossing where the value drops by the period
    drops = step < -0.5 * cf.period
    assert np.count_nonzero(drops) == 1
    step[drops] += cf.period
    assert np.all(step >= -1e-12)
    # against the classical conjugate theta * period / 2 pi
    th = np.unwrap(np.arctan2(vor.points[loop, 1], vor.points[loop, 0]))
    lin = np.polyfit(th, np.r_[0, np.cumsum(step)], 1)
    assert lin[0] == pytest.approx(cf.period / (2 * math.pi), rel=0.05)


def test_conjugate_basepoint_and_base_value(round_level):
    mesh, vor, net, g = round_level
    cf = conjugate_field(net, vor, g, base_value=-3.0)
    assert cf.values[cf.basepoint] == -3.0
    cf2 = conjugate_field(net, vor, g, basepoint=cf.basepoint)
    ok = cf.defined
    assert np.allclose(cf.values[ok] - cf2.values[ok], -3.0, atol=1e-12)


def test_slit_jump_is_period(round_level):
    mesh, vor, net, g = round_level
    cf = conjugate_field(net, vor, g)
    jumps = slit_jump(cf, net, g)
    assert len(jumps) > 0
    assert np.allclose(jumps, cf.period, rtol=1e-12, atol=0)


def test_slit_independence(round_level):
    mesh, vor, net, g = round_level
    a = conjugate_field(net, vor, g, slit=0.0)
    b = conjugate_field(net, vor, g, basepoint=a.basepoint, slit=2.0)
    ok = a.defined & b.defined
    k = (b.values[ok] - a.values[ok]) / a.period
    assert np.abs(k - np.round(k)).max() <= 1e-10
    assert set(np.round(k).astype(int)) <= {-1, 0, 1}
    assert b.period == a.period


def test_slit_from_e2_vertex(round_level):
    mesh, vor, net, g = round_level
    v = int(np.flatnonzero(mesh.labels == E2)[5])
    path = slit_path(net, vor, v)
    assert path[0] == v and mesh.labels[path[-1]] == E1
    assert np.all(mesh.labels[path[1:-1]] == INTERIOR)
    with pytest.raises(NotAPath):
        slit_path(net, vor, int(np.flatnonzero(mesh.labels == INTERIOR)[0]))


def test_nonharmonic_input_rejected(round_level):
    mesh, vor, net, g = round_level
    rng = np.random.default_rng(11)
    noisy = g.values + 1e-3 * rng.normal(size=net.n) * (mesh.labels == INTERIOR)
    with pytest.raises(NonHarmonicBeyondTolerance):
        conjugate_field(net, vor, noisy)
    cf = conjugate_field(net, vor, noisy, tol=None)
    assert np.isfinite(cf.period)


def test_bad_basepoint(round_level):
    mesh, vor, net, g = round_level
    mid = int(np.flatnonzero(vor.kind == BOUNDARY_MIDPOINT)[0])
    with pytest.raises(UnreachableVertex):
        conjugate_field(net, vor, g, basepoint=mid)


# -- period ----------------------------------------------------------------------------------------

def test_period_independent_of_loop(round_level):
    mesh, vor, net, g = round_level
    l1 = enclosing_loop(net, vor, depth=1)
    l2 = enclosing_loop(net, vor, depth=5)
    assert set(l1) != set(l2)
    p1, p2 = period(net, vor, g, l1), period(net, vor, g, l2)
    assert abs(p1 - p2) <= 1e-12 * abs(p1)
    assert period(net, vor, g, l1[::-1]) == pytest.approx(-p1, rel=1e-14)
    assert round(winding_number(vor.points[l1[:-1]], mesh.hole_point)) == 1


def test_period_equals_loop_flux(round_level):
    mesh, vor, net, g = round_level
    loop = enclosing_loop(net, vor)
    p = period(net, vor, g, loop)
    assert abs(loop_flux(net, vor, g, loop) - p) <= 1e-12 * abs(p)


def test_period_near_classical(round_level, round_annulus):
    mesh, vor, net, g = round_level
    p = period(net, vor, g)
    assert abs(p - round_annulus.period) / round_annulus.period < 0.01


@pytest.mark.parametrize("k", [2, 3])
def test_winding_k_loop(round_level, k):
    mesh, vor, net, g = round_level
    loop = enclosing_loop(net, vor)
    multi = np.concatenate([loop] + [loop[1:]] * (k - 1))
    p = period(net, vor, g, loop)
    assert abs(loop_flux(net, vor, g, multi) - k * p) <= 1e-12 * k * abs(p)


def test_enclosing_loop_depth_range(round_level):
    mesh, vor, net, g = round_level
    with pytest.raises(NoEnclosingLoop):
        enclosing_loop(net, vor, depth=10_000)


# -- path independence ---------------------------------------------------------------------------

def split_cell_loop(vor, inside):
    (loop,) = boundary_loop_of_cells(vor, inside)
    h = len(loop) // 2
    return list(loop[: h + 1]), list(loop[h:][::-1])


def test_path_independence_harmonic(round_level):
    mesh, vor, net, g = round_level
    r = np.hypot(*mesh.vertices.T)
    inside = (mesh.labels == INTERIOR) & (r > 1.3) & (r < 1.7) & (np.abs(mesh.vertices[:, 1]) < 0.4) & (mesh.vertices[:, 0] > 0)
    g1, g2 = split_cell_loop(vor, inside)
    res = path_independence_residual(net, vor, g, g1, g2)
    assert res <= 1e-12 * flux_scale(net, g)
    assert path_independence_residual(net, vor, g, g1, g1) == 0


def test_path_independence_endpoint_mismatch(round_level):
    mesh, vor, net, g = round_level
    loop = enclosing_loop(net, vor)
    with pytest.raises(EndpointMismatch):
        path_independence_residual(net, vor, g, loop[:5], loop[1:6])


def test_path_residual_shrinks_for_smooth_field(round_annulus):
    """Restriction of a smooth harmonic function: not discretely harmonic, residual O(lambda^alpha)."""
    residuals, lams = [], []
    for k in range(3):
        mesh = generate_annulus_mesh(round_annulus, k)
        vor = build_voronoi(mesh)
        net = build_network(vor)
        x, y = mesh.vertices.T
        f = x * y + np.log(np.hypot(x - 0.1, y))
        r = np.hypot(x, y)
        inside = (mesh.labels == INTERIOR) & (r > 1.4) & (r < 1.6) & (np.abs(np.arctan2(y, x) - 0.7) < 0.1)
        g1, g2 = split_cell_loop(vor, inside)
        residuals.append(path_independence_residual(net, vor, f, g1, g2))
        lams.append(vor.lam)
    assert residuals[0] > residuals[1] > residuals[2] > 0
    alpha = np.polyfit(np.log(lams), np.log(residuals), 1)[0]
    assert alpha > 2


def test_path_sum_matches_dual_graph_increments(round_level):
    mesh, vor, net, g = round_level
    loop = enclosing_loop(net, vor)
    dg = dual_graph(vor)
    k, s = dg.lookup(loop[:-1], loop[1:])
    assert path_sum(net, vor, g, loop) == pytest.approx(float(np.sum(s * dg.increments(net, g)[k])), rel=1e-14)
