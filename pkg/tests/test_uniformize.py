import csv
import math

import numpy as np
import pytest

from uniformizer.errors import MismatchedSupports, OutsideSupport, ZeroPeriod
from uniformizer.geometry import INTERIOR, PolygonalAnnulus, RoundAnnulus, generate_annulus_mesh
from uniformizer.network import ScalarField
from uniformizer.uniformize import (
    COLUMNS,
    annulus_map,
    boundary_circularity,
    convergence_study,
    default_probes,
    evaluate_map,
    format_number,
    log_modulus_spread,
    map_winding,
    parallel_map,
    read_annulus_spec,
    run_level,
    worker_count,
    write_map_csv,
)


@pytest.fixture(scope="module")
def level(round_annulus):
    return run_level(generate_annulus_mesh(round_annulus, 2), level=2)


@pytest.fixture(scope="module")
def study(round_annulus):
    return convergence_study(round_annulus, 4, keep=True)


def interior_sites(m):
    """Dual vertices all of whose surrounding cells are interior."""
    vor = m.vor
    ok = np.zeros(vor.n_sites, dtype=bool)
    for i in np.flatnonzero(vor.mesh.labels == INTERIOR):
        ok[vor.cells[i]] = True
    for i in np.flatnonzero(vor.mesh.labels != INTERIOR):
        ok[vor.cells[i]] = False
    return np.flatnonzero(ok & m.conj.defined)


# -- annulus_map ------------------------------------------------------------------------

def test_constant_potentials_hit_the_radii(level):
    m = level.map
    zero = annulus_map(ScalarField(np.zeros(level.net.n), level.mesh), m.conj)
    one = annulus_map(ScalarField(np.ones(level.net.n), level.mesh), m.conj)
    s = interior_sites(m)
    assert np.allclose(np.abs(zero.site_values[s]), 1.0, rtol=1e-14)
    assert np.allclose(np.abs(one.site_values[s]), m.R2, rtol=1e-14)


def test_radii(level):
    m = level.map
    R1, R2 = m.radii
    assert R1 == 1.0
    assert R2 == math.exp(2 * math.pi / m.period)
    assert m.period > 0


def test_oracle_map_at_vertices(level, round_annulus):
    m = level.map
    s = interior_sites(m)
    z = level.vor.points[s, 0] + 1j * level.vor.points[s, 1]
    w = m.site_values[s]
    rot = w[0] / z[0]
    rot /= abs(rot)
    assert np.abs(rot * z - w).max() < 0.05
    assert np.abs(np.abs(w) - np.abs(z)).max() < 0.02


def test_map_errors(level, round_annulus):
    m = level.map
    with pytest.raises(ZeroPeriod):
        annulus_map(m.g, m.conj, 0.0)
    other = generate_annulus_mesh(round_annulus, 1)
    with pytest.raises(MismatchedSupports):
        annulus_map(ScalarField(np.zeros(other.n_vertices), other), m.conj)


# -- evaluate_map -------------------------------------------------------------------------

def test_evaluate_at_dual_vertex(level):
    m = level.map
    s = interior_sites(m)[::17]
    got = evaluate_map(m, level.vor.points[s])
    assert np.allclose(got, m.site_values[s], rtol=1e-10, atol=0)


def test_evaluate_on_cell_edge_is_affine(level):
    m = level.map
    cf = m.conj
    i = int(np.flatnonzero(level.mesh.labels == INTERIOR)[40])
    ids = level.vor.cells[i]
    vals = cf.cell_values(i)
    p = 0.5 * (level.vor.points[ids[1]] + level.vor.points[ids[2]])
    got = cf.evaluate(p)[0]
    want = 0.5 * (vals[1] + vals[2])
    k = (got - want) / cf.period
    assert abs(k - round(k)) * cf.period <= 1e-10


def test_evaluate_outside_support(level):
    m = level.map
    with pytest.raises(OutsideSupport):
        m(np.array([[1.001, 0.0]]))
    with pytest.raises(OutsideSupport):
        m(np.array([[5.0, 5.0]]))


def test_branch_consistency_across_slit(level):
    m = level.map
    eps = 1e-7
    r = np.array([1.3, 1.5, 1.7])
    above = np.c_[r, np.full(3, eps)]
    below = np.c_[r, np.full(3, -eps)]
    wa, wb = m(above), m(below)
    assert np.abs(wa - wb).max() <= 1e-5 * np.abs(wa).max()


def test_modulus_monotone_along_radii(level):
    m = level.map
    mod = np.exp(m.scale * level.g.values)
    r = np.hypot(*level.mesh.vertices.T)
    rings = np.unique(np.round(r, 12))
    ring_mod = [mod[np.isclose(r, q)] for q in rings]
    for a, b in zip(ring_mod, ring_mod[1:]):
        assert b.min() >= a.max() - 1e-12


def test_winds_once(level):
    assert round(map_winding(level.map)) == 1
    assert map_winding(level.map) == pytest.approx(1.0, abs=1e-9)


# -- circularity ------------------------------------------------------------------------------

def test_circularity_decreases(study):
    table, results = study
    devs = [boundary_circularity(r.map) for r in results]
    for (a1, a2), (b1, b2) in zip(devs, devs[1:]):
        assert b1 < a1 and b2 < a2


def test_wrong_period_scales_spread(level):
    m = level.map
    wrong = annulus_map(m.g, m.conj, 2 * m.period)
    # log|phi| = (2 pi / P) g, so doubling P halves the spread
    assert log_modulus_spread(wrong) == pytest.approx(0.5 * log_modulus_spread(m), rel=1e-14)
    assert wrong.R2 == pytest.approx(math.sqrt(m.R2), rel=1e-14)


# -- convergence study ------------------------------------------------------------------------

def test_round_study(study, round_annulus):
    table, results = study
    lv = table.column("level")
    rho = table.column("rho")
    assert np.all(np.diff(lv) > 0) and np.all(np.diff(rho) < 0)
    pot = table.column("potential_error")
    assert np.all(np.diff(pot) < 0) and pot[-1] / pot[0] < 0.1
    per = table.column("period_error")
    assert np.all(np.diff(per) < 0) and per[-1] < 0.01
    assert np.all(np.diff(table.column("map_error")) < 0)
    assert table.periods[-1] == pytest.approx(2 * math.pi / math.log(2), rel=0.01)


def test_square_self_convergence():
    table = convergence_study(PolygonalAnnulus.square(2.0, 1.0), 4, pitch=1.0, start_level=3)
    s = np.array(table.successive)
    assert not table.oracle
    assert np.all(s[:-1] / s[1:] >= 1.5)
    assert np.all(np.diff(table.periods) < 0)


def test_table_csv(study, tmp_path):
    table, _ = study
    table.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert tuple(rows[0]) == COLUMNS
    assert len(rows) == 5
    assert float(rows[1][4]) == table.rows[0][4]
    assert format_number(0.1) == "0.10000000000000001"
    assert format_number(float("nan")) == "nan"


def test_map_csv(level, tmp_path):
    write_map_csv(level.map, tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["site", "x", "y", "re", "im"]
    assert len(rows) - 1 == np.count_nonzero(level.map.conj.defined)


def test_default_probes_inside_support(round_annulus):
    p = default_probes(round_annulus)
    r = np.hypot(*p.T)
    assert len(p) == 96 and r.min() > 1.2 and r.max() < 1.8
    sq = default_probes(PolygonalAnnulus.square(2.0, 1.0), pitch=1.0)
    assert len(sq) > 0


# -- plumbing ---------------------------------------------------------------------------------

def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("UNIFORMIZER_THREADS", "1")
    assert worker_count(8) == 1
    monkeypatch.setenv("UNIFORMIZER_THREADS", "3")
    assert worker_count(8) == 3
    assert worker_count(2) == 2
    assert parallel_map(lambda x: x * x, [1, 2, 3]) == [1, 4, 9]


def test_read_annulus_spec(tmp_path):
    f = tmp_path / "round.txt"
    f.write_text("annulus v1\nround 1 2\n")
    assert read_annulus_spec(f) == RoundAnnulus(1.0, 2.0)
    g = tmp_path / "square.txt"
    lines = ["annulus v1"] + [f"outer {x} {y}" for x, y in [(-2, -2), (2, -2), (2, 2), (-2, 2)]]
    lines += [f"inner {x} {y}" for x, y in [(-1, -1), (1, -1), (1, 1), (-1, 1)]]
    g.write_text("\n".join(lines) + "\n")
    ann = read_annulus_spec(g)
    assert ann.area == pytest.approx(12.0)
