import csv
import subprocess
import sys

import pytest

from uniformizer.cli import run
from uniformizer.errors import ObtuseTriangle
from uniformizer.geometry import build_triangulation, write_mesh


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_uniformize_round(tmp_path, capsys):
    out = tmp_path / "u"
    assert run(["uniformize", "annulus", "--round", "1", "2", "--levels", "4", "--out", str(out)]) == 0
    table = rows(out / "table.csv")
    assert len(table) == 5 and table[0][0] == "level"
    for k in range(4):
        assert (out / f"map_level{k}.csv").exists()
        assert (out / f"map_level{k}.svg").read_text().startswith("<svg")
    assert "potential_error" in capsys.readouterr().out


def test_uniformize_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["uniformize", "annulus", "--round", "1", "2", "--levels", "3", "--seed", "5", "--out", str(d)]) == 0
    for name in ("table.csv", "map_level0.csv", "map_level2.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_too_few_levels(tmp_path):
    assert run(["uniformize", "annulus", "--round", "1", "2", "--levels", "2", "--out", str(tmp_path)]) == 34


def test_levels_must_be_positive(tmp_path, capsys):
    assert run(["uniformize", "annulus", "--round", "1", "2", "--levels", "0", "--out", str(tmp_path)]) == 2
    assert "--levels" in capsys.readouterr().err


def test_obtuse_mesh_exit_code(tmp_path, capsys):
    mesh = build_triangulation([(0, 0), (1, 0), (0.2, 0.1)], [(0, 1, 2)], require_nonobtuse=False)
    f = tmp_path / "obtuse.mesh"
    write_mesh(mesh, f)
    assert run(["mesh", "--validate", str(f)]) == ObtuseTriangle.exit_code == 13
    err = capsys.readouterr().err
    assert err.startswith("uniformizer mesh: V0:") and err.count("\n") == 1


def test_mesh_generate_and_validate(tmp_path, capsys):
    f = tmp_path / "m.mesh"
    assert run(["mesh", "--round", "1", "2", "--level", "1", "--out", str(f)]) == 0
    assert run(["mesh", "--validate", str(f)]) == 0
    assert "vertices" in capsys.readouterr().out


def test_solve_and_conjugate(tmp_path, capsys):
    assert run(["solve", "--round", "1", "2", "--out", str(tmp_path / "s")]) == 0
    assert rows(tmp_path / "s" / "potential.csv")[0] == ["vertex", "x", "y", "label", "value"]
    assert run(["conjugate", "--round", "1", "2", "--slit", "v3", "--out", str(tmp_path / "c")]) == 0
    p = float(rows(tmp_path / "c" / "period.csv")[1][0])
    assert p == pytest.approx(9.0647, rel=0.02)


def test_packing_check_default(capsys):
    assert run(["packing-check", "--flower", "default"]) == 0
    out = capsys.readouterr().out
    dev = float(out.split()[2])
    assert dev <= 1e-3


def test_convergence_with_harmonic_order(tmp_path, capsys):
    assert run(["convergence", "--round", "1", "2", "--levels", "3", "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "harmonic.csv")) == 4
    assert "asymptotic harmonic order" in capsys.readouterr().out


def test_riemann_square(tmp_path, capsys):
    poly = tmp_path / "sq.txt"
    poly.write_text("0 0\n1 0\n1 1\n0 1\n")
    out = tmp_path / "r"
    code = run(["riemann", "--domain", str(poly), "--puncture", "0.5,0.5", "--levels", "2",
                "--pitch", "0.0625", "--halfwidth", "0.125", "--probe-radius", "0.3", "--out", str(out)])
    assert code == 0
    assert (out / "periods.csv").exists() and (out / "riemann.svg").exists()
    assert "cauchy 1->2" in capsys.readouterr().out


def test_riemann_puncture_error(tmp_path):
    poly = tmp_path / "sq.txt"
    poly.write_text("0 0\n1 0\n1 1\n0 1\n")
    assert run(["riemann", "--domain", str(poly), "--puncture", "0.05,0.5", "--out", str(tmp_path)]) != 0


def test_missing_input_is_io_error(tmp_path):
    assert run(["mesh", "--validate", str(tmp_path / "nope.mesh")]) == 3


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "uniformizer.cli", "packing-check"], capture_output=True, text=True)
    assert r.returncode == 0 and "markov deviation" in r.stdout
