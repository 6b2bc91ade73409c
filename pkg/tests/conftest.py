import pytest

from uniformizer.geometry import PolygonalAnnulus, RoundAnnulus, build_voronoi, generate_annulus_mesh
from uniformizer.network import build_network
from uniformizer.solver import solve_dirichlet


@pytest.fixture(scope="session")
def round_annulus():
    return RoundAnnulus(1.0, 2.0)


@pytest.fixture(scope="session")
def round_level(round_annulus):
    """Solved potential on the level-2 round mesh."""
    mesh = generate_annulus_mesh(round_annulus, 2)
    vor = build_voronoi(mesh)
    net = build_network(vor)
    g, rep = solve_dirichlet(net)
    return mesh, vor, net, g


@pytest.fixture(scope="session")
def square_level():
    mesh = generate_annulus_mesh(PolygonalAnnulus.square(2.0, 1.0), 2, 1.0)
    vor = build_voronoi(mesh)
    net = build_network(vor)
    g, _ = solve_dirichlet(net)
    return mesh, vor, net, g



def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
