"""Discrete uniformization of planar annuli by finite volumes on Voronoi duals."""

__version__ = "0.1.0"

from .errors import UniformizerError
from .geometry import (
    E1,
    E2,
    INTERIOR,
    PolygonalAnnulus,
    RoundAnnulus,
    Triangulation,
    VoronoiDiagram,
    build_triangulation,
    build_voronoi,
    generate_annulus_mesh,
    refine,
    validate_mesh,
)
from .network import Network, ScalarField, build_network, laplacian, loop_flux
from .solver import DirichletSpec, solve_dirichlet, solve_poisson_fvm
from .conjugate import ConjugateField, conjugate_field, flux_fellow_path, period
from .uniformize import AnnulusMap, annulus_map, boundary_circularity, convergence_study, evaluate_map
from .riemann import ExhaustionSpec, riemann_map
from .packing import CirclePacking, markov_equality_check, radical_center, stephenson_conductance

__all__ = [name for name in dir() if not name.startswith("_")]
