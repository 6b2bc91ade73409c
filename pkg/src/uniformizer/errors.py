"""Exception hierarchy.

Every error carries the pipeline ``stage`` it belongs to and a process exit
code, so the command-line front end can report failures uniformly.
"""


class UniformizerError(Exception):
    stage = "pipeline"
    exit_code = 1


# -- geometry ---------------------------------------------------------------

class GeometryError(UniformizerError):
    stage = "mesh"
    exit_code = 10


class InvalidAnnulus(GeometryError):
    exit_code = 11


class NonConformingMesh(GeometryError):
    exit_code = 12


class ObtuseTriangle(GeometryError):
    exit_code = 13

    def __init__(self, index, angle_deg=None):
        self.index = index
        self.angle_deg = angle_deg
        msg = f"V0: obtuse triangle #{index}"
        if angle_deg is not None:
            msg += f" (max angle {angle_deg:.6g} deg)"
        super().__init__(msg)


class UnlabeledBoundaryVertex(GeometryError):
    exit_code = 14


class DegenerateAnnulus(GeometryError):
    exit_code = 15


class NumericallyDegenerate(GeometryError):
    exit_code = 16


class MeshFormatError(GeometryError):
    exit_code = 17


# -- network ----------------------------------------------------------------

class NetworkError(UniformizerError):
    stage = "network"
    exit_code = 20


class DisconnectedNetwork(NetworkError):
    exit_code = 21


class EmptyNeighborSet(NetworkError):
    exit_code = 22


class NotClosed(NetworkError):
    exit_code = 23


class NotCellAligned(NetworkError):
    exit_code = 24


# -- solver -----------------------------------------------------------------

class SolverError(UniformizerError):
    stage = "solve"
    exit_code = 30


class SingularSystem(SolverError):
    exit_code = 31


class NoConvergence(SolverError):
    exit_code = 32


class MeshMismatch(SolverError):
    exit_code = 33


class InsufficientLevels(SolverError):
    exit_code = 34


# -- conjugate --------------------------------------------------------------

class ConjugateError(UniformizerError):
    stage = "conjugate"
    exit_code = 40


class NotAPath(ConjugateError):
    exit_code = 41


class BoundarySegment(ConjugateError):
    exit_code = 42


class AmbiguousSide(ConjugateError):
    exit_code = 43


class NonHarmonicBeyondTolerance(ConjugateError):
    exit_code = 44


class UnreachableVertex(ConjugateError):
    exit_code = 45


class NoEnclosingLoop(ConjugateError):
    exit_code = 46


class EndpointMismatch(ConjugateError):
    exit_code = 47


# -- uniformize -------------------------------------------------------------

class MapError(UniformizerError):
    stage = "uniformize"
    exit_code = 50


class ZeroPeriod(MapError):
    exit_code = 51


class MismatchedSupports(MapError):
    exit_code = 52


class OutsideSupport(MapError):
    exit_code = 53


# -- riemann ----------------------------------------------------------------

class RiemannError(UniformizerError):
    stage = "riemann"
    exit_code = 60


class PunctureTooCloseToBoundary(RiemannError):
    exit_code = 61


class DegenerateDerivative(RiemannError):
    exit_code = 62


class PeriodNotDecreasing(RiemannError):
    exit_code = 63


# -- packing ----------------------------------------------------------------

class PackingError(UniformizerError):
    stage = "packing"
    exit_code = 70


class CollinearCenters(PackingError):
    exit_code = 71


class BoundaryEdge(PackingError):
    exit_code = 72


class NonTriangulatedComplex(PackingError):
    exit_code = 73


class IncompleteFlower(PackingError):
    exit_code = 74
