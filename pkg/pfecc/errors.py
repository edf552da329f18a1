"""Exception types raised by the solver.

Every error names the entity it is about (cell, edge, vertex, line) so the
CLI can report it without a traceback.
"""


class PfeccError(Exception):
    def __init__(self, message: str, entity=None):
        super().__init__(message)
        self.entity = entity


# ==================== MESH ====================
class MeshError(PfeccError, ValueError):
    pass


class NonSimplePolygon(MeshError):
    pass


class ZeroAreaCell(MeshError):
    pass


class DanglingEdge(MeshError):
    pass


class CenterOutsideCell(MeshError):
    pass


class NoIntersection(MeshError):
    pass


class DegenerateSubTriangle(MeshError):
    pass


class UnsupportedCellType(MeshError):
    pass


class ParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}", entity=line)
        self.line = line


class MeshIoError(PfeccError, OSError):
    pass


# ==================== OPERATORS ====================
class OperatorError(PfeccError):
    pass


class NonPositiveViscosity(OperatorError, ValueError):
    pass


class HypothesisViolation(OperatorError):
    pass


class PointOutsideDomain(OperatorError, ValueError):
    pass


# ==================== ASSEMBLY / SOLVE ====================
class AssemblyError(PfeccError):
    pass


class SingularLocalSystem(AssemblyError):
    pass


class EmptySystem(AssemblyError):
    pass


class SolverError(PfeccError):
    pass


class SingularMatrix(SolverError):
    pass


class NumericalBreakdown(SolverError):
    pass


class MeshTooLarge(SolverError):
    pass


class ConfigError(PfeccError, ValueError):
    pass
