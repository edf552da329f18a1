from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

ArrayFn = Callable[[np.ndarray], np.ndarray]


def frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ==================== MESHES ====================
@dataclass(frozen=True, eq=False)
class PrimalMesh:
    """Polygonal partition of the domain.

    Edges are stored with the orientation in which their first cell
    (edge_cells[:, 0]) traverses them counter-clockwise; edge_cells[:, 1]
    is -1 on the boundary.
    """
    vertices: np.ndarray
    cells: tuple[np.ndarray, ...]
    cell_centers: np.ndarray
    cell_areas: np.ndarray
    edges: np.ndarray
    edge_cells: np.ndarray
    cell_edges: tuple[np.ndarray, ...]
    boundary_vertex: np.ndarray
    boundary_edge: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def area(self) -> float:
        return float(math.fsum(self.cell_areas))


@dataclass(frozen=True, eq=False)
class DualMesh:
    points: np.ndarray
    boundary: np.ndarray
    areas: np.ndarray
    vertex_edges: tuple[np.ndarray, ...]
    edge_counts: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary))


@dataclass(frozen=True, eq=False)
class SubTriangle:
    """Third-mesh element (x_K, x_L, x_{K*}) split by x_sigma into two halves.

    Fields are scalars/2-vectors for a single element or stacked arrays for a
    batch. Normal arrays are indexed by the node they are opposite to, in the
    order (x_{K*}, cell center, x_sigma); each normal is outward for its half
    and as long as its edge. Boundary elements have cell_l == -1 and a
    degenerate L-half (x_l == x_s, zero area).
    """
    cell_k: np.ndarray
    cell_l: np.ndarray
    vertex: np.ndarray
    edge: np.ndarray
    x_k: np.ndarray
    x_l: np.ndarray
    x_v: np.ndarray
    x_s: np.ndarray
    area_k: np.ndarray
    area_l: np.ndarray
    normals_k: np.ndarray
    normals_l: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return np.asarray(self.cell_l) >= 0

    def __len__(self) -> int:
        return len(np.atleast_1d(self.cell_k))

    def take(self, index) -> "SubTriangle":
        return SubTriangle(**{name: getattr(self, name)[index] for name in self.__dataclass_fields__})


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Sub-triangles grouped by dual cell: those of vertex v are
    sub_triangles[dual_offsets[v]:dual_offsets[v + 1]]."""
    sub_triangles: SubTriangle
    h: float
    diameters: np.ndarray
    dual_offsets: np.ndarray
    edge_counts: np.ndarray

    def __len__(self) -> int:
        return len(self.sub_triangles)

    def __getitem__(self, index) -> SubTriangle:
        return self.sub_triangles.take(index)

    def dual_slice(self, vertex: int) -> slice:
        return slice(int(self.dual_offsets[vertex]), int(self.dual_offsets[vertex + 1]))


@dataclass(frozen=True, eq=False)
class MeshTriplet:
    primal: PrimalMesh
    dual: DualMesh
    tri: TriMesh


@dataclass(frozen=True)
class RegularityReport:
    c1: int
    c2: float
    c3: float
    zeta: float
    min_angle: float  # degrees, over sub-triangle halves


# ==================== FIELDS ====================
@dataclass(frozen=True, eq=False)
class ViscosityField:
    name: str
    evaluator: ArrayFn
    lower: float
    upper: float
    lipschitz: float = math.inf

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(points, dtype=float)), dtype=float)


@dataclass(frozen=True, eq=False)
class TransmissionCoefficients:
    """Weights giving u_sigma = beta_k u_K + beta_l u_L + beta_v u_{K*}.

    Boundary entries carry zero weights (u_sigma = 0) and a NaN denominator.
    """
    beta_k: np.ndarray
    beta_l: np.ndarray
    beta_v: np.ndarray
    denominator: np.ndarray
    mu_k: np.ndarray
    mu_l: np.ndarray
    interior: np.ndarray


@dataclass(frozen=True, eq=False)
class NodalField:
    """Values at cell centers, vertices and (optionally) boundary x_sigma
    points; sigma is indexed by sub-triangle and read only on boundary ones."""
    cell: np.ndarray
    vertex: np.ndarray
    sigma: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class DiscreteVelocity(NodalField):
    boundary: np.ndarray | None = None

    def __post_init__(self):
        if np.shape(self.cell)[-1:] != (2,) or np.shape(self.vertex)[-1:] != (2,):
            raise ValueError("velocity arrays must have two components")
        if self.sigma is not None and np.any(self.sigma != 0.0):
            raise ValueError("boundary trace of a discrete velocity is zero")
        if self.boundary is not None and np.any(self.vertex[self.boundary] != 0.0):
            bad = int(np.flatnonzero(np.any(self.vertex != 0.0, axis=1) & self.boundary)[0])
            raise ValueError(f"boundary vertex {bad} carries a nonzero velocity")


@dataclass(frozen=True, eq=False)
class DiscretePressure:
    values: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("pressure values must be finite")


@dataclass(frozen=True, eq=False)
class SubTriangleGradient:
    k_side: np.ndarray
    l_side: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientMap:
    """Affine map from nodal values to half gradients; node order
    (u_K, u_L, u_{K*}), coefficient arrays shaped (..., 3, 2)."""
    coef_k: np.ndarray
    coef_l: np.ndarray

    def apply(self, u_k, u_l, u_v) -> SubTriangleGradient:
        nodes = np.stack([np.asarray(u_k, float), np.asarray(u_l, float), np.asarray(u_v, float)], axis=-1)
        return SubTriangleGradient(
            k_side=np.einsum("...n,...nd->...d", nodes, self.coef_k),
            l_side=np.einsum("...n,...nd->...d", nodes, self.coef_l),
        )


# ==================== ALGEBRA ====================
@dataclass(frozen=True, eq=False)
class EliminationRecord:
    """u_{K*}^(i) = sum_K cell_coefficients[K] u_K^(i)
    + pressure_coefficient[i] p_{K*} + load_term[i]."""
    vertex: int
    local_inverse: np.ndarray
    condition: float
    vertex_stiffness: float
    cells: np.ndarray
    cell_coefficients: np.ndarray
    pressure_coefficient: np.ndarray
    load_term: np.ndarray

    def velocity(self, cell_velocity: np.ndarray, pressure: float = 0.0) -> np.ndarray:
        return (self.cell_coefficients @ cell_velocity[self.cells]
                + self.pressure_coefficient * pressure + self.load_term)


@dataclass(frozen=True, eq=False)
class LocalContributions:
    """Per sub-triangle element matrices over nodes (K, L, K*).

    nodes holds global node ids: cells first, then n_cells + vertex; the L
    slot of boundary elements is -1. trace_load is the load on the
    boundary trace basis (zero rows for interior elements).
    """
    nodes: np.ndarray        # (t, 3)
    stiffness: np.ndarray    # (t, 3, 3)
    divergence: np.ndarray   # (t, 3, 2)
    load: np.ndarray         # (t, 3[, C])
    trace_load: np.ndarray   # (t[, C])


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """Sparse symmetric saddle-point system.

    Condensed layout: velocity rows 2K, 2K+1 per cell, then one pressure row
    per dual cell in pressure_vertices. The un-eliminated layout (condensed
    False) inserts two rows per vertex of velocity_vertices after the cells.
    substitution/substitution_offset give the eliminated vertex velocities
    (interleaved like the velocity rows) as an affine map of the solution.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_cells: int
    pressure_vertices: np.ndarray
    penalty: np.ndarray
    lambda_pen: float
    h: float
    velocity_vertices: np.ndarray
    condensed: bool = True
    records: tuple[EliminationRecord, ...] = ()
    substitution: sp.csr_matrix | None = None
    substitution_offset: np.ndarray | None = None

    @property
    def n_velocity(self) -> int:
        if self.condensed:
            return 2 * self.n_cells
        return 2 * (self.n_cells + len(self.velocity_vertices))

    @property
    def n_pressure(self) -> int:
        return len(self.pressure_vertices)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def velocity_block(self) -> sp.csr_matrix:
        n = self.n_velocity
        return self.matrix[:n, :n].tocsr()


@dataclass(frozen=True, eq=False)
class ScalarSystem:
    """Condensed cell-centered diffusion system; vertex values follow from
    substitution @ u_cells + substitution_offset."""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_cells: int
    velocity_vertices: np.ndarray
    substitution: sp.csr_matrix
    substitution_offset: np.ndarray


class SpdCheck(NamedTuple):
    is_spd: bool
    min_eigenvalue: float


@dataclass(frozen=True, eq=False)
class SolveReport:
    solution: np.ndarray
    residual: float
    stats: dict = field(default_factory=dict)
    wall_time: float = 0.0


# ==================== VERIFICATION ====================
@dataclass(frozen=True, eq=False)
class ManufacturedCase:
    """Exact Stokes solution; forcing is -div(mu grad u) + grad p."""
    name: str
    velocity: ArrayFn
    velocity_gradient: ArrayFn  # (n, 2, 2), [i, j] = d u_i / d x_j
    pressure: ArrayFn
    forcing: ArrayFn
    viscosity: ViscosityField


@dataclass(frozen=True, eq=False)
class SmoothScalar:
    name: str
    value: ArrayFn
    gradient: ArrayFn
    hessian: ArrayFn


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    raw: np.ndarray         # (n_dual, 2) per component
    normalized: np.ndarray  # raw / m(K*)
    h: float

    def max_normalized(self) -> float:
        return float(np.max(self.normalized)) if self.normalized.size else 0.0


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    dof: int
    err_u_l2: float
    err_p_l2: float
    err_u_h1: float


@dataclass
class ConvergenceTable:
    case: str
    rows: list[ConvergenceRow] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)

    def add(self, row: ConvergenceRow, diagnostics: dict | None = None):
        if self.rows and not row.h < self.rows[-1].h:
            raise ValueError("h must decrease strictly down the table")
        self.rows.append(row)
        self.diagnostics.append(diagnostics or {})

    def orders(self, column: str) -> list[float | None]:
        values = [getattr(row, column) for row in self.rows]
        out: list[float | None] = [None]
        for coarse, fine in zip(values, values[1:]):
            if coarse > 0.0 and fine > 0.0:
                out.append(math.log2(coarse / fine))
            else:
                out.append(math.nan)
        return out

    def decreasing(self, column: str, floor: float = 1e-12) -> bool:
        values = [getattr(row, column) for row in self.rows]
        if all(v < floor for v in values):
            return True
        return all(fine < coarse for coarse, fine in zip(values, values[1:]))
