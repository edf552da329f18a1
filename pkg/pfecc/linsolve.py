"""Direct solves and stability diagnostics for the saddle-point system."""
import logging
import time

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import assemble_full
from .errors import MeshTooLarge, NumericalBreakdown, SingularMatrix
from .models import MeshTriplet, SolveReport, SpdCheck, TransmissionCoefficients

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
REFINE_STEPS = 2
INFSUP_MAX_CELLS = 1024


def _factorize(matrix: sp.spmatrix, **options):
    try:
        return splu(sp.csc_matrix(matrix), **options)
    except RuntimeError as e:
        raise SingularMatrix(f"factorization failed: {e}") from e


def relative_residual(matrix, solution, rhs) -> float:
    residual = np.linalg.norm(matrix @ solution - rhs)
    scale = np.linalg.norm(rhs)
    return float(residual / scale) if scale > 0.0 else float(residual)


def solve_direct(system) -> SolveReport:
    """Sparse LU solve of system.matrix x = system.rhs with up to two steps
    of iterative refinement; the relative residual must end below 1e-10."""
    start = time.perf_counter()
    lu = _factorize(system.matrix)
    factor_time = time.perf_counter() - start

    solution = lu.solve(system.rhs)
    if not np.all(np.isfinite(solution)):
        raise NumericalBreakdown("solution contains non-finite values")
    residual = relative_residual(system.matrix, solution, system.rhs)
    steps = 0
    while residual > 1e-13 and steps < REFINE_STEPS:
        solution = solution + lu.solve(system.rhs - system.matrix @ solution)
        residual = relative_residual(system.matrix, solution, system.rhs)
        steps += 1
    if not residual < RESIDUAL_TOL:
        raise NumericalBreakdown(f"relative residual {residual:.3e} exceeds {RESIDUAL_TOL:g}")

    wall = time.perf_counter() - start
    stats = {
        "dimension": system.matrix.shape[0],
        "nnz": system.matrix.nnz,
        "nnz_factors": lu.L.nnz + lu.U.nnz,
        "refinement_steps": steps,
        "factor_time": factor_time,
    }
    logger.info(f"Solved {stats['dimension']} unknowns: residual {residual:.3e}, "
                f"{stats['nnz_factors']} factor nonzeros, {wall:.3f} s")
    return SolveReport(solution=solution, residual=residual, stats=stats, wall_time=wall)


def check_spd(block, max_iterations: int = 50, tol: float = 1e-6) -> SpdCheck:
    """Symmetric LU without off-diagonal pivoting; SPD iff it succeeds with
    positive pivots. The smallest eigenvalue comes from inverse iteration."""
    block = sp.csc_matrix(block, dtype=float)
    n = block.shape[0]
    if n == 0 or block.shape[1] != n:
        return SpdCheck(False, float("nan"))
    scale = abs(block).max()
    if scale == 0.0 or abs(block - block.T).max() > 1e-12 * scale:
        return SpdCheck(False, float("nan"))
    try:
        lu = splu(block, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError:
        return SpdCheck(False, float("nan"))
    if not np.array_equal(lu.perm_r, lu.perm_c) or not np.all(lu.U.diagonal() > 0.0):
        return SpdCheck(False, float("nan"))

    x = np.random.default_rng(0).standard_normal(n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iterations):
        y = lu.solve(x)
        rayleigh = float(x @ y)
        x = y / np.linalg.norm(y)
        if estimate and abs(rayleigh - estimate) <= tol * abs(rayleigh):
            estimate = rayleigh
            break
        estimate = rayleigh
    return SpdCheck(True, 1.0 / estimate)


# ==================== INF-SUP ====================
def p1_elements(meshes: MeshTriplet):
    """Corners and free scalar dofs of the P1 elements of the third mesh.

    Dofs number cells first, then interior vertices; boundary vertices and
    boundary traces get -1.
    """
    sub = meshes.tri.sub_triangles
    nc = meshes.primal.n_cells
    interior_vertices = meshes.dual.interior_vertices
    vertex_dof = np.full(meshes.primal.n_vertices, -1, dtype=int)
    vertex_dof[interior_vertices] = nc + np.arange(len(interior_vertices))
    inner = sub.interior
    corners = np.where(inner[:, None, None],
                       np.stack([sub.x_k, sub.x_l, sub.x_v], axis=1),
                       np.stack([sub.x_v, sub.x_k, sub.x_s], axis=1))
    v = vertex_dof[sub.vertex]
    dofs = np.where(inner[:, None],
                    np.stack([sub.cell_k, np.maximum(sub.cell_l, 0), v], axis=1),
                    np.stack([v, sub.cell_k, np.full_like(v, -1)], axis=1))
    return corners, dofs, nc + len(interior_vertices)


def p1_gram(meshes: MeshTriplet) -> sp.csr_matrix:
    """Scalar H1 Gram matrix (stiffness + mass) of P1 on the free dofs."""
    corners, dofs, size = p1_elements(meshes)
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    edges = np.stack([c - b, a - c, b - a], axis=1)
    cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    area = 0.5 * np.abs(cross)
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / cross[:, None, None]
    local = area[:, None, None] * np.einsum("tmd,tnd->tmn", grads, grads)
    local += (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    r = np.broadcast_to(dofs[:, :, None], local.shape)
    c_ = np.broadcast_to(dofs[:, None, :], local.shape)
    keep = (r >= 0) & (c_ >= 0)
    return sp.coo_matrix((local[keep], (r[keep], c_[keep])), shape=(size, size)).tocsr()


def infsup_estimate(meshes: MeshTriplet, coeffs: TransmissionCoefficients, boundary_pressure: bool = False) -> float:
    """min over q of max over v of int div(v) q / (|P1 v|_H1 |q|_L2), from the
    smallest generalized eigenvalue of D G^-1 D^T against the pressure mass."""
    if meshes.primal.n_cells > INFSUP_MAX_CELLS:
        raise MeshTooLarge(f"inf-sup estimate is limited to {INFSUP_MAX_CELLS} cells, "
                           f"mesh has {meshes.primal.n_cells}", entity=meshes.primal.n_cells)
    full = assemble_full(meshes, coeffs, None, 1.0, boundary_pressure)
    n_vel = full.n_velocity
    divergence = -full.matrix[n_vel:, :n_vel]
    gram = sp.kron(p1_gram(meshes), sp.identity(2), format="csc")
    lu = _factorize(gram)
    solved = lu.solve(divergence.T.toarray())
    schur = divergence @ solved
    schur = 0.5 * (schur + schur.T)
    mass = np.diag(meshes.dual.areas[full.pressure_vertices])
    smallest = la.eigh(schur, mass, eigvals_only=True, subset_by_index=[0, 0])[0]
    value = float(np.sqrt(max(smallest, 0.0)))
    logger.info(f"Inf-sup estimate on {meshes.primal.n_cells} cells: {value:.6g}")
    return value
