"""Local element matrices, vertex elimination and global system assembly."""
import logging

import numpy as np
import scipy.sparse as sp

from .errors import EmptySystem, SingularLocalSystem
from .models import (DiscretePressure, DiscreteVelocity, EliminationRecord, GlobalSystem, LocalContributions,
                     MeshTriplet, NodalField, ScalarSystem, TransmissionCoefficients)
from .operators import gradient_map
from .utils import TRI_BARY, TRI_WEIGHTS, chunked_map, triangle_quadrature_points

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-14
VERTEX = 2  # slot of x_K* in the (K, L, K*) node order


# ==================== LOCAL ====================
def local_contributions(meshes: MeshTriplet, coeffs: TransmissionCoefficients, f=None,
                        index: slice = slice(None), threads: int | None = None) -> LocalContributions:
    """Element stiffness mu grad.grad, divergence moments and f-moments
    P(phi_n) for the sub-triangles selected by index."""
    sub = meshes.tri.sub_triangles.take(index)
    picked = _take_coeffs(coeffs, index)
    nc = meshes.primal.n_cells
    nodes = np.stack([sub.cell_k, np.where(sub.interior, sub.cell_l, -1), nc + sub.vertex], axis=1)
    mapping = gradient_map(sub, picked)

    def element(start, stop):
        s = slice(start, stop)
        ck, cl = mapping.coef_k[s], mapping.coef_l[s]
        wk = (sub.area_k[s] * picked.mu_k[s])[:, None, None]
        wl = (sub.area_l[s] * picked.mu_l[s])[:, None, None]
        stiffness = wk * np.einsum("tmd,tnd->tmn", ck, ck) + wl * np.einsum("tmd,tnd->tmn", cl, cl)
        divergence = sub.area_k[s][:, None, None] * ck + sub.area_l[s][:, None, None] * cl
        return np.concatenate([stiffness.reshape(-1, 9), divergence.reshape(-1, 6)], axis=1)

    n = len(sub)
    packed = chunked_map(element, n, threads).reshape(n, 15)
    stiffness = packed[:, :9].reshape(n, 3, 3)
    divergence = packed[:, 9:].reshape(n, 3, 2)
    if f is None:
        load, trace = np.zeros((n, 3, 2)), np.zeros((n, 2))
    else:
        load, trace = _load_moments(sub, picked, f, threads)
    return LocalContributions(nodes=nodes, stiffness=stiffness, divergence=divergence, load=load, trace_load=trace)


def _take_coeffs(coeffs: TransmissionCoefficients, index) -> TransmissionCoefficients:
    return TransmissionCoefficients(**{name: getattr(coeffs, name)[index] for name in coeffs.__dataclass_fields__})


def _load_moments(sub, coeffs: TransmissionCoefficients, f, threads):
    """Integral of f against P(phi_n) for n in (K, L, K*), 3-point Gauss per half."""
    weights = TRI_WEIGHTS[:, None] * TRI_BARY  # (q, corner)

    def half_moments(corners_a, corners_b, corners_c, area):
        points = triangle_quadrature_points(corners_a, corners_b, corners_c)
        values = np.asarray(f(points.reshape(-1, 2)), dtype=float)
        values = values.reshape(points.shape[:2] + values.shape[1:])
        moments = np.einsum("qc,tq...->tc...", weights, values)
        return moments * area.reshape((-1, 1) + (1,) * (moments.ndim - 2))

    def element(start, stop):
        s = slice(start, stop)
        gk = half_moments(sub.x_v[s], sub.x_k[s], sub.x_s[s], sub.area_k[s])
        gl = half_moments(sub.x_v[s], sub.x_l[s], sub.x_s[s], sub.area_l[s])
        shape = (-1,) + (1,) * (gk.ndim - 2)
        b_k, b_l, b_v = (c[s].reshape(shape) for c in (coeffs.beta_k, coeffs.beta_l, coeffs.beta_v))
        sigma = gk[:, 2] + gl[:, 2]
        node_k = gk[:, 1] + b_k * sigma
        node_l = gl[:, 1] + b_l * sigma
        node_v = gk[:, 0] + gl[:, 0] + b_v * sigma
        trace = np.where(coeffs.interior[s].reshape(shape), 0.0, gk[:, 2])
        return np.stack([node_k, node_l, node_v, trace], axis=1)

    packed = chunked_map(element, len(sub), threads)
    return packed[:, :3], packed[:, 3]


def assemble_rhs(meshes: MeshTriplet, coeffs: TransmissionCoefficients, f, threads: int | None = None) -> np.ndarray:
    """Load vector per velocity test function in the un-eliminated layout:
    cells (interleaved), then interior vertices (interleaved)."""
    moments = load_moments(meshes, coeffs, f, threads)
    interior = meshes.dual.interior_vertices
    return np.concatenate([moments.cell.ravel(), moments.vertex[interior].ravel()])


def load_moments(meshes: MeshTriplet, coeffs: TransmissionCoefficients, f, threads: int | None = None) -> NodalField:
    """f-moments gathered per node, including boundary vertices and the
    boundary trace basis (sigma, per sub-triangle)."""
    local = local_contributions(meshes, coeffs, f, threads=threads)
    nc, nv = meshes.primal.n_cells, meshes.primal.n_vertices
    totals = _scatter_nodes(local.nodes, local.load, nc + nv)
    return NodalField(cell=totals[:nc], vertex=totals[nc:], sigma=local.trace_load)


def _scatter_nodes(nodes, values, size):
    out = np.zeros((size,) + values.shape[2:])
    keep = nodes >= 0
    np.add.at(out, nodes[keep], values[keep])
    return out


# ==================== ELIMINATION ====================
def _eliminate(vertex: int, local: LocalContributions) -> EliminationRecord:
    """Solve the vertex-tested momentum equations of one dual cell for u_K*."""
    a = float(local.stiffness[:, VERTEX, VERTEX].sum())
    nodes = local.nodes[:, :2].ravel()
    coupling = local.stiffness[:, VERTEX, :2].ravel()
    keep = nodes >= 0
    cells, inverse = np.unique(nodes[keep], return_inverse=True)
    row = np.bincount(inverse, weights=coupling[keep], minlength=len(cells))
    norm = abs(a) + np.abs(row).sum()
    if not np.isfinite(a) or a <= SINGULAR_TOL * norm:
        raise SingularLocalSystem(f"vertex equations of dual cell {vertex} are singular (a = {a:.3e})",
                                  entity=vertex)
    pressure = local.divergence[:, VERTEX, :].sum(axis=0)
    load = local.load[:, VERTEX].sum(axis=0)
    # both components share the scalar stiffness a, so the local block is a * I
    return EliminationRecord(
        vertex=vertex,
        local_inverse=np.eye(2) / a,
        condition=1.0,
        vertex_stiffness=a,
        cells=cells.astype(int),
        cell_coefficients=-row / a,
        pressure_coefficient=pressure / a,
        load_term=load / a,
    )


def local_vertex_elimination(meshes: MeshTriplet, coeffs: TransmissionCoefficients, vertex: int,
                             f=None) -> EliminationRecord:
    """u_K* = sum_K c_K u_K + c_p p_K* + load, from the sub-triangles of
    dual cell `vertex` only."""
    if meshes.dual.boundary[vertex]:
        raise ValueError(f"vertex {vertex} is on the boundary; its velocity is not an unknown")
    local = local_contributions(meshes, coeffs, f, index=meshes.tri.dual_slice(vertex), threads=1)
    return _eliminate(vertex, local)


# ==================== GLOBAL ====================
def _layout(meshes: MeshTriplet, boundary_pressure: bool):
    nc, nv = meshes.primal.n_cells, meshes.primal.n_vertices
    velocity_vertices = meshes.dual.interior_vertices
    pressure_vertices = np.arange(nv) if boundary_pressure else velocity_vertices
    node_dof = np.full(nc + nv, -1, dtype=int)
    node_dof[:nc] = np.arange(nc)
    node_dof[nc + velocity_vertices] = nc + np.arange(len(velocity_vertices))
    pressure_dof = np.full(nv, -1, dtype=int)
    pressure_dof[pressure_vertices] = np.arange(len(pressure_vertices))
    return velocity_vertices, pressure_vertices, node_dof, pressure_dof


def assemble_full(meshes: MeshTriplet, coeffs: TransmissionCoefficients, f, lambda_pen: float,
                  boundary_pressure: bool = False, threads: int | None = None,
                  local: LocalContributions | None = None) -> GlobalSystem:
    """All unknowns (u_K, u_K*, p_K*) in one sparse symmetric system
    [[A, -D^T], [-D, -lambda h m]]."""
    if not lambda_pen > 0.0:
        raise ValueError(f"penalty parameter must be positive, got {lambda_pen}")
    velocity_vertices, pressure_vertices, node_dof, pressure_dof = _layout(meshes, boundary_pressure)
    if len(velocity_vertices) == 0:
        raise EmptySystem("mesh has no interior dual cells")
    local = local or local_contributions(meshes, coeffs, f, threads=threads)
    nc, nv = meshes.primal.n_cells, meshes.primal.n_vertices
    n_vel = 2 * (nc + len(velocity_vertices))
    h = meshes.tri.h

    dof = np.where(local.nodes >= 0, node_dof[np.maximum(local.nodes, 0)], -1)  # (t, 3)
    rows, cols, vals = [], [], []
    for i in range(2):
        r = np.broadcast_to((2 * dof + i)[:, :, None], local.stiffness.shape)
        c = np.broadcast_to((2 * dof + i)[:, None, :], local.stiffness.shape)
        keep = (dof[:, :, None] >= 0) & (dof[:, None, :] >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(local.stiffness[keep])

    owner = pressure_dof[meshes.tri.sub_triangles.vertex]
    p_row = np.broadcast_to((n_vel + owner)[:, None, None], local.divergence.shape)
    v_col = 2 * dof[:, :, None] + np.arange(2)[None, None, :]
    keep = (np.broadcast_to(owner[:, None, None], p_row.shape) >= 0) \
        & (np.broadcast_to(dof[:, :, None], p_row.shape) >= 0)
    rows += [p_row[keep], v_col[keep]]
    cols += [v_col[keep], p_row[keep]]
    vals += [-local.divergence[keep], -local.divergence[keep]]

    areas = meshes.dual.areas[pressure_vertices]
    penalty = -(lambda_pen * h * areas)
    diag = n_vel + np.arange(len(pressure_vertices))
    rows.append(diag)
    cols.append(diag)
    vals.append(penalty)

    size = n_vel + len(pressure_vertices)
    matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(size, size)).tocsr()
    loads = _scatter_nodes(local.nodes, local.load, nc + nv)
    rhs = np.zeros(size)
    rhs[:n_vel] = np.concatenate([loads[:nc].ravel(), loads[nc + velocity_vertices].ravel()])
    logger.debug(f"Full system: {size} unknowns, {matrix.nnz} nonzeros")
    return GlobalSystem(matrix=matrix, rhs=rhs, n_cells=nc, pressure_vertices=pressure_vertices,
                        penalty=penalty, lambda_pen=lambda_pen, h=h, velocity_vertices=velocity_vertices,
                        condensed=False)


def assemble_global(meshes: MeshTriplet, coeffs: TransmissionCoefficients, f, lambda_pen: float,
                    boundary_pressure: bool = False, threads: int | None = None) -> GlobalSystem:
    """Eliminate the vertex velocities and return the system over (u_K, p_K*)."""
    local = local_contributions(meshes, coeffs, f, threads=threads)
    full = assemble_full(meshes, coeffs, f, lambda_pen, boundary_pressure, threads, local=local)
    nc = meshes.primal.n_cells
    velocity_vertices = full.velocity_vertices
    n_y = 2 * len(velocity_vertices)
    n_x_vel = 2 * nc
    n_x = n_x_vel + full.n_pressure
    _, _, _, pressure_dof = _layout(meshes, boundary_pressure)

    offsets = meshes.tri.dual_offsets
    records = []
    rows, cols, vals = [], [], []
    offset = np.zeros(n_y)
    for j, v in enumerate(velocity_vertices):
        s = slice(int(offsets[v]), int(offsets[v + 1]))
        piece = LocalContributions(nodes=local.nodes[s], stiffness=local.stiffness[s],
                                   divergence=local.divergence[s], load=local.load[s],
                                   trace_load=local.trace_load[s])
        record = _eliminate(int(v), piece)
        records.append(record)
        for i in range(2):
            rows += [np.full(len(record.cells), 2 * j + i), [2 * j + i]]
            cols += [2 * record.cells + i, [n_x_vel + pressure_dof[v]]]
            vals += [record.cell_coefficients, [record.pressure_coefficient[i]]]
        offset[2 * j:2 * j + 2] = record.load_term

    substitution = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(n_y, n_x)).tocsr()
    x = np.concatenate([np.arange(n_x_vel), n_x_vel + n_y + np.arange(full.n_pressure)])
    y = n_x_vel + np.arange(n_y)
    m_xx = full.matrix[x][:, x]
    m_xy = full.matrix[x][:, y]
    matrix = (m_xx + m_xy @ substitution).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    rhs = full.rhs[x] - m_xy @ offset

    logger.info(f"Global system: {len(x)} unknowns ({nc} cells, {full.n_pressure} pressures), "
                f"{matrix.nnz} nonzeros, h = {meshes.tri.h:.6g}")
    return GlobalSystem(matrix=matrix, rhs=rhs, n_cells=nc, pressure_vertices=full.pressure_vertices,
                        penalty=full.penalty, lambda_pen=lambda_pen, h=full.h, velocity_vertices=velocity_vertices,
                        condensed=True, records=tuple(records), substitution=substitution,
                        substitution_offset=offset)


# ==================== RECOVERY ====================
def split_solution(system: GlobalSystem, solution: np.ndarray, meshes: MeshTriplet):
    """(DiscreteVelocity, DiscretePressure) from a condensed or full solution."""
    nc, nv = system.n_cells, meshes.primal.n_vertices
    solution = np.asarray(solution, dtype=float)
    cell = solution[:2 * nc].reshape(nc, 2)
    vertex = np.zeros((nv, 2))
    if system.condensed:
        vertex[system.velocity_vertices] = (system.substitution @ solution + system.substitution_offset).reshape(-1, 2)
    else:
        vertex[system.velocity_vertices] = solution[2 * nc:system.n_velocity].reshape(-1, 2)
    values = np.zeros(nv)
    active = np.zeros(nv, dtype=bool)
    values[system.pressure_vertices] = solution[system.n_velocity:]
    active[system.pressure_vertices] = True
    velocity = DiscreteVelocity(cell=cell, vertex=vertex, boundary=meshes.dual.boundary)
    return velocity, DiscretePressure(values=values, active=active)


def recover_vertex_velocities(system: GlobalSystem, solution: np.ndarray, meshes: MeshTriplet) -> DiscreteVelocity:
    return split_solution(system, solution, meshes)[0]


def full_solution(system: GlobalSystem, solution: np.ndarray) -> np.ndarray:
    """Condensed solution expanded to the un-eliminated layout."""
    n = system.n_velocity
    vertex = system.substitution @ solution + system.substitution_offset
    return np.concatenate([solution[:n], vertex, solution[n:]])


def vertex_residuals(full: GlobalSystem, solution: np.ndarray) -> np.ndarray:
    """Relative residual of each vertex-tested momentum equation (two per
    interior vertex) for a solution in the un-eliminated layout."""
    start, stop = 2 * full.n_cells, full.n_velocity
    block = full.matrix[start:stop]
    residual = block @ solution - full.rhs[start:stop]
    scale = abs(block) @ np.abs(solution)
    scale = np.maximum(scale, np.abs(full.rhs[start:stop]))
    return np.abs(residual) / np.where(scale > 0.0, scale, 1.0)


# ==================== SCALAR DIFFUSION ====================
def assemble_diffusion(meshes: MeshTriplet, coeffs: TransmissionCoefficients, f,
                       threads: int | None = None) -> ScalarSystem:
    """Condensed system for -div(mu grad u) = f, u = 0 on the boundary, with
    the same gradient reconstruction and vertex elimination."""
    nc, nv = meshes.primal.n_cells, meshes.primal.n_vertices
    local = local_contributions(meshes, coeffs, threads=threads)
    velocity_vertices, _, node_dof, _ = _layout(meshes, False)
    dof = np.where(local.nodes >= 0, node_dof[np.maximum(local.nodes, 0)], -1)
    keep = (dof[:, :, None] >= 0) & (dof[:, None, :] >= 0)
    r = np.broadcast_to(dof[:, :, None], local.stiffness.shape)
    c = np.broadcast_to(dof[:, None, :], local.stiffness.shape)
    size = nc + len(velocity_vertices)
    full = sp.coo_matrix((local.stiffness[keep], (r[keep], c[keep])), shape=(size, size)).tocsr()

    load = np.zeros(size)
    if f is not None:
        sub = meshes.tri.sub_triangles
        moments, _ = _load_moments(sub, coeffs, f, threads)
        totals = _scatter_nodes(local.nodes, moments, nc + nv)
        load = np.concatenate([totals[:nc], totals[nc + velocity_vertices]])

    x, y = np.arange(nc), nc + np.arange(len(velocity_vertices))
    a_yy = full[y][:, y].diagonal()
    bad = np.flatnonzero(~(a_yy > 0.0))
    if len(bad):
        v = int(velocity_vertices[bad[0]])
        raise SingularLocalSystem(f"vertex equation of dual cell {v} is singular", entity=v)
    inverse = sp.diags(1.0 / a_yy)
    substitution = (-(inverse @ full[y][:, x])).tocsr()
    offset = load[y] / a_yy
    matrix = (full[x][:, x] + full[x][:, y] @ substitution).tocsr()
    rhs = load[x] - full[x][:, y] @ offset
    return ScalarSystem(matrix=matrix, rhs=rhs, n_cells=nc, velocity_vertices=velocity_vertices,
                        substitution=substitution, substitution_offset=offset)


def diffusion_field(system: ScalarSystem, cell_values: np.ndarray, n_vertices: int) -> NodalField:
    vertex = np.zeros(n_vertices)
    vertex[system.velocity_vertices] = system.substitution @ cell_values + system.substitution_offset
    return NodalField(cell=np.asarray(cell_values, dtype=float), vertex=vertex)
