"""Result files: solution and convergence CSV, matrix dumps and legacy VTK."""
import csv
import logging
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import MeshIoError
from .models import ConvergenceTable, DiscretePressure, MeshTriplet, NodalField

logger = logging.getLogger(__name__)

SOLUTION_HEADER = ("kind", "id", "x", "y", "u_x", "u_y", "p")
CONVERGENCE_HEADER = ("h", "dof", "err_u_l2", "err_p_l2", "err_u_h1", "ord_u_l2", "ord_p_l2", "ord_u_h1")


def _num(value: float) -> str:
    # +0.0 folds -0.0 so reruns stay byte-identical
    return f"{float(value) + 0.0:.17g}"


def _open(path, mode="w"):
    try:
        return open(path, mode, newline="")
    except OSError as e:
        raise MeshIoError(f"cannot write {path}: {e}", entity=str(path)) from e


def write_solution_csv(path, meshes: MeshTriplet, velocity: NodalField, pressure: DiscretePressure) -> Path:
    """One row per cell (u_K, no pressure) and per pressure-carrying dual
    cell (u_{K*}, p_{K*})."""
    path = Path(path)
    primal, dual = meshes.primal, meshes.dual
    with _open(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SOLUTION_HEADER)
        for k in range(primal.n_cells):
            x, y = primal.cell_centers[k]
            u = velocity.cell[k]
            writer.writerow(["cell", k, _num(x), _num(y), _num(u[0]), _num(u[1]), ""])
        for v in np.flatnonzero(pressure.active):
            x, y = dual.points[v]
            u = velocity.vertex[v]
            writer.writerow(["dual", int(v), _num(x), _num(y), _num(u[0]), _num(u[1]), _num(pressure.values[v])])
    logger.info(f"Wrote solution to {path}")
    return path


def write_convergence_csv(path, table: ConvergenceTable) -> Path:
    path = Path(path)
    orders = {column: table.orders(column) for column in ("err_u_l2", "err_p_l2", "err_u_h1")}

    def fmt(value):
        return "" if value is None else f"{value:.10g}"

    with _open(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CONVERGENCE_HEADER)
        for i, row in enumerate(table.rows):
            writer.writerow([fmt(row.h), row.dof, fmt(row.err_u_l2), fmt(row.err_p_l2), fmt(row.err_u_h1),
                             fmt(orders["err_u_l2"][i]), fmt(orders["err_p_l2"][i]), fmt(orders["err_u_h1"][i])])
    logger.info(f"Wrote {len(table.rows)} convergence rows to {path}")
    return path


def export_matrix(path, matrix) -> Path:
    """Coordinate dump, one `row col value` line per stored entry, sorted by
    (row, col)."""
    path = Path(path)
    coo = sp.coo_matrix(matrix)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    with _open(path) as handle:
        for r, c, value in zip(coo.row[order], coo.col[order], coo.data[order]):
            handle.write(f"{r} {c} {_num(value)}\n")
    logger.info(f"Exported {coo.nnz} matrix entries to {path}")
    return path


def vtk_points(meshes: MeshTriplet):
    """Points, triangle connectivity and parent dual cell of every third-mesh
    element. Points are cell centers, then vertices, then the midpoints of
    boundary edges."""
    primal = meshes.primal
    sub = meshes.tri.sub_triangles
    nc, nv = primal.n_cells, primal.n_vertices
    inner = sub.interior
    edges, trace_index = np.unique(sub.edge[~inner], return_inverse=True)
    midpoints = 0.5 * (primal.vertices[primal.edges[edges, 0]] + primal.vertices[primal.edges[edges, 1]])
    points = np.concatenate([primal.cell_centers, primal.vertices, midpoints])

    triangles = np.empty((len(sub), 3), dtype=int)
    triangles[inner] = np.stack([sub.cell_k[inner], sub.cell_l[inner], nc + sub.vertex[inner]], axis=1)
    triangles[~inner] = np.stack([nc + sub.vertex[~inner], sub.cell_k[~inner], nc + nv + trace_index], axis=1)
    return points, triangles, sub.vertex


def write_vtk(path, meshes: MeshTriplet, velocity: NodalField, pressure: DiscretePressure,
              title: str = "pfecc solution") -> Path:
    """Legacy ASCII unstructured grid of the third mesh with the nodal
    velocity as point data and the dual-cell pressure as cell data."""
    path = Path(path)
    points, triangles, parent = vtk_points(meshes)
    n_trace = len(points) - meshes.primal.n_cells - meshes.primal.n_vertices
    nodal = np.concatenate([velocity.cell, velocity.vertex, np.zeros((n_trace, 2))])
    cell_pressure = np.where(pressure.active[parent], pressure.values[parent], 0.0)

    with _open(path) as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            f.write(f"{_num(x)} {_num(y)} 0\n")
        f.write(f"CELLS {len(triangles)} {4 * len(triangles)}\n")
        for a, b, c in triangles:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {len(triangles)}\n")
        f.write("5\n" * len(triangles))
        f.write(f"POINT_DATA {len(points)}\n")
        f.write("VECTORS velocity double\n")
        for ux, uy in nodal:
            f.write(f"{_num(ux)} {_num(uy)} 0\n")
        f.write(f"CELL_DATA {len(triangles)}\n")
        f.write("SCALARS pressure double\n")
        f.write("LOOKUP_TABLE default\n")
        for value in cell_pressure:
            f.write(f"{_num(value)}\n")
    logger.info(f"Wrote VTK grid with {len(triangles)} triangles to {path}")
    return path
