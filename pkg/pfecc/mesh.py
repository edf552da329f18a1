"""Primal, dual and third meshes plus the mesh text format."""
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist
from shapely.geometry import Point, Polygon
from shapely.validation import explain_validity

from .errors import (CenterOutsideCell, DanglingEdge, DegenerateSubTriangle, MeshError, MeshIoError,
                     NoIntersection, NonSimplePolygon, ParseError, UnsupportedCellType, ZeroAreaCell)
from .models import (DualMesh, MeshTriplet, PrimalMesh, RegularityReport, SubTriangle, TriMesh,
                     frozen_array)
from .utils import circumdiameter, cross2, polygon_area_centroid, signed_area, triangle_angles, triangle_normals

logger = logging.getLogger(__name__)

AREA_TOL = 1e-12      # sub-triangle area relative to h^2
CROSSING_TOL = 1e-10  # x_sigma must stay this far from segment ends


# ==================== PRIMAL ====================
def build_primal(vertices, polygons: Sequence[Sequence[int]]) -> PrimalMesh:
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    if len(vertices) < 3:
        raise MeshError(f"need at least 3 vertices, got {len(vertices)}")
    if not np.all(np.isfinite(vertices)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(vertices), axis=1))[0])
        raise MeshError(f"vertex {bad} has a non-finite coordinate", entity=bad)
    if len(polygons) == 0:
        raise MeshError("mesh has no cells")

    nv = len(vertices)
    cells, centers, areas = [], [], []
    for k, polygon in enumerate(polygons):
        cell = np.asarray(polygon, dtype=int)
        if cell.ndim != 1 or len(cell) < 3:
            raise NonSimplePolygon(f"cell {k} has fewer than 3 vertices", entity=k)
        if cell.min() < 0 or cell.max() >= nv:
            raise MeshError(f"cell {k} references a vertex outside 0..{nv - 1}", entity=k)
        if len(np.unique(cell)) != len(cell):
            raise NonSimplePolygon(f"cell {k} repeats a vertex", entity=k)
        points = vertices[cell]
        area, center = polygon_area_centroid(points)
        scale = np.ptp(points, axis=0).max() ** 2
        if abs(area) <= 1e-14 * scale:
            raise ZeroAreaCell(f"cell {k} has zero area", entity=k)
        if area < 0.0:
            raise NonSimplePolygon(f"cell {k} is not counter-clockwise", entity=k)
        shape = Polygon(points)
        if not shape.is_valid:
            raise NonSimplePolygon(f"cell {k} is not simple: {explain_validity(shape)}", entity=k)
        if not shape.contains(Point(center)):
            raise CenterOutsideCell(f"centroid of cell {k} lies outside the cell", entity=k)
        cells.append(frozen_array(cell, dtype=int))
        centers.append(center)
        areas.append(area)

    edge_ids: dict[tuple[int, int], int] = {}
    edges: list[tuple[int, int]] = []
    edge_cells: list[list[int]] = []
    cell_edges = []
    for k, cell in enumerate(cells):
        ids = []
        for a, b in zip(cell, np.roll(cell, -1)):
            a, b = int(a), int(b)
            key = (min(a, b), max(a, b))
            e = edge_ids.get(key)
            if e is None:
                e = len(edges)
                edge_ids[key] = e
                edges.append((a, b))
                edge_cells.append([k, -1])
            elif edge_cells[e][1] != -1:
                raise DanglingEdge(f"edge {e} ({a}, {b}) is shared by more than two cells", entity=e)
            elif edges[e] == (a, b):
                raise DanglingEdge(f"edge {e} ({a}, {b}) is traversed twice in the same direction", entity=e)
            else:
                edge_cells[e][1] = k
            ids.append(e)
        cell_edges.append(frozen_array(ids, dtype=int))

    edges_arr = np.array(edges, dtype=int)
    edge_cells_arr = np.array(edge_cells, dtype=int)
    boundary_edge = edge_cells_arr[:, 1] < 0
    boundary_count = np.bincount(edges_arr[boundary_edge].ravel(), minlength=nv)
    bad = np.flatnonzero((boundary_count != 0) & (boundary_count != 2))
    if len(bad):
        raise DanglingEdge(f"vertex {int(bad[0])} touches {int(boundary_count[bad[0]])} boundary edges "
                           f"(hanging node or non-manifold boundary)", entity=int(bad[0]))
    used = np.zeros(nv, dtype=bool)
    used[np.concatenate(cells)] = True
    if not used.all():
        unused = int(np.flatnonzero(~used)[0])
        raise MeshError(f"vertex {unused} belongs to no cell", entity=unused)

    logger.debug(f"Primal mesh: {nv} vertices, {len(cells)} cells, {len(edges)} edges")
    return PrimalMesh(
        vertices=frozen_array(vertices),
        cells=tuple(cells),
        cell_centers=frozen_array(centers),
        cell_areas=frozen_array(areas),
        edges=frozen_array(edges_arr, dtype=int),
        edge_cells=frozen_array(edge_cells_arr, dtype=int),
        cell_edges=tuple(cell_edges),
        boundary_vertex=frozen_array(boundary_count > 0, dtype=bool),
        boundary_edge=frozen_array(boundary_edge, dtype=bool),
    )


# ==================== DUAL ====================
def build_dual(primal: PrimalMesh) -> DualMesh:
    nv = primal.n_vertices
    incident: list[list[int]] = [[] for _ in range(nv)]
    for e, (a, b) in enumerate(primal.edges):
        incident[a].append(e)
        incident[b].append(e)

    edges = primal.edges
    k, l = primal.edge_cells[:, 0], primal.edge_cells[:, 1]
    interior = l >= 0
    x_k = primal.cell_centers[k]
    areas = np.zeros(nv)
    counts = np.zeros(nv, dtype=int)
    for end in (0, 1):
        v = edges[:, end]
        x_v = primal.vertices[v]
        x_l = primal.cell_centers[np.where(interior, l, k)]
        midpoint = 0.5 * (primal.vertices[edges[:, 0]] + primal.vertices[edges[:, 1]])
        inner = np.abs(signed_area(x_k, x_l, x_v))
        outer = np.abs(signed_area(x_v, x_k, midpoint))
        np.add.at(areas, v, np.where(interior, inner, outer))
        np.add.at(counts, v, np.where(interior, 2, 1))

    if np.any(areas <= 0.0):
        bad = int(np.flatnonzero(areas <= 0.0)[0])
        raise MeshError(f"dual cell {bad} has no area", entity=bad)

    n_int = int(np.count_nonzero(~primal.boundary_vertex))
    logger.debug(f"Dual mesh: {nv} dual cells, {n_int} interior")
    return DualMesh(
        points=primal.vertices,
        boundary=primal.boundary_vertex,
        areas=frozen_array(areas),
        vertex_edges=tuple(frozen_array(sorted(ids), dtype=int) for ids in incident),
        edge_counts=frozen_array(counts, dtype=int),
    )


# ==================== THIRD MESH ====================
def edge_crossings(primal: PrimalMesh) -> np.ndarray:
    """x_sigma per edge: crossing of [x_K, x_L] with sigma, or the edge
    midpoint on the boundary. Raises NoIntersection on the first interior
    edge the center segment misses."""
    a = primal.vertices[primal.edges[:, 0]]
    b = primal.vertices[primal.edges[:, 1]]
    points = 0.5 * (a + b)
    k, l = primal.edge_cells[:, 0], primal.edge_cells[:, 1]
    interior = np.flatnonzero(l >= 0)
    if len(interior) == 0:
        return points
    x_k = primal.cell_centers[k[interior]]
    x_l = primal.cell_centers[l[interior]]
    d1 = x_l - x_k
    d2 = b[interior] - a[interior]
    denom = cross2(d1, d2)
    rhs = a[interior] - x_k
    with np.errstate(divide="ignore", invalid="ignore"):
        s = cross2(rhs, d2) / denom
        t = cross2(rhs, d1) / denom
    ok = (np.abs(denom) > 1e-14 * np.linalg.norm(d1, axis=1) * np.linalg.norm(d2, axis=1)) \
        & (s > CROSSING_TOL) & (s < 1.0 - CROSSING_TOL) & (t > CROSSING_TOL) & (t < 1.0 - CROSSING_TOL)
    if not ok.all():
        e = int(interior[np.flatnonzero(~ok)[0]])
        raise NoIntersection(f"segment between the centers of cells {int(k[e])} and {int(l[e])} "
                             f"misses their common edge {e}", entity=e)
    points[interior] = a[interior] + t[:, None] * d2
    return points


def build_third(primal: PrimalMesh, dual: DualMesh) -> TriMesh:
    vertex = np.concatenate([np.full(len(ids), v, dtype=int) for v, ids in enumerate(dual.vertex_edges)])
    edge = np.concatenate(dual.vertex_edges).astype(int)
    offsets = np.concatenate([[0], np.cumsum([len(ids) for ids in dual.vertex_edges])])

    crossings = edge_crossings(primal)
    cell_k = primal.edge_cells[edge, 0]
    cell_l = primal.edge_cells[edge, 1]
    interior = cell_l >= 0
    x_v = primal.vertices[vertex]
    x_k = primal.cell_centers[cell_k]
    x_s = crossings[edge]
    x_l = np.where(interior[:, None], primal.cell_centers[np.where(interior, cell_l, cell_k)], x_s)

    area_k = np.abs(signed_area(x_v, x_k, x_s))
    area_l = np.where(interior, np.abs(signed_area(x_v, x_l, x_s)), 0.0)
    normals_k = triangle_normals(x_v, x_k, x_s)
    normals_l = np.where(interior[:, None, None], triangle_normals(x_v, x_l, x_s), 0.0)

    corner_b = np.where(interior[:, None], x_l, x_v)
    corner_c = np.where(interior[:, None], x_v, x_s)
    longest = np.max([np.linalg.norm(x_k - corner_b, axis=1), np.linalg.norm(corner_b - corner_c, axis=1),
                      np.linalg.norm(corner_c - x_k, axis=1)], axis=0)
    _check_areas(area_k, area_l, interior, vertex, edge, longest.max())
    diameters = circumdiameter(x_k, corner_b, corner_c)
    h = float(diameters.max())

    sub = SubTriangle(
        cell_k=frozen_array(cell_k, dtype=int),
        cell_l=frozen_array(np.where(interior, cell_l, -1), dtype=int),
        vertex=frozen_array(vertex, dtype=int),
        edge=frozen_array(edge, dtype=int),
        x_k=frozen_array(x_k), x_l=frozen_array(x_l), x_v=frozen_array(x_v), x_s=frozen_array(x_s),
        area_k=frozen_array(area_k), area_l=frozen_array(area_l),
        normals_k=frozen_array(normals_k), normals_l=frozen_array(normals_l),
    )
    logger.debug(f"Third mesh: {len(edge)} sub-triangles, h = {h:.6g}")
    return TriMesh(sub_triangles=sub, h=h, diameters=frozen_array(diameters),
                   dual_offsets=frozen_array(offsets, dtype=int), edge_counts=dual.edge_counts)


def _check_areas(area_k, area_l, interior, vertex, edge, h):
    tol = AREA_TOL * h * h
    bad = (area_k <= tol) | (interior & (area_l <= tol))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateSubTriangle(f"sub-triangle of vertex {int(vertex[i])} on edge {int(edge[i])} "
                                    f"is degenerate", entity=(int(vertex[i]), int(edge[i])))


def build_meshes(primal: PrimalMesh) -> MeshTriplet:
    dual = build_dual(primal)
    return MeshTriplet(primal=primal, dual=dual, tri=build_third(primal, dual))


def regularity_report(tri: TriMesh, dual: DualMesh) -> RegularityReport:
    sub = tri.sub_triangles
    interior = sub.interior
    c2 = 0.0
    for v in range(dual.n_points):
        part = sub.take(tri.dual_slice(v))
        points = np.concatenate([part.x_v[:1], part.x_k, part.x_s, part.x_l[part.interior]])
        c2 = max(c2, float(pdist(points).max() ** 2 / dual.areas[v]))
    element_area = sub.area_k + sub.area_l
    c3 = float(np.max(tri.diameters ** 2 / element_area))
    zeta = float(tri.h / tri.diameters.min())
    angles = triangle_angles(sub.x_v, sub.x_k, sub.x_s).min(axis=1)
    if interior.any():
        angles_l = triangle_angles(sub.x_v[interior], sub.x_l[interior], sub.x_s[interior]).min(axis=1)
        angles = np.concatenate([angles, angles_l])
    return RegularityReport(c1=int(tri.edge_counts.max()), c2=c2, c3=c3, zeta=zeta,
                            min_angle=float(angles.min()))


# ==================== REFINEMENT ====================
def refine_uniform(primal: PrimalMesh, polygons: str = "fan") -> PrimalMesh:
    """Split triangles into 4 by edge midpoints, every other cell into one
    quad per edge (edge midpoints + centroid); polygons="reject" refuses
    cells with more than four vertices."""
    nv, ne = primal.n_vertices, primal.n_edges
    midpoints = 0.5 * (primal.vertices[primal.edges[:, 0]] + primal.vertices[primal.edges[:, 1]])
    vertices = np.concatenate([primal.vertices, midpoints, primal.cell_centers])
    children = []
    for k, (cell, edges) in enumerate(zip(primal.cells, primal.cell_edges)):
        mid = nv + edges  # mid[i] sits on edge (cell[i], cell[i + 1])
        if len(cell) == 3:
            children += [
                [cell[0], mid[0], mid[2]],
                [mid[0], cell[1], mid[1]],
                [mid[2], mid[1], cell[2]],
                [mid[0], mid[1], mid[2]],
            ]
            continue
        if len(cell) > 4 and polygons == "reject":
            raise UnsupportedCellType(f"cell {k} has {len(cell)} vertices", entity=k)
        center = nv + ne + k
        for i in range(len(cell)):
            children.append([cell[i], mid[i], center, mid[i - 1]])
    used = np.unique(np.concatenate([np.asarray(c) for c in children]))
    remap = np.full(len(vertices), -1, dtype=int)
    remap[used] = np.arange(len(used))
    refined = build_primal(vertices[used], [remap[np.asarray(c)] for c in children])
    logger.info(f"Refined mesh: {primal.n_cells} -> {refined.n_cells} cells")
    return refined


# ==================== GENERATORS ====================
def quad_mesh(n: int) -> PrimalMesh:
    if n < 1:
        raise MeshError(f"quad mesh needs n >= 1, got {n}")
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(n) for i in range(n)]
    return build_primal(vertices, cells)


def tri_mesh(n: int) -> PrimalMesh:
    quads = quad_mesh(n)
    cells = []
    for a, b, c, d in quads.cells:
        cells += [[a, b, c], [a, c, d]]
    return build_primal(quads.vertices, cells)


def distorted_mesh(n: int, seed: int = 0, amplitude: float = 0.2) -> PrimalMesh:
    quads = quad_mesh(n)
    rng = np.random.default_rng(seed)
    vertices = np.array(quads.vertices)
    jitter = rng.uniform(-amplitude / n, amplitude / n, size=vertices.shape)
    vertices[~quads.boundary_vertex] += jitter[~quads.boundary_vertex]
    return build_primal(vertices, quads.cells)


def mesh_from_spec(spec: str) -> PrimalMesh:
    """`quad:N`, `tri:N`, `distorted:N[:seed]` or a mesh file path."""
    kind, _, rest = spec.partition(":")
    generators = {"quad": quad_mesh, "tri": tri_mesh}
    try:
        if kind in generators:
            return generators[kind](int(rest))
        if kind == "distorted":
            parts = rest.split(":")
            return distorted_mesh(int(parts[0]), seed=int(parts[1]) if len(parts) > 1 else 0)
    except ValueError as e:
        if isinstance(e, MeshError):
            raise
        raise MeshError(f"malformed mesh spec {spec!r}") from e
    return load_mesh(spec)


# ==================== FILE FORMAT ====================
def load_mesh(path) -> PrimalMesh:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise MeshIoError(f"cannot read mesh {path}: {e.strerror or e}", entity=str(path)) from e

    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            lines.append((number, content.split()))
    if not lines:
        raise ParseError("empty mesh file", line=None)

    number, header = lines[0]
    if len(header) != 2:
        raise ParseError("header must be 'nv nc'", line=number)
    nv, nc = (_parse_int(token, number) for token in header)
    if nv < 0 or nc <= 0:
        raise ParseError("empty cell list" if nc <= 0 else "negative vertex count", line=number)
    if len(lines) != 1 + nv + nc:
        last = lines[-1][0]
        raise ParseError(f"expected {nv} vertex lines and {nc} cell lines, found {len(lines) - 1} data lines",
                         line=last)

    vertices = np.empty((nv, 2))
    for i, (number, tokens) in enumerate(lines[1:1 + nv]):
        if len(tokens) != 2:
            raise ParseError("vertex line must be 'x y'", line=number)
        try:
            vertices[i] = [float(tokens[0]), float(tokens[1])]
        except ValueError:
            raise ParseError(f"bad coordinate in {' '.join(tokens)!r}", line=number)

    polygons = []
    for number, tokens in lines[1 + nv:]:
        values = [_parse_int(token, number) for token in tokens]
        if len(values) < 4 or values[0] != len(values) - 1:
            raise ParseError("cell line must be 'k i1 ... ik' with k >= 3", line=number)
        if min(values[1:]) < 0 or max(values[1:]) >= nv:
            raise ParseError(f"cell references a vertex outside 0..{nv - 1}", line=number)
        polygons.append(values[1:])

    primal = build_primal(vertices, polygons)
    logger.info(f"Loaded mesh {path}: {primal.n_cells} cells, {primal.n_vertices} vertices")
    return primal


def _parse_int(token: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"expected an integer, got {token!r}", line=line)


def save_mesh(primal: PrimalMesh, path) -> None:
    path = Path(path)
    out = [f"{primal.n_vertices} {primal.n_cells}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in primal.vertices]
    out += [" ".join(str(i) for i in [len(cell), *cell]) for cell in primal.cells]
    try:
        path.write_text("\n".join(out) + "\n", encoding="utf-8")
    except OSError as e:
        raise MeshIoError(f"cannot write mesh {path}: {e.strerror or e}", entity=str(path)) from e
