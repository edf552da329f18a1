"""Transmission coefficients, discrete gradient/divergence and interpolants."""
import logging

import numpy as np

from .errors import HypothesisViolation, NonPositiveViscosity, OperatorError, PointOutsideDomain
from .models import (GradientMap, MeshTriplet, NodalField, PrimalMesh, SubTriangle, SubTriangleGradient,
                     TransmissionCoefficients, ViscosityField)
from .utils import TRI_BARY, TRI_WEIGHTS, signed_area, triangle_quadrature_points

logger = logging.getLogger(__name__)

HYPOTHESIS_TOL = 1e-12
LOCATE_TOL = 1e-12


# ==================== VISCOSITY ====================
def cell_fan(primal: PrimalMesh, cells=None):
    """Triangles (x_K, p_i, p_i+1) of each cell's centroid fan and their owners."""
    cells = range(primal.n_cells) if cells is None else np.atleast_1d(cells)
    owners, corners = [], []
    for k in cells:
        points = primal.vertices[primal.cells[k]]
        center = np.broadcast_to(primal.cell_centers[k], points.shape)
        corners.append(np.stack([center, points, np.roll(points, -1, axis=0)], axis=1))
        owners.append(np.full(len(points), k, dtype=int))
    return np.concatenate(owners), np.concatenate(corners)


def average_viscosity(field: ViscosityField, primal: PrimalMesh, cell: int | None = None):
    """Cell averages of mu (3-point Gauss on the centroid fan). Returns one
    value for a given cell, an array over all cells otherwise."""
    owners, corners = cell_fan(primal, cell)
    points = triangle_quadrature_points(corners[:, 0], corners[:, 1], corners[:, 2])
    values = field(points.reshape(-1, 2)).reshape(len(owners), -1)

    bad = np.flatnonzero(np.any(~(values > 0.0), axis=1))
    if len(bad):
        k = int(owners[bad[0]])
        raise NonPositiveViscosity(f"viscosity {field.name} is not positive in cell {k}", entity=k)
    slack = 1e-12 * max(abs(field.lower), abs(field.upper), 1.0)
    outside = np.flatnonzero(np.any((values < field.lower - slack) | (values > field.upper + slack), axis=1))
    if len(outside):
        k = int(owners[outside[0]])
        raise OperatorError(f"viscosity {field.name} leaves [{field.lower}, {field.upper}] in cell {k}", entity=k)

    areas = np.abs(signed_area(corners[:, 0], corners[:, 1], corners[:, 2]))
    weighted = areas * (values @ TRI_WEIGHTS)
    if cell is not None:
        return float(weighted.sum() / areas.sum())
    return np.bincount(owners, weights=weighted, minlength=primal.n_cells) / np.bincount(
        owners, weights=areas, minlength=primal.n_cells)


# ==================== BETA ====================
def beta_coefficients(sub: SubTriangle, mu_k, mu_l) -> TransmissionCoefficients:
    """u_sigma weights from flux conservation across [x_sigma, x_K*].

    Boundary elements get zero weights: the trace there is the Dirichlet
    value, not a combination of unknowns.
    """
    interior = np.atleast_1d(sub.interior)
    n_k = np.reshape(sub.normals_k, (-1, 3, 2))
    n_l = np.reshape(sub.normals_l, (-1, 3, 2))
    area_k = np.atleast_1d(sub.area_k).astype(float)
    area_l = np.where(interior, np.atleast_1d(sub.area_l), 1.0)
    mu_k = np.broadcast_to(np.asarray(mu_k, dtype=float), interior.shape)
    mu_l = np.where(interior, np.broadcast_to(np.asarray(mu_l, dtype=float), interior.shape), 0.0)
    if np.any(mu_k <= 0.0) or np.any(interior & (mu_l <= 0.0)):
        i = int(np.flatnonzero((mu_k <= 0.0) | (interior & (mu_l <= 0.0)))[0])
        raise NonPositiveViscosity(f"non-positive cell viscosity on sub-triangle {i}", entity=i)

    def dot(a, b):
        return np.einsum("...d,...d->...", a, b)

    term_k = -mu_k * dot(n_k[:, 1], n_k[:, 2]) / (2.0 * area_k)
    term_l = -mu_l * dot(n_l[:, 1], n_l[:, 2]) / (2.0 * area_l)
    num_k = mu_k * dot(n_k[:, 1], n_k[:, 1]) / (2.0 * area_k)
    num_l = mu_l * dot(n_l[:, 1], n_l[:, 1]) / (2.0 * area_l)
    denominator = term_k + term_l

    weak = interior & ~(np.abs(denominator) > HYPOTHESIS_TOL * (np.abs(term_k) + np.abs(term_l)))
    if weak.any():
        i = int(np.flatnonzero(weak)[0])
        vertex, edge = np.atleast_1d(sub.vertex)[i], np.atleast_1d(sub.edge)[i]
        raise HypothesisViolation(f"flux balance is singular at vertex {int(vertex)}, edge {int(edge)} "
                                  f"(D = {denominator[i]:.3e})", entity=(int(vertex), int(edge)))

    safe = np.where(interior, denominator, 1.0)
    beta_k = np.where(interior, num_k / safe, 0.0)
    beta_l = np.where(interior, num_l / safe, 0.0)
    beta_v = np.where(interior, 1.0 - beta_k - beta_l, 0.0)
    return TransmissionCoefficients(
        beta_k=beta_k, beta_l=beta_l, beta_v=beta_v,
        denominator=np.where(interior, denominator, np.nan),
        mu_k=mu_k, mu_l=mu_l, interior=interior,
    )


def transmission_coefficients(meshes: MeshTriplet, mu_cells: np.ndarray) -> TransmissionCoefficients:
    sub = meshes.tri.sub_triangles
    mu_cells = np.asarray(mu_cells, dtype=float)
    mu_l = np.where(sub.interior, mu_cells[np.maximum(sub.cell_l, 0)], 0.0)
    coeffs = beta_coefficients(sub, mu_cells[sub.cell_k], mu_l)
    logger.debug(f"Transmission coefficients for {len(sub)} sub-triangles, "
                 f"max |beta_v| = {np.abs(coeffs.beta_v).max(initial=0.0):.3e}")
    return coeffs


# ==================== GRADIENT / DIVERGENCE ====================
def gradient_map(sub: SubTriangle, coeffs: TransmissionCoefficients) -> GradientMap:
    """Half gradients as linear maps of (u_K, u_L, u_K*).

    On boundary elements the L slot carries the boundary trace u_sigma,
    which is zero for members of the discrete space.
    """
    interior = coeffs.interior
    n_k = np.reshape(sub.normals_k, (-1, 3, 2))
    n_l = np.reshape(sub.normals_l, (-1, 3, 2))
    scale_k = (-0.5 / np.atleast_1d(sub.area_k))[:, None]
    scale_l = np.where(interior, -0.5 / np.where(interior, np.atleast_1d(sub.area_l), 1.0), 0.0)[:, None]
    b_k, b_l, b_v = (c[:, None] for c in (coeffs.beta_k, coeffs.beta_l, coeffs.beta_v))

    trace_slot = np.where(interior[:, None], b_l * n_k[:, 2], n_k[:, 2])
    coef_k = np.stack([
        scale_k * (n_k[:, 1] + b_k * n_k[:, 2]),
        scale_k * trace_slot,
        scale_k * (n_k[:, 0] + b_v * n_k[:, 2]),
    ], axis=1)
    coef_l = np.stack([
        scale_l * (b_k * n_l[:, 2]),
        scale_l * (n_l[:, 1] + b_l * n_l[:, 2]),
        scale_l * (n_l[:, 0] + b_v * n_l[:, 2]),
    ], axis=1)
    return GradientMap(coef_k=coef_k, coef_l=coef_l)


def sigma_values(coeffs: TransmissionCoefficients, u_k, u_l, u_v, trace=None):
    """u_sigma per sub-triangle: the beta combination inside, the boundary
    trace (default zero) outside."""
    inner = coeffs.beta_k * u_k + coeffs.beta_l * u_l + coeffs.beta_v * u_v
    boundary = 0.0 if trace is None else trace
    return np.where(coeffs.interior, inner, boundary)


def discrete_gradient(sub: SubTriangle, coeffs: TransmissionCoefficients, u_k, u_l, u_v) -> SubTriangleGradient:
    """Gradient of one velocity component on both halves of each element.
    For boundary elements u_l is the boundary trace."""
    return gradient_map(sub, coeffs).apply(u_k, u_l, u_v)


def flux_residual(sub: SubTriangle, coeffs: TransmissionCoefficients, u_k, u_l, u_v) -> np.ndarray:
    """|mu_K g_K . n^K + mu_L g_L . n^L| on [x_sigma, x_K*]; zero on the boundary."""
    grad = discrete_gradient(sub, coeffs, u_k, u_l, u_v)
    n_k = np.reshape(sub.normals_k, (-1, 3, 2))[:, 1]
    n_l = np.reshape(sub.normals_l, (-1, 3, 2))[:, 1]
    flux = (coeffs.mu_k * np.einsum("nd,nd->n", np.reshape(grad.k_side, (-1, 2)), n_k)
            + coeffs.mu_l * np.einsum("nd,nd->n", np.reshape(grad.l_side, (-1, 2)), n_l))
    return np.where(coeffs.interior, np.abs(flux), 0.0)


def discrete_divergence(sub: SubTriangle, coeffs: TransmissionCoefficients, u_k, u_l, u_v):
    """Divergence per half for (n, 2) velocity values; returns (k_side, l_side)."""
    u_k, u_l, u_v = (np.reshape(u, (-1, 2)) for u in (u_k, u_l, u_v))
    mapping = gradient_map(sub, coeffs)
    first = mapping.apply(u_k[:, 0], u_l[:, 0], u_v[:, 0])
    second = mapping.apply(u_k[:, 1], u_l[:, 1], u_v[:, 1])
    return first.k_side[:, 0] + second.k_side[:, 1], first.l_side[:, 0] + second.l_side[:, 1]


# ==================== NODAL DATA ====================
def node_values(field: NodalField, meshes: MeshTriplet):
    """(u_K, u_L, u_K*) per sub-triangle; the L slot of boundary elements is
    the field's boundary trace (zero when it has none)."""
    sub = meshes.tri.sub_triangles
    cell = np.asarray(field.cell, dtype=float)
    vertex = np.asarray(field.vertex, dtype=float)
    u_k = cell[sub.cell_k]
    u_v = vertex[sub.vertex]
    trace = np.zeros_like(u_k) if field.sigma is None else np.asarray(field.sigma, dtype=float)
    mask = sub.interior.reshape((-1,) + (1,) * (cell.ndim - 1))
    u_l = np.where(mask, cell[np.maximum(sub.cell_l, 0)], trace)
    return u_k, u_l, u_v


def sample_nodal(fn, meshes: MeshTriplet) -> NodalField:
    """Samples fn at cell centers, vertices and boundary x_sigma points."""
    sub = meshes.tri.sub_triangles
    cell = np.asarray(fn(meshes.primal.cell_centers), dtype=float)
    vertex = np.asarray(fn(meshes.primal.vertices), dtype=float)
    sigma = np.asarray(fn(sub.x_s), dtype=float)
    mask = sub.interior.reshape((-1,) + (1,) * (sigma.ndim - 1))
    return NodalField(cell=cell, vertex=vertex, sigma=np.where(mask, 0.0, sigma))


# ==================== INTERPOLANTS ====================
class PiecewiseLinearField:
    """Continuous piecewise-linear field given by corner values on triangles."""

    def __init__(self, corners: np.ndarray, values: np.ndarray):
        self.corners = np.asarray(corners, dtype=float)  # (T, 3, 2)
        self.values = np.asarray(values, dtype=float)    # (T, 3) or (T, 3, C)
        a, b, c = self.corners[:, 0], self.corners[:, 1], self.corners[:, 2]
        self.areas = signed_area(a, b, c)
        lo = self.corners.min(axis=1)
        hi = self.corners.max(axis=1)
        self._pad = LOCATE_TOL * max(1.0, float(np.abs(self.corners).max(initial=1.0)))
        self._lo, self._hi = lo - self._pad, hi + self._pad

    def __len__(self) -> int:
        return len(self.corners)

    def barycentric(self, point) -> tuple[int, np.ndarray]:
        point = np.asarray(point, dtype=float)
        candidates = np.flatnonzero(np.all((self._lo <= point) & (point <= self._hi), axis=1))
        if len(candidates):
            a, b, c = (self.corners[candidates, i] for i in range(3))
            lam = np.stack([signed_area(point, b, c), signed_area(a, point, c), signed_area(a, b, point)],
                           axis=1) / self.areas[candidates, None]
            inside = np.flatnonzero(np.all(lam >= -LOCATE_TOL, axis=1))
            if len(inside):
                return int(candidates[inside[0]]), lam[inside[0]]
        raise PointOutsideDomain(f"point ({point[0]:.6g}, {point[1]:.6g}) is outside the mesh",
                                 entity=tuple(point))

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        out = []
        for point in np.atleast_2d(points):
            t, lam = self.barycentric(point)
            out.append(np.tensordot(lam, self.values[t], axes=(0, 0)))
        out = np.array(out)
        return out[0] if single else out

    def gradients(self) -> np.ndarray:
        """Constant gradient per triangle, shape (T, 2) or (T, C, 2)."""
        a, b, c = self.corners[:, 0], self.corners[:, 1], self.corners[:, 2]
        # grad lambda_i = rot(opposite edge) / (2 area)
        edges = np.stack([c - b, a - c, b - a], axis=1)
        grad_lam = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2.0 * self.areas[:, None, None])
        if self.values.ndim == 2:
            return np.einsum("tn,tnd->td", self.values, grad_lam)
        return np.einsum("tnc,tnd->tcd", self.values, grad_lam)

    def quadrature_points(self) -> np.ndarray:
        return triangle_quadrature_points(self.corners[:, 0], self.corners[:, 1], self.corners[:, 2])

    def quadrature_values(self) -> np.ndarray:
        """Field values at the 3-point rule's points, shape (T, 3[, C])."""
        if self.values.ndim == 2:
            return np.einsum("qn,tn->tq", TRI_BARY, self.values)
        return np.einsum("qn,tnc->tqc", TRI_BARY, self.values)


def interpolate_P(field: NodalField, meshes: MeshTriplet, coeffs: TransmissionCoefficients) -> PiecewiseLinearField:
    """Piecewise-linear field on the element halves with the reconstructed
    u_sigma at x_sigma."""
    sub = meshes.tri.sub_triangles
    u_k, u_l, u_v = node_values(field, meshes)
    shape = (-1,) + (1,) * (u_k.ndim - 1)
    beta_k, beta_l, beta_v, interior = (np.reshape(c, shape) for c in (
        coeffs.beta_k, coeffs.beta_l, coeffs.beta_v, coeffs.interior))
    u_s = np.where(interior, beta_k * u_k + beta_l * u_l + beta_v * u_v, u_l)
    inner = sub.interior
    corners = np.concatenate([
        np.stack([sub.x_v, sub.x_k, sub.x_s], axis=1),
        np.stack([sub.x_v[inner], sub.x_l[inner], sub.x_s[inner]], axis=1),
    ])
    values = np.concatenate([
        np.stack([u_v, u_k, u_s], axis=1),
        np.stack([u_v[inner], u_l[inner], u_s[inner]], axis=1),
    ])
    return PiecewiseLinearField(corners, values)


def interpolate_P1(field: NodalField, meshes: MeshTriplet) -> PiecewiseLinearField:
    """Standard linear interpolant on the third-mesh triangles."""
    sub = meshes.tri.sub_triangles
    u_k, u_l, u_v = node_values(field, meshes)
    inner = sub.interior[:, None]
    corners = np.where(inner[..., None],
                       np.stack([sub.x_k, sub.x_l, sub.x_v], axis=1),
                       np.stack([sub.x_v, sub.x_k, sub.x_s], axis=1))
    mask = sub.interior.reshape((-1,) + (1,) * u_k.ndim)
    values = np.where(mask, np.stack([u_k, u_l, u_v], axis=1), np.stack([u_v, u_k, u_l], axis=1))
    return PiecewiseLinearField(corners, values)
