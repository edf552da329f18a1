"""Error norms, the divergence consistency defect and refinement studies."""
import logging
import math

import numpy as np

from .assembly import assemble_global, split_solution
from .linsolve import solve_direct
from .mesh import build_meshes, refine_uniform
from .models import (ConsistencyReport, ConvergenceRow, ConvergenceTable, DiscretePressure, GlobalSystem,
                     ManufacturedCase, MeshTriplet, NodalField, PrimalMesh, SmoothScalar,
                     TransmissionCoefficients)
from .operators import (average_viscosity, discrete_divergence, discrete_gradient, interpolate_P, interpolate_P1,
                        node_values, sample_nodal, transmission_coefficients)
from .utils import SEG_WEIGHTS, TRI_WEIGHTS, segment_quadrature_points, triangle_quadrature_points

logger = logging.getLogger(__name__)

# minimum observed orders over the last refinement of a study
VELOCITY_ORDER = 1.0
PRESSURE_ORDER = 0.4


def halves(meshes: MeshTriplet):
    """Corners (v, cell, sigma), areas and owning dual cell of every
    non-degenerate sub-triangle half: all K-halves, then interior L-halves."""
    sub = meshes.tri.sub_triangles
    inner = sub.interior
    corners = np.concatenate([np.stack([sub.x_v, sub.x_k, sub.x_s], axis=1),
                              np.stack([sub.x_v[inner], sub.x_l[inner], sub.x_s[inner]], axis=1)])
    areas = np.concatenate([sub.area_k, sub.area_l[inner]])
    owner = np.concatenate([sub.vertex, sub.vertex[inner]])
    return corners, areas, owner


def _integrate(values, areas):
    """Sum of area * 3-point rule over halves; values shaped (H, 3)."""
    return float(np.sum(areas * (values @ TRI_WEIGHTS)))


# ==================== NORMS ====================
def l2_error_velocity(case: ManufacturedCase, velocity: NodalField, meshes: MeshTriplet,
                      coeffs: TransmissionCoefficients) -> float:
    """||P(u_h) - u||_L2 with the 3-point rule on each half."""
    field = interpolate_P(velocity, meshes, coeffs)
    points = field.quadrature_points()
    diff = field.quadrature_values() - case.velocity(points.reshape(-1, 2)).reshape(points.shape)
    return math.sqrt(_integrate(np.sum(diff ** 2, axis=-1), np.abs(field.areas)))


def l2_error_pressure(case: ManufacturedCase, pressure: DiscretePressure, meshes: MeshTriplet) -> float:
    """L2 error on the dual cells carrying a pressure, both fields shifted
    to zero mean there."""
    corners, areas, owner = halves(meshes)
    keep = pressure.active[owner]
    corners, areas, owner = corners[keep], areas[keep], owner[keep]
    points = triangle_quadrature_points(corners[:, 0], corners[:, 1], corners[:, 2])
    exact = case.pressure(points.reshape(-1, 2)).reshape(points.shape[:2])
    region = float(np.sum(areas))
    exact_mean = _integrate(exact, areas) / region
    discrete = pressure.values[owner]
    discrete_mean = float(np.sum(areas * discrete)) / region
    diff = (discrete[:, None] - discrete_mean) - (exact - exact_mean)
    return math.sqrt(_integrate(diff ** 2, areas))


def h1disc_norm(velocity: NodalField, meshes: MeshTriplet) -> float:
    """Broken H1 norm (seminorm plus L2) of the P1 interpolant."""
    field = interpolate_P1(velocity, meshes)
    areas = np.abs(field.areas)
    semi = float(np.sum(areas * np.sum(field.gradients() ** 2, axis=(-2, -1))))
    values = field.quadrature_values()
    mass = _integrate(np.sum(values ** 2, axis=-1), areas)
    return math.sqrt(semi + mass)


def h1disc_error(case: ManufacturedCase, velocity: NodalField, meshes: MeshTriplet) -> float:
    """Broken H1 distance between P1(u_h) and u."""
    field = interpolate_P1(velocity, meshes)
    areas = np.abs(field.areas)
    points = field.quadrature_points()
    flat = points.reshape(-1, 2)
    grad_exact = case.velocity_gradient(flat).reshape(points.shape[:2] + (2, 2))
    grad_diff = field.gradients()[:, None] - grad_exact
    value_diff = field.quadrature_values() - case.velocity(flat).reshape(points.shape)
    total = np.sum(grad_diff ** 2, axis=(-2, -1)) + np.sum(value_diff ** 2, axis=-1)
    return math.sqrt(_integrate(total, areas))


def forcing_norm_squared(f, meshes: MeshTriplet) -> float:
    corners, areas, _ = halves(meshes)
    points = triangle_quadrature_points(corners[:, 0], corners[:, 1], corners[:, 2])
    values = np.asarray(f(points.reshape(-1, 2))).reshape(points.shape)
    return _integrate(np.sum(values ** 2, axis=-1), areas)


def dual_cell_averages(fn, meshes: MeshTriplet) -> np.ndarray:
    """Mean of a scalar function over every dual cell (3-point rule per half)."""
    corners, areas, owner = halves(meshes)
    points = triangle_quadrature_points(corners[:, 0], corners[:, 1], corners[:, 2])
    values = np.asarray(fn(points.reshape(-1, 2))).reshape(points.shape[:2])
    integral = np.bincount(owner, weights=areas * (values @ TRI_WEIGHTS), minlength=meshes.dual.n_points)
    return integral / meshes.dual.areas


# ==================== CONSISTENCY ====================
def divergence_integrals(velocity: NodalField, meshes: MeshTriplet, coeffs: TransmissionCoefficients) -> np.ndarray:
    """Integral of the discrete divergence over every dual cell."""
    sub = meshes.tri.sub_triangles
    u_k, u_l, u_v = node_values(velocity, meshes)
    div_k, div_l = discrete_divergence(sub, coeffs, u_k, u_l, u_v)
    per_element = sub.area_k * div_k + sub.area_l * div_l
    return np.bincount(sub.vertex, weights=per_element, minlength=meshes.dual.n_points)


def consistency_divergence_defect(scalar: SmoothScalar, meshes: MeshTriplet,
                                  coeffs: TransmissionCoefficients) -> ConsistencyReport:
    """Per dual cell and direction i: |int_K* d_i u_h - int_dK* u n_i|, with u_h
    the nodal sample of u and the flux by 5-point Gauss per boundary segment."""
    sub = meshes.tri.sub_triangles
    nodal = sample_nodal(scalar.value, meshes)
    u_k, u_l, u_v = node_values(nodal, meshes)
    grad = discrete_gradient(sub, coeffs, u_k, u_l, u_v)
    volume = sub.area_k[:, None] * grad.k_side + sub.area_l[:, None] * grad.l_side

    inner = sub.interior

    def flux(a, b, normal):
        points = segment_quadrature_points(a, b)
        mean = scalar.value(points.reshape(-1, 2)).reshape(points.shape[:2]) @ SEG_WEIGHTS
        return mean[:, None] * normal

    # dual cell boundary: [x_K, x_sigma] of every half, plus [x_sigma, x_K*] on the domain boundary
    surface = flux(sub.x_k, sub.x_s, sub.normals_k[:, 0])
    surface[inner] += flux(sub.x_l[inner], sub.x_s[inner], sub.normals_l[inner, 0])
    outer = ~inner
    surface[outer] += flux(sub.x_s[outer], sub.x_v[outer], sub.normals_k[outer, 1])

    n = meshes.dual.n_points
    raw = np.stack([np.bincount(sub.vertex, weights=volume[:, i] - surface[:, i], minlength=n)
                    for i in range(2)], axis=1)
    raw = np.abs(raw)
    return ConsistencyReport(raw=raw, normalized=raw / meshes.dual.areas[:, None], h=meshes.tri.h)


def penalty_identity_residual(system: GlobalSystem, velocity: NodalField, pressure: DiscretePressure,
                              meshes: MeshTriplet, coeffs: TransmissionCoefficients) -> np.ndarray:
    """|int_K* div u_h + lambda h m(K*) p_K*| per pressure dual cell, relative
    to the largest term of the identity."""
    vertices = system.pressure_vertices
    divergence = divergence_integrals(velocity, meshes, coeffs)[vertices]
    penalty = system.lambda_pen * system.h * meshes.dual.areas[vertices] * pressure.values[vertices]
    scale = max(np.abs(divergence).max(initial=0.0), np.abs(penalty).max(initial=0.0))
    residual = np.abs(divergence + penalty)
    return residual / scale if scale > 0.0 else residual


# ==================== CONVERGENCE ====================
def solve_case(case: ManufacturedCase, meshes: MeshTriplet, lambda_pen: float, boundary_pressure: bool = True,
               threads: int | None = None):
    """Assemble and solve one manufactured case; returns (system, report,
    velocity, pressure, coeffs)."""
    mu = average_viscosity(case.viscosity, meshes.primal)
    coeffs = transmission_coefficients(meshes, mu)
    system = assemble_global(meshes, coeffs, case.forcing, lambda_pen, boundary_pressure, threads)
    report = solve_direct(system)
    velocity, pressure = split_solution(system, report.solution, meshes)
    return system, report, velocity, pressure, coeffs


def run_convergence(case: ManufacturedCase, base: PrimalMesh, levels: int, lambda_pen: float = 1.0,
                    boundary_pressure: bool = True, threads: int | None = None) -> ConvergenceTable:
    if levels < 2:
        raise ValueError(f"a convergence study needs at least 2 levels, got {levels}")
    table = ConvergenceTable(case=case.name)
    primal = base
    for level in range(levels):
        if level:
            primal = refine_uniform(primal)
        meshes = build_meshes(primal)
        system, report, velocity, pressure, coeffs = solve_case(case, meshes, lambda_pen, boundary_pressure,
                                                                threads)
        row = ConvergenceRow(
            h=meshes.tri.h,
            dof=system.dimension,
            err_u_l2=l2_error_velocity(case, velocity, meshes, coeffs),
            err_p_l2=l2_error_pressure(case, pressure, meshes),
            err_u_h1=h1disc_error(case, velocity, meshes),
        )
        active = pressure.active
        diagnostics = {
            "level": level,
            "cells": primal.n_cells,
            "residual": report.residual,
            "h1_norm": h1disc_norm(velocity, meshes),
            "penalty_energy": lambda_pen * meshes.tri.h * float(
                np.sum(meshes.dual.areas[active] * pressure.values[active] ** 2)),
            "forcing_norm2": forcing_norm_squared(case.forcing, meshes),
            "divergence_sum": float(np.sum(np.abs(divergence_integrals(velocity, meshes, coeffs)[active]))),
            "penalty_residual": float(
                penalty_identity_residual(system, velocity, pressure, meshes, coeffs).max(initial=0.0)),
        }
        table.add(row, diagnostics)
        logger.info(f"{case.name} level {level}: h = {row.h:.4g}, dof = {row.dof}, "
                    f"|u - u_h| = {row.err_u_l2:.4e}, |p - p_h| = {row.err_p_l2:.4e}, "
                    f"|u - u_h|_1 = {row.err_u_h1:.4e}")
    return table



def convergence_failures(table: ConvergenceTable, floor: float = 1e-12, velocity_order: float = VELOCITY_ORDER,
                         pressure_order: float = PRESSURE_ORDER) -> list[str]:
    """Monotone decrease of the velocity and pressure errors, then the
    observed order over the last refinement against its minimum."""
    failures = []
    for column, label, minimum in (("err_u_l2", "velocity L2 error", velocity_order),
                                   ("err_p_l2", "pressure L2 error", pressure_order)):
        values = [getattr(row, column) for row in table.rows]
        if not table.decreasing(column, floor):
            listed = ", ".join(f"{value:.4e}" for value in values)
            failures.append(f"{label} is not strictly decreasing ({listed})")
        elif len(values) >= 2 and min(values[-2:]) >= floor:
            order = table.orders(column)[-1]
            if order < minimum:
                failures.append(f"{label} order {order:.3f} on the last refinement is below {minimum:g}")
    return failures
