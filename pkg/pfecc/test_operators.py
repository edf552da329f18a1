import dataclasses

import numpy as np
import pytest
from conftest import make_sub, random_subs, unit_coeffs

from pfecc.cases import constant_viscosity, jump_viscosity, smooth_viscosity
from pfecc.errors import HypothesisViolation, NonPositiveViscosity, PointOutsideDomain
from pfecc.mesh import quad_mesh
from pfecc.models import NodalField, ViscosityField
from pfecc.operators import (average_viscosity, beta_coefficients, discrete_divergence, discrete_gradient,
                             flux_residual, interpolate_P, interpolate_P1, node_values, sample_nodal,
                             sigma_values, transmission_coefficients)

SYMMETRIC = dict(x_k=(-1.0, 0.0), x_l=(1.0, 0.0), x_v=(0.0, 1.0), x_s=(0.0, 0.0))


# ==================== BETA ====================
def test_symmetric_beta():
    coeffs = beta_coefficients(make_sub(**SYMMETRIC), 1.0, 1.0)
    np.testing.assert_allclose([coeffs.beta_k[0], coeffs.beta_l[0], coeffs.beta_v[0]], [0.5, 0.5, 0.0],
                               atol=1e-14)


def test_beta_follows_viscosity_ratio():
    coeffs = beta_coefficients(make_sub(**SYMMETRIC), 1.0, 10.0)
    np.testing.assert_allclose([coeffs.beta_k[0], coeffs.beta_l[0], coeffs.beta_v[0]], [1 / 11, 10 / 11, 0.0],
                               atol=1e-13)


def test_sigma_value_and_half_gradient():
    sub = make_sub(**SYMMETRIC)
    coeffs = beta_coefficients(sub, 1.0, 1.0)
    assert sigma_values(coeffs, 0.0, 2.0, 0.0)[0] == pytest.approx(1.0, abs=1e-14)
    grad = discrete_gradient(sub, coeffs, [0.0], [2.0], [0.0])
    np.testing.assert_allclose(grad.k_side[0], [1.0, -1.0], atol=1e-13)
    np.testing.assert_allclose(grad.l_side[0], [1.0, -1.0], atol=1e-13)


def test_beta_partition_of_unity(rng):
    sub = random_subs(rng, 10_000)
    coeffs = beta_coefficients(sub, rng.uniform(0.1, 10.0, len(sub)), rng.uniform(0.1, 10.0, len(sub)))
    total = coeffs.beta_k + coeffs.beta_l + coeffs.beta_v
    np.testing.assert_allclose(total, 1.0, rtol=0, atol=2e-15)
    assert np.all(coeffs.beta_k > 0.0) and np.all(coeffs.beta_l > 0.0)


def test_flux_balance_holds(rng):
    n = 1000
    sub = random_subs(rng, n)
    mu_k, mu_l = rng.uniform(0.1, 10.0, n), rng.uniform(0.1, 10.0, n)
    coeffs = beta_coefficients(sub, mu_k, mu_l)
    u_k, u_l, u_v = rng.standard_normal((3, n))
    residual = flux_residual(sub, coeffs, u_k, u_l, u_v)
    grad = discrete_gradient(sub, coeffs, u_k, u_l, u_v)
    scale = mu_k * np.abs(np.einsum("nd,nd->n", grad.k_side, sub.normals_k[:, 1])) + 1.0
    assert np.all(residual / scale < 1e-12)


def test_wrong_beta_breaks_flux_balance():
    sub = make_sub(**SYMMETRIC)
    coeffs = beta_coefficients(sub, 1.0, 1.0)
    skewed = dataclasses.replace(coeffs, beta_k=coeffs.beta_k + 0.1)
    assert flux_residual(sub, coeffs, [1.0], [0.0], [0.0])[0] < 1e-14
    assert flux_residual(sub, skewed, [1.0], [0.0], [0.0])[0] > 0.01


def test_zero_values_have_zero_flux(rng):
    sub = random_subs(rng, 50)
    coeffs = beta_coefficients(sub, 1.0, 2.0)
    zeros = np.zeros(50)
    np.testing.assert_array_equal(flux_residual(sub, coeffs, zeros, zeros, zeros), 0.0)


def test_boundary_elements_have_zero_beta():
    sub = make_sub((-1.0, 0.5), (0.0, 0.0), (0.0, 1.0), (0.0, 0.0), interior=False)
    coeffs = beta_coefficients(sub, 1.0, 0.0)
    assert (coeffs.beta_k[0], coeffs.beta_l[0], coeffs.beta_v[0]) == (0.0, 0.0, 0.0)
    assert np.isnan(coeffs.denominator[0])


def test_cancelling_angles_violate_hypothesis():
    # 60 and 120 degrees at x_K*: the cotangents cancel
    s = np.sqrt(3.0) / 2.0
    sub = make_sub((-s, 0.5), (s, 1.5), (0.0, 1.0), (0.0, 0.0))
    with pytest.raises(HypothesisViolation):
        beta_coefficients(sub, 1.0, 1.0)


def test_non_positive_cell_viscosity():
    with pytest.raises(NonPositiveViscosity):
        beta_coefficients(make_sub(**SYMMETRIC), 1.0, -1.0)


def test_quad_mesh_beta_is_midpoint(quad4):
    coeffs = unit_coeffs(quad4)
    inner = coeffs.interior
    np.testing.assert_allclose(coeffs.beta_k[inner], 0.5, atol=1e-14)
    np.testing.assert_allclose(coeffs.beta_l[inner], 0.5, atol=1e-14)
    np.testing.assert_allclose(coeffs.beta_v[inner], 0.0, atol=1e-14)


# ==================== GRADIENT ====================
@pytest.mark.parametrize("mu", [1.0, 3.5])
def test_gradient_exact_for_linear_fields(distorted6, rng, mu):
    coeffs = unit_coeffs(distorted6, mu)
    a, b, c = rng.standard_normal(3)
    nodal = sample_nodal(lambda p: a * p[..., 0] + b * p[..., 1] + c, distorted6)
    grad = discrete_gradient(distorted6.tri.sub_triangles, coeffs, *node_values(nodal, distorted6))
    inner = coeffs.interior
    np.testing.assert_allclose(grad.k_side, np.broadcast_to([a, b], grad.k_side.shape), atol=1e-12)
    np.testing.assert_allclose(grad.l_side[inner], np.broadcast_to([a, b], (inner.sum(), 2)), atol=1e-12)


def test_gradient_exact_on_structured_grid(quad8, rng):
    coeffs = unit_coeffs(quad8)
    a, b, c = rng.standard_normal(3)
    nodal = sample_nodal(lambda p: a * p[..., 0] + b * p[..., 1] + c, quad8)
    grad = discrete_gradient(quad8.tri.sub_triangles, coeffs, *node_values(nodal, quad8))
    np.testing.assert_allclose(grad.k_side, np.broadcast_to([a, b], grad.k_side.shape), atol=1e-12)


@pytest.mark.parametrize("fn, expected", [
    (lambda p: np.stack([p[..., 0], -p[..., 1]], axis=-1), 0.0),
    (lambda p: np.stack([p[..., 0], p[..., 1]], axis=-1), 2.0),
])
def test_divergence_of_linear_fields(distorted6, fn, expected):
    coeffs = unit_coeffs(distorted6)
    nodal = sample_nodal(fn, distorted6)
    div_k, div_l = discrete_divergence(distorted6.tri.sub_triangles, coeffs, *node_values(nodal, distorted6))
    np.testing.assert_allclose(div_k, expected, atol=1e-12)
    np.testing.assert_allclose(div_l[coeffs.interior], expected, atol=1e-12)


def test_gradient_is_local(quad8):
    coeffs = unit_coeffs(quad8)
    sub = quad8.tri.sub_triangles
    cell = np.zeros(quad8.primal.n_cells)
    cell[27] = 1.0
    nodal = NodalField(cell=cell, vertex=np.zeros(quad8.primal.n_vertices))
    grad = discrete_gradient(sub, coeffs, *node_values(nodal, quad8))
    touched = (sub.cell_k == 27) | (sub.cell_l == 27)
    assert np.abs(grad.k_side[touched]).max() > 0.0
    np.testing.assert_array_equal(grad.k_side[~touched], 0.0)
    np.testing.assert_array_equal(grad.l_side[~touched], 0.0)


# ==================== VISCOSITY ====================
def test_average_of_constant(quad4):
    np.testing.assert_allclose(average_viscosity(constant_viscosity(1.0), quad4.primal), 1.0, rtol=1e-15)


def test_average_of_linear_viscosity():
    field = ViscosityField(name="x", evaluator=lambda p: p[..., 0], lower=0.0, upper=1.0)
    assert average_viscosity(field, quad_mesh(1), cell=0) == pytest.approx(0.5, rel=1e-14)


def test_average_of_jump(quad2):
    mu = average_viscosity(jump_viscosity(1.0, 10.0), quad2.primal)
    np.testing.assert_allclose(mu, [1.0, 10.0, 1.0, 10.0], rtol=1e-14)
    assert np.average(mu, weights=quad2.primal.cell_areas) == pytest.approx(5.5, rel=1e-14)


def test_negative_viscosity_rejected(quad2):
    field = ViscosityField(name="negative", evaluator=lambda p: p[..., 0] - 0.5, lower=-0.5, upper=0.5)
    with pytest.raises(NonPositiveViscosity):
        average_viscosity(field, quad2.primal)


# ==================== INTERPOLANTS ====================
def test_P_matches_nodes(quad4, rng):
    coeffs = unit_coeffs(quad4)
    primal = quad4.primal
    nodal = NodalField(cell=rng.standard_normal(primal.n_cells), vertex=np.zeros(primal.n_vertices))
    field = interpolate_P(nodal, quad4, coeffs)
    np.testing.assert_allclose(field(primal.cell_centers), nodal.cell, atol=1e-13)

    sub = quad4.tri.sub_triangles
    inner = sub.interior
    expected = 0.5 * (nodal.cell[sub.cell_k[inner]] + nodal.cell[sub.cell_l[inner]])
    np.testing.assert_allclose(field(sub.x_s[inner]), expected, atol=1e-13)


def test_P_keeps_constants(distorted6):
    coeffs = transmission_coefficients(distorted6, average_viscosity(smooth_viscosity(), distorted6.primal))
    primal = distorted6.primal
    sigma = np.where(distorted6.tri.sub_triangles.interior, 0.0, 3.0)
    nodal = NodalField(cell=np.full(primal.n_cells, 3.0), vertex=np.full(primal.n_vertices, 3.0), sigma=sigma)
    field = interpolate_P(nodal, distorted6, coeffs)
    np.testing.assert_allclose(field.quadrature_values(), 3.0, rtol=1e-13)


def test_P1_reproduces_linears(distorted6, rng):
    nodal = sample_nodal(lambda p: 2.0 * p[..., 0] - p[..., 1] + 0.25, distorted6)
    field = interpolate_P1(nodal, distorted6)
    points = rng.uniform(0.01, 0.99, (40, 2))
    np.testing.assert_allclose(field(points), 2.0 * points[:, 0] - points[:, 1] + 0.25, atol=1e-13)
    np.testing.assert_allclose(field.gradients(), np.broadcast_to([2.0, -1.0], (len(field), 2)), atol=1e-12)


def test_P_equals_P1_on_structured_grid(quad4, rng):
    coeffs = unit_coeffs(quad4)
    primal = quad4.primal
    nodal = NodalField(cell=rng.standard_normal(primal.n_cells), vertex=rng.standard_normal(primal.n_vertices))
    points = rng.uniform(0.01, 0.99, (40, 2))
    np.testing.assert_allclose(interpolate_P(nodal, quad4, coeffs)(points),
                               interpolate_P1(nodal, quad4)(points), atol=1e-13)


def test_point_outside_domain(quad2):
    nodal = NodalField(cell=np.zeros(4), vertex=np.zeros(9))
    with pytest.raises(PointOutsideDomain):
        interpolate_P1(nodal, quad2)([1.5, 0.5])
