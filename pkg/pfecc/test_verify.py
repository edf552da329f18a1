import math

import numpy as np
import pytest
from conftest import unit_coeffs

from pfecc.assembly import assemble_global, split_solution
from pfecc.cases import (jump_case, linear_scalar, polynomial_bump, sine_bump, sine_case, smooth_viscosity_case,
                         zero_case)
from pfecc.linsolve import solve_direct
from pfecc.mesh import build_meshes, quad_mesh, refine_uniform
from pfecc.models import ConvergenceRow, ConvergenceTable, DiscretePressure, ManufacturedCase, NodalField
from pfecc.operators import sample_nodal
from pfecc.verify import (consistency_divergence_defect, convergence_failures, dual_cell_averages, h1disc_error,
                          h1disc_norm, l2_error_pressure, l2_error_velocity, penalty_identity_residual,
                          run_convergence, solve_case)


def _linear_case():
    zero = zero_case()

    def velocity(p):
        return np.stack([p[..., 0] - 2.0 * p[..., 1], 0.5 * p[..., 0] + p[..., 1]], axis=-1)

    return ManufacturedCase(name="linear", velocity=velocity,
                            velocity_gradient=lambda p: np.broadcast_to([[1.0, -2.0], [0.5, 1.0]],
                                                                        np.shape(p)[:-1] + (2, 2)),
                            pressure=zero.pressure, forcing=zero.forcing, viscosity=zero.viscosity)


# ==================== NORMS ====================
def test_velocity_error_of_exact_linear_data(distorted6):
    case = _linear_case()
    nodal = sample_nodal(case.velocity, distorted6)
    assert l2_error_velocity(case, nodal, distorted6, unit_coeffs(distorted6)) < 1e-12
    assert h1disc_error(case, nodal, distorted6) < 1e-12


def test_velocity_error_of_zero_approximant(quad8):
    case = sine_case()
    zero = NodalField(cell=np.zeros((quad8.primal.n_cells, 2)), vertex=np.zeros((quad8.primal.n_vertices, 2)))
    # ||u||_L2 = pi sqrt(3/8) for the sine flow
    expected = math.pi * math.sqrt(3.0 / 8.0)
    assert l2_error_velocity(case, zero, quad8, unit_coeffs(quad8)) == pytest.approx(expected, rel=1e-2)


def test_pressure_error_of_zero_case(quad4):
    pressure = DiscretePressure(values=np.zeros(quad4.primal.n_vertices), active=~quad4.dual.boundary)
    assert l2_error_pressure(zero_case(), pressure, quad4) == 0.0


def test_pressure_error_ignores_constant_shift(distorted6):
    case = sine_case()
    active = ~distorted6.dual.boundary
    values = np.where(active, dual_cell_averages(case.pressure, distorted6), 0.0)
    shifted = np.where(active, values + 7.0, 0.0)
    base = l2_error_pressure(case, DiscretePressure(values=values, active=active), distorted6)
    moved = l2_error_pressure(case, DiscretePressure(values=shifted, active=active), distorted6)
    assert moved == pytest.approx(base, abs=1e-13)


def test_pressure_error_of_dual_averages_decreases(quad4):
    case = sine_case()
    errors = []
    for meshes in (quad4, build_meshes(refine_uniform(quad4.primal))):
        active = ~meshes.dual.boundary
        values = np.where(active, dual_cell_averages(case.pressure, meshes), 0.0)
        errors.append(l2_error_pressure(case, DiscretePressure(values=values, active=active), meshes))
    assert errors[1] < errors[0]


def test_h1_norm_of_zero(quad4):
    zero = NodalField(cell=np.zeros((16, 2)), vertex=np.zeros((25, 2)))
    assert h1disc_norm(zero, quad4) == 0.0


def test_h1_norm_of_identity_field(distorted6):
    # |grad u|^2 = 2 and int x^2 + y^2 = 2/3 on the unit square
    nodal = sample_nodal(lambda p: np.array(p, dtype=float), distorted6)
    assert h1disc_norm(nodal, distorted6) == pytest.approx(math.sqrt(8.0 / 3.0), rel=1e-12)


def test_dual_cell_averages_of_constant(distorted6):
    np.testing.assert_allclose(dual_cell_averages(lambda p: np.full(np.shape(p)[:-1], 2.5), distorted6), 2.5,
                               rtol=1e-12)


# ==================== CONSISTENCY ====================
def test_consistency_exact_for_linears(distorted6):
    report = consistency_divergence_defect(linear_scalar(1.0, -2.0, 0.5), distorted6, unit_coeffs(distorted6))
    assert report.max_normalized() < 1e-12


def test_consistency_of_zero_function(quad4):
    report = consistency_divergence_defect(linear_scalar(0.0, 0.0, 0.0), quad4, unit_coeffs(quad4))
    np.testing.assert_array_equal(report.raw, 0.0)


@pytest.mark.parametrize("scalar", [polynomial_bump(), sine_bump()], ids=["poly", "sine"])
def test_consistency_order(quad8, scalar):
    fine = build_meshes(refine_uniform(quad8.primal))
    coarse_defect = consistency_divergence_defect(scalar, quad8, unit_coeffs(quad8)).max_normalized()
    fine_defect = consistency_divergence_defect(scalar, fine, unit_coeffs(fine)).max_normalized()
    order = math.log2(coarse_defect / fine_defect)
    assert 1.6 <= order <= 2.6


# ==================== SOLVES ====================
def test_zero_case_solution_is_zero(distorted6):
    case = zero_case()
    _, report, velocity, pressure, coeffs = solve_case(case, distorted6, 1.0)
    assert l2_error_velocity(case, velocity, distorted6, coeffs) < 1e-12
    assert l2_error_pressure(case, pressure, distorted6) < 1e-12


@pytest.mark.parametrize("lambda_pen", [0.1, 1.0, 10.0])
def test_penalty_identity(distorted6, lambda_pen):
    system, _, velocity, pressure, coeffs = solve_case(sine_case(), distorted6, lambda_pen)
    assert penalty_identity_residual(system, velocity, pressure, distorted6, coeffs).max() < 1e-10


def test_boundary_pressure_variant(quad8):
    case = sine_case()
    system, report, velocity, pressure, coeffs = solve_case(case, quad8, 1.0, boundary_pressure=True)
    assert pressure.active.all()
    assert report.residual < 1e-10
    assert penalty_identity_residual(system, velocity, pressure, quad8, coeffs).max() < 1e-10


def test_condensed_solution_recovers_vertices(quad8):
    coeffs = unit_coeffs(quad8)
    system = assemble_global(quad8, coeffs, sine_case().forcing, 1.0)
    velocity, _ = split_solution(system, solve_direct(system).solution, quad8)
    assert np.abs(velocity.vertex[quad8.dual.interior_vertices]).max() > 0.0


# ==================== CONVERGENCE ====================
def test_convergence_needs_two_levels():
    with pytest.raises(ValueError):
        run_convergence(sine_case(), quad_mesh(4), 1)


def test_convergence_of_zero_case():
    table = run_convergence(zero_case(), quad_mesh(2), 3)
    assert [row.err_u_l2 for row in table.rows] == pytest.approx([0.0] * 3, abs=1e-12)
    assert convergence_failures(table) == []


@pytest.mark.slow
@pytest.mark.parametrize("case", [sine_case(), smooth_viscosity_case()], ids=["MS-1", "MS-2"])
def test_manufactured_convergence(case):
    table = run_convergence(case, quad_mesh(8), 4)
    assert convergence_failures(table) == []
    assert table.orders("err_u_l2")[-1] >= 1.0
    assert table.orders("err_p_l2")[-1] >= 0.4
    norms = [d["h1_norm"] for d in table.diagnostics]
    assert norms[-1] <= 2.0 * norms[0]
    assert max(d["penalty_residual"] for d in table.diagnostics) < 1e-10


@pytest.mark.slow
def test_jump_convergence():
    table = run_convergence(jump_case(1.0, 10.0), quad_mesh(8), 4)
    for column in ("err_u_l2", "err_p_l2"):
        values = [getattr(row, column) for row in table.rows]
        assert all(fine < coarse for coarse, fine in zip(values, values[1:])), column
    assert max(d["penalty_residual"] for d in table.diagnostics) < 1e-10


def test_solve_case_carries_boundary_pressures(quad4):
    system, _, _, pressure, _ = solve_case(sine_case(), quad4, 1.0)
    assert system.n_pressure == quad4.primal.n_vertices
    assert pressure.active.all()


def test_failures_report_growth():
    table = ConvergenceTable(case="MS-1")
    table.add(ConvergenceRow(h=0.2, dof=10, err_u_l2=1e-2, err_p_l2=1e-1, err_u_h1=1.0))
    table.add(ConvergenceRow(h=0.1, dof=40, err_u_l2=2e-2, err_p_l2=5e-2, err_u_h1=0.5))
    failures = convergence_failures(table)
    assert len(failures) == 1
    assert "velocity" in failures[0]
    assert table.orders("err_p_l2") == [None, pytest.approx(1.0)]


def test_failures_report_slow_order():
    table = ConvergenceTable(case="MS-1")
    table.add(ConvergenceRow(h=0.2, dof=10, err_u_l2=1e-2, err_p_l2=1e-1, err_u_h1=1.0))
    table.add(ConvergenceRow(h=0.1, dof=40, err_u_l2=4e-3, err_p_l2=5e-2, err_u_h1=0.5))
    table.add(ConvergenceRow(h=0.05, dof=160, err_u_l2=2.3e-3, err_p_l2=2.5e-2, err_u_h1=0.25))
    failures = convergence_failures(table)
    assert len(failures) == 1
    assert "velocity L2 error order" in failures[0]
    assert convergence_failures(table, velocity_order=0.75) == []


def test_table_rejects_growing_h():
    table = ConvergenceTable(case="MS-1")
    table.add(ConvergenceRow(h=0.1, dof=10, err_u_l2=1.0, err_p_l2=1.0, err_u_h1=1.0))
    with pytest.raises(ValueError):
        table.add(ConvergenceRow(h=0.2, dof=10, err_u_l2=1.0, err_p_l2=1.0, err_u_h1=1.0))
