"""Command-line entry point.

Exit codes: 0 ok, 1 numerical failure, 2 usage or I/O error, 3 acceptance
check failed.
"""
import argparse
import logging
import math
import sys

from .assembly import assemble_global, split_solution
from .cases import SMOOTH_SCALARS, forcing_from_spec, manufactured_case, smooth_scalar, viscosity_from_spec
from .config import RunConfig, load_config, setup_logging
from .errors import ConfigError, MeshError, MeshIoError, ParseError, PfeccError
from .export import export_matrix, write_convergence_csv, write_solution_csv, write_vtk
from .linsolve import check_spd, solve_direct
from .mesh import build_meshes, mesh_from_spec, refine_uniform, regularity_report
from .operators import average_viscosity, transmission_coefficients
from .verify import (consistency_divergence_defect, convergence_failures, l2_error_pressure, l2_error_velocity,
                     run_convergence)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2
EXIT_ACCEPTANCE = 3

CONSISTENCY_ORDER = (1.6, 2.6)
EXACT_DEFECT = 1e-12


class UsageError(PfeccError):
    pass


# ==================== COMMANDS ====================
def cmd_check_mesh(config: RunConfig) -> int:
    primal = mesh_from_spec(config.mesh)
    try:
        meshes = build_meshes(primal)
    except MeshError as e:
        print(f"FAIL {type(e).__name__}: {e}")
        logger.error(f"Mesh check failed: {e}")
        return EXIT_NUMERICAL
    report = regularity_report(meshes.tri, meshes.dual)
    print(f"cells = {primal.n_cells}, vertices = {primal.n_vertices}, edges = {primal.n_edges}")
    print(f"sub-triangles = {len(meshes.tri)}, h = {meshes.tri.h:.6g}")
    print(f"C1 = {report.c1}")
    print(f"C2 = {report.c2:.6g}")
    print(f"C3 = {report.c3:.6g}")
    print(f"zeta = {report.zeta:.6g}")
    print(f"min angle = {report.min_angle:.4f} deg")
    print("OK")
    return EXIT_OK


def _problem(config: RunConfig):
    """(viscosity, forcing, case or None) for solve runs."""
    if config.case == "solve-only":
        viscosity = viscosity_from_spec(config.mu or "const:1")
        return viscosity, forcing_from_spec(config.forcing), None
    case = manufactured_case(config.case, config.mu)
    return case.viscosity, case.forcing, case


def cmd_solve(config: RunConfig) -> int:
    meshes = build_meshes(mesh_from_spec(config.mesh))
    viscosity, forcing, case = _problem(config)
    coeffs = transmission_coefficients(meshes, average_viscosity(viscosity, meshes.primal))
    system = assemble_global(meshes, coeffs, forcing, config.lambda_pen, config.boundary_pressure)
    if config.export_matrix:
        export_matrix(config.out / "matrix.txt", system.matrix)
    report = solve_direct(system)
    velocity, pressure = split_solution(system, report.solution, meshes)
    spd = check_spd(system.velocity_block())

    write_solution_csv(config.out / "solution.csv", meshes, velocity, pressure)
    if config.vtk:
        write_vtk(config.out / "solution.vtk", meshes, velocity, pressure)

    print(f"unknowns = {system.dimension}, nnz = {system.matrix.nnz}")
    print(f"residual = {report.residual:.3e}")
    print(f"velocity block SPD = {spd.is_spd}, min eigenvalue = {spd.min_eigenvalue:.6g}")
    if case is not None:
        print(f"err_u_l2 = {l2_error_velocity(case, velocity, meshes, coeffs):.6e}")
        print(f"err_p_l2 = {l2_error_pressure(case, pressure, meshes):.6e}")
    return EXIT_OK


def cmd_convergence(config: RunConfig) -> int:
    if config.levels < 3:
        raise UsageError(f"convergence needs at least 3 levels, got {config.levels}", entity=config.levels)
    if config.case == "solve-only":
        raise UsageError("convergence needs a manufactured case, not solve-only")
    case = manufactured_case(config.case, config.mu)
    table = run_convergence(case, mesh_from_spec(config.mesh), config.levels, config.lambda_pen,
                            config.boundary_pressure)
    write_convergence_csv(config.out / "convergence.csv", table)

    orders = {column: table.orders(column) for column in ("err_u_l2", "err_p_l2", "err_u_h1")}
    print(f"{'h':>10} {'dof':>8} {'err_u_l2':>12} {'ord':>6} {'err_p_l2':>12} {'ord':>6} {'err_u_h1':>12} {'ord':>6}")
    for i, row in enumerate(table.rows):
        cells = [f"{row.h:10.4g}", f"{row.dof:8d}"]
        for column in ("err_u_l2", "err_p_l2", "err_u_h1"):
            order = orders[column][i]
            cells.append(f"{getattr(row, column):12.4e}")
            cells.append(f"{'':>6}" if order is None else f"{order:6.2f}")
        print(" ".join(cells))

    failures = convergence_failures(table)
    for failure in failures:
        print(f"FAIL {failure}")
        logger.error(f"Convergence check failed: {failure}")
    return EXIT_ACCEPTANCE if failures else EXIT_OK


def cmd_consistency(config: RunConfig) -> int:
    coarse = mesh_from_spec(config.mesh)
    levels = [build_meshes(coarse), build_meshes(refine_uniform(coarse))]
    if not levels[0].dual.n_interior:
        raise UsageError(f"mesh {config.mesh} has no interior dual cells")
    viscosity = viscosity_from_spec(config.mu or "const:1")
    coeffs = [transmission_coefficients(m, average_viscosity(viscosity, m.primal)) for m in levels]

    passed = True
    for name in SMOOTH_SCALARS:
        scalar = smooth_scalar(name)
        defects = [consistency_divergence_defect(scalar, m, c).max_normalized() for m, c in zip(levels, coeffs)]
        if max(defects) < EXACT_DEFECT:
            print(f"{name}: defects {defects[0]:.3e} {defects[1]:.3e} exact")
            continue
        order = math.log2(defects[0] / defects[1]) if defects[1] > 0.0 else math.inf
        ok = CONSISTENCY_ORDER[0] <= order <= CONSISTENCY_ORDER[1]
        print(f"{name}: defects {defects[0]:.3e} {defects[1]:.3e} order {order:.3f} {'OK' if ok else 'FAIL'}")
        if not ok:
            logger.error(f"Consistency order {order:.3f} for {name} is outside {CONSISTENCY_ORDER}")
        passed = passed and ok
    return EXIT_OK if passed else EXIT_ACCEPTANCE


COMMANDS = {
    "check-mesh": cmd_check_mesh,
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "consistency": cmd_consistency,
}


# ==================== ARGUMENTS ====================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfecc", description="Penalty cell-centered finite elements for Stokes flow")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="flat key=value config file")
        cmd.add_argument("--mesh", help="mesh file or quad:N, tri:N, distorted:N[:seed]")
        cmd.add_argument("--case", help="MS-1, MS-2, jump, zero or solve-only")
        cmd.add_argument("--mu", help="viscosity: const:<v>, smooth or jump:<v1>:<v2>")
        cmd.add_argument("--forcing", help="body force for solve-only: zero, const:<fx>:<fy> or a case id")
        cmd.add_argument("--lambda", dest="lambda_pen", type=float, help="penalty parameter")
        cmd.add_argument("--levels", type=int, help="refinement levels")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--vtk", action="store_true", default=None, help="write solution.vtk")
        cmd.add_argument("--export-matrix", action="store_true", default=None, help="write matrix.txt")
        cmd.add_argument("--boundary-pressure", action=argparse.BooleanOptionalAction, default=None,
                         help="carry a pressure on boundary dual cells (default on)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    overrides = {key: value for key, value in vars(args).items() if key not in ("command", "config")}
    try:
        config = load_config(args.config, **overrides)
    except ConfigError as e:
        setup_logging()
        logger.error(f"Invalid configuration: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(config.out)
    logger.info(f"pfecc {args.command}: mesh {config.mesh}, case {config.case}, lambda {config.lambda_pen:g}")
    try:
        return COMMANDS[args.command](config)
    except (UsageError, ConfigError, MeshIoError, ParseError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PfeccError as e:
        logger.error(f"{args.command} failed with {type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error(f"{args.command} crashed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
