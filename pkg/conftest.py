import numpy as np
import pytest

from pfecc.cases import constant_viscosity
from pfecc.mesh import build_meshes, distorted_mesh, quad_mesh, tri_mesh
from pfecc.models import SubTriangle
from pfecc.operators import average_viscosity, transmission_coefficients
from pfecc.utils import signed_area, triangle_normals


def unit_coeffs(meshes, mu=1.0):
    return transmission_coefficients(meshes, average_viscosity(constant_viscosity(mu), meshes.primal))


def make_sub(x_k, x_l, x_v, x_s, interior=True) -> SubTriangle:
    """Batch of sub-triangles from stacked corner arrays (or single points)."""
    x_k, x_l, x_v, x_s = (np.atleast_2d(np.asarray(p, dtype=float)) for p in (x_k, x_l, x_v, x_s))
    n = len(x_k)
    x_k, x_l, x_v, x_s = (np.broadcast_to(p, (n, 2)).copy() for p in (x_k, x_l, x_v, x_s))
    return SubTriangle(
        cell_k=np.zeros(n, dtype=int),
        cell_l=np.full(n, 1 if interior else -1, dtype=int),
        vertex=np.zeros(n, dtype=int),
        edge=np.arange(n),
        x_k=x_k, x_l=x_l, x_v=x_v, x_s=x_s,
        area_k=np.abs(signed_area(x_v, x_k, x_s)),
        area_l=np.abs(signed_area(x_v, x_l, x_s)) if interior else np.zeros(n),
        normals_k=triangle_normals(x_v, x_k, x_s),
        normals_l=triangle_normals(x_v, x_l, x_s) if interior else np.zeros((n, 3, 2)),
    )


def random_subs(rng, n):
    """Valid sub-triangles around x_sigma = 0, x_K* = (0, 1) with acute
    angles at x_K*."""
    a = rng.uniform(0.3, 2.0, n)
    y = rng.uniform(0.05, 0.95, n)
    s = rng.uniform(0.3, 3.0, n)
    x_k = np.column_stack([-a, y])
    x_l = np.column_stack([s * a, -s * y])
    return make_sub(x_k, x_l, np.array([0.0, 1.0]), np.array([0.0, 0.0]))


def _linear_gradient(a, b, c, values):
    """Gradient of the linear function taking values at corners a, b, c."""
    return np.linalg.solve(np.array([b - a, c - a]), [values[1] - values[0], values[2] - values[0]])


def _triangle_area(a, b, c):
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def element_basis(sub, t, mu_cells):
    """Nodal basis of sub-triangle t for the nodes (K, L, K*), rebuilt from
    its corners.

    Each basis function is linear on every half (x_K*, center, x_sigma) and
    takes at x_sigma the value that makes mu grad . n continuous across
    [x_sigma, x_K*]; on boundary elements that value is 0 and only the K
    half exists. Returns centers, areas, mus, the x_sigma values (3,) and
    gradients [node][half].
    """
    k, l = int(sub.cell_k[t]), int(sub.cell_l[t])
    x_v, x_s = sub.x_v[t], sub.x_s[t]
    centers, mus = [sub.x_k[t]], [mu_cells[k]]
    if l >= 0:
        centers.append(sub.x_l[t])
        mus.append(mu_cells[l])
    areas = [_triangle_area(x_v, c, x_s) for c in centers]
    tangent = x_v - x_s
    normal = np.array([tangent[1], -tangent[0]])

    sigma_values, grads = np.zeros(3), []
    for n in range(3):
        def half_gradient(h, at_sigma):
            return _linear_gradient(x_v, centers[h], x_s, [float(n == 2), float(n == h), at_sigma])

        if l >= 0:
            base = [half_gradient(h, 0.0) @ normal for h in (0, 1)]
            slope = [half_gradient(h, 1.0) @ normal - base[h] for h in (0, 1)]
            sigma_values[n] = (mus[1] * base[1] - mus[0] * base[0]) / (mus[0] * slope[0] - mus[1] * slope[1])
        grads.append([half_gradient(h, sigma_values[n]) for h in range(len(centers))])
    return centers, areas, mus, sigma_values, grads


def reference_full_matrix(meshes, mu_cells, lambda_pen, boundary_pressure=False):
    """Dense un-eliminated Stokes matrix built one sub-triangle at a time,
    layout cells, interior vertices, then pressures."""
    sub = meshes.tri.sub_triangles
    nc = meshes.primal.n_cells
    velocity_vertices = meshes.dual.interior_vertices
    pressure_vertices = np.arange(meshes.primal.n_vertices) if boundary_pressure else velocity_vertices
    n_vel = 2 * (nc + len(velocity_vertices))
    vertex_dof = {int(v): nc + j for j, v in enumerate(velocity_vertices)}
    pressure_dof = {int(v): n_vel + j for j, v in enumerate(pressure_vertices)}
    matrix = np.zeros((n_vel + len(pressure_vertices),) * 2)

    for t in range(len(sub)):
        _, areas, mus, _, grads = element_basis(sub, t, mu_cells)
        l, v = int(sub.cell_l[t]), int(sub.vertex[t])
        dofs = [int(sub.cell_k[t]), l, vertex_dof.get(v, -1)]
        halves = range(len(areas))
        p = pressure_dof.get(v)
        for m in range(3):
            if dofs[m] < 0:
                continue
            for n in range(3):
                if dofs[n] < 0:
                    continue
                value = sum(mus[h] * areas[h] * grads[m][h] @ grads[n][h] for h in halves)
                for i in range(2):
                    matrix[2 * dofs[m] + i, 2 * dofs[n] + i] += value
            if p is not None:
                for i in range(2):
                    flux = sum(areas[h] * grads[m][h][i] for h in halves)
                    matrix[p, 2 * dofs[m] + i] -= flux
                    matrix[2 * dofs[m] + i, p] -= flux

    for v, p in pressure_dof.items():
        matrix[p, p] = -lambda_pen * meshes.tri.h * meshes.dual.areas[v]
    return matrix


@pytest.fixture(scope="session")
def quad2():
    return build_meshes(quad_mesh(2))


@pytest.fixture(scope="session")
def quad3():
    return build_meshes(quad_mesh(3))


@pytest.fixture(scope="session")
def quad4():
    return build_meshes(quad_mesh(4))


@pytest.fixture(scope="session")
def quad8():
    return build_meshes(quad_mesh(8))


@pytest.fixture(scope="session")
def tri4():
    return build_meshes(tri_mesh(4))


@pytest.fixture(scope="session")
def distorted3():
    return build_meshes(distorted_mesh(3, seed=7))


@pytest.fixture(scope="session")
def distorted6():
    return build_meshes(distorted_mesh(6, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# skewed pair of cells whose center segment leaves through the upper edges
SKEWED_MESH = """\
# two cells, the left one leaning far above the shared edge
6 2
0 0
0 1
-0.2 6
-0.4 6
1 0
1 1
4 0 1 2 3
4 0 4 5 1
"""


@pytest.fixture
def skewed_mesh_file(tmp_path):
    path = tmp_path / "skewed.mesh"
    path.write_text(SKEWED_MESH, encoding="utf-8")
    return path
