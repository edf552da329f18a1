"""Built-in viscosity fields, manufactured Stokes solutions and smooth
scalar test functions on the unit square."""
import logging
import math

import numpy as np

from .errors import ConfigError
from .models import ManufacturedCase, SmoothScalar, ViscosityField

logger = logging.getLogger(__name__)

PI = math.pi
CASE_IDS = ("MS-1", "MS-2", "jump", "zero", "solve-only")


def _xy(points):
    points = np.asarray(points, dtype=float)
    return points[..., 0], points[..., 1]


# ==================== VISCOSITY ====================
def constant_viscosity(value: float) -> ViscosityField:
    if not value > 0.0 or not math.isfinite(value):
        raise ConfigError(f"constant viscosity must be positive and finite, got {value}")
    return ViscosityField(name=f"const:{value:g}", evaluator=lambda p: np.full(np.shape(p)[:-1], value),
                          lower=value, upper=value, lipschitz=0.0)


def smooth_viscosity() -> ViscosityField:
    def mu(points):
        x, y = _xy(points)
        return 1.0 + 0.5 * np.sin(PI * x) * np.sin(PI * y)

    return ViscosityField(name="smooth", evaluator=mu, lower=1.0, upper=1.5, lipschitz=0.5 * PI)


def smooth_viscosity_gradient(points):
    x, y = _xy(points)
    return 0.5 * PI * np.stack([np.cos(PI * x) * np.sin(PI * y), np.sin(PI * x) * np.cos(PI * y)], axis=-1)


def jump_viscosity(left: float = 1.0, right: float = 10.0) -> ViscosityField:
    if not (left > 0.0 and right > 0.0):
        raise ConfigError(f"jump viscosity values must be positive, got {left}, {right}")

    def mu(points):
        x, _ = _xy(points)
        return np.where(x < 0.5, left, right)

    return ViscosityField(name=f"jump:{left:g}:{right:g}", evaluator=mu,
                          lower=min(left, right), upper=max(left, right))


def viscosity_from_spec(spec: str) -> ViscosityField:
    """`const:<v>`, `smooth` or `jump:<v1>:<v2>`."""
    kind, *args = spec.split(":")
    try:
        if kind == "const" and len(args) == 1:
            return constant_viscosity(float(args[0]))
        if kind == "smooth" and not args:
            return smooth_viscosity()
        if kind == "jump" and len(args) in (0, 2):
            return jump_viscosity(*(float(a) for a in args))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"malformed viscosity spec {spec!r}") from e
    raise ConfigError(f"unknown viscosity spec {spec!r} (expected const:<v>, smooth or jump:<v1>:<v2>)")


# ==================== STOKES CASES ====================
def _sine_velocity(points):
    a, b = (PI * c for c in _xy(points))
    return np.stack([PI * np.sin(a) ** 2 * np.sin(2 * b), -PI * np.sin(2 * a) * np.sin(b) ** 2], axis=-1)


def _sine_velocity_gradient(points):
    a, b = (PI * c for c in _xy(points))
    s2a, s2b = np.sin(2 * a), np.sin(2 * b)
    grad = np.empty(np.shape(a) + (2, 2))
    grad[..., 0, 0] = PI ** 2 * s2a * s2b
    grad[..., 0, 1] = 2 * PI ** 2 * np.sin(a) ** 2 * np.cos(2 * b)
    grad[..., 1, 0] = -2 * PI ** 2 * np.cos(2 * a) * np.sin(b) ** 2
    grad[..., 1, 1] = -PI ** 2 * s2a * s2b
    return grad


def _sine_velocity_laplacian(points):
    a, b = (PI * c for c in _xy(points))
    return np.stack([
        2 * PI ** 3 * np.sin(2 * b) * (2 * np.cos(2 * a) - 1),
        -2 * PI ** 3 * np.sin(2 * a) * (2 * np.cos(2 * b) - 1),
    ], axis=-1)


def _cosine_pressure(points):
    x, y = _xy(points)
    return np.cos(PI * x) * np.cos(PI * y)


def _cosine_pressure_gradient(points):
    x, y = _xy(points)
    return -PI * np.stack([np.sin(PI * x) * np.cos(PI * y), np.cos(PI * x) * np.sin(PI * y)], axis=-1)


def sine_case() -> ManufacturedCase:
    """Stream function sin^2(pi x) sin^2(pi y), mu = 1."""
    def forcing(points):
        return -_sine_velocity_laplacian(points) + _cosine_pressure_gradient(points)

    return ManufacturedCase(name="MS-1", velocity=_sine_velocity, velocity_gradient=_sine_velocity_gradient,
                            pressure=_cosine_pressure, forcing=forcing, viscosity=constant_viscosity(1.0))


def smooth_viscosity_case() -> ManufacturedCase:
    """Same flow with mu = 1 + 0.5 sin(pi x) sin(pi y)."""
    mu = smooth_viscosity()

    def forcing(points):
        grad_u = _sine_velocity_gradient(points)
        grad_mu = smooth_viscosity_gradient(points)
        return (-mu(points)[..., None] * _sine_velocity_laplacian(points)
                - np.einsum("...ij,...j->...i", grad_u, grad_mu)
                + _cosine_pressure_gradient(points))

    return ManufacturedCase(name="MS-2", velocity=_sine_velocity, velocity_gradient=_sine_velocity_gradient,
                            pressure=_cosine_pressure, forcing=forcing, viscosity=mu)


def jump_case(left: float = 1.0, right: float = 10.0) -> ManufacturedCase:
    """Stream function sin^2(2 pi x) sin^2(pi y) / mu(x) with mu jumping at x = 1/2.

    Velocity and the normal viscous flux are continuous across the jump, and
    the forcing is smooth.
    """
    mu = jump_viscosity(left, right)

    def factors(points):
        x, y = _xy(points)
        s = (np.sin(2 * PI * x) ** 2, 2 * PI * np.sin(4 * PI * x),
             8 * PI ** 2 * np.cos(4 * PI * x), -32 * PI ** 3 * np.sin(4 * PI * x))
        t = (np.sin(PI * y) ** 2, PI * np.sin(2 * PI * y),
             2 * PI ** 2 * np.cos(2 * PI * y), -4 * PI ** 3 * np.sin(2 * PI * y))
        return s, t

    def velocity(points):
        (s, s1, _, _), (t, t1, _, _) = factors(points)
        return np.stack([s * t1, -s1 * t], axis=-1) / mu(points)[..., None]

    def velocity_gradient(points):
        (s, s1, s2, _), (t, t1, t2, _) = factors(points)
        grad = np.empty(np.shape(s) + (2, 2))
        grad[..., 0, 0] = s1 * t1
        grad[..., 0, 1] = s * t2
        grad[..., 1, 0] = -s2 * t
        grad[..., 1, 1] = -s1 * t1
        return grad / mu(points)[..., None, None]

    def forcing(points):
        (s, s1, s2, s3), (t, t1, t2, t3) = factors(points)
        laplacian = np.stack([s2 * t1 + s * t3, -(s3 * t + s1 * t2)], axis=-1)
        return -laplacian + _cosine_pressure_gradient(points)

    return ManufacturedCase(name="jump", velocity=velocity, velocity_gradient=velocity_gradient,
                            pressure=_cosine_pressure, forcing=forcing, viscosity=mu)


def zero_case(viscosity: ViscosityField | None = None) -> ManufacturedCase:
    def zeros2(points):
        return np.zeros(np.shape(points)[:-1] + (2,))

    return ManufacturedCase(
        name="zero", velocity=zeros2, velocity_gradient=lambda p: np.zeros(np.shape(p)[:-1] + (2, 2)),
        pressure=lambda p: np.zeros(np.shape(p)[:-1]), forcing=zeros2,
        viscosity=viscosity or constant_viscosity(1.0),
    )


def manufactured_case(name: str, mu_spec: str | None = None) -> ManufacturedCase:
    if name == "MS-1":
        if mu_spec not in (None, "const:1"):
            logger.warning(f"MS-1 is defined for mu = 1; ignoring --mu {mu_spec}")
        return sine_case()
    if name == "MS-2":
        if mu_spec not in (None, "smooth"):
            logger.warning(f"MS-2 is defined for the smooth viscosity; ignoring --mu {mu_spec}")
        return smooth_viscosity_case()
    if name == "jump":
        if mu_spec is None:
            return jump_case()
        kind, *args = mu_spec.split(":")
        if kind != "jump" or len(args) != 2:
            raise ConfigError(f"the jump case needs a jump:<v1>:<v2> viscosity, got {mu_spec!r}")
        try:
            return jump_case(float(args[0]), float(args[1]))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"malformed viscosity spec {mu_spec!r}") from e
    if name == "zero":
        return zero_case(viscosity_from_spec(mu_spec) if mu_spec else None)
    raise ConfigError(f"unknown case {name!r} (expected one of {', '.join(CASE_IDS)})")


def forcing_from_spec(spec: str):
    """Body force for solve-only runs: `zero`, `const:<fx>:<fy>` or a case id."""
    kind, *args = spec.split(":")
    if kind == "zero" and not args:
        return zero_case().forcing
    if kind == "const" and len(args) == 2:
        try:
            value = np.array([float(args[0]), float(args[1])])
        except ValueError as e:
            raise ConfigError(f"malformed forcing spec {spec!r}") from e
        return lambda points: np.broadcast_to(value, np.shape(points)[:-1] + (2,)).copy()
    if spec in CASE_IDS[:3]:
        return manufactured_case(spec).forcing
    raise ConfigError(f"unknown forcing spec {spec!r} (expected zero, const:<fx>:<fy> or a case id)")


def forcing_fd(case: ManufacturedCase, points, step: float = 1e-4) -> np.ndarray:
    """-div(mu grad u) + grad p by flux-form central differences."""
    points = np.asarray(points, dtype=float)
    mu, u, p = case.viscosity, case.velocity, case.pressure
    out = np.zeros(points.shape[:-1] + (2,))
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = step
        flux_plus = mu(points + 0.5 * e)[..., None] * (u(points + e) - u(points)) / step
        flux_minus = mu(points - 0.5 * e)[..., None] * (u(points) - u(points - e)) / step
        out -= (flux_plus - flux_minus) / step
        out[..., axis] += (p(points + e) - p(points - e)) / (2 * step)
    return out


# ==================== SMOOTH SCALARS ====================
def polynomial_bump() -> SmoothScalar:
    """x^2 (1 - x) y (1 - y)."""
    def parts(points):
        x, y = _xy(points)
        g, g1, g2 = x ** 2 - x ** 3, 2 * x - 3 * x ** 2, 2 - 6 * x
        k, k1, k2 = y - y ** 2, 1 - 2 * y, -2.0 * np.ones_like(y)
        return (g, g1, g2), (k, k1, k2)

    def value(points):
        (g, _, _), (k, _, _) = parts(points)
        return g * k

    def gradient(points):
        (g, g1, _), (k, k1, _) = parts(points)
        return np.stack([g1 * k, g * k1], axis=-1)

    def hessian(points):
        (g, g1, g2), (k, k1, k2) = parts(points)
        return np.stack([np.stack([g2 * k, g1 * k1], -1), np.stack([g1 * k1, g * k2], -1)], -2)

    return SmoothScalar(name="poly", value=value, gradient=gradient, hessian=hessian)


def sine_bump() -> SmoothScalar:
    """sin(pi x) sin(pi y)."""
    def value(points):
        x, y = _xy(points)
        return np.sin(PI * x) * np.sin(PI * y)

    def gradient(points):
        x, y = _xy(points)
        return PI * np.stack([np.cos(PI * x) * np.sin(PI * y), np.sin(PI * x) * np.cos(PI * y)], axis=-1)

    def hessian(points):
        x, y = _xy(points)
        off = PI ** 2 * np.cos(PI * x) * np.cos(PI * y)
        diag = -PI ** 2 * value(points)
        return np.stack([np.stack([diag, off], -1), np.stack([off, diag], -1)], -2)

    return SmoothScalar(name="sine", value=value, gradient=gradient, hessian=hessian)


def linear_scalar(a: float, b: float, c: float) -> SmoothScalar:
    """a x + b y + c."""
    return SmoothScalar(
        name="linear",
        value=lambda pts: a * _xy(pts)[0] + b * _xy(pts)[1] + c,
        gradient=lambda pts: np.broadcast_to(np.array([a, b]), np.shape(pts)[:-1] + (2,)).copy(),
        hessian=lambda pts: np.zeros(np.shape(pts)[:-1] + (2, 2)),
    )


SMOOTH_SCALARS = {"poly": polynomial_bump, "sine": sine_bump, "linear": lambda: linear_scalar(1.0, -2.0, 0.5)}


def smooth_scalar(name: str) -> SmoothScalar:
    try:
        return SMOOTH_SCALARS[name]()
    except KeyError:
        raise ConfigError(f"unknown test function {name!r} (expected one of {', '.join(SMOOTH_SCALARS)})")
