import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

# work is split at fixed boundaries, independent of the thread count
CHUNK_SIZE = 4096

# 3-point Gauss rule on triangles (degree 2), barycentric points
TRI_BARY = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])
TRI_WEIGHTS = np.full(3, 1.0 / 3.0)

# 5-point Gauss-Legendre on [0, 1] (degree 9)
_x, _w = np.polynomial.legendre.leggauss(5)
SEG_POINTS = 0.5 * (_x + 1.0)
SEG_WEIGHTS = 0.5 * _w


def worker_threads() -> int:
    """Thread cap from PFECC_THREADS (0 or unset = CPU count)."""
    raw = os.getenv("PFECC_THREADS", "0")
    try:
        threads = int(raw)
    except ValueError:
        logger.warning(f"Ignoring malformed PFECC_THREADS={raw!r}")
        threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def chunked_map(fn: Callable[[int, int], np.ndarray], n: int, threads: int | None = None) -> np.ndarray:
    """Concatenate per-item results of fn(start, stop) over fixed-size chunks."""
    bounds = [(start, min(start + CHUNK_SIZE, n)) for start in range(0, n, CHUNK_SIZE)]
    if not bounds:
        return np.zeros(0)
    threads = threads or worker_threads()
    if threads == 1 or len(bounds) == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds))
    return np.concatenate(parts)


# ==================== GEOMETRY ====================
def cross2(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def signed_area(a, b, c):
    a = np.asarray(a, dtype=float)
    return 0.5 * cross2(np.asarray(b) - a, np.asarray(c) - a)


def outward_normal(a, b, opposite):
    """Normal of segment [a, b], as long as the segment, pointing away
    from `opposite`."""
    a = np.asarray(a, dtype=float)
    edge = np.asarray(b, dtype=float) - a
    normal = np.stack([edge[..., 1], -edge[..., 0]], axis=-1)
    inward = np.einsum("...d,...d->...", normal, np.asarray(opposite, dtype=float) - a) > 0.0
    return np.where(inward[..., None], -normal, normal)


def triangle_normals(p0, p1, p2):
    """Scaled outward normals opposite p0, p1, p2, stacked on axis -2."""
    return np.stack([
        outward_normal(p1, p2, p0),
        outward_normal(p2, p0, p1),
        outward_normal(p0, p1, p2),
    ], axis=-2)


def circumdiameter(a, b, c):
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    ab = np.linalg.norm(b - a, axis=-1)
    bc = np.linalg.norm(c - b, axis=-1)
    ca = np.linalg.norm(a - c, axis=-1)
    return ab * bc * ca / (2.0 * np.abs(signed_area(a, b, c)))


def triangle_angles(a, b, c):
    """Interior angles in degrees, stacked on the last axis."""
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))

    def angle(p, q, r):
        u, v = q - p, r - p
        cos = np.einsum("...d,...d->...", u, v) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))
        return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))

    return np.stack([angle(a, b, c), angle(b, c, a), angle(c, a, b)], axis=-1)


def triangle_quadrature_points(a, b, c):
    """Gauss points of the 3-point rule, shape (..., 3, 2)."""
    corners = np.stack([np.asarray(a, float), np.asarray(b, float), np.asarray(c, float)], axis=-2)
    return np.einsum("qn,...nd->...qd", TRI_BARY, corners)


def segment_quadrature_points(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., None, :] + SEG_POINTS[:, None] * (b - a)[..., None, :]


def polygon_area_centroid(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed shoelace area and centroid of a closed polygon."""
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, points.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return float(area), np.array([cx, cy])
