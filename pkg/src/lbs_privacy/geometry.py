"""Planar geometry on a local metric frame (meters).

Convex hulls, sensitivity hulls, areas, isotropic position, Minkowski gauges
and uniform sampling over convex polygons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateBody, DimensionMismatch, EmptyInput, OriginOutside, OutOfRange

COORD_LIMIT = 1e7
CROSS_TOL = 1e-12

PROPER = "proper"
SEGMENT = "segment"
POINT = "point"


class PlanarPoint(NamedTuple):
    x: float
    y: float

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def distance(self, other) -> float:
        return math.hypot(self.x - other[0], self.y - other[1])


def as_point(p) -> PlanarPoint:
    if len(p) != 2:
        raise DimensionMismatch(f"expected an (x, y) pair, got {p!r}")
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise OutOfRange(f"non-finite coordinate {p!r}")
    if abs(x) >= COORD_LIMIT or abs(y) >= COORD_LIMIT:
        raise OutOfRange(f"coordinate {p!r} outside the city-scale plane")
    return PlanarPoint(x, y)


@dataclass(frozen=True)
class Polygon:
    """Convex polygon with CCW vertices, or a degenerate segment/point."""

    vertices: tuple[PlanarPoint, ...]
    kind: str = PROPER

    def __post_init__(self):
        n = len(self.vertices)
        expected = {POINT: 1, SEGMENT: 2}.get(self.kind)
        if expected is not None and n != expected:
            raise ValueError(f"{self.kind} polygon needs {expected} vertices, got {n}")
        if self.kind == PROPER and n < 3:
            raise ValueError("proper polygon needs at least 3 vertices")

    @classmethod
    def from_vertices(cls, vertices: Iterable) -> "Polygon":
        """Build from vertices already in convex position (any orientation)."""
        return convex_hull(list(vertices))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float).reshape(-1, 2)

    @property
    def is_proper(self) -> bool:
        return self.kind == PROPER

    def __len__(self) -> int:
        return len(self.vertices)

    def contains(self, p, tol: float = 1e-9) -> bool:
        return bool(contains_points(self, np.asarray([p], dtype=float), tol)[0])

    def bounds(self) -> tuple[float, float, float, float]:
        a = self.array
        return a[:, 0].min(), a[:, 1].min(), a[:, 0].max(), a[:, 1].max()


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence) -> Polygon:
    """Andrew's monotone chain; collinear boundary points are dropped."""
    pts = sorted({as_point(p) for p in points})
    if not pts:
        raise EmptyInput("convex_hull of an empty point set")
    if len(pts) == 1:
        return Polygon((pts[0],), POINT)

    # Orientation tests run on a copy scaled into the unit box so that one
    # absolute tolerance works from meters to city extents.
    scale = max(max(abs(p.x), abs(p.y)) for p in pts) or 1.0
    scaled = [(p.x / scale, p.y / scale) for p in pts]

    def half(indices):
        chain: list[int] = []
        for i in indices:
            while len(chain) >= 2 and _cross(scaled[chain[-2]], scaled[chain[-1]], scaled[i]) <= CROSS_TOL:
                chain.pop()
            chain.append(i)
        return chain

    lower = half(range(len(pts)))
    upper = half(range(len(pts) - 1, -1, -1))
    idx = lower[:-1] + upper[:-1]
    if len(idx) < 3:
        return Polygon((pts[0], pts[-1]), SEGMENT)
    return Polygon(tuple(pts[i] for i in idx), PROPER)


def sensitivity_hull(locations: Sequence) -> Polygon:
    """Convex hull of all pairwise differences ``a - b`` of the locations."""
    if len(locations) == 0:
        raise EmptyInput("sensitivity_hull of an empty location set")
    arr = np.array([as_point(p) for p in locations], dtype=float)
    # Only hull vertices of the set can produce hull vertices of the differences.
    base = convex_hull([tuple(p) for p in arr]).array
    diffs = (base[:, None, :] - base[None, :, :]).reshape(-1, 2)
    return convex_hull([tuple(d) for d in diffs])


def polygon_area(poly: Polygon) -> float:
    if not poly.is_proper:
        return 0.0
    a = poly.array
    x, y = a[:, 0], a[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _fan_triangles(poly: Polygon) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a = poly.array
    p0 = np.broadcast_to(a[0], (len(a) - 2, 2))
    p1, p2 = a[1:-1], a[2:]
    e1, e2 = p1 - p0, p2 - p0
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return p0, p1, p2, areas


def centroid_and_covariance(poly: Polygon) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the uniform distribution over ``poly``.

    Exact, from the closed-form second moments of each fan triangle.
    """
    if not poly.is_proper:
        raise DegenerateBody(f"{poly.kind} has no area")
    p0, p1, p2, areas = _fan_triangles(poly)
    total = areas.sum()
    means = (p0 + p1 + p2) / 3.0
    centroid = (areas[:, None] * means).sum(axis=0) / total
    # E[x x^T] over a triangle = (sum_i v_i v_i^T + (sum v)(sum v)^T) / 12
    second = np.zeros((2, 2))
    for w, a, b, c in zip(areas, p0, p1, p2):
        s = a + b + c
        m = (np.outer(a, a) + np.outer(b, b) + np.outer(c, c) + np.outer(s, s)) / 12.0
        second += w * m
    second /= total
    return centroid, second - np.outer(centroid, centroid)


@dataclass(frozen=True)
class IsotropicTransform:
    """Affine map ``p -> forward @ (p - center)``; displacements use ``forward`` alone."""

    forward: np.ndarray
    inverse: np.ndarray
    center: PlanarPoint

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.forward))

    def apply(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - np.asarray(self.center)) @ self.forward.T

    def unapply(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.inverse.T + np.asarray(self.center)

    def apply_vectors(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.forward.T

    def unapply_vectors(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.inverse.T

    def transform_polygon(self, poly: Polygon) -> Polygon:
        # A linear map with det > 0 keeps CCW order and convex position.
        pts = self.apply(poly.array)
        return Polygon(tuple(PlanarPoint(float(x), float(y)) for x, y in pts), poly.kind)


def isotropic_transform(poly: Polygon) -> IsotropicTransform:
    """Transform putting ``poly`` in isotropic position with unit determinant.

    The forward matrix is ``cov^(-1/2)`` rescaled so area is preserved, so the
    uniform distribution over the image has mean zero and covariance
    ``sqrt(det cov) * I``.
    """
    centroid, cov = centroid_and_covariance(poly)
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= 0:
        raise DegenerateBody("covariance is singular")
    inv_sqrt = evecs @ np.diag(evals ** -0.5) @ evecs.T
    forward = inv_sqrt * math.sqrt(math.sqrt(evals.prod()))
    inverse = np.linalg.inv(forward)
    return IsotropicTransform(forward, inverse, PlanarPoint(float(centroid[0]), float(centroid[1])))


def _edge_support(poly: Polygon) -> tuple[np.ndarray, np.ndarray]:
    """Outward edge normals and support offsets ``n . p`` for a CCW polygon."""
    a = poly.array
    e = np.roll(a, -1, axis=0) - a
    normals = np.column_stack([e[:, 1], -e[:, 0]])
    offsets = np.einsum("ij,ij->i", normals, a)
    return normals, offsets


def gauge(poly: Polygon, v) -> float:
    """Minkowski functional: the least ``r >= 0`` with ``v`` in ``r * poly``."""
    return float(gauge_many(poly, np.asarray([v], dtype=float))[0])


def gauge_many(poly: Polygon, vs: np.ndarray) -> np.ndarray:
    if not poly.is_proper:
        raise DegenerateBody(f"gauge of a {poly.kind}")
    normals, offsets = _edge_support(poly)
    scale = np.abs(normals).sum(axis=1).max() * np.abs(poly.array).max()
    if np.any(offsets <= 1e-12 * scale):
        raise OriginOutside("origin is not strictly inside the body")
    vs = np.asarray(vs, dtype=float).reshape(-1, 2)
    return np.maximum((vs @ normals.T / offsets).max(axis=1), 0.0)


def contains_points(poly: Polygon, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    a = poly.array
    if poly.kind == POINT:
        return np.hypot(*(pts - a[0]).T) <= tol
    if poly.kind == SEGMENT:
        d = a[1] - a[0]
        rel = pts - a[0]
        t = rel @ d / (d @ d)
        off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / math.hypot(*d)
        return (off <= tol) & (t >= -tol) & (t <= 1 + tol)
    normals, offsets = _edge_support(poly)
    lengths = np.hypot(normals[:, 0], normals[:, 1])
    return ((pts @ normals.T - offsets) / lengths <= tol).all(axis=1)


def sample_uniform_many(poly: Polygon, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` points uniform over ``poly``: area-weighted fan triangle + barycentric draw."""
    if not poly.is_proper:
        raise DegenerateBody(f"cannot sample uniformly from a {poly.kind}")
    p0, p1, p2, areas = _fan_triangles(poly)
    tri = rng.choice(len(areas), size=size, p=areas / areas.sum())
    u = rng.random((size, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    return p0[tri] + u[:, :1] * (p1[tri] - p0[tri]) + u[:, 1:] * (p2[tri] - p0[tri])


def sample_uniform(poly: Polygon, rng: np.random.Generator) -> PlanarPoint:
    x, y = sample_uniform_many(poly, rng, 1)[0]
    return PlanarPoint(float(x), float(y))
