"""delta-obfuscation sets and the Planar Isotropic release mechanism.

The release is a K-norm mechanism whose body K is the sensitivity hull of the
obfuscation set (plus the location being released), run in the isotropic frame
of K. Radius ``r ~ Gamma(3, rate=eps)`` times a point uniform over the body
gives the density ``eps^2 / (2 Area(K)) * exp(-eps * ||z - l||_K)``.
Collinear sets fall back to the one-dimensional analogue along the segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .belief import BeliefState, LocationGrid
from .errors import DegenerateBody, EmptySet, InvalidDelta, InvalidEpsilon
from .geometry import (
    POINT,
    PROPER,
    SEGMENT,
    IsotropicTransform,
    PlanarPoint,
    Polygon,
    as_point,
    gauge_many,
    isotropic_transform,
    polygon_area,
    sample_uniform_many,
    sensitivity_hull,
)

DELTA_TOL = 1e-12
# Perpendicular slack when deciding whether an output lies on a 1-D release line.
LINE_TOL = 1e-6


@dataclass(frozen=True)
class ObfuscationSet:
    cell_ids: frozenset
    achieved_delta: float
    requested_delta: float
    # cell ids in selection order (descending prior, ascending id on ties)
    order: tuple = ()

    def __post_init__(self):
        if not self.cell_ids:
            raise EmptySet("obfuscation set is empty")
        if not 0.0 < self.requested_delta <= 1.0:
            raise InvalidDelta(f"requested delta {self.requested_delta} outside (0, 1]")
        if self.achieved_delta + 1e-9 < self.requested_delta or self.achieved_delta > 1.0 + 1e-9:
            raise ValueError("achieved delta must lie in [requested, 1]")

    def __len__(self) -> int:
        return len(self.cell_ids)

    def __contains__(self, cell) -> bool:
        return cell in self.cell_ids

    def sorted_ids(self) -> list[int]:
        return sorted(self.cell_ids)


def build_delta_set(prior: BeliefState, requested_delta: float) -> ObfuscationSet:
    """Fewest top-prior cells whose mass reaches ``requested_delta``."""
    if not 0.0 < requested_delta <= 1.0:
        raise InvalidDelta(f"delta must be in (0, 1], got {requested_delta}")
    p = prior.probs
    order = sorted(np.flatnonzero(p > 0).tolist(), key=lambda i: (-p[i], i))
    chosen: list[int] = []
    mass = 0.0
    for cell in order:
        chosen.append(cell)
        mass += p[cell]
        if mass >= requested_delta - DELTA_TOL:
            break
    if len(chosen) == len(order):
        mass = 1.0
    return ObfuscationSet(frozenset(chosen), float(mass), float(requested_delta), tuple(chosen))


def surrogate(true_loc, obf_set: ObfuscationSet, grid: LocationGrid) -> PlanarPoint:
    """The true location if its cell is in the set, else the nearest set cell center."""
    if not obf_set.cell_ids:
        raise EmptySet("surrogate needs a non-empty set")
    loc = as_point(true_loc)
    if grid.cell_of(loc) in obf_set:
        return loc
    ids = obf_set.sorted_ids()
    d = np.hypot(*(grid.centers[ids] - np.asarray(loc)).T)
    return grid.center(ids[int(np.argmin(d))])


class ReleaseGeometry:
    """The K-norm law for one release: body, isotropic frame and budget.

    Handles proper, segment and point bodies; ``density`` and ``sample``
    are vectorized over outputs.
    """

    def __init__(self, hull: Polygon, epsilon: float):
        if not (epsilon > 0 and math.isfinite(epsilon)):
            raise InvalidEpsilon(f"epsilon must be positive and finite, got {epsilon}")
        self.hull = hull
        self.epsilon = float(epsilon)
        self.transform: Optional[IsotropicTransform] = None
        if hull.kind == PROPER:
            self.transform = isotropic_transform(hull)
            # The sensitivity hull is origin-symmetric; only the linear part is used.
            body = hull.array @ self.transform.forward.T
            self.body = Polygon(tuple(PlanarPoint(float(x), float(y)) for x, y in body), PROPER)
            self.body_area = polygon_area(self.body)
            self.jacobian = abs(self.transform.det)
        elif hull.kind == SEGMENT:
            a = hull.array
            span = a[1] - a[0]
            self.half_length = 0.5 * float(np.hypot(*span))
            self.direction = span / (2.0 * self.half_length)

    @classmethod
    def for_locations(cls, locations: Sequence, epsilon: float) -> "ReleaseGeometry":
        return cls(sensitivity_hull(locations), epsilon)

    @property
    def kind(self) -> str:
        return self.hull.kind

    def density(self, z, candidate) -> np.ndarray:
        """Density of output(s) ``z`` given true location(s) ``candidate``.

        Planar density per square meter for proper bodies; for segment bodies
        the density per meter along the release line (zero off the line); for
        point bodies an indicator of ``z == candidate``.
        """
        z = np.asarray(z, dtype=float)
        c = np.asarray(candidate, dtype=float)
        v = (z - c).reshape(-1, 2)
        eps = self.epsilon
        if self.kind == PROPER:
            g = gauge_many(self.body, self.transform.apply_vectors(v))
            out = self.jacobian * eps**2 / (2.0 * self.body_area) * np.exp(-eps * g)
        elif self.kind == SEGMENT:
            along = v @ self.direction
            perp = np.abs(v[:, 0] * self.direction[1] - v[:, 1] * self.direction[0])
            on_line = perp <= LINE_TOL * max(1.0, self.half_length)
            out = np.where(
                on_line,
                eps / (2.0 * self.half_length) * np.exp(-eps * np.abs(along) / self.half_length),
                0.0,
            )
        else:
            out = (np.hypot(v[:, 0], v[:, 1]) <= LINE_TOL).astype(float)
        return out.reshape(np.broadcast_shapes(z.shape, c.shape)[:-1])

    def log_density(self, z, candidate) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.density(z, candidate))

    def sample(self, loc, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Draw release(s) for true location ``loc``; shape (2,) or (size, 2)."""
        n = 1 if size is None else size
        loc = np.asarray(loc, dtype=float)
        if self.kind == PROPER:
            r = rng.gamma(3.0, 1.0 / self.epsilon, size=n)
            b = sample_uniform_many(self.body, rng, n)
            noise = self.transform.unapply_vectors(r[:, None] * b)
        elif self.kind == SEGMENT:
            r = rng.gamma(2.0, 1.0 / self.epsilon, size=n)
            u = rng.uniform(-1.0, 1.0, size=n)
            noise = (r * u * self.half_length)[:, None] * self.direction
        else:
            noise = np.zeros((n, 2))
        out = loc + noise
        return out[0] if size is None else out


@dataclass(frozen=True)
class ReleaseRecord:
    timestep: int
    z: PlanarPoint
    epsilon: float
    obf_set: ObfuscationSet
    surrogate_used: bool
    hull: Polygon
    transform: Optional[IsotropicTransform]
    geometry: ReleaseGeometry

    @property
    def degenerate(self) -> bool:
        return self.hull.kind != PROPER


def release_geometry(loc, obf_set: ObfuscationSet, grid: LocationGrid, epsilon: float) -> ReleaseGeometry:
    pts = [grid.center(i) for i in obf_set.sorted_ids()] + [as_point(loc)]
    return ReleaseGeometry.for_locations(pts, epsilon)


def pim_release(
    loc,
    obf_set: ObfuscationSet,
    grid: LocationGrid,
    epsilon: float,
    rng: np.random.Generator,
    timestep: int = 0,
    surrogate_used: bool = False,
) -> ReleaseRecord:
    """Release a perturbed location for ``loc`` (already surrogate-resolved)."""
    geom = release_geometry(loc, obf_set, grid, epsilon)
    x, y = geom.sample(loc, rng)
    return ReleaseRecord(
        timestep=timestep,
        z=PlanarPoint(float(x), float(y)),
        epsilon=float(epsilon),
        obf_set=obf_set,
        surrogate_used=surrogate_used,
        hull=geom.hull,
        transform=geom.transform,
        geometry=geom,
    )


def release_density(z, candidate, geometry: ReleaseGeometry) -> float:
    """Density of output ``z`` under true location ``candidate``; proper bodies only."""
    if geometry.kind != PROPER:
        raise DegenerateBody(f"planar density undefined for a {geometry.kind} body; use ReleaseGeometry.density")
    return float(geometry.density(z, candidate))


def full_set_release(
    loc,
    grid: LocationGrid,
    epsilon: float,
    rng: np.random.Generator,
    prior: Optional[BeliefState] = None,
    timestep: int = 0,
) -> ReleaseRecord:
    """Baseline that hides ``loc`` among every positive-prior cell (delta = 1)."""
    if prior is None:
        prior = BeliefState.uniform(len(grid))
    obf = build_delta_set(prior, 1.0)
    return pim_release(loc, obf, grid, epsilon, rng, timestep=timestep)


__all__ = [
    "ObfuscationSet",
    "ReleaseGeometry",
    "ReleaseRecord",
    "build_delta_set",
    "full_set_release",
    "pim_release",
    "release_density",
    "release_geometry",
    "surrogate",
    "POINT",
    "SEGMENT",
    "PROPER",
]
