"""Adversary beliefs over a discrete grid of candidate locations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptySet, ZeroEvidence
from .geometry import PlanarPoint

SUM_TOL = 1e-9


@dataclass(frozen=True)
class LocationGrid:
    """Square cells with dense ids ``0..n-1`` in row-major order."""

    cell_centers: tuple[PlanarPoint, ...]
    cell_size: float
    ncols: int = 0

    def __post_init__(self):
        if len(set(self.cell_centers)) != len(self.cell_centers):
            raise ValueError("cell centers must be pairwise distinct")

    @classmethod
    def regular(cls, nrows: int, ncols: int, cell_size: float = 500.0, origin=(0.0, 0.0)) -> "LocationGrid":
        ox, oy = origin
        centers = tuple(
            PlanarPoint(ox + (c + 0.5) * cell_size, oy + (r + 0.5) * cell_size)
            for r in range(nrows)
            for c in range(ncols)
        )
        return cls(centers, cell_size, ncols)

    @classmethod
    def covering(cls, points: Iterable, cell_size: float = 500.0) -> "LocationGrid":
        """Smallest regular grid whose cells cover the bounding box of ``points``."""
        arr = np.asarray(list(points), dtype=float).reshape(-1, 2)
        lo = np.floor(arr.min(axis=0) / cell_size) * cell_size
        hi = arr.max(axis=0)
        ncols = max(1, int(math.floor((hi[0] - lo[0]) / cell_size)) + 1)
        nrows = max(1, int(math.floor((hi[1] - lo[1]) / cell_size)) + 1)
        return cls.regular(nrows, ncols, cell_size, origin=(float(lo[0]), float(lo[1])))

    def __len__(self) -> int:
        return len(self.cell_centers)

    @property
    def centers(self) -> np.ndarray:
        return np.asarray(self.cell_centers, dtype=float)

    @property
    def nrows(self) -> int:
        return len(self) // self.ncols if self.ncols else 0

    def center(self, cell: int) -> PlanarPoint:
        return self.cell_centers[cell]

    def cell_of(self, p) -> int:
        """Id of the cell whose center is nearest to ``p`` (ties to the lowest id)."""
        d = np.hypot(*(self.centers - np.asarray(p, dtype=float)).T)
        return int(np.argmin(d))

    def neighbors(self, cell: int) -> list[int]:
        """4-neighbors in a regular grid, in ascending id order."""
        if not self.ncols:
            raise ValueError("grid has no row/column structure")
        r, c = divmod(cell, self.ncols)
        out = []
        for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < self.nrows and 0 <= cc < self.ncols:
                out.append(rr * self.ncols + cc)
        return out


@dataclass(frozen=True)
class BeliefState:
    timestep: int
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DimensionMismatch("belief must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_weights(cls, weights: Sequence[float], timestep: int = 0) -> "BeliefState":
        w = np.asarray(weights, dtype=float)
        return cls(timestep, w / w.sum())

    @classmethod
    def uniform(cls, n: int, timestep: int = 0) -> "BeliefState":
        return cls(timestep, np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, cell: int, timestep: int = 0) -> "BeliefState":
        p = np.zeros(n)
        p[cell] = 1.0
        return cls(timestep, p)

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, cell: int) -> float:
        return float(self.probs[cell])

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def as_dict(self) -> dict[int, float]:
        return {i: float(p) for i, p in enumerate(self.probs)}


@dataclass(frozen=True)
class MobilityModel:
    """First-order Markov chain over cell ids."""

    transition: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DimensionMismatch(f"transition must be square, got shape {t.shape}")
        if np.any(t < 0):
            raise ValueError("transition entries must be non-negative")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > SUM_TOL):
            raise ValueError("transition rows must sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)

    @property
    def n(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def from_traces(cls, traces: Iterable[Sequence[int]], n: int, smoothing: float = 1.0) -> "MobilityModel":
        """Transition counts from observed cell sequences, Laplace-smoothed (+1 by default)."""
        counts = np.full((n, n), float(smoothing))
        for trace in traces:
            for a, b in zip(trace[:-1], trace[1:]):
                counts[a, b] += 1.0
        return cls(counts / counts.sum(axis=1, keepdims=True))

    @classmethod
    def lazy_walk(cls, grid: LocationGrid, stay: float = 0.5) -> "MobilityModel":
        """Stay with probability ``stay``, else step to a uniformly chosen 4-neighbor."""
        n = len(grid)
        t = np.zeros((n, n))
        for i in range(n):
            nb = grid.neighbors(i)
            if not nb:
                t[i, i] = 1.0
                continue
            t[i, i] = stay
            t[i, nb] += (1.0 - stay) / len(nb)
        return cls(t)


def propagate_prior(belief: BeliefState, model: MobilityModel) -> BeliefState:
    if len(belief) != model.n:
        raise DimensionMismatch(f"belief over {len(belief)} cells, model over {model.n}")
    p = belief.probs @ model.transition
    return BeliefState(belief.timestep + 1, p / p.sum())


def posterior_update(prior: BeliefState, z, likelihood) -> BeliefState:
    """Bayes rule: posterior proportional to likelihood times prior.

    ``likelihood`` is either the per-cell density of the observed release
    ``z`` or a callable mapping ``z`` to that vector.
    """
    lik = np.asarray(likelihood(z) if callable(likelihood) else likelihood, dtype=float)
    if lik.shape != prior.probs.shape:
        raise DimensionMismatch(f"{lik.size} likelihoods for {len(prior)} cells")
    num = lik * prior.probs
    total = num.sum()
    if not total > 0:
        raise ZeroEvidence("no cell explains the observation")
    return BeliefState(prior.timestep, num / total)


def restrict_to_set(belief: BeliefState, cells) -> BeliefState:
    """Condition on the true location lying in ``cells`` (ids or an ObfuscationSet)."""
    ids = np.fromiter(getattr(cells, "cell_ids", cells), dtype=int)
    if ids.size == 0:
        raise EmptySet("cannot condition on an empty set")
    p = np.zeros_like(belief.probs)
    p[ids] = belief.probs[ids]
    mass = p.sum()
    if not mass > 0:
        raise EmptySet("set carries no probability mass")
    return BeliefState(belief.timestep, p / mass)

