"""Privacy-loss bounds for locations, trajectories and POIs, and the utility bound.

Every bound is returned uncapped: a value above 1 is the signal that the
adversary may fully identify the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DegenerateBody, EmptyList, InvalidParams
from .geometry import polygon_area, sensitivity_hull

TRAJECTORY = "trajectory"
POI = "poi"


def _check_prob(name: str, p: float) -> None:
    if not (0.0 <= p <= 1.0):
        raise InvalidParams(f"{name} must be a probability, got {p}")


def _check_eps_delta(epsilon: float, delta: float) -> None:
    if not (epsilon >= 0 and math.isfinite(epsilon)):
        raise InvalidParams(f"epsilon must be finite and >= 0, got {epsilon}")
    if not (0.0 < delta <= 1.0):
        raise InvalidParams(f"delta must be in (0, 1], got {delta}")


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    theta: float = 0.0

    def __post_init__(self):
        _check_eps_delta(self.epsilon, self.delta)
        if not math.isfinite(self.theta):
            raise InvalidParams("theta must be finite")

    @property
    def factor(self) -> float:
        """Multiplicative factor ``e^eps / delta`` applied to the prior."""
        return math.exp(self.epsilon) / self.delta


@dataclass(frozen=True)
class ComposedParams:
    """Result of composing per-step parameters.

    ``delta_multiplier`` is the product of inverse deltas (>= 1), kept as a
    multiplier and never read back as a probability mass.
    """

    epsilon: float
    delta_multiplier: float
    theta: float

    @property
    def factor(self) -> float:
        return self.delta_multiplier * math.exp(self.epsilon)

    def bound(self, prior: float) -> float:
        _check_prob("prior", prior)
        return self.factor * prior + self.theta


def location_bound(prior_p: float, epsilon: float, delta: float) -> float:
    """Upper bound on the posterior of an in-set candidate: ``e^eps / delta * p``."""
    _check_prob("prior", prior_p)
    _check_eps_delta(epsilon, delta)
    return math.exp(epsilon) / delta * prior_p


def theta(excluded_weights: Iterable[float], delta: float) -> float:
    """``(delta - 1) * min`` link weight over candidates left out of the set; 0 if none."""
    if not 0.0 < delta <= 1.0:
        raise InvalidParams(f"delta must be in (0, 1], got {delta}")
    w = list(excluded_weights)
    if not w:
        return 0.0
    for x in w:
        _check_prob("link weight", x)
    return (delta - 1.0) * min(w) + 0.0


def target_bound(prior_target: float, params: PrivacyParams) -> float:
    _check_prob("prior", prior_target)
    return params.factor * prior_target + params.theta


def compose(steps: Sequence[PrivacyParams]) -> ComposedParams:
    if not steps:
        raise EmptyList("compose needs at least one step")
    eps = 0.0
    mult = 1.0
    th = 0.0
    for s in steps:
        # theta_[k] = theta_k + theta_[k-1] * e^eps_k / delta_k unrolls to the closed form.
        th = th * s.factor + s.theta
        eps += s.epsilon
        mult /= s.delta
    return ComposedParams(eps, mult, th)


def trivial_sequential_bound(prior_T: float, epsilons: Sequence[float]) -> float:
    """Bound for the full-set baseline: ``e^(sum eps) * prior``."""
    _check_prob("prior", prior_T)
    if any(not (e >= 0 and math.isfinite(e)) for e in epsilons):
        raise InvalidParams("epsilons must be finite and >= 0")
    return math.exp(sum(epsilons)) * prior_T


class ErrorBound(NamedTuple):
    meters: float
    degenerate: bool


def error_lower_bound(set_with_true: Sequence, epsilon: float) -> ErrorBound:
    """``sqrt(Area(sensitivity hull)) / eps``, the order bound with its constant set to 1."""
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidParams(f"epsilon must be positive, got {epsilon}")
    hull = sensitivity_hull(set_with_true)
    if not hull.is_proper:
        return ErrorBound(0.0, True)
    return ErrorBound(math.sqrt(polygon_area(hull)) / epsilon, False)


def solve_epsilon_for_error(set_with_true: Sequence, target_error: float) -> float:
    """Budget at which ``error_lower_bound`` equals ``target_error``."""
    if not target_error > 0:
        raise InvalidParams(f"target error must be positive, got {target_error}")
    hull = sensitivity_hull(set_with_true)
    if not hull.is_proper:
        raise DegenerateBody(f"sensitivity hull is a {hull.kind}")
    return math.sqrt(polygon_area(hull)) / target_error


def steps_until_identifiable(bounds_stream: Iterable[float]) -> Optional[int]:
    """1-based index of the first bound strictly above 1, or None."""
    for i, b in enumerate(bounds_stream, start=1):
        if b > 1.0:
            return i
    return None


@dataclass(frozen=True)
class LinkWeights:
    """Adversary link probabilities ``Pr[cell ~> target]`` as a cells x targets matrix."""

    kind: str
    matrix: np.ndarray = field(repr=False)
    target_ids: tuple = ()

    def __post_init__(self):
        if self.kind not in (TRAJECTORY, POI):
            raise InvalidParams(f"unknown link kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise InvalidParams("link weights must be a 2-D matrix")
        if np.any(m < 0) or np.any(m > 1):
            raise InvalidParams("link weights must lie in [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if not self.target_ids:
            object.__setattr__(self, "target_ids", tuple(range(m.shape[1])))
        if len(self.target_ids) != m.shape[1]:
            raise InvalidParams("one target id per column required")

    @property
    def n_targets(self) -> int:
        return self.matrix.shape[1]

    def weight(self, cell: int, target) -> float:
        return float(self.matrix[cell, self.target_ids.index(target)])

    def target_priors(self, location_probs: np.ndarray) -> np.ndarray:
        """``Pr[target] = sum_l Pr[l] * Pr[l ~> target]`` for every target."""
        return np.asarray(location_probs, dtype=float) @ self.matrix

    def thetas(self, in_set, candidates, delta: float) -> np.ndarray:
        """Per-target theta, the minimum taken over ``candidates`` not in ``in_set``."""
        in_set = set(in_set)
        excluded = [c for c in candidates if c not in in_set]
        return np.array([theta(self.matrix[excluded, j], delta) for j in range(self.n_targets)])


@dataclass
class PrivacyLedger:
    """Per-step parameters for one trajectory or POI target."""

    target_kind: str
    target_id: object
    per_step: list = field(default_factory=list)

    def record(self, params: PrivacyParams) -> None:
        self.per_step.append(params)

    @property
    def cumulative(self) -> ComposedParams:
        return compose(self.per_step)

    def bound(self, prior: float) -> float:
        return self.cumulative.bound(prior)

    def bounds_stream(self, prior: float) -> list[float]:
        """Cumulative bound after each recorded step."""
        return [compose(self.per_step[: k + 1]).bound(prior) for k in range(len(self.per_step))]
