"""Deterministic experiment runner, Monte-Carlo LDP audit and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import accounting as acc
from .belief import (
    BeliefState,
    LocationGrid,
    MobilityModel,
    posterior_update,
    propagate_prior,
    restrict_to_set,
)
from .errors import DataError, InsufficientSamples, InvalidParams
from .geometry import PROPER, SEGMENT, PlanarPoint, polygon_area
from .mechanism import ReleaseGeometry, build_delta_set, pim_release, surrogate
from .mobility import poi_link_weights, read_pois, read_trajectories, trajectory_link_weights

log = logging.getLogger(__name__)

FIXED = "fixed"
TARGET_ERROR = "target_error"


def _cell_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").replace(";", " ").split())


@dataclass
class ExperimentConfig:
    """Experiment parameters; every field maps to one ``key = value`` line."""

    seed: int = 0
    steps: int = 12
    grid_rows: int = 10
    grid_cols: int = 10
    cell_size: float = 500.0
    mobility: str = "synthetic"  # synthetic | trace
    stay_prob: float = 0.5
    trace_path: str = ""
    policy: str = TARGET_ERROR  # fixed | target_error
    epsilon: float = 1.0
    delta: float = 0.8
    target_error: float = 1000.0
    epsilon_fallback: float = 1.0
    start_cell: int = -1  # -1: drawn from the seed
    initial_belief: str = "start"  # start | uniform
    destinations: tuple = ()
    pois_path: str = ""
    poi_gap_minutes: float = 30.0
    travel_speed: float = 500.0  # meters per minute
    poi_tau: float = 5.0
    output: str = ""

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidParams("steps must be >= 1")
        if self.policy not in (FIXED, TARGET_ERROR):
            raise InvalidParams(f"policy must be '{FIXED}' or '{TARGET_ERROR}'")
        if self.mobility not in ("synthetic", "trace"):
            raise InvalidParams("mobility must be 'synthetic' or 'trace'")
        if self.initial_belief not in ("start", "uniform"):
            raise InvalidParams("initial_belief must be 'start' or 'uniform'")
        if not 0 < self.delta <= 1:
            raise InvalidParams("delta must be in (0, 1]")
        if self.policy == FIXED and not self.epsilon > 0:
            raise InvalidParams("fixed policy needs epsilon > 0")
        if self.policy == TARGET_ERROR and not self.target_error > 0:
            raise InvalidParams("target_error must be positive")
        if self.grid_rows < 1 or self.grid_cols < 1 or not self.cell_size > 0:
            raise InvalidParams("grid must be non-empty with positive cell size")
        self.destinations = tuple(int(d) for d in self.destinations)
        n = self.grid_rows * self.grid_cols
        if any(not 0 <= d < n for d in self.destinations) or self.start_cell >= n:
            raise InvalidParams("cell id outside the grid")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, base=Path(path).parent)

    @classmethod
    def from_text(cls, text: str, base: Optional[Path] = None) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in types:
                raise InvalidParams(f"line {lineno}: unknown or malformed entry {raw!r}")
            kind = types[key]
            try:
                if key == "destinations":
                    kwargs[key] = _cell_list(value)
                elif kind == "int":
                    kwargs[key] = int(value)
                elif kind == "float":
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = value
            except ValueError as exc:
                raise InvalidParams(f"line {lineno}: bad value for {key}: {value!r}") from exc
        if base is not None:
            for key in ("trace_path", "pois_path"):
                if kwargs.get(key) and not Path(kwargs[key]).is_absolute():
                    kwargs[key] = str(base / kwargs[key])
        return cls(**kwargs)

    def grid(self) -> LocationGrid:
        return LocationGrid.regular(self.grid_rows, self.grid_cols, self.cell_size)


@dataclass
class StepReport:
    timestep: int
    true_cell: int
    set_size: int
    achieved_delta: float
    epsilon: float
    surrogate_used: bool
    degenerate: bool
    z_x: float
    z_y: float
    err: float
    hull_area: float
    error_bound: float
    location_bound_max: float
    location_posterior_max: float
    trajectory_bound_max: float
    trajectory_bounds: tuple = ()
    poi_bound_max: float = float("nan")
    poi_bounds: tuple = ()

    @property
    def location_bound_clipped(self) -> float:
        return min(1.0, self.location_bound_max)

    @property
    def trajectory_bound_clipped(self) -> float:
        return min(1.0, self.trajectory_bound_max)


REPORT_COLUMNS = tuple(f.name for f in fields(StepReport)) + (
    "location_bound_clipped",
    "trajectory_bound_clipped",
)
_INT_COLS = {"timestep", "true_cell", "set_size"}
_BOOL_COLS = {"surrogate_used", "degenerate"}
_LIST_COLS = {"trajectory_bounds", "poi_bounds"}
_DERIVED_COLS = {"location_bound_clipped", "trajectory_bound_clipped"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, tuple):
        return ";".join(_fmt(x) for x in v)
    return f"{float(v):.9g}"


def emit_report(rows: Sequence[StepReport], path=None) -> str:
    """Write rows as CSV (fixed column order, 9 significant digits, LF endings).

    Returns the CSV text; writes it to ``path`` when given.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc
    return text


def read_report(path) -> list[StepReport]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    out = []
    with fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise DataError(f"{path}: unexpected report columns")
        for row in reader:
            kw = {}
            for c in REPORT_COLUMNS:
                if c in _DERIVED_COLS:
                    continue
                v = row[c]
                if c in _INT_COLS:
                    kw[c] = int(v)
                elif c in _BOOL_COLS:
                    kw[c] = v == "1"
                elif c in _LIST_COLS:
                    kw[c] = tuple(float(x) for x in v.split(";")) if v else ()
                else:
                    kw[c] = float(v)
            out.append(StepReport(**kw))
    return out


def generate_synthetic_trace(grid: LocationGrid, model: MobilityModel, steps: int, seed, start: Optional[int] = None) -> list[int]:
    """Markov walk of ``steps`` cells (the start cell is the first entry)."""
    if steps < 1:
        raise InvalidParams("steps must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(grid)
    cell = int(rng.integers(n)) if start is None else int(start)
    trace = [cell]
    cum = np.cumsum(model.transition, axis=1)
    for _ in range(steps - 1):
        nxt = int(np.searchsorted(cum[cell], rng.random(), side="right"))
        cell = min(nxt, n - 1)
        trace.append(cell)
    return trace


def _one_dim_epsilon(geom_points, target_error: float) -> float:
    # 1-D analogue of the error bound: mean |offset| is half_length / eps.
    pts = np.asarray(geom_points, dtype=float)
    diam = max(float(np.hypot(*(pts - p).T).max()) for p in pts)
    return diam / target_error


@dataclass
class ExperimentResult:
    rows: list
    trajectories: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def build_mobility_model(cfg: ExperimentConfig, grid: LocationGrid) -> MobilityModel:
    if cfg.mobility == "synthetic":
        return MobilityModel.lazy_walk(grid, cfg.stay_prob)
    cells = [[grid.cell_of(p.point) for p in t.points] for t in read_trajectories(cfg.trace_path)]
    return MobilityModel.from_traces(cells, len(grid))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Release, infer and account step by step; deterministic in ``cfg.seed``."""
    grid = cfg.grid()
    n = len(grid)
    centers = grid.centers
    model = build_mobility_model(cfg, grid)
    trace_seed, release_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    start = None if cfg.start_cell < 0 else cfg.start_cell
    # the start cell is revealed to the adversary when initial_belief == "start"
    trace = generate_synthetic_trace(grid, model, cfg.steps + 1, trace_seed, start)
    rng = np.random.default_rng(release_seed)

    if cfg.initial_belief == "start":
        belief = BeliefState.point_mass(n, trace[0])
    else:
        belief = BeliefState.uniform(n)

    trajectories, traj_weights = [], None
    ledgers: list[acc.PrivacyLedger] = []
    if cfg.destinations:
        trajectories, traj_weights = trajectory_link_weights(
            grid, grid.center(trace[0]), [grid.center(d) for d in cfg.destinations]
        )
        ledgers = [acc.PrivacyLedger(acc.TRAJECTORY, j) for j in range(traj_weights.n_targets)]
        traj_prior = 1.0 / traj_weights.n_targets
    pois = read_pois(cfg.pois_path) if cfg.pois_path else []

    rows = []
    prev_release = grid.center(trace[0])
    for t in range(1, cfg.steps + 1):
        prior = propagate_prior(belief, model)
        obf = build_delta_set(prior, cfg.delta)
        delta = obf.achieved_delta
        true_cell = trace[t]
        true_loc = grid.center(true_cell)
        loc = surrogate(true_loc, obf, grid)
        set_pts = [grid.center(i) for i in obf.sorted_ids()] + [loc]

        probe = ReleaseGeometry.for_locations(set_pts, 1.0)
        if cfg.policy == FIXED:
            eps = cfg.epsilon
        elif probe.kind == PROPER:
            eps = acc.solve_epsilon_for_error(set_pts, cfg.target_error)
        elif probe.kind == SEGMENT:
            eps = _one_dim_epsilon(set_pts, cfg.target_error)
        else:
            eps = cfg.epsilon_fallback

        rec = pim_release(loc, obf, grid, eps, rng, timestep=t, surrogate_used=loc != true_loc)
        z = np.asarray(rec.z)
        lik = rec.geometry.density(z, centers)
        posterior = posterior_update(restrict_to_set(prior, obf), z, lik)

        in_set = obf.sorted_ids()
        loc_bound = max(acc.location_bound(prior[c], eps, delta) for c in in_set)
        support = prior.support().tolist()

        traj_bounds: tuple = ()
        if traj_weights is not None:
            thetas = traj_weights.thetas(in_set, support, delta)
            for ledger, th in zip(ledgers, thetas):
                ledger.record(acc.PrivacyParams(eps, delta, float(th)))
            traj_bounds = tuple(ledger.bound(traj_prior) for ledger in ledgers)

        poi_bounds: tuple = ()
        if pois:
            gap = cfg.poi_gap_minutes
            travel = np.minimum(np.hypot(*(centers - np.asarray(prev_release)).T) / cfg.travel_speed, gap)
            w = poi_link_weights(pois, gap, travel, cfg.poi_tau)
            p_prior = w.target_priors(prior.probs)
            thetas = w.thetas(in_set, support, delta)
            poi_bounds = tuple(
                acc.target_bound(float(min(1.0, pp)), acc.PrivacyParams(eps, delta, float(th)))
                for pp, th in zip(p_prior, thetas)
            )

        rows.append(
            StepReport(
                timestep=t,
                true_cell=true_cell,
                set_size=len(obf),
                achieved_delta=delta,
                epsilon=eps,
                surrogate_used=rec.surrogate_used,
                degenerate=rec.degenerate,
                z_x=float(z[0]),
                z_y=float(z[1]),
                err=float(np.hypot(*(z - np.asarray(true_loc)))),
                hull_area=polygon_area(rec.hull),
                error_bound=acc.error_lower_bound(set_pts, eps).meters,
                location_bound_max=loc_bound,
                location_posterior_max=float(posterior.probs[in_set].max()),
                trajectory_bound_max=max(traj_bounds) if traj_bounds else float("nan"),
                trajectory_bounds=traj_bounds,
                poi_bound_max=max(poi_bounds) if poi_bounds else float("nan"),
                poi_bounds=poi_bounds,
            )
        )
        belief = posterior
        prev_release = rec.z

    if cfg.output:
        emit_report(rows, cfg.output)
    return ExperimentResult(rows, trajectories, trace)


class AuditResult(NamedTuple):
    max_log_ratio: float
    qualifying_bins: int
    pairs: int


def _bin_counts(samples: np.ndarray, edges: Sequence[np.ndarray]) -> np.ndarray:
    # Interior edges only: the outermost bins are unbounded.
    nb = [len(e) + 1 for e in edges]
    flat = np.zeros(len(samples), dtype=np.int64)
    for axis, e in enumerate(edges):
        flat = flat * nb[axis] + np.searchsorted(e, samples[:, axis], side="right")
    return np.bincount(flat, minlength=int(np.prod(nb)))


def monte_carlo_ldp_audit(
    locations: Sequence,
    epsilon: float,
    trials: int = 10**6,
    seed=0,
    nbins: int = 10,
    min_hits: int = 1000,
    shards: int = 4,
    pilot: int = 20000,
) -> AuditResult:
    """Empirical max log-ratio of output-bin frequencies between candidate pairs.

    Every candidate's release is simulated ``trials`` times under the same
    body. The output plane is cut into ``nbins`` x ``nbins`` cells whose
    edges are per-axis quantiles of a separately seeded pilot sample pooled
    over candidates, so bins hold comparable mass. Bins with at least
    ``min_hits`` hits under both candidates of a pair qualify. Collinear sets
    are audited along their line. Trials run in ``shards`` independently
    seeded chunks whose counts are summed, so the result does not depend on
    how shards are scheduled.
    """
    if trials < 10**5:
        raise InvalidParams("trials must be >= 1e5")
    pts = np.unique(np.asarray(locations, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) == 1:
        return AuditResult(0.0, 0, 0)
    geom = ReleaseGeometry.for_locations([tuple(p) for p in pts], epsilon)
    project = None if geom.kind == PROPER else geom.direction[:, None]

    def draw(p, rng, size):
        s = geom.sample(p, rng, size)
        return s if project is None else s @ project

    pilot_seq, *seqs = np.random.SeedSequence(seed).spawn(1 + len(pts) * shards)
    pilot_rng = np.random.default_rng(pilot_seq)
    pooled = np.concatenate([draw(p, pilot_rng, pilot) for p in pts])
    qs = np.linspace(0.0, 1.0, nbins + 1)[1:-1]
    edges = [np.unique(np.quantile(pooled[:, a], qs)) for a in range(pooled.shape[1])]

    sizes = [trials // shards + (1 if k < trials % shards else 0) for k in range(shards)]
    counts = []
    for i, p in enumerate(pts):
        c = 0
        for k in range(shards):
            c = c + _bin_counts(draw(p, np.random.default_rng(seqs[i * shards + k]), sizes[k]), edges)
        counts.append(c)

    best = -math.inf
    qualifying = 0
    pairs = 0
    for i in range(len(pts)):
        for j in range(len(pts)):
            if i == j:
                continue
            pairs += 1
            ok = (counts[i] >= min_hits) & (counts[j] >= min_hits)
            if not ok.any():
                continue
            qualifying += int(ok.sum())
            best = max(best, float(np.log(counts[i][ok] / counts[j][ok]).max()))
    if qualifying == 0:
        raise InsufficientSamples("no output bin reached the hit threshold for any pair")
    return AuditResult(best, qualifying, pairs)


def analytic_max_log_ratio(locations: Sequence, epsilon: float, resolution: int = 200, margin: float = 3.0) -> float:
    """Max over a ``resolution``-square z-grid of log density ratios between candidates."""
    pts = np.unique(np.asarray(locations, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) == 1:
        return 0.0
    geom = ReleaseGeometry.for_locations([tuple(p) for p in pts], epsilon)
    if geom.kind != PROPER:
        raise InvalidParams("analytic audit needs a proper body")
    extent = np.abs(geom.hull.array).max()
    c = pts.mean(axis=0)
    ax = np.linspace(-margin * extent, margin * extent, resolution)
    zz = np.stack(np.meshgrid(ax + c[0], ax + c[1]), axis=-1).reshape(-1, 2)
    logs = np.stack([geom.log_density(zz, p) for p in pts])
    return float((logs.max(axis=0) - logs.min(axis=0)).max())
