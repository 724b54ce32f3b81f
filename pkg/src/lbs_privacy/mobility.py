"""Check-in ingestion, projection, trajectory segmentation and POI extraction."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .accounting import POI, TRAJECTORY, LinkWeights
from .belief import LocationGrid
from .errors import (
    DataError,
    EmptyInput,
    FormatError,
    InvalidParams,
    InvalidTiming,
    OutOfRange,
    UnreachableDestination,
)
from .geometry import PlanarPoint

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0
DEFAULT_MAX_GAP = 3600.0
DEFAULT_MIN_TIME = 2700.0
DEFAULT_MAX_DIST = 250.0
DEFAULT_MIN_PTS = 2
DEFAULT_MIN_VISITS = 10
POI_TAU_MINUTES = 5.0
CLUSTER_RADIUS_FACTOR = 0.75

FOURSQUARE_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"


class Checkin(NamedTuple):
    timestamp: float
    lat: float
    lon: float
    venue_id: Optional[str] = None


@dataclass
class CheckinTrace:
    user_id: str
    points: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.points, self.points[1:]):
            if not b.timestamp > a.timestamp:
                raise ValueError(f"timestamps of user {self.user_id} are not strictly increasing")
        for p in self.points:
            _check_latlon(p.lat, p.lon)


class TimedPoint(NamedTuple):
    timestamp: float
    point: PlanarPoint


@dataclass
class Trajectory:
    user_id: str
    points: list
    trajectory_id: int = 0
    venue_ids: list = field(default_factory=list)

    @property
    def singleton(self) -> bool:
        return len(self.points) == 1

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PoiRecord:
    poi_id: int
    center: PlanarPoint
    mean_dwell: float  # minutes
    visit_count: int

    def __post_init__(self):
        if not self.mean_dwell > 0:
            raise ValueError("mean dwell must be positive")
        if self.visit_count < 1:
            raise ValueError("a POI needs at least one visit")


def _check_latlon(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise OutOfRange(f"lat/lon ({lat}, {lon}) out of range")


def parse_time(text: str) -> float:
    """Seconds UTC from epoch seconds, the Foursquare dump format or ISO 8601."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return datetime.strptime(text, FOURSQUARE_TIME_FORMAT).timestamp()
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return dt.timestamp()


class ParsedCheckins(NamedTuple):
    traces: list
    skipped: int
    rows: int


def parse_checkins(path) -> ParsedCheckins:
    """Read a header-less TSV of check-ins into time-sorted per-user traces.

    Columns: user_id, venue_id, category, lat, lon, tz_offset_minutes, utc_time.
    Malformed rows and repeated timestamps are skipped and counted.
    """
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    by_user: dict[str, list[Checkin]] = defaultdict(list)
    rows = skipped = 0
    with fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or not any(cell.strip() for cell in row):
                continue
            rows += 1
            try:
                if len(row) != 7:
                    raise ValueError(f"expected 7 columns, got {len(row)}")
                user, venue, _category, lat, lon, _tz, utc = row
                lat_f, lon_f = float(lat), float(lon)
                _check_latlon(lat_f, lon_f)
                by_user[user.strip()].append(Checkin(parse_time(utc), lat_f, lon_f, venue.strip() or None))
            except (ValueError, OutOfRange):
                skipped += 1

    if rows and skipped > rows / 2:
        raise FormatError(f"{skipped} of {rows} rows in {path} are unparseable")

    traces = []
    for user in sorted(by_user):
        pts = sorted(by_user[user], key=lambda c: c.timestamp)
        kept = [pts[0]]
        for c in pts[1:]:
            if c.timestamp > kept[-1].timestamp:
                kept.append(c)
            else:
                skipped += 1
        traces.append(CheckinTrace(user, kept))
    if skipped:
        log.info("skipped %d of %d check-in rows", skipped, rows)
    return ParsedCheckins(traces, skipped, rows)


def filter_rare_venues(traces: Sequence[CheckinTrace], min_visits: int = DEFAULT_MIN_VISITS) -> list:
    """Drop check-ins at venues visited fewer than ``min_visits`` times overall."""
    counts = Counter(p.venue_id for t in traces for p in t.points)
    out = []
    for t in traces:
        pts = [p for p in t.points if counts[p.venue_id] >= min_visits]
        if pts:
            out.append(CheckinTrace(t.user_id, pts))
    return out


def project(lat: float, lon: float, reference: tuple) -> PlanarPoint:
    """Equirectangular projection around ``reference = (lat0, lon0)``."""
    _check_latlon(lat, lon)
    lat0, lon0 = reference
    _check_latlon(lat0, lon0)
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return PlanarPoint(x, y)


def unproject(p, reference: tuple) -> tuple[float, float]:
    lat0, lon0 = reference
    lat = lat0 + math.degrees(p[1] / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(p[0] / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def segment_trajectories(
    trace: CheckinTrace,
    max_gap: float = DEFAULT_MAX_GAP,
    reference: Optional[tuple] = None,
) -> list[Trajectory]:
    """Split a trace wherever consecutive check-ins are more than ``max_gap`` seconds apart.

    Points are projected around ``reference`` (default: the trace's first
    point). Singleton segments are kept; ``Trajectory.singleton`` flags them.
    """
    if not trace.points:
        return []
    if reference is None:
        reference = (trace.points[0].lat, trace.points[0].lon)
    out: list[Trajectory] = []
    current: list[Checkin] = []
    for c in trace.points:
        if current and c.timestamp - current[-1].timestamp > max_gap:
            out.append(_as_trajectory(trace.user_id, current, len(out), reference))
            current = []
        current.append(c)
    out.append(_as_trajectory(trace.user_id, current, len(out), reference))
    return out


def _as_trajectory(user, checkins, tid, reference) -> Trajectory:
    pts = [TimedPoint(c.timestamp, project(c.lat, c.lon, reference)) for c in checkins]
    return Trajectory(user, pts, tid, [c.venue_id for c in checkins])


def _elapsed(window) -> float:
    return window[-1].timestamp - window[0].timestamp if window else 0.0


def _centroid(pts: Iterable) -> PlanarPoint:
    arr = np.asarray(list(pts), dtype=float)
    x, y = arr.mean(axis=0)
    return PlanarPoint(float(x), float(y))


class Stay(NamedTuple):
    center: PlanarPoint
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def detect_stays(points: Sequence[TimedPoint], min_time: float, max_dist: float) -> list[Stay]:
    """First phase of POI extraction: sliding-window stay detection.

    The window test compares the incoming point against every point already
    in the window (not the window's full diameter).
    """
    stays: list[Stay] = []
    window: deque = deque()
    i = 0
    while i < len(points):
        p = points[i].point
        reach = max((p.distance(q.point) for q in window), default=0.0)
        if reach <= max_dist:
            window.append(points[i])
            i += 1
        elif _elapsed(window) >= min_time:
            stays.append(Stay(_centroid(q.point for q in window), window[0].timestamp, window[-1].timestamp))
            window.clear()
        else:
            window.popleft()
    if window and _elapsed(window) >= min_time:
        stays.append(Stay(_centroid(q.point for q in window), window[0].timestamp, window[-1].timestamp))
    return stays


def cluster_stays(stays: Sequence[Stay], max_dist: float, min_pts: int) -> list[frozenset]:
    """Second phase: merge overlapping stay neighborhoods into clusters of stay indices."""
    radius = max_dist * CLUSTER_RADIUS_FACTOR
    clusters: list[frozenset] = []
    for stay in stays:
        hood = frozenset(j for j, s in enumerate(stays) if s.center.distance(stay.center) <= radius)
        if len(hood) < min_pts:
            continue
        for cluster in list(clusters):
            if hood & cluster:
                hood = hood | cluster
                clusters.remove(cluster)
        clusters.append(hood)
    return clusters


def extract_pois(
    points: Sequence[TimedPoint],
    min_time: float = DEFAULT_MIN_TIME,
    max_dist: float = DEFAULT_MAX_DIST,
    min_pts: int = DEFAULT_MIN_PTS,
    first_id: int = 0,
) -> list[PoiRecord]:
    """Stay detection followed by stay clustering; one POI per cluster."""
    if not points:
        raise EmptyInput("no points to extract POIs from")
    if not (min_time > 0 and max_dist > 0 and min_pts >= 1):
        raise InvalidParams("need min_time > 0, max_dist > 0, min_pts >= 1")
    points = [p if isinstance(p, TimedPoint) else TimedPoint(float(p[0]), PlanarPoint(*map(float, p[1]))) for p in points]
    stays = detect_stays(points, min_time, max_dist)
    pois = []
    for k, cluster in enumerate(cluster_stays(stays, max_dist, min_pts)):
        members = [stays[j] for j in sorted(cluster)]
        dwell = float(np.mean([s.duration for s in members])) / 60.0
        pois.append(PoiRecord(first_id + k, _centroid(s.center for s in members), dwell, len(members)))
    return pois


def poi_link_weights(
    pois: Sequence[PoiRecord],
    gap: float,
    travel_time,
    tau: float = POI_TAU_MINUTES,
) -> LinkWeights:
    """Which POI fits the time left over between two releases.

    The residual ``gap - travel_time`` (minutes) is compared to each POI's mean
    dwell with the kernel ``exp(-|residual - dwell| / tau)``, normalized over
    POIs. ``travel_time`` may be a scalar or one value per candidate cell;
    the result has one row per value.
    """
    if not pois:
        raise EmptyInput("no POIs")
    travel = np.atleast_1d(np.asarray(travel_time, dtype=float))
    if np.any(travel < 0) or np.any(travel > gap):
        raise InvalidTiming(f"need gap >= travel_time >= 0 (gap={gap})")
    if not tau > 0:
        raise InvalidParams("tau must be positive")
    dwell = np.array([p.mean_dwell for p in pois])
    miss = np.abs((gap - travel)[:, None] - dwell[None, :]) / tau
    w = np.exp(-(miss - miss.min(axis=1, keepdims=True)))
    total = w.sum(axis=1, keepdims=True)
    w = np.where(total > 0, w / np.where(total > 0, total, 1.0), 1.0 / len(pois))
    return LinkWeights(POI, w, tuple(p.poi_id for p in pois))


def grid_shortest_path(grid: LocationGrid, start: int, goal: int, blocked=frozenset()) -> list[int]:
    """Unit-cost 4-neighbor shortest path; neighbors expanded in ascending id."""
    if start in blocked or goal in blocked:
        raise UnreachableDestination(f"cell {goal} unreachable from {start}")
    prev = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            break
        for nb in grid.neighbors(cell):
            if nb not in prev and nb not in blocked:
                prev[nb] = cell
                queue.append(nb)
    if goal not in prev:
        raise UnreachableDestination(f"cell {goal} unreachable from {start}")
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def trajectory_link_weights(
    grid: LocationGrid,
    start,
    destinations: Sequence,
    blocked=frozenset(),
) -> tuple[list[list[int]], LinkWeights]:
    """Candidate trajectories from ``start`` and the on-path link weights.

    A cell on k candidate trajectories links to each with weight 1/k.
    """
    if not destinations:
        raise EmptyInput("no destinations")
    s = grid.cell_of(start)
    paths = [grid_shortest_path(grid, s, grid.cell_of(d), blocked) for d in destinations]
    m = np.zeros((len(grid), len(paths)))
    for j, path in enumerate(paths):
        m[path, j] = 1.0
    hits = m.sum(axis=1, keepdims=True)
    m = np.divide(m, hits, out=np.zeros_like(m), where=hits > 0)
    return paths, LinkWeights(TRAJECTORY, m)


TRAJECTORY_COLUMNS = ("user_id", "trajectory_id", "timestamp", "x", "y", "venue_id")
POI_COLUMNS = ("poi_id", "x", "y", "mean_dwell_min", "visit_count")


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_trajectories(trajectories: Sequence[Trajectory], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t in trajectories:
            venues = t.venue_ids or [None] * len(t.points)
            for p, v in zip(t.points, venues):
                w.writerow([t.user_id, t.trajectory_id, _fmt(p.timestamp), _fmt(p.point.x), _fmt(p.point.y), v or ""])


def read_trajectories(path) -> list[Trajectory]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    groups: dict[tuple, Trajectory] = {}
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != TRAJECTORY_COLUMNS:
            raise FormatError(f"{path}: expected columns {','.join(TRAJECTORY_COLUMNS)}")
        for row in reader:
            key = (row["user_id"], int(row["trajectory_id"]))
            t = groups.setdefault(key, Trajectory(key[0], [], key[1], []))
            t.points.append(TimedPoint(float(row["timestamp"]), PlanarPoint(float(row["x"]), float(row["y"]))))
            t.venue_ids.append(row["venue_id"] or None)
    return list(groups.values())


def write_pois(pois: Sequence[PoiRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POI_COLUMNS)
        for p in pois:
            w.writerow([p.poi_id, _fmt(p.center.x), _fmt(p.center.y), _fmt(p.mean_dwell), p.visit_count])


def read_pois(path) -> list[PoiRecord]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != POI_COLUMNS:
            raise FormatError(f"{path}: expected columns {','.join(POI_COLUMNS)}")
        return [
            PoiRecord(
                int(r["poi_id"]),
                PlanarPoint(float(r["x"]), float(r["y"])),
                float(r["mean_dwell_min"]),
                int(r["visit_count"]),
            )
            for r in reader
        ]


def synthetic_stay_trace(
    rng: np.random.Generator,
    centers: Sequence,
    stay_minutes: float = 60.0,
    jitter: float = 40.0,
    speed: float = 300.0,
    sample_every: float = 60.0,
    t0: float = 0.0,
) -> list[TimedPoint]:
    """Timed points that travel in straight lines between planted stays.

    While staying, points are uniform in a disk of radius ``jitter`` around the
    center (so the stay's diameter is at most ``2 * jitter``); travel moves at
    ``speed`` meters per minute with one point per ``sample_every`` seconds.
    """
    pts: list[TimedPoint] = []
    t = t0
    step_m = speed * sample_every / 60.0
    pos = np.asarray(centers[0], dtype=float) + np.array([-5 * step_m, 0.0])
    for c in centers:
        c = np.asarray(c, dtype=float)
        # travel leg
        dist = float(np.hypot(*(c - pos)))
        n = max(1, int(math.ceil(dist / step_m)))
        for k in range(1, n):
            q = pos + (c - pos) * k / n
            pts.append(TimedPoint(t, PlanarPoint(float(q[0]), float(q[1]))))
            t += sample_every
        # stay
        n_stay = int(stay_minutes * 60.0 / sample_every) + 1
        for _ in range(n_stay):
            r = jitter * math.sqrt(rng.random())
            a = 2 * math.pi * rng.random()
            pts.append(TimedPoint(t, PlanarPoint(float(c[0] + r * math.cos(a)), float(c[1] + r * math.sin(a)))))
            t += sample_every
        pos = c
    # leave the last stay
    exit_dir = np.array([1.0, 0.0])
    for k in range(1, 6):
        q = pos + exit_dir * step_m * k
        pts.append(TimedPoint(t, PlanarPoint(float(q[0]), float(q[1]))))
        t += sample_every
    return pts
