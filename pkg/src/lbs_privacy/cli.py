"""Command-line front end.

Exit codes: 0 success, 2 unreadable or malformed input/output, 3 invalid
parameters. Every subcommand ends its standard output with one
``key=value`` summary line.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

from . import accounting as acc
from .errors import DataError, ParameterError
from .mobility import (
    DEFAULT_MAX_DIST,
    DEFAULT_MAX_GAP,
    DEFAULT_MIN_PTS,
    DEFAULT_MIN_TIME,
    DEFAULT_MIN_VISITS,
    extract_pois,
    filter_rare_venues,
    parse_checkins,
    read_trajectories,
    segment_trajectories,
    write_pois,
    write_trajectories,
)
from .simharness import ExperimentConfig, emit_report, monte_carlo_ldp_audit, run_experiment

EXIT_IO = 2
EXIT_PARAMS = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARAMS, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}") from None
    return a, b


def _points(text: str) -> list[tuple[float, float]]:
    return [_pair(tok) for tok in text.split(";") if tok.strip()]


def _g(v: float) -> str:
    return f"{v:.9g}"


def cmd_ingest(args) -> None:
    parsed = parse_checkins(args.input)
    traces = filter_rare_venues(parsed.traces, args.min_visits)
    if args.origin is None:
        pts = [(p.lat, p.lon) for t in traces for p in t.points]
        origin = (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts)) if pts else (0.0, 0.0)
    else:
        origin = args.origin
    trajectories = []
    for trace in traces:
        trajectories.extend(segment_trajectories(trace, args.max_gap, origin))
    write_trajectories(trajectories, args.out)
    print(f"users={len(traces)} trajectories={len(trajectories)} skipped={parsed.skipped}")


def cmd_extract_pois(args) -> None:
    per_user = defaultdict(list)
    for t in read_trajectories(args.traces):
        per_user[t.user_id].extend(t.points)
    pois = []
    for user in sorted(per_user):
        pts = sorted(per_user[user], key=lambda p: p.timestamp)
        pois.extend(extract_pois(pts, args.min_time, args.max_dist, args.min_pts, first_id=len(pois)))
    write_pois(pois, args.out)
    print(f"pois={len(pois)} users={len(per_user)}")


def cmd_simulate(args) -> None:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.output = ""
    result = run_experiment(cfg)
    emit_report(result.rows, args.out)
    crossing = acc.steps_until_identifiable(r.trajectory_bound_max for r in result.rows)
    print(f"rows={len(result.rows)} steps_until_identifiable={crossing if crossing else 'none'}")


def cmd_audit(args) -> None:
    if not args.epsilon > 0:
        raise ParameterError("epsilon must be positive")
    res = monte_carlo_ldp_audit(args.set, args.epsilon, args.trials, seed=args.seed)
    print(f"max_log_ratio={_g(max(res.max_log_ratio, 0.0))} epsilon={_g(args.epsilon)} bins={res.qualifying_bins}")


def _read_ledger(path, kind: str, target: str) -> list[acc.PrivacyParams]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    steps = []
    with fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"epsilon", "delta", "theta"} <= cols:
            raise DataError(f"{path}: ledger needs epsilon, delta and theta columns")
        for row in reader:
            if "target_kind" in cols and row["target_kind"] != kind:
                continue
            if "target_id" in cols and row["target_id"] != target:
                continue
            try:
                values = float(row["epsilon"]), float(row["delta"]), float(row["theta"])
            except ValueError as exc:
                raise DataError(f"{path}: bad number in row {row}") from exc
            steps.append(acc.PrivacyParams(*values))
    return steps


def cmd_quantify(args) -> None:
    kind, _, target = args.target.partition(":")
    if kind not in (acc.TRAJECTORY, acc.POI) or not target:
        raise ParameterError("--target must look like trajectory:<id> or poi:<id>")
    steps = _read_ledger(args.ledger, kind, target)
    for i, s in enumerate(steps, start=1):
        print(f"step={i} epsilon={_g(s.epsilon)} delta={_g(s.delta)} theta={_g(s.theta)}")
    total = acc.compose(steps)
    print(
        f"epsilon={_g(total.epsilon)} multiplier={_g(total.delta_multiplier)} "
        f"theta={_g(total.theta)} bound={_g(total.bound(args.prior))}"
    )


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lbs-privacy", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="TSV check-ins -> projected, segmented trajectories CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--origin", type=_pair, help="lat,lon of the projection origin (default: data mean)")
    s.add_argument("--out", required=True)
    s.add_argument("--min-visits", type=int, default=DEFAULT_MIN_VISITS)
    s.add_argument("--max-gap", type=float, default=DEFAULT_MAX_GAP, help="seconds")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("extract-pois", help="trajectories CSV -> POI table")
    s.add_argument("--traces", required=True)
    s.add_argument("--min-time", type=float, default=DEFAULT_MIN_TIME, help="seconds")
    s.add_argument("--max-dist", type=float, default=DEFAULT_MAX_DIST, help="meters")
    s.add_argument("--min-pts", type=int, default=DEFAULT_MIN_PTS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract_pois)

    s = sub.add_parser("simulate", help="run an experiment config and write the step report")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("audit", help="Monte-Carlo LDP audit of one obfuscation set")
    s.add_argument("--set", required=True, type=_points, help="'x,y;x,y;...' in meters")
    s.add_argument("--epsilon", required=True, type=float)
    s.add_argument("--trials", type=int, default=10**6)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("quantify", help="compose a per-step (epsilon, delta, theta) ledger")
    s.add_argument("--ledger", required=True)
    s.add_argument("--target", required=True, help="trajectory:<id> or poi:<id>")
    s.add_argument("--prior", type=float, default=1.0, help="prior probability of the target")
    s.set_defaults(func=cmd_quantify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
