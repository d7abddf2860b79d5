"""Command-line front end: validate, build-db, run, eval.

Exit code 0 on success; on failure a single machine-parseable line
``error: <message>`` goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics, simcore
from .localization import DatabaseError
from .scene import SceneError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _build_parser() -> _Parser:
    parser = _Parser(prog="isactwin", description="Indoor ISAC digital-twin simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("scenario")

    p_db = sub.add_parser("build-db", help="build the fingerprint database of a scenario")
    p_db.add_argument("scenario")
    p_db.add_argument("--out", help="database output path override")

    p_run = sub.add_parser("run", help="run a scenario and record the trace")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, help="RNG seed override")
    p_run.add_argument("--max-steps", type=int, help="step-count override")
    p_run.add_argument("--out", help="trace CSV path override")

    p_eval = sub.add_parser("eval", help="summarize a recorded trace CSV")
    p_eval.add_argument("trace")
    p_eval.add_argument("--out", help="write the JSON summary to this path")

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except (simcore.ConfigError, SceneError, DatabaseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "validate":
        config = simcore.ScenarioConfig.from_file(args.scenario)
        problems = simcore.validate_scenario(config)
        if problems:
            print(f"error: {problems[0]}" if len(problems) == 1 else
                  "error: " + "; ".join(problems), file=sys.stderr)
            return 1
        print(f"ok: {args.scenario}")
        return 0

    if args.command == "build-db":
        config = simcore.ScenarioConfig.from_file(args.scenario)
        db, path = simcore.build_db_for_scenario(config, out=args.out)
        where = path if path is not None else "(not persisted: no db path configured)"
        print(f"built fingerprint database: {len(db.positions)} points x {len(db.ap_ids)} APs -> {where}")
        return 0

    if args.command == "run":
        config = simcore.ScenarioConfig.from_file(args.scenario)
        if args.seed is not None:
            config.seed = args.seed
        if args.max_steps is not None:
            config.max_steps = args.max_steps
        trace_path = Path(args.out) if args.out else config.trace_csv
        records = simcore.run_simulation(config, trace_path=trace_path)
        summary = metrics.summarize_run(records)
        print(f"ran {len(records)} steps -> {trace_path}")
        print(summary.format_table())
        return 0

    if args.command == "eval":
        records = simcore.read_trace_csv(args.trace)
        summary = metrics.summarize_run(records)
        print(summary.format_table())
        doc = json.dumps(summary.to_dict(), sort_keys=True)
        if args.out:
            Path(args.out).write_text(doc + "\n")
        else:
            print(doc)
        return 0

    raise ValueError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
