"""Command-line harness.

Subcommands: ``run`` executes an experiment config, ``report`` renders
comparison tables from result records, ``list-presets`` names the built-in
domains, and ``verify`` runs the exactness and estimator verification
suites. Exit code is 0 on success; failures print one machine-readable
JSON error line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checks import run_verification_suite
from .domains import list_presets
from .experiment import (
    ResultRecord,
    apply_overrides,
    emit_report,
    load_config,
    run_experiment,
)
from .search import SearchTrace


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exomdp",
        description="Mask learning for MDPs with exogenous state variables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config", help="YAML experiment config")
    run.add_argument("--algorithm", help="override the configured algorithm")
    run.add_argument("--lam", type=float, help="override the mask cost weight")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--master-seed", type=int, help="override the master seed")
    run.add_argument("--workers", type=int, help="override the worker count")
    run.add_argument("--out", help="override the output directory")
    run.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (dotted keys reach nested fields)",
    )

    report = sub.add_parser("report", help="render a comparison table")
    report.add_argument("records", nargs="+", help="results.json files")
    report.add_argument(
        "--format",
        choices=("csv", "json", "markdown-table"),
        default="markdown-table",
    )
    report.add_argument("--out", help="write the table (and curve data) here")

    sub.add_parser("list-presets", help="list built-in domain presets")

    verify = sub.add_parser("verify", help="run the verification suites")
    verify.add_argument("--quick", action="store_true", help="smaller budgets")
    verify.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    direct = {
        "algorithm": args.algorithm,
        "lam": args.lam,
        "n_trials": args.trials,
        "master_seed": args.master_seed,
        "workers": args.workers,
        "out_dir": args.out,
    }
    assignments = list(args.assignments)
    assignments += [f"{k}={v}" for k, v in direct.items() if v is not None]
    if assignments:
        cfg = apply_overrides(cfg, assignments)
    record = run_experiment(cfg)
    agg = record.aggregates()
    print(f"wrote {Path(cfg.out_dir) / 'results.json'}")
    print(
        f"{cfg.algorithm} on {cfg.domain}: "
        f"mean return {agg['mean_return']}, modal mask {agg['modal_mask']}, "
        f"{agg['n_failed']} failed trials"
    )
    return 0


def _cmd_report(args) -> int:
    import dataclasses

    records = []
    traces = []
    for path in args.records:
        path = Path(path)
        record = ResultRecord.from_json(path.read_text())
        timing_path = path.parent / "timing.json"
        if timing_path.exists():  # wall times live outside the canonical record
            per_trial = json.loads(timing_path.read_text()).get("per_trial", {})
            record.trials = [
                dataclasses.replace(t, wall_time=per_trial.get(str(t.trial), 0.0))
                for t in record.trials
            ]
        records.append(record)
        trace_dir = path.parent / "traces"
        if trace_dir.is_dir():
            for trace_file in sorted(trace_dir.glob("*.jsonl")):
                traces.append(SearchTrace.from_jsonl(trace_file.read_text()))
    text = emit_report(records, args.format, args.out, traces or None)
    if args.out is None:
        print(text, end="")
    else:
        print(f"wrote {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "list-presets":
            for name in list_presets():
                print(name)
            return 0
        if args.command == "verify":
            results = run_verification_suite(quick=args.quick, seed=args.seed)
            return 0 if all(r.passed for r in results) else 1
        raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(
            json.dumps(
                {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True
            ),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
