"""Command-line front end.

Commands mirror the pipeline stages: scan parses a module tree, plan joins
and prunes it, run executes the surviving scenarios, rank and report turn raw
rows into leaderboards and documents.  Every stage recomputes its inputs from
the repository deterministically, so chaining commands never needs hidden
state beyond the artifact files themselves.

Exit codes: 0 success, 1 pipeline failure, 2 bad usage.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import sys
from pathlib import Path

from . import metrics, orchestrator, planner, report, repo as repo_mod, runner
from .evalrun import KIND_ORDER
from .sail_ast import ModuleKind

USAGE_ERROR = 2
PIPELINE_ERROR = 1


class UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return USAGE_ERROR
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {e}", file=sys.stderr)
        return PIPELINE_ERROR


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sailbench",
        description="Scan, plan, run, rank, and report benchmark scenarios.",
    )
    p.set_defaults(command=None)
    sub = p.add_subparsers(dest="command")

    def common(sp, results=False):
        sp.add_argument("repo", help="directory of .sail modules")
        sp.add_argument("-o", dest="out", metavar="FILE", default=None,
                        help="output artifact path")
        sp.add_argument("--filter", action="append", default=[],
                        metavar="kind=glob",
                        help="restrict modules of a kind to names matching glob")
        sp.add_argument("--max-chain", type=int, default=3, metavar="N",
                        help="converter chain length limit")
        if results:
            sp.add_argument("--results", required=True, metavar="FILE",
                            help="results.jsonl produced by run")

    sp = sub.add_parser("scan", help="parse modules and write the repo index")
    sp.add_argument("repo")
    sp.add_argument("-o", dest="out", metavar="FILE", default=None)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("plan", help="discover, prune, and schedule scenarios")
    common(sp)
    sp.add_argument("--jobs", type=int, default=2, metavar="N")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("run", help="execute the pruned plan")
    common(sp)
    sp.add_argument("--seed", type=int, default=0, metavar="N")
    sp.add_argument("--jobs", type=int, default=2, metavar="N")
    sp.add_argument("--mode", choices=("native", "simulated"),
                    default="simulated")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("rank", help="build leaderboards from results")
    common(sp, results=True)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("report", help="render markdown and csv reports")
    common(sp, results=True)
    sp.set_defaults(func=cmd_report)
    return p


def _parse_filters(specs: list) -> list:
    kinds = {k.value for k in ModuleKind}
    out = []
    for spec in specs:
        if "=" not in spec:
            raise UsageError(f"--filter needs kind=glob, got {spec!r}")
        kind, glob = spec.split("=", 1)
        if kind not in kinds:
            raise UsageError(f"unknown module kind {kind!r} in --filter")
        out.append((kind, glob))
    return out


def _scan(args) -> "repo_mod.Repo":
    return repo_mod.scan(args.repo)


def _filtered_plan(args) -> tuple:
    repo = _scan(args)
    filters = _parse_filters(args.filter)
    if filters:
        keep = []
        for rec in repo.records:
            drop = any(
                rec.kind.value == kind and not fnmatch.fnmatch(rec.name, glob)
                for kind, glob in filters
            )
            if not drop:
                keep.append(rec)
        repo.records = keep
    plan = planner.plan(repo, max_chain=args.max_chain)
    return repo, plan


def cmd_scan(args) -> int:
    repo = _scan(args)
    out = Path(args.out or "repo.json")
    repo_mod.save_index(repo, out)
    print(f"{len(repo.records)} modules -> {out}")
    return 0


def cmd_plan(args) -> int:
    repo, plan = _filtered_plan(args)
    pruned = orchestrator.prune(plan.scenarios)
    sched = orchestrator.schedule(pruned.kept, repo, jobs=args.jobs)
    out = Path(args.out or "plan.json")
    payload = plan.to_dict()
    payload["prune"] = pruned.to_dict()
    _write_json(out, payload)
    _write_json(out.parent / "schedule.json", sched.to_dict())
    print(
        f"{plan.tuple_count} tuples, {len(plan.scenarios)} scenarios, "
        f"{len(pruned.kept)} kept -> {out}"
    )
    return 0


def cmd_run(args) -> int:
    repo, plan = _filtered_plan(args)
    pruned = orchestrator.prune(plan.scenarios)
    sched = orchestrator.schedule(pruned.kept, repo, jobs=args.jobs)
    out = Path(args.out or "results.jsonl")
    payload = plan.to_dict()
    payload["prune"] = pruned.to_dict()
    _write_json(out.parent / "plan.json", payload)
    _write_json(out.parent / "schedule.json", sched.to_dict())
    outcome = runner.run_scenarios(
        pruned.kept, repo, args.seed, mode=args.mode, jobs=args.jobs
    )
    metrics.write_results(out, outcome.records)
    for sid, reason in outcome.failures:
        print(f"failed {sid}: {reason}", file=sys.stderr)
    print(
        f"{len(pruned.kept)} scenarios, {len(outcome.records)} rows -> {out}"
    )
    return 0 if not outcome.failures else PIPELINE_ERROR


def cmd_rank(args) -> int:
    repo, plan = _filtered_plan(args)
    kept = orchestrator.prune(plan.scenarios).kept
    rows = metrics.read_results(args.results)
    boards = report.build_leaderboards(rows, kept)
    out = Path(args.out or "leaderboard.json")
    _write_json(out, boards)
    print(f"{len(boards['leaderboards'])} leaderboards -> {out}")
    return 0


def cmd_report(args) -> int:
    repo, plan = _filtered_plan(args)
    kept = orchestrator.prune(plan.scenarios).kept
    rows = metrics.read_results(args.results)
    out = Path(args.out or "report.md")
    csv_path = out.with_suffix(".csv")
    board_path = out.parent / "leaderboard.json"
    report.write_report(rows, kept, out, csv_path, board_path)
    print(f"report -> {out}, {csv_path}, {board_path}")
    return 0


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    sys.exit(main())
