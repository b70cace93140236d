"""Leaderboards and human-readable reports from raw measurement rows."""

from __future__ import annotations

import csv
import io
import json

from . import metrics
from .metrics import MissingAxis, ranking_weights


def collect_values(rows) -> dict:
    """sid -> {metric: value} over test and fixture rows."""
    values: dict = {}
    for r in rows:
        if r.phase in ("test", "fixture"):
            values.setdefault(r.sid, {})[r.metric] = r.v
    return values


def build_leaderboards(rows, scenarios, repo=None) -> dict:
    """One leaderboard per ranking module seen in the scenario set."""
    values = collect_values(rows)
    by_ranking: dict = {}
    for s in scenarios:
        by_ranking.setdefault(s.ranking["name"], []).append(s)
    boards = []
    for name in sorted(by_ranking):
        group = by_ranking[name]
        mode = group[0].ranking.get("mode", "total")
        weights, directions = ranking_weights(group[0].ranking.get("meta", {}))
        # Every scenario in the group lands in entries or excluded, even one
        # that produced no rows at all.
        board_values = {s.sid: values.get(s.sid, {}) for s in group}
        if mode == "partial":
            strata, excluded = metrics.rank_partial(
                board_values, directions, sorted(weights) or None
            )
            boards.append(
                {
                    "ranking": name,
                    "mode": "partial",
                    "strata": strata,
                    "excluded": [
                        {"sid": sid, "reason": reason} for sid, reason in excluded
                    ],
                }
            )
        else:
            ranked, excluded = metrics.rank_total(board_values, weights, directions)
            boards.append(
                {
                    "ranking": name,
                    "mode": "total",
                    "entries": [
                        {"sid": sid, "score": round(score, 12)}
                        for sid, score in ranked
                    ],
                    "excluded": [
                        {"sid": sid, "reason": reason} for sid, reason in excluded
                    ],
                }
            )
    return {"v": 1, "leaderboards": boards}


def work_precision_curves(rows, scenarios) -> dict:
    groups = {
        s.sid: f"{s.names['problem']}/{s.names['model']}" for s in scenarios
    }
    try:
        curves = metrics.combine_work_precision(rows, groups)
    except MissingAxis:
        return {}
    # A single point is a dot, not a curve; keep groups that trace a line.
    return {g: pts for g, pts in curves.items() if len(pts) >= 2}


def render_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(metrics.RESULT_KEYS)
    for r in rows:
        writer.writerow([r.sid, r.phase, r.it, r.metric, r.v, r.wall_ms, r.seed])
    return buf.getvalue()


def render_markdown(rows, scenarios, leaderboards: dict, failures=()) -> str:
    names = {s.sid: s.names for s in scenarios}
    out = ["# Benchmark report", ""]
    out.append(f"Scenarios: {len(scenarios)}; measurement rows: {len(rows)}.")
    out.append("")

    for board in leaderboards.get("leaderboards", []):
        out.append(f"## Leaderboard: {board['ranking']}")
        out.append("")
        if board["mode"] == "total":
            out.append("| rank | scenario | problem | model | score |")
            out.append("|-----:|----------|---------|-------|------:|")
            for i, entry in enumerate(board["entries"], start=1):
                n = names.get(entry["sid"], {})
                out.append(
                    f"| {i} | `{entry['sid']}` | {n.get('problem', '?')} "
                    f"| {n.get('model', '?')} | {entry['score']:.6f} |"
                )
        else:
            for depth, stratum in enumerate(board["strata"]):
                out.append(f"- stratum {depth}: " + ", ".join(f"`{s}`" for s in stratum))
        if board.get("excluded"):
            out.append("")
            out.append(
                f"Excluded: {len(board['excluded'])} scenario(s) missing a weighted metric."
            )
        out.append("")

    curves = work_precision_curves(rows, scenarios)
    if curves:
        out.append("## Work vs precision")
        out.append("")
        for group in sorted(curves):
            out.append(f"### {group}")
            out.append("")
            out.append("| work (ms) | precision (loss) | scenario |")
            out.append("|----------:|-----------------:|----------|")
            for p in curves[group]:
                out.append(
                    f"| {p['work']} | {p['precision']:.6g} | `{p['sid']}` |"
                )
            out.append("")

    if failures:
        out.append("## Failures")
        out.append("")
        for sid, reason in failures:
            out.append(f"- `{sid}`: {reason}")
        out.append("")
    return "\n".join(out).rstrip() + "\n"


def write_report(rows, scenarios, out_md, out_csv, leaderboard_path, failures=()) -> dict:
    boards = build_leaderboards(rows, scenarios)
    with open(leaderboard_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(boards, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_md, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_markdown(rows, scenarios, boards, failures))
    with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_csv(rows))
    return boards
