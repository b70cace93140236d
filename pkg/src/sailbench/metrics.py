"""Measurements, metric builtins, work-precision joins, and rankings.

Result rows are append-only JSON lines with a fixed key order, so two runs
agree byte-for-byte exactly when they measured the same things.  Metrics are
tiny stateful folds over loss streams; a metric that saw no values yields
None and the pod simply writes no row for it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

RESULT_KEYS = ("sid", "phase", "it", "metric", "v", "wall_ms", "seed")


class MetricError(Exception):
    pass


class MissingAxis(MetricError):
    """A work-precision join found no scenario with both axes."""


# -------------------------------------------------------------------- records


@dataclass
class MeasurementRecord:
    sid: str
    phase: str  # pretrain | train | test | fixture
    it: int
    metric: str
    v: float
    wall_ms: float
    seed: int

    def to_json(self) -> str:
        row = {
            "sid": self.sid,
            "phase": self.phase,
            "it": self.it,
            "metric": self.metric,
            "v": _norm_float(self.v),
            "wall_ms": _norm_float(self.wall_ms),
            "seed": self.seed,
        }
        # Insertion order is the wire order; never sort these keys.
        return json.dumps(row, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "MeasurementRecord":
        obj = json.loads(line)
        return cls(**{k: obj[k] for k in RESULT_KEYS})


def _norm_float(v: float):
    f = float(v)
    if f != f or math.isinf(f):
        raise MetricError(f"non-finite measurement {v!r}")
    return int(f) if f.is_integer() and abs(f) < 2**53 else f


def write_results(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_results(path) -> list:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(MeasurementRecord.from_json(line))
    return rows


# -------------------------------------------------------------------- metrics


class MeanLoss:
    name = "mean_loss"

    def __init__(self, params=None, clock=None):
        self.total = 0.0
        self.count = 0

    def step(self, loss: float) -> None:
        self.total += float(loss)
        self.count += 1

    def finalize(self):
        if self.count == 0:
            return None
        return self.total / self.count


class PercentileLoss:
    """Nearest-rank percentile: element floor(p*n/100)+1 of the sorted stream
    (clamped to n), so p99 of 100 values is the largest one."""

    name = "percentile_loss"

    def __init__(self, params=None, clock=None):
        self.p = float((params or {}).get("p", 99))
        self.values: list = []

    def step(self, loss: float) -> None:
        self.values.append(float(loss))

    def finalize(self):
        n = len(self.values)
        if n == 0:
            return None
        k = min(n, int(math.floor(self.p * n / 100.0)) + 1)
        return sorted(self.values)[k - 1]


class HardFail:
    name = "hard_fail"

    def __init__(self, params=None, clock=None):
        self.threshold = float((params or {}).get("threshold", 0.5))
        self.seen = False
        self.tripped = False

    def step(self, loss: float) -> None:
        self.seen = True
        if float(loss) > self.threshold:
            self.tripped = True

    def finalize(self):
        if not self.seen:
            return None
        return 1.0 if self.tripped else 0.0


class Wallclock:
    """Total elapsed milliseconds on the run's clock; ignores the stream."""

    name = "wallclock"

    def __init__(self, params=None, clock=None):
        self.clock = clock

    def step(self, loss: float) -> None:
        pass

    def finalize(self):
        if self.clock is None:
            return None
        return self.clock.elapsed_ms()


METRIC_BUILTINS = {
    "mean_loss": MeanLoss,
    "percentile_loss": PercentileLoss,
    "hard_fail": HardFail,
    "wallclock": Wallclock,
}


def make_metric(builtin: str, params=None, clock=None):
    cls = METRIC_BUILTINS.get(builtin)
    if cls is None:
        raise MetricError(f"unknown metric builtin {builtin!r}")
    return cls(params=params, clock=clock)


# ------------------------------------------------------------- work-precision


def combine_work_precision(rows, groups, precision_metric: str = "test_loss"):
    """Join each scenario's cost axis with its accuracy axis.

    rows: MeasurementRecords.  groups: sid -> group label (e.g. a
    (problem, model) pair).  A scenario contributes one point: its
    precision row's value on y, that row's cumulative wall_ms on x.
    Raises MissingAxis when not a single scenario has both axes.
    """
    by_sid: dict = {}
    for r in rows:
        if r.phase == "test" and r.metric == precision_metric:
            by_sid[r.sid] = r
    curves: dict = {}
    for sid, row in sorted(by_sid.items()):
        if sid not in groups:
            continue
        if row.wall_ms is None:
            continue
        curves.setdefault(groups[sid], []).append(
            {"sid": sid, "work": row.wall_ms, "precision": row.v}
        )
    curves = {g: sorted(pts, key=lambda p: (p["work"], p["sid"]))
              for g, pts in curves.items() if pts}
    if not curves:
        raise MissingAxis(
            f"no scenario carries both wall_ms and a {precision_metric!r} value"
        )
    return curves


# ------------------------------------------------------------------- rankings


def rank_total(values: dict, weights: dict, directions: dict):
    """Weighted min-max score over metric columns; lower is better.

    values: sid -> {metric: value}.  A metric column is normalized to [0,1]
    badness (respecting its direction), so scores do not change when any
    metric is rescaled by a positive factor.  Scenarios missing a weighted
    metric are excluded, with the missing column named.

    Returns (ranked [(sid, score)], excluded [(sid, reason)]).
    """
    excluded = []
    eligible = {}
    for sid in sorted(values):
        missing = [m for m in sorted(weights) if m not in values[sid]]
        if missing:
            excluded.append((sid, f"missing metric {missing[0]!r}"))
        else:
            eligible[sid] = values[sid]
    spans = {}
    for m in weights:
        col = [eligible[sid][m] for sid in eligible]
        if col:
            spans[m] = (min(col), max(col))
    ranked = []
    for sid, vals in eligible.items():
        score = 0.0
        for m, w in weights.items():
            lo, hi = spans[m]
            if hi > lo:
                norm = (vals[m] - lo) / (hi - lo)
            else:
                norm = 0.0
            if directions.get(m, "min") == "max":
                norm = 1.0 - norm
            score += float(w) * norm
        ranked.append((sid, score))
    ranked.sort(key=lambda t: (t[1], t[0]))
    return ranked, excluded


def dominates(a: dict, b: dict, directions: dict, metrics) -> bool:
    """True when a is at least as good as b everywhere and better somewhere."""
    strictly = False
    for m in metrics:
        av, bv = a[m], b[m]
        if directions.get(m, "min") == "max":
            av, bv = -av, -bv
        if av > bv:
            return False
        if av < bv:
            strictly = True
    return strictly


def rank_partial(values: dict, directions: dict, metrics=None):
    """Pareto strata of the dominance relation.

    values: sid -> {metric: value}; only sids carrying every metric in
    `metrics` participate (the rest are excluded with a reason).  Stratum 0
    is the non-dominated front; stratum k is the front after removing
    strata < k.  Returns (strata as lists of sids, excluded).
    """
    if metrics is None:
        metrics = sorted({m for vals in values.values() for m in vals})
    metrics = list(metrics)
    excluded = []
    pool = []
    for sid in sorted(values):
        missing = [m for m in metrics if m not in values[sid]]
        if missing:
            excluded.append((sid, f"missing metric {missing[0]!r}"))
        else:
            pool.append(sid)
    strata = []
    remaining = list(pool)
    while remaining:
        front = [
            sid
            for sid in remaining
            if not any(
                dominates(values[other], values[sid], directions, metrics)
                for other in remaining
                if other != sid
            )
        ]
        if not front:  # defensive: cycles are impossible with a strict order
            front = list(remaining)
        strata.append(sorted(front))
        remaining = [sid for sid in remaining if sid not in front]
    return strata, excluded


def ranking_weights(meta: dict) -> tuple:
    """Pull weight_<metric> / dir_<metric> pairs out of a ranking's metas."""
    weights = {}
    directions = {}
    for key, value in meta.items():
        if key.startswith("weight_"):
            weights[key[len("weight_"):]] = float(value)
        elif key.startswith("dir_"):
            directions[key[len("dir_"):]] = str(value)
    return weights, directions
