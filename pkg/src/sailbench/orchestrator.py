"""Pruning and scheduling: pick representative scenarios, pack them on lanes.

A full plan is usually too redundant to run: many scenarios differ only in
ways that cannot change what we learn from them.  Pruning groups scenarios
under two keys and keeps one representative per group:

* throughput key: (model, software, hardware, log2 bucket of total input
  elements); scenarios sharing it stress the same machine path at the same
  scale, so one of them measures throughput for all.
* precision key: (model, full hyperparameter assignment); scenarios sharing
  it run numerically identical training, so one of them measures accuracy
  for all.

A scenario survives if it is the first (in sid order) to cover either key.

Scheduling is longest-processing-time-first over estimated durations, which
on m identical lanes is within (4/3 - 1/(3m)) of the optimal makespan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .planner import Plan, Scenario

CALIBRATION = 10.0  # estimated seconds per (flops / peak_flops) unit


class ScheduleError(Exception):
    pass


class NoCompatibleHardware(ScheduleError):
    """A scenario's hardware matches no lane."""


@dataclass(frozen=True)
class HardwareDescriptor:
    name: str
    peak_flops: float
    mem_bytes: float
    accelerator: bool

    @classmethod
    def from_meta(cls, meta: dict, name: str) -> "HardwareDescriptor":
        return cls(
            name=name,
            peak_flops=float(meta.get("peak_flops", 1e9)),
            mem_bytes=float(meta.get("mem_bytes", 1e9)),
            accelerator=bool(meta.get("accelerator", False)),
        )


# ------------------------------------------------------------------- pruning


def throughput_key(s: Scenario) -> tuple:
    total = max(1, int(s.data_stats.get("total_elements", 1)))
    return (
        s.modules["model"],
        s.modules["software"],
        s.modules["hardware"],
        int(math.floor(math.log2(total))),
    )


def precision_key(s: Scenario) -> tuple:
    return (s.modules["model"], tuple(sorted(s.hp.items())))


@dataclass
class PruneResult:
    kept: list
    dropped: list  # (scenario, reason)

    def to_dict(self) -> dict:
        return {
            "kept": [s.sid for s in self.kept],
            "dropped": [
                {"sid": s.sid, "reason": reason} for s, reason in self.dropped
            ],
        }


def prune(scenarios: list) -> PruneResult:
    """Greedy cover in sid order: keep firsts, drop the fully covered."""
    seen_tp: set = set()
    seen_pr: set = set()
    kept: list = []
    dropped: list = []
    for s in sorted(scenarios, key=lambda s: s.sid):
        tp, pr = throughput_key(s), precision_key(s)
        if tp not in seen_tp or pr not in seen_pr:
            kept.append(s)
            seen_tp.add(tp)
            seen_pr.add(pr)
        else:
            dropped.append(
                (s, "throughput and precision keys already covered")
            )
    return PruneResult(kept=kept, dropped=dropped)


# ---------------------------------------------------------------- cost model


def layer_shapes(solver: str, d_in: int, d_out: int, hp: dict, meta: dict) -> list:
    """Dense layer (d_in, d_out) pairs a solver trains, for flops counting."""
    if solver == "linear":
        return [(d_in, d_out)]
    if solver == "mlp":
        width = int(hp.get("width", 8))
        return [(d_in, width), (width, d_out)]
    if solver == "perm_sum":
        width = int(hp.get("width", 8))
        return [(8, width), (width, 1)]
    return []


def estimate_flops(scenario: Scenario, model_meta, epochs: int,
                   d_in: int, d_out: int) -> float:
    """Forward+backward proxy: 2 * d_in * d_out per layer per element."""
    stats = scenario.data_stats
    n_train = int(stats.get("train_samples", 0))
    n_test = int(stats.get("test_samples", 0))
    solver = str(model_meta.meta.get("solver", "linear"))
    if solver == "knn":
        # Distance scan: every test sample visits every stored sample.
        return 2.0 * d_in * max(1, n_train) * max(1, n_test)
    fps = sum(2.0 * a * b for a, b in
              layer_shapes(solver, d_in, d_out, scenario.hp, model_meta.meta))
    if solver == "perm_sum":
        atoms = _mean_atoms(stats)
        fps *= atoms
    train_part = fps * n_train * epochs if _has_training(scenario) else 0.0
    return train_part + fps * n_test


def _has_training(s: Scenario) -> bool:
    return any(t in ("classify", "predict", "pretrain") for t in s.tasks)


def _mean_atoms(stats: dict) -> float:
    # HarmonicConfigs reports 7 elements per atom (z + pos + vel).
    for src in stats.get("sources", []):
        if src.get("elems", 1) > 1:
            return max(1.0, src["elems"] / 7.0)
    return 1.0


def estimate_seconds(flops: float, hw: HardwareDescriptor) -> float:
    return flops / hw.peak_flops * CALIBRATION


# ------------------------------------------------------------------ schedule


@dataclass
class Lane:
    id: int
    hardware: str | None = None  # None accepts any scenario
    jobs: list = field(default_factory=list)
    load: float = 0.0

    def accepts(self, hardware_name: str) -> bool:
        return self.hardware is None or self.hardware == hardware_name


@dataclass
class Schedule:
    lanes: list
    makespan: float
    est: dict  # sid -> estimated seconds

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "makespan": round(self.makespan, 9),
            "lanes": [
                {
                    "id": lane.id,
                    "hardware": lane.hardware,
                    "jobs": list(lane.jobs),
                    "load": round(lane.load, 9),
                }
                for lane in self.lanes
            ],
            "est": {sid: round(v, 9) for sid, v in sorted(self.est.items())},
        }


def lpt_assign(jobs: list, lanes: list) -> float:
    """Longest-first assignment of (sid, seconds, hardware) onto lanes.

    Mutates lanes; returns the makespan.  Ties on duration break by sid so
    the schedule is a pure function of its inputs.
    """
    for sid, seconds, hardware in sorted(jobs, key=lambda j: (-j[1], j[0])):
        best = None
        for lane in lanes:
            if not lane.accepts(hardware):
                continue
            if best is None or lane.load < best.load:
                best = lane
        if best is None:
            raise NoCompatibleHardware(
                f"scenario {sid} needs hardware {hardware!r} but no lane takes it"
            )
        best.jobs.append(sid)
        best.load += seconds
    return max((lane.load for lane in lanes), default=0.0)


def schedule(scenarios: list, repo, jobs: int = 2,
             lane_hardware: list | None = None) -> Schedule:
    """Estimate each scenario and pack the set onto `jobs` lanes with LPT."""
    lanes = [
        Lane(i, lane_hardware[i] if lane_hardware else None)
        for i in range(max(1, jobs))
    ]
    est: dict = {}
    job_list: list = []
    for s in scenarios:
        model_rec = repo.by_id(s.modules["model"])
        hw_rec = repo.by_id(s.modules["hardware"])
        if model_rec is None or hw_rec is None:
            raise ScheduleError(f"scenario {s.sid} references unknown modules")
        hw = HardwareDescriptor.from_meta(hw_rec.meta.meta, hw_rec.name)
        d_in, d_out = io_dims(s)
        epochs = int(model_rec.meta.meta.get("epochs", 1))
        flops = estimate_flops(s, model_rec.meta, epochs, d_in, d_out)
        seconds = estimate_seconds(flops, hw)
        est[s.sid] = seconds
        job_list.append((s.sid, seconds, hw_rec.name))
    makespan = lpt_assign(job_list, lanes)
    return Schedule(lanes=lanes, makespan=makespan, est=est)


def io_dims(s: Scenario) -> tuple:
    """Effective dense input/output widths after converter chains."""
    d_in = max(1, int(s.data_stats.get("input_width", 1)))
    d_out = max(1, int(s.data_stats.get("classes", 1)))
    return d_in, d_out
