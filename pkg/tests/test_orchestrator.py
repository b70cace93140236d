"""Pruning and scheduling: key coverage, cost model arithmetic, LPT quality."""

import dataclasses
import itertools
import math

import pytest

from sailbench import orchestrator, planner
from sailbench.orchestrator import (
    CALIBRATION,
    HardwareDescriptor,
    Lane,
    NoCompatibleHardware,
    ScheduleError,
    estimate_flops,
    estimate_seconds,
    layer_shapes,
    lpt_assign,
    precision_key,
    prune,
    schedule,
    throughput_key,
)
from sailbench.rng import SplitMix64


def mk_scenario(sid, model="model-a", software="sw-a", hardware="hw-a",
                hp=None, stats=None, tasks=("classify",)):
    return planner.Scenario(
        sid=sid,
        modules={
            "problem": "prob-a",
            "model": model,
            "software": software,
            "hardware": hardware,
            "metric": "met-a",
            "ranking": "rank-a",
        },
        names={},
        hp=dict(hp or {}),
        chain_in=[],
        chain_out=[],
        tasks=tasks,
        fixtures=(),
        data_stats=dict(stats or {"total_elements": 1024,
                                  "train_samples": 10,
                                  "test_samples": 5}),
        metric_builtin="mean",
        metric_params={},
        ranking={},
    )


# ------------------------------------------------------------------ descriptors


def test_hardware_descriptor_defaults():
    hw = HardwareDescriptor.from_meta({}, "bare")
    assert hw.name == "bare"
    assert hw.peak_flops == 1e9
    assert hw.mem_bytes == 1e9
    assert hw.accelerator is False


def test_hardware_descriptor_explicit():
    hw = HardwareDescriptor.from_meta(
        {"peak_flops": 5.0e10, "mem_bytes": 1.6e10, "accelerator": True}, "gpu_sim"
    )
    assert hw == HardwareDescriptor("gpu_sim", 5.0e10, 1.6e10, True)


# ------------------------------------------------------------------------ keys


def test_throughput_key_buckets_by_log2():
    a = mk_scenario("a", stats={"total_elements": 1024})
    b = mk_scenario("b", stats={"total_elements": 2000})
    c = mk_scenario("c", stats={"total_elements": 2048})
    assert throughput_key(a) == throughput_key(b)
    assert throughput_key(a) != throughput_key(c)
    assert throughput_key(a)[-1] == 10


def test_throughput_key_missing_stats():
    s = mk_scenario("a", stats={"train_samples": 3})
    assert throughput_key(s)[-1] == 0


def test_throughput_key_tracks_machine_path():
    base = mk_scenario("a")
    assert throughput_key(base) != throughput_key(mk_scenario("a", model="model-b"))
    assert throughput_key(base) != throughput_key(mk_scenario("a", software="sw-b"))
    assert throughput_key(base) != throughput_key(mk_scenario("a", hardware="hw-b"))
    # The problem module does not participate.
    other = mk_scenario("a")
    other.modules["problem"] = "prob-b"
    assert throughput_key(base) == throughput_key(other)


def test_precision_key_ignores_hp_order():
    a = mk_scenario("a", hp={"lr": 0.1, "width": 8})
    b = mk_scenario("b", hp={"width": 8, "lr": 0.1})
    assert precision_key(a) == precision_key(b)
    assert precision_key(a) != precision_key(mk_scenario("c", hp={"lr": 0.01, "width": 8}))
    assert precision_key(a) != precision_key(mk_scenario("d", model="model-b", hp=a.hp))


# --------------------------------------------------------------------- pruning


def test_prune_drops_only_fully_covered():
    s1 = mk_scenario("a1")                          # new tp, new pr
    s2 = mk_scenario("a2", hp={"lr": 0.1})          # same tp, new pr -> kept
    s3 = mk_scenario("a3", hardware="hw-b")         # new tp, same pr -> kept
    s4 = mk_scenario("a4")                          # both covered -> dropped
    result = prune([s1, s2, s3, s4])
    assert [s.sid for s in result.kept] == ["a1", "a2", "a3"]
    assert [(s.sid, r) for s, r in result.dropped] == [
        ("a4", "throughput and precision keys already covered")
    ]


def test_prune_orders_by_sid_not_input_order():
    s1 = mk_scenario("z-late")
    s2 = mk_scenario("a-early")
    result = prune([s1, s2])
    # Identical keys: the lexicographically first sid is the representative.
    assert [s.sid for s in result.kept] == ["a-early"]
    assert [s.sid for s, _ in result.dropped] == ["z-late"]


def test_prune_to_dict():
    result = prune([mk_scenario("a"), mk_scenario("b")])
    d = result.to_dict()
    assert d["kept"] == ["a"]
    assert d["dropped"] == [
        {"sid": "b", "reason": "throughput and precision keys already covered"}
    ]


def test_prune_coverage_oracle():
    # Random instances: the kept set must cover every key the full set covers,
    # and must match an independent greedy replay exactly.
    rng = SplitMix64(4242)
    for trial in range(100):
        scenarios = []
        for i in range(1 + rng.randint(40)):
            scenarios.append(mk_scenario(
                f"s{i:03d}",
                model=f"model-{rng.randint(3)}",
                software=f"sw-{rng.randint(2)}",
                hardware=f"hw-{rng.randint(2)}",
                hp={"lr": [0.1, 0.01][rng.randint(2)]},
                stats={"total_elements": 2 ** rng.randint(6)},
            ))
        rng.shuffle(scenarios)
        result = prune(scenarios)

        all_tp = {throughput_key(s) for s in scenarios}
        all_pr = {precision_key(s) for s in scenarios}
        assert {throughput_key(s) for s in result.kept} == all_tp
        assert {precision_key(s) for s in result.kept} == all_pr

        seen_tp, seen_pr, expect = set(), set(), []
        for s in sorted(scenarios, key=lambda s: s.sid):
            tp, pr = throughput_key(s), precision_key(s)
            if tp not in seen_tp or pr not in seen_pr:
                expect.append(s.sid)
                seen_tp.add(tp)
                seen_pr.add(pr)
        assert [s.sid for s in result.kept] == expect
        assert len(result.kept) + len(result.dropped) == len(scenarios)


# ------------------------------------------------------------------ cost model


def test_layer_shapes():
    assert layer_shapes("linear", 3, 2, {}, {}) == [(3, 2)]
    assert layer_shapes("mlp", 3, 2, {"width": 16}, {}) == [(3, 16), (16, 2)]
    assert layer_shapes("mlp", 3, 2, {}, {}) == [(3, 8), (8, 2)]
    assert layer_shapes("perm_sum", 5, 1, {"width": 4}, {}) == [(8, 4), (4, 1)]
    assert layer_shapes("knn", 3, 2, {}, {}) == []


class _Meta:
    def __init__(self, **meta):
        self.meta = meta


def test_estimate_flops_linear():
    s = mk_scenario("a", stats={"train_samples": 200, "test_samples": 100})
    flops = estimate_flops(s, _Meta(solver="linear"), epochs=1, d_in=2, d_out=2)
    # One 2x2 layer: 8 flops per sample, 200 train + 100 test samples.
    assert flops == 8.0 * 200 + 8.0 * 100


def test_estimate_flops_counts_epochs():
    s = mk_scenario("a", stats={"train_samples": 10, "test_samples": 0})
    one = estimate_flops(s, _Meta(solver="linear"), epochs=1, d_in=4, d_out=1)
    twelve = estimate_flops(s, _Meta(solver="linear"), epochs=12, d_in=4, d_out=1)
    assert twelve == 12 * one


def test_estimate_flops_skips_training_without_a_training_task():
    s = mk_scenario("a", stats={"train_samples": 200, "test_samples": 50},
                    tasks=("compare",))
    flops = estimate_flops(s, _Meta(solver="linear"), epochs=1, d_in=3, d_out=1)
    assert flops == 2.0 * 3 * 1 * 50


def test_estimate_flops_knn_scans_stored_samples():
    s = mk_scenario("a", stats={"train_samples": 200, "test_samples": 100})
    flops = estimate_flops(s, _Meta(solver="knn"), epochs=1, d_in=2, d_out=2)
    assert flops == 2.0 * 2 * 200 * 100
    empty = mk_scenario("b", stats={"train_samples": 0, "test_samples": 0})
    assert estimate_flops(empty, _Meta(solver="knn"), 1, 2, 2) == 2.0 * 2 * 1 * 1


def test_estimate_flops_perm_sum_scales_with_atoms():
    # 35 elements per sample = 5 atoms of 7 values each.
    s = mk_scenario("a", stats={
        "train_samples": 10, "test_samples": 4,
        "sources": [{"elems": 35}],
    }, tasks=("predict",), hp={"width": 8})
    flops = estimate_flops(s, _Meta(solver="perm_sum"), epochs=10, d_in=35, d_out=1)
    per_atom = 2.0 * 8 * 8 + 2.0 * 8 * 1
    assert flops == per_atom * 5 * (10 * 10 + 4)


def test_estimate_seconds():
    hw = HardwareDescriptor("h", peak_flops=2.5e9, mem_bytes=1e9, accelerator=False)
    assert estimate_seconds(5e9, hw) == pytest.approx(2.0 * CALIBRATION)


# ------------------------------------------------------------------------- LPT


def test_lane_accepts():
    assert Lane(0).accepts("anything")
    assert Lane(0, hardware="gpu").accepts("gpu")
    assert not Lane(0, hardware="gpu").accepts("cpu")


def test_lpt_empty():
    assert lpt_assign([], [Lane(0), Lane(1)]) == 0.0


def test_lpt_longest_first_and_sid_ties():
    lanes = [Lane(0), Lane(1)]
    jobs = [("b", 3.0, "hw"), ("a", 3.0, "hw"), ("c", 2.0, "hw"), ("d", 2.0, "hw")]
    makespan = lpt_assign(jobs, lanes)
    # Equal durations place in sid order, alternating the emptier lane.
    assert lanes[0].jobs == ["a", "c"]
    assert lanes[1].jobs == ["b", "d"]
    assert makespan == 5.0
    assert lanes[0].load == lanes[1].load == 5.0


def test_lpt_respects_lane_hardware():
    lanes = [Lane(0, hardware="cpu"), Lane(1, hardware="gpu")]
    jobs = [("a", 5.0, "gpu"), ("b", 1.0, "cpu"), ("c", 1.0, "gpu")]
    lpt_assign(jobs, lanes)
    assert lanes[0].jobs == ["b"]
    assert lanes[1].jobs == ["a", "c"]


def test_lpt_no_compatible_lane():
    with pytest.raises(NoCompatibleHardware, match="tpu"):
        lpt_assign([("a", 1.0, "tpu")], [Lane(0, hardware="cpu")])


def _opt_makespan(durations, m):
    best = math.inf
    for assign in itertools.product(range(m), repeat=len(durations)):
        loads = [0.0] * m
        for lane, d in zip(assign, durations):
            loads[lane] += d
        worst = max(loads)
        if worst < best:
            best = worst
    return best


def test_lpt_within_graham_bound_of_optimal():
    # Classic guarantee on identical machines: LPT <= (4/3 - 1/(3m)) * OPT.
    rng = SplitMix64(905)
    checked = 0
    for trial in range(200):
        m = 2 + trial % 2
        n = (2 + rng.randint(9)) if m == 2 else (2 + rng.randint(6))
        durations = [round(rng.uniform_in(0.1, 10.0), 3) for _ in range(n)]
        if rng.randint(3) == 0 and n >= 2:
            durations[1] = durations[0]  # force ties sometimes
        jobs = [(f"j{i:02d}", d, "hw") for i, d in enumerate(durations)]
        lanes = [Lane(i) for i in range(m)]
        makespan = lpt_assign(jobs, lanes)
        opt = _opt_makespan(durations, m)
        bound = (4.0 / 3.0 - 1.0 / (3.0 * m)) * opt
        assert opt - 1e-9 <= makespan <= bound + 1e-9
        assert makespan == pytest.approx(max(lane.load for lane in lanes))
        checked += 1
    assert checked == 200


# -------------------------------------------------------------------- schedule


def test_schedule_partitions_kept_scenarios(kept_scenarios, corpus_repo):
    sched = schedule(kept_scenarios, corpus_repo, jobs=2)
    sids = {s.sid for s in kept_scenarios}
    assert set(sched.est) == sids
    assert all(v > 0 for v in sched.est.values())
    assigned = [sid for lane in sched.lanes for sid in lane.jobs]
    assert sorted(assigned) == sorted(sids)
    for lane in sched.lanes:
        assert lane.hardware is None
        assert lane.load == pytest.approx(sum(sched.est[sid] for sid in lane.jobs))
    assert sched.makespan == pytest.approx(max(lane.load for lane in sched.lanes))


def test_schedule_single_lane_is_total(kept_scenarios, corpus_repo):
    sched = schedule(kept_scenarios, corpus_repo, jobs=1)
    assert len(sched.lanes) == 1
    assert sched.makespan == pytest.approx(sum(sched.est.values()))


def test_schedule_lane_hardware_splits_by_module(kept_scenarios, corpus_repo):
    sched = schedule(kept_scenarios, corpus_repo, jobs=2,
                     lane_hardware=["cpu_small", "gpu_sim"])
    hw_of = {s.sid: s.names["hardware"] for s in kept_scenarios}
    for lane in sched.lanes:
        for sid in lane.jobs:
            assert hw_of[sid] == lane.hardware


def test_schedule_unknown_module(kept_scenarios, corpus_repo):
    broken = dataclasses.replace(
        kept_scenarios[0],
        modules={**kept_scenarios[0].modules, "model": "f" * 16},
    )
    with pytest.raises(ScheduleError):
        schedule([broken], corpus_repo, jobs=2)


def test_schedule_to_dict(kept_scenarios, corpus_repo):
    d = schedule(kept_scenarios, corpus_repo, jobs=2).to_dict()
    assert d["v"] == 1
    assert list(d["est"]) == sorted(d["est"])
    assert {lane["id"] for lane in d["lanes"]} == {0, 1}
    for lane in d["lanes"]:
        assert lane["load"] == round(lane["load"], 9)
