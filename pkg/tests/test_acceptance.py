"""Acceptance gate: one test per shipping criterion, at full scale.

Each test prints a single PASS line on success; a failed criterion fails its
test, so `pytest -v` reads as the acceptance checklist.
"""

import itertools
import json
import math
import pathlib
import sys
import time

import numpy as np
import pytest

from conftest import CORPUS, GOLDEN
from sailbench import cli, external, parser, planner
from sailbench.metrics import PercentileLoss, dominates, rank_total
from sailbench.orchestrator import (
    Lane,
    lpt_assign,
    precision_key,
    prune,
    throughput_key,
)
from sailbench.planner import discover, discover_product
from sailbench.evalrun import KIND_ORDER
from sailbench.rng import SplitMix64, stable_hash64
from sailbench.sail_ast import ast_to_canonical_json
from sailbench.simulator import total_energy, velocity_verlet, forces, anchors_for
from sailbench.solvers import LinearSolver, MlpSolver, PermSumSolver
from sailbench.typesys import (
    AtomT,
    ConverterGraph,
    ImageT,
    LabelT,
    ListT,
    NoPath,
    ScalarT,
    TensorT,
    find_conversion,
    instantiate,
    render_type,
    unify,
)


def ok(line: str) -> None:
    print(f"{line}: PASS")


# ---------------------------------------------------------------- criterion 1


def _hash_evaluator(repo_seed: int):
    def evaluate(module, stack):
        names = ",".join(m for m, _ in stack)
        h = stable_hash64(f"{repo_seed}|{module}|{names}")
        if h % 4 == 0:
            return False, None, f"rejected {module}"
        return True, {"h": h}, None

    return evaluate


def test_ac01_discovery_equals_bruteforce_on_500_repos():
    start = time.monotonic()
    rng = SplitMix64(8001)
    for repo_seed in range(500):
        pools = {
            kind: [f"{kind.value}{i}" for i in range(1 + rng.randint(4))]
            for kind in KIND_ORDER
        }
        evaluate = _hash_evaluator(repo_seed)
        fast, _ = discover(pools, evaluate)
        slow = discover_product(pools, evaluate)
        assert fast == slow, f"repo {repo_seed} diverged"
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    ok(f"AC1 discovery == brute force on 500 repos ({elapsed:.2f}s)")


# ---------------------------------------------------------------- criterion 2


def _big_pool(rng: SplitMix64) -> list:
    types = [ScalarT(), AtomT()]
    types += [TensorT((k,)) for k in range(1, 21)]
    types += [TensorT(d) for d in ((2, 2), (3, 3), (4, 4), (2, 3), (8, 4), (5, 1))]
    types += [LabelT(c) for c in range(2, 12)]
    types += [ImageT(*d) for d in ((2, 2, 1), (4, 4, 1), (4, 4, 3), (8, 8, 3),
                                   (2, 3, 2), (3, 2, 1), (6, 6, 1), (5, 5, 2))]
    types += [ListT(TensorT((k,))) for k in (2, 4, 6, 8)]
    rng.shuffle(types)
    return types[: 20 + rng.randint(31)]


def test_ac02_chain_search_equals_all_pairs_oracle():
    start = time.monotonic()
    rng = SplitMix64(8002)
    for trial in range(100):
        pool = _big_pool(rng)
        g = ConverterGraph()
        names = {render_type(t) for t in pool}
        edges = []
        for e in range(50 + rng.randint(151)):
            a = pool[rng.randint(len(pool))]
            b = pool[rng.randint(len(pool))]
            if render_type(a) == render_type(b):
                continue
            g.register(f"c{e}", f"conv{e}", a, b, "custom")
            edges.append((render_type(a), render_type(b)))
            edges.append((render_type(ListT(a)), render_type(ListT(b))))
            names.add(render_type(ListT(a)))
            names.add(render_type(ListT(b)))

        nodes = sorted(names)
        idx = {n: i for i, n in enumerate(nodes)}
        dist = np.full((len(nodes), len(nodes)), np.inf)
        np.fill_diagonal(dist, 0.0)
        for a, b in edges:
            dist[idx[a], idx[b]] = 1.0
        for k in range(len(nodes)):
            dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])

        for q in range(200):
            src = pool[rng.randint(len(pool))]
            dst = pool[rng.randint(len(pool))]
            want = dist[idx[render_type(src)], idx[render_type(dst)]]
            got = find_conversion(g, src, dst, max_len=len(nodes) + 1)
            if render_type(src) == render_type(dst):
                assert got == []
            elif math.isinf(want):
                assert isinstance(got, NoPath)
            else:
                assert isinstance(got, list) and len(got) == int(want)
                cur = src
                for edge in got:
                    s = unify(instantiate(edge.src), cur)
                    assert s
                    cur = s.apply(instantiate(edge.dst))
                assert unify(cur, dst)
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    ok(f"AC2 chain search == all-pairs oracle on 100 graphs ({elapsed:.2f}s)")


# ---------------------------------------------------------------- criterion 3


def test_ac03_gradient_checks():
    eps = 1e-5
    worst = 0.0

    rng = SplitMix64(8003)
    lin = LinearSolver(3, 1, "predict", {}, seed=0)
    x_train = np.array([[rng.uniform_in(-1, 1) for _ in range(3)] for _ in range(30)])
    lin.fit_epoch(x_train, (x_train @ np.array([0.5, -1.0, 2.0])).reshape(-1, 1), 0)
    for point in range(100):
        xi = np.array([rng.uniform_in(-2, 2) for _ in range(3)])
        g = lin.grad_input(xi)
        for j in range(3):
            xp, xm = xi.copy(), xi.copy()
            xp[j] += eps
            xm[j] -= eps
            num = (lin.predict(xp.reshape(1, -1))[0]
                   - lin.predict(xm.reshape(1, -1))[0]) / (2 * eps)
            worst = max(worst, abs(g[j] - num) / max(1.0, abs(g[j]), abs(num)))

    mlp = MlpSolver(4, 3, "classify", {"width": 6}, seed=5)
    reg = MlpSolver(4, 1, "predict", {"width": 6}, seed=6)
    for point in range(100):
        for solver, target in ((mlp, rng.randint(3)), (reg, rng.uniform_in(-2, 2))):
            xi = np.array([rng.uniform_in(-1.5, 1.5) for _ in range(4)])
            _, grads = solver.loss_and_grads(xi, target)
            name = ("w1", "b1", "w2", "b2")[point % 4]
            arr = getattr(solver, name)
            flat_idx = rng.randint(arr.size)
            idx = np.unravel_index(flat_idx, arr.shape)
            orig = float(arr[idx])
            arr[idx] = orig + eps
            lp, _ = solver.loss_and_grads(xi, target)
            arr[idx] = orig - eps
            lm, _ = solver.loss_and_grads(xi, target)
            arr[idx] = orig
            num = (lp - lm) / (2 * eps)
            ana = float(grads[name][idx])
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))

    assert worst <= 1e-4
    ok(f"AC3 linear+mlp gradients vs central differences (max rel err {worst:.2e})")


# ---------------------------------------------------------------- criterion 4


def test_ac04_permutation_bit_identity():
    rng = SplitMix64(8004)
    solver = PermSumSolver(8, 1, "predict", {"width": 8}, seed=3)

    six = np.array([[rng.uniform_in(-2, 2) for _ in range(8)] for _ in range(6)])
    base = solver.forward(six)
    for perm in itertools.permutations(range(6)):
        assert solver.forward(six[list(perm)]) == base

    twenty = np.array([[rng.uniform_in(-2, 2) for _ in range(8)] for _ in range(20)])
    base = solver.forward(twenty)
    order = list(range(20))
    for trial in range(1000):
        rng.shuffle(order)
        assert solver.forward(twenty[order]) == base
    ok("AC4 perm-sum output bit-identical over 720 + 1000 permutations")


# ---------------------------------------------------------------- criterion 5


def test_ac05_md_energy_drift_and_learned_model(corpus_run, kept_scenarios):
    n = 5
    rng = SplitMix64(8005)
    anchors = anchors_for(n)
    pos = anchors + 0.05 * np.array(
        [[rng.uniform_in(-1, 1) for _ in range(3)] for _ in range(n)]
    )
    vel = 0.02 * np.array([[rng.uniform_in(-1, 1) for _ in range(3)] for _ in range(n)])
    e0 = total_energy(pos, vel, anchors)
    states = velocity_verlet(pos, vel, lambda p: forces(p, anchors), 0.001, 1000)
    drift = max(abs(total_energy(p, v, anchors) - e0) for p, v in states) / abs(e0)
    assert drift <= 1e-6

    md_linear = [
        s.sid for s in kept_scenarios
        if s.names["problem"] == "md_harmonic" and s.names["model"] == "linear"
    ]
    assert md_linear
    losses = [
        r.v for r in corpus_run.records
        if r.sid in md_linear and r.phase == "test" and r.metric == "test_loss"
    ]
    assert losses and all(v <= 1e-3 for v in losses)
    ok(f"AC5 verlet drift {drift:.2e} <= 1e-6; md linear test MSE "
       f"{max(losses):.2e} <= 1e-3")


# ---------------------------------------------------------------- criterion 6


ARTIFACTS = ("repo.json", "plan.json", "schedule.json", "results.jsonl",
             "leaderboard.json", "report.md", "report.csv")


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    dirs, times = [], []
    for label in ("first", "second"):
        d = tmp_path_factory.mktemp(f"pipeline_{label}")
        t0 = time.monotonic()
        assert cli.main(["scan", str(CORPUS), "-o", str(d / "repo.json")]) == 0
        assert cli.main(["run", str(CORPUS), "-o", str(d / "results.jsonl"),
                         "--mode", "simulated", "--seed", "1", "--jobs", "2"]) == 0
        assert cli.main(["rank", str(CORPUS),
                         "--results", str(d / "results.jsonl"),
                         "-o", str(d / "leaderboard.json")]) == 0
        assert cli.main(["report", str(CORPUS),
                         "--results", str(d / "results.jsonl"),
                         "-o", str(d / "report.md")]) == 0
        times.append(time.monotonic() - t0)
        dirs.append(d)
    return dirs, times


def test_ac06_pipeline_is_byte_deterministic(pipeline_runs):
    (first, second), _ = pipeline_runs
    for name in ARTIFACTS:
        a = (first / name).read_bytes()
        b = (second / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"
    ok(f"AC6 two seed-1 simulated pipelines byte-identical across "
       f"{len(ARTIFACTS)} artifacts")


# ---------------------------------------------------------------- criterion 7


def test_ac07_scheduler_quality_and_prune_coverage():
    rng = SplitMix64(8007)
    for trial in range(200):
        m = 2 + rng.randint(2)
        n = 2 + rng.randint(7)
        durations = [round(rng.uniform_in(0.1, 10.0), 3) for _ in range(n)]
        jobs = [(f"j{i}", d, "hw") for i, d in enumerate(durations)]
        makespan = lpt_assign(jobs, [Lane(i) for i in range(m)])
        best = min(
            max(sum(durations[i] for i in range(n) if assign[i] == lane)
                for lane in range(m))
            for assign in itertools.product(range(m), repeat=n)
        )
        assert makespan <= (4.0 / 3.0) * best + 1e-9

    for trial in range(200):
        scenarios = [
            planner.Scenario(
                sid=f"s{i:03d}",
                modules={"problem": "p", "model": f"m{rng.randint(3)}",
                         "software": f"sw{rng.randint(2)}",
                         "hardware": f"h{rng.randint(2)}",
                         "metric": "me", "ranking": "r"},
                names={}, hp={"lr": rng.randint(3)}, chain_in=[], chain_out=[],
                tasks=("classify",), fixtures=(),
                data_stats={"total_elements": 2 ** rng.randint(8)},
                metric_builtin="mean_loss", metric_params={}, ranking={},
            )
            for i in range(1 + rng.randint(30))
        ]
        kept = prune(scenarios).kept
        assert {throughput_key(s) for s in kept} == \
            {throughput_key(s) for s in scenarios}
        assert {precision_key(s) for s in kept} == \
            {precision_key(s) for s in scenarios}
    ok("AC7 LPT within 4/3 of optimum (200 instances); prune keeps full "
       "key coverage (200 sets)")


# ---------------------------------------------------------------- criterion 8


def test_ac08_metric_and_ranking_oracles():
    rng = SplitMix64(8008)

    for trial in range(100):
        n = 1 + rng.randint(50)
        p = rng.randint(101)
        values = [round(rng.uniform_in(-10, 10), 6) for _ in range(n)]
        fold = PercentileLoss({"p": p})
        for v in values:
            fold.step(v)
        k = min(n, math.floor(p * n / 100) + 1)
        assert fold.finalize() == sorted(values)[k - 1]

    directions = {"x": "min", "y": "max"}
    for trial in range(50):
        n = 4 + rng.randint(10)
        values = {f"s{i}": {"x": rng.randint(5) / 4, "y": rng.randint(5) / 4}
                  for i in range(n)}
        edges = {
            (a, b)
            for a in values for b in values if a != b
            and dominates(values[a], values[b], directions, ["x", "y"])
        }
        for a in values:
            for b in values:
                if a == b:
                    continue
                better_everywhere = (values[a]["x"] <= values[b]["x"]
                                     and values[a]["y"] >= values[b]["y"])
                strictly = (values[a]["x"] < values[b]["x"]
                            or values[a]["y"] > values[b]["y"])
                assert ((a, b) in edges) == (better_everywhere and strictly)
        assert not any((b, a) in edges for a, b in edges)  # acyclic: no 2-cycles
        # Longer cycles are impossible too: dominance implies a strictly
        # smaller (x, -y) sum, which cannot return to its starting value.
        for a, b in edges:
            key = lambda s: values[s]["x"] - values[s]["y"]
            assert key(a) < key(b)

    values = {f"s{i}": {"l": rng.uniform(), "t": rng.uniform_in(1, 9)}
              for i in range(16)}
    weights = {"l": 1.0, "t": 0.25}
    dirs = {"l": "min", "t": "min"}
    base, _ = rank_total(values, weights, dirs)
    scaled = {sid: {"l": v["l"] * 4096.0, "t": v["t"]} for sid, v in values.items()}
    assert rank_total(scaled, weights, dirs)[0] == base
    ok("AC8 percentile sort oracle; dominance pairwise oracle + acyclic; "
       "rescale-invariant totals")


# ---------------------------------------------------------------- criterion 9


def test_ac09_parser_corpus_golden_roundtrip_corruptions():
    total = 0
    for path in sorted(CORPUS.glob("*.sail")):
        total += len(parser.parse(path.read_text(encoding="utf-8"), str(path)))
    assert total == 21

    sample = (GOLDEN / "sample.sail").read_text(encoding="utf-8")
    golden = (GOLDEN / "sample.ast.json").read_text(encoding="utf-8").strip()
    assert ast_to_canonical_json(parser.parse(sample, "sample.sail")) == golden

    from sailbench.sail_ast import render

    rendered = render(parser.parse(sample, "sample.sail"))
    again = render(parser.parse(rendered, "sample.sail"))
    assert rendered == again

    tokens = [t for t in parser.tokenize(rendered, "sample.sail") if t.text]
    lines = rendered.split("\n")
    rng = SplitMix64(8009)
    for trial in range(100):
        tok = tokens[rng.randint(len(tokens))]
        row = lines[tok.span.line - 1]
        col = tok.span.col - 1
        corrupted = list(lines)
        corrupted[tok.span.line - 1] = row[:col] + "@@" + row[col + len(tok.text):]
        with pytest.raises(parser.SailError) as err:
            parser.parse("\n".join(corrupted), "corrupt.sail")
        span = err.value.span
        assert span.line == tok.span.line
        assert abs(span.col - tok.span.col) <= len(tok.text) + 1
    ok("AC9 corpus parses; golden AST matches; round-trip stable; 100 "
       "corruptions located within 1 token")


# --------------------------------------------------------------- criterion 10


def test_ac10_full_pipeline_budget_and_outputs(pipeline_runs):
    (first, _), times = pipeline_runs
    assert times[0] < 60.0

    plan = json.loads((first / "plan.json").read_text())
    assert len(plan["prune"]["kept"]) >= 8

    boards = json.loads((first / "leaderboard.json").read_text())
    assert len(boards["leaderboards"]) == 2

    report_md = (first / "report.md").read_text()
    assert "## Work vs precision" in report_md
    curves = [ln for ln in report_md.splitlines() if ln.startswith("### ")]
    assert len(curves) >= 1
    ok(f"AC10 pipeline in {times[0]:.1f}s; {len(plan['prune']['kept'])} "
       f"scenarios, 2 leaderboards, {len(curves)} curves")


# --------------------------------------------------------------- criterion 11


PLUGIN_DIR = pathlib.Path(__file__).resolve().parents[1] / "pyplugin"

TRAIN_X = [
    [0.5, -1.0, 2.0],
    [1.5, 0.25, -0.75],
    [-2.0, 1.0, 0.5],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [-0.5, 2.0, -1.5],
    [2.0, -0.25, 0.75],
    [-1.0, -1.0, 0.25],
]
TRAIN_Y = [5.75, -0.8125, -1.0, 2.25, 1.5, -5.5, 3.0625, 1.5]
PROBE_X = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.25, 0.5, -0.75]]
GRAD_AT = [0.5, 0.5, 0.5]


@pytest.mark.skipif(not (PLUGIN_DIR / "pyplugin.py").exists(),
                    reason="plugin package not built")
def test_ac11_external_plugin_interop(monkeypatch):
    monkeypatch.setenv(external.PLUGIN_PATH_VAR,
                       str(PLUGIN_DIR / "pyplugin.py"))
    cmd = external.resolve_plugin("pyplugin")
    assert cmd[0] == sys.executable

    def open_session():
        return external.ExternalSolver(
            cmd, d_in=3, d_out=1, task="predict",
            hp={"l2": 0.0, "lr": 0.1}, seed=7, timeout=10.0,
        )

    # Scripted session, compared byte for byte against the recorded golden.
    solver = open_session()
    try:
        loss = solver.fit_epoch(TRAIN_X, TRAIN_Y, 0)
        pred = solver.predict(PROBE_X)
        grad = solver.grad_input(GRAD_AT)
        state = solver.save()
        solver.load(state)
        pred2 = solver.predict(PROBE_X)
    finally:
        solver.close()
    assert loss < 1e-12
    assert np.allclose(pred, [0.75, -1.0, -1.75], atol=1e-6)
    assert np.array_equal(pred, pred2)

    rendered = "".join(
        json.dumps({"dir": d, "msg": m}, sort_keys=True,
                   separators=(",", ":")) + "\n"
        for d, m in solver.client.transcript
    )
    golden = (PLUGIN_DIR / "tests" / "golden" / "transcript.ndjson").read_text(
        encoding="utf-8"
    )
    assert rendered == golden

    # Fresh session for the finite-difference oracle; extra predict traffic
    # here must not pollute the golden transcript above.
    eps = 1e-5
    solver = open_session()
    try:
        solver.fit_epoch(TRAIN_X, TRAIN_Y, 0)
        g = solver.grad_input(GRAD_AT)
        for j in range(3):
            plus = list(GRAD_AT)
            minus = list(GRAD_AT)
            plus[j] += eps
            minus[j] -= eps
            fd = (solver.predict([plus])[0] - solver.predict([minus])[0]) / (2 * eps)
            assert abs(g[j] - fd) <= 1e-4 * max(1.0, abs(fd))
    finally:
        solver.close()
    ok("AC11 plugin handshake/train/predict/grad/save/load; grad vs FD; "
       "golden transcript byte-identical")
