"""Scenario discovery: join modules across kinds into runnable tuples.

Discovery is a depth-first walk over the kind order with an explicit context
stack.  At each level every module of that kind is evaluated against the
context built so far; rejection prunes the whole subtree, which is what makes
the walk asymptotically cheaper than enumerating the full Cartesian product.
The brute-force product is still the correctness oracle: both must accept
exactly the same tuples, because module evaluation depends only on the
modules above it on the stack.

After tuple discovery each tuple's suggested hyperparameters are expanded
into a bounded grid, yielding concrete scenarios with stable ids.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

from .evalrun import KIND_ORDER, EvalContext, dry_run
from .repo import ModuleRecord, Repo
from .sail_ast import ModuleKind
from .typesys import find_conversion, render_type

GRID_CAP = 64


class PlanError(Exception):
    pass


class GridTooLarge(PlanError):
    """A tuple's suggestion grid exceeds GRID_CAP combinations."""


@dataclass
class Skip:
    """One pruned branch: which module was rejected, where, and why."""

    level: int
    kind: str
    module: str
    context: tuple  # module names on the stack at rejection time
    reason: str


@dataclass
class TupleCandidate:
    """A valid kind-tuple plus the converter chains that made it fit."""

    modules: tuple  # ModuleRecord per kind, in KIND_ORDER
    chain_in: list = field(default_factory=list)  # problem.in -> model.in
    chain_out: list = field(default_factory=list)  # model head -> problem.out

    def module_by_kind(self, kind: ModuleKind) -> ModuleRecord:
        return self.modules[KIND_ORDER.index(kind)]


@dataclass
class Scenario:
    sid: str
    modules: dict  # kind value -> record id
    names: dict  # kind value -> module name
    hp: dict  # param name -> value
    chain_in: list  # converter edge descriptions
    chain_out: list
    tasks: tuple  # problem task kinds
    fixtures: tuple
    data_stats: dict
    metric_builtin: str
    metric_params: dict
    ranking: dict

    def to_dict(self) -> dict:
        return {
            "sid": self.sid,
            "modules": self.modules,
            "names": self.names,
            "hp": self.hp,
            "chain_in": self.chain_in,
            "chain_out": self.chain_out,
            "tasks": list(self.tasks),
            "fixtures": list(self.fixtures),
            "data_stats": self.data_stats,
            "metric_builtin": self.metric_builtin,
            "metric_params": self.metric_params,
            "ranking": self.ranking,
        }


@dataclass
class Plan:
    scenarios: list
    skips: list
    tuple_count: int

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "tuples": self.tuple_count,
            "scenarios": [s.to_dict() for s in self.scenarios],
            "skips": [
                {
                    "level": s.level,
                    "kind": s.kind,
                    "module": s.module,
                    "context": list(s.context),
                    "reason": s.reason,
                }
                for s in self.skips
            ],
        }


# ------------------------------------------------------------------ discovery


def discover(modules_by_kind: dict, evaluate, order=KIND_ORDER):
    """Backtracking join.  Returns (accepted stacks, skips).

    `modules_by_kind` maps each kind in `order` to a module list;
    `evaluate(module, stack)` returns (ok, payload, reason) and must be a
    pure function of its arguments.  Accepted stacks are tuples of
    (module, payload) pairs, emitted in depth-first order.
    """
    accepted: list = []
    skips: list = []
    stack: list = []

    def walk(level: int) -> None:
        if level == len(order):
            accepted.append(tuple(stack))
            return
        kind = order[level]
        for module in modules_by_kind.get(kind, []):
            ok, payload, reason = evaluate(module, tuple(stack))
            if not ok:
                skips.append(
                    Skip(
                        level=level,
                        kind=kind.value if hasattr(kind, "value") else str(kind),
                        module=getattr(module, "name", str(module)),
                        context=tuple(getattr(m, "name", str(m)) for m, _ in stack),
                        reason=reason,
                    )
                )
                continue
            stack.append((module, payload))
            walk(level + 1)
            stack.pop()

    walk(0)
    return accepted, skips


def discover_product(modules_by_kind: dict, evaluate, order=KIND_ORDER):
    """Brute-force reference: evaluate every full tuple level by level."""
    accepted: list = []
    pools = [modules_by_kind.get(kind, []) for kind in order]
    for combo in itertools.product(*pools):
        stack: list = []
        ok_all = True
        for module in combo:
            ok, payload, _ = evaluate(module, tuple(stack))
            if not ok:
                ok_all = False
                break
            stack.append((module, payload))
        if ok_all:
            accepted.append(tuple(stack))
    return accepted


# -------------------------------------------------------- the real evaluator


def resolve_model_compat(problem_meta, model_meta, graph, max_chain: int = 3):
    """Match a model to a problem, bridging types with converter chains.

    Returns (chain_in, chain_out, reason).  Chains are edge lists ([] means
    the types unify directly); a None chain means no bridge exists and the
    reason says which side failed.
    """
    main_task = "classify" if _is_label(problem_meta.out_type) else "predict"
    if main_task not in model_meta.task_heads:
        return None, None, f"model has no {main_task} head"
    if "pretrain" in problem_meta.tasks and "pretrain" not in model_meta.task_heads:
        return None, None, "problem pretrains but model has no pretrain head"
    if problem_meta.in_type is None or problem_meta.out_type is None:
        return None, None, "problem input/output types unknown"
    chain_in = find_conversion(graph, problem_meta.in_type, model_meta.in_type,
                               max_chain)
    if not isinstance(chain_in, list):
        return None, None, str(chain_in)
    head_out = model_meta.task_heads[main_task]
    chain_out = find_conversion(graph, head_out, problem_meta.out_type, max_chain)
    if not isinstance(chain_out, list):
        return None, None, str(chain_out)
    return chain_in, chain_out, None


def _is_label(t) -> bool:
    from .typesys import LabelT

    return isinstance(t, LabelT)


def make_evaluator(repo: Repo, max_chain: int = 3):
    """The production evaluate() for discover(): dry-run against the context.

    Payloads: a problem/model level carries its metadata; the model level
    additionally carries the resolved converter chains.
    """

    def evaluate(record: ModuleRecord, stack: tuple):
        ctx = EvalContext([payload["meta"] for _, payload in stack])
        try:
            meta, _ = dry_run(record.decl, ctx)
        except Exception as e:  # malformed module: reject, do not abort the walk
            return False, None, f"dry run error: {e}"
        if meta.failed:
            return False, None, meta.reason or "fail when"
        for req_kind, req_name in meta.relationships:
            if not any(
                m.kind.value == req_kind and m.name == req_name
                for m in ctx.stack
            ):
                return False, None, f"requires {req_kind} {req_name!r} not in context"
        payload = {"meta": meta, "chain_in": [], "chain_out": []}
        if record.kind == ModuleKind.MODEL:
            problem_meta = ctx.stack[KIND_ORDER.index(ModuleKind.PROBLEM)]
            chain_in, chain_out, reason = resolve_model_compat(
                problem_meta, meta, repo.graph, max_chain
            )
            if chain_in is None:
                return False, None, reason
            payload["chain_in"] = chain_in
            payload["chain_out"] = chain_out
        return True, payload, ""

    return evaluate


# --------------------------------------------------------------- hp expansion


def expand_hypergrid(suggestions: dict, cap: int = GRID_CAP) -> list:
    """All combinations of suggested values, in deterministic key order."""
    keys = sorted(suggestions)
    size = 1
    for k in keys:
        size *= max(1, len(suggestions[k]))
    if size > cap:
        raise GridTooLarge(f"suggestion grid has {size} points (cap {cap})")
    if not keys:
        return [{}]
    grids = []
    for combo in itertools.product(*(suggestions[k] for k in keys)):
        grids.append(dict(zip(keys, combo)))
    return grids


def scenario_id(module_ids: list, chain_in: list, chain_out: list, hp: dict) -> str:
    payload = json.dumps(
        {
            "modules": module_ids,
            "chain_in": chain_in,
            "chain_out": chain_out,
            "hp": {k: hp[k] for k in sorted(hp)},
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def plan(repo: Repo, max_chain: int = 3) -> Plan:
    """Discover tuples, expand grids, and assemble the runnable plan."""
    modules_by_kind = {kind: repo.by_kind(kind) for kind in KIND_ORDER}
    evaluate = make_evaluator(repo, max_chain)
    accepted, skips = discover(modules_by_kind, evaluate)

    scenarios: list[Scenario] = []
    for stack in accepted:
        records = [m for m, _ in stack]
        payloads = [p for _, p in stack]
        metas = [p["meta"] for p in payloads]
        by_kind = dict(zip(KIND_ORDER, range(len(KIND_ORDER))))
        problem_meta = metas[by_kind[ModuleKind.PROBLEM]]
        problem_record = records[by_kind[ModuleKind.PROBLEM]]
        model_payload = payloads[by_kind[ModuleKind.MODEL]]
        metric_meta = metas[by_kind[ModuleKind.METRIC]]
        ranking_meta = metas[by_kind[ModuleKind.RANKING]]

        # Only problem and model knobs become scenario hyperparameters;
        # metric params configure the metric, not the run.
        swept = (problem_meta, model_payload["meta"])
        suggestions: dict = {}
        for meta in swept:
            for pname, values in meta.suggestions.items():
                suggestions[pname] = values
        try:
            grid = expand_hypergrid(suggestions)
        except GridTooLarge as e:
            skips.append(
                Skip(
                    level=len(KIND_ORDER),
                    kind="grid",
                    module=records[by_kind[ModuleKind.PROBLEM]].name,
                    context=tuple(r.name for r in records),
                    reason=str(e),
                )
            )
            continue

        chain_in = [e.describe() for e in model_payload["chain_in"]]
        chain_out = [e.describe() for e in model_payload["chain_out"]]
        defaults = {}
        for meta in swept:
            for pname, default in meta.params.items():
                if default is not None:
                    defaults[pname] = default
        metric_params = {
            p: metric_meta.params[p]
            for p in metric_meta.params
            if metric_meta.params[p] is not None
        }
        sweeps_problem = any(p in problem_meta.params for p in suggestions)
        for hp in grid:
            full_hp = dict(defaults)
            full_hp.update(hp)
            data_stats = problem_meta.data_stats
            if sweeps_problem:
                # Sample counts can depend on problem params, so cost and
                # prune inputs must reflect this grid point, not defaults.
                refreshed, _ = dry_run(
                    problem_record.decl, EvalContext(bindings=dict(full_hp))
                )
                data_stats = refreshed.data_stats
            sid = scenario_id([r.id for r in records], chain_in, chain_out, full_hp)
            scenarios.append(
                Scenario(
                    sid=sid,
                    modules={k.value: r.id for k, r in zip(KIND_ORDER, records)},
                    names={k.value: r.name for k, r in zip(KIND_ORDER, records)},
                    hp=full_hp,
                    chain_in=chain_in,
                    chain_out=chain_out,
                    tasks=problem_meta.tasks,
                    fixtures=problem_meta.fixtures,
                    data_stats=data_stats,
                    metric_builtin=str(metric_meta.meta.get("builtin", metric_meta.name)),
                    metric_params=metric_params,
                    ranking={
                        "name": ranking_meta.name,
                        "mode": str(ranking_meta.meta.get("mode", "total")),
                        "meta": {k: v for k, v in ranking_meta.meta.items()},
                    },
                )
            )
    scenarios.sort(key=lambda s: s.sid)
    return Plan(scenarios=scenarios, skips=skips, tuple_count=len(accepted))
