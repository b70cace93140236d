"""Dry-run and full-run evaluation of SAIL modules.

A module body is never "executed" in the ordinary sense at planning time.
Instead, a dry run walks the body once with one symbolic element standing in
for every data source, recording each primitive call on a tape.  The tape is
what the rest of the harness consumes: input/output types are inferred from
the values flowing into model-invoking primitives, task kinds are read off
the node names, and `fail when` clauses whose condition is statically true
mark the module as rejecting the surrounding context: a recorded outcome,
not an exception, because rejection is a normal part of the module join.

A full run walks the same body with real parameter bindings and bound
datasets and streams one PrimitiveEvent per primitive execution; benchpods
consume those streams for training and testing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import datagen
from .sail_ast import (
    BinaryExpr,
    Expr,
    FailWhenStmt,
    FieldExpr,
    ForEachStmt,
    IfStmt,
    LetStmt,
    LiteralExpr,
    ModuleDecl,
    ModuleKind,
    NameExpr,
    PrimCallExpr,
    PrimCallStmt,
    ReturnStmt,
    SourceSpan,
    TypeLiteralExpr,
    UnaryExpr,
)
from .simulator import Atom
from .typesys import (
    AtomT,
    LabelT,
    ListT,
    RecordT,
    ScalarT,
    SemanticType,
    TensorT,
    fresh_dim,
    fresh_typevar,
    instantiate,
    render_type,
    unify,
)

# Canonical kind order of the scenario join.  Converters are not a join
# dimension; they are resolved inside problem/model matching.
KIND_ORDER = (
    ModuleKind.PROBLEM,
    ModuleKind.MODEL,
    ModuleKind.HARDWARE,
    ModuleKind.SOFTWARE,
    ModuleKind.METRIC,
    ModuleKind.RANKING,
)

TASK_TRAIN_PREFIX = "Train."
TASKS = ("classify", "predict", "pretrain", "compare")


class EvalError(Exception):
    """A module body is malformed for its kind or context."""

    def __init__(self, message: str, span: SourceSpan | None = None):
        super().__init__(f"{span}: {message}" if span else message)
        self.message = message
        self.span = span


class DataError(Exception):
    """A bound dataset is missing, exhausted, or ill-typed."""


class InferenceError(Exception):
    """Input/output types could not be inferred from a tape."""


# ----------------------------------------------------------------------- tape


@dataclass
class TapeNode:
    id: int
    prim: str  # "Train.Classify", "Data.TwoGaussians", ...
    args: list  # arg refs: {"kind": "lit"|"node"|"elem"|"sym", ...}
    arg_types: list  # SemanticType | None per argument
    result_type: SemanticType | None
    span: SourceSpan


@dataclass
class TapeGraph:
    nodes: list = dc_field(default_factory=list)

    def add(self, prim: str, args: list, arg_types: list,
            result_type: SemanticType | None, span: SourceSpan) -> TapeNode:
        node = TapeNode(len(self.nodes), prim, args, arg_types, result_type, span)
        self.nodes.append(node)
        return node

    def by_prim(self, prim: str) -> list:
        return [n for n in self.nodes if n.prim == prim]

    def prims(self) -> set:
        return {n.prim for n in self.nodes}


@dataclass
class PrimitiveEvent:
    """One primitive execution in a full run."""

    node: int
    prim: str
    args: list  # concrete runtime values
    iter: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "node": self.node,
                "prim": self.prim,
                "args": [_json_value(a) for a in self.args],
                "iter": self.iter,
            },
            separators=(",", ":"),
            sort_keys=True,
        )


def _json_value(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Atom):
        return {"z": v.z, "pos": v.pos.tolist(), "vel": v.vel.tolist()}
    if isinstance(v, GradientRef):
        return {"gradient_of_node": v.node, "input": _json_value(v.input)}
    if isinstance(v, PredictRef):
        return {"predict_node": v.node, "input": _json_value(v.input)}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


@dataclass
class GradientRef:
    """Full-run value of Gradient.Input(x): deferred to the benchpod."""

    node: int
    input: object


@dataclass
class PredictRef:
    """Full-run value of Model.Predict(x) inside a problem body."""

    node: int
    input: object


# ------------------------------------------------------------------- metadata


@dataclass
class ModuleMetadata:
    """Everything the planner needs to know about one dry-run module."""

    kind: ModuleKind
    name: str
    field: str = ""
    tasks: tuple = ()
    fixtures: tuple = ()
    in_type: SemanticType | None = None
    out_type: SemanticType | None = None
    task_heads: dict = dc_field(default_factory=dict)  # task -> out type (models)
    pretrain_io: tuple | None = None  # (in, out) of Train.Pretrain nodes
    suggestions: dict = dc_field(default_factory=dict)  # param -> [values]
    params: dict = dc_field(default_factory=dict)  # param -> default
    relationships: tuple = ()  # ((kind, name), ...)
    meta: dict = dc_field(default_factory=dict)
    env: dict = dc_field(default_factory=dict)  # Env.Set results
    data_stats: dict = dc_field(default_factory=dict)
    converter: tuple | None = None  # (src, dst, kernel)
    failed: bool = False
    reason: str | None = None

    def derived(self, key: str):
        """Context fields visible through Env.Get("<kind>.<key>")."""
        if key in self.meta:
            return self.meta[key]
        if key == "name":
            return self.name
        if key == "has_train":
            return any(t in ("classify", "predict", "pretrain") for t in self.tasks) \
                and self._has_train_nodes
        if key == "has_test":
            return "compare" in self.tasks or bool(self.fixtures)
        if key == "tasks":
            return ",".join(self.tasks)
        if key == "classes":
            if isinstance(self.out_type, LabelT) and isinstance(self.out_type.k, int):
                return self.out_type.k
            return None
        return None

    _has_train_nodes: bool = dc_field(default=False, repr=False)


@dataclass
class EvalContext:
    """Stack of already-joined module metadata, in canonical kind order."""

    stack: list = dc_field(default_factory=list)
    bindings: dict = dc_field(default_factory=dict)  # param name -> value
    seed: int = 0

    def push(self, meta: ModuleMetadata) -> "EvalContext":
        return EvalContext(self.stack + [meta], dict(self.bindings), self.seed)

    def lookup(self, kind: str) -> ModuleMetadata | None:
        for meta in reversed(self.stack):
            if meta.kind.value == kind:
                return meta
        return None

    def check_order(self, next_kind: ModuleKind) -> None:
        order = {k: i for i, k in enumerate(KIND_ORDER)}
        if next_kind == ModuleKind.CONVERTER:
            return  # converters may be dry-run at any point
        level = order[next_kind]
        for meta in self.stack:
            if meta.kind == ModuleKind.CONVERTER:
                continue
            if order[meta.kind] >= level:
                raise EvalError(
                    f"context contains {meta.kind.value!r} at or after {next_kind.value!r}"
                )


# --------------------------------------------------------------------- values


@dataclass
class SymVal:
    """A symbolic dry-run value: a type plus where it came from."""

    type: SemanticType
    node: int | None = None  # producing tape node
    source: int | None = None  # source node, for loop elements


@dataclass
class SourceVal:
    """A declared data source (dry) or its bound dataset handle (full)."""

    node: int
    spec: datagen.SourceSpec


def _static_primcall_count(decls_or_stmts) -> int:
    count = 0

    def walk_expr(e: Expr):
        nonlocal count
        if isinstance(e, PrimCallExpr):
            count += 1
            for a in e.args:
                walk_expr(a)
        elif isinstance(e, BinaryExpr):
            walk_expr(e.left)
            walk_expr(e.right)
        elif isinstance(e, UnaryExpr):
            walk_expr(e.operand)
        elif isinstance(e, FieldExpr):
            walk_expr(e.base)

    def walk_stmt(s):
        if isinstance(s, LetStmt):
            walk_expr(s.value)
        elif isinstance(s, ForEachStmt):
            walk_expr(s.source)
            for b in s.body:
                walk_stmt(b)
        elif isinstance(s, IfStmt):
            walk_expr(s.cond)
            for b in s.then + s.orelse:
                walk_stmt(b)
        elif isinstance(s, FailWhenStmt):
            walk_expr(s.cond)
        elif isinstance(s, ReturnStmt):
            walk_expr(s.value)
        elif isinstance(s, PrimCallStmt):
            walk_expr(s.call)

    for s in decls_or_stmts:
        walk_stmt(s)
    return count


# -------------------------------------------------------------------- dry run


def dry_run(module: ModuleDecl, ctx: EvalContext | None = None):
    """Symbolically evaluate a module against a context.

    Returns (ModuleMetadata, TapeGraph).  Context rejection (a statically
    true `fail when`) is reported through metadata.failed, never raised.
    """
    ctx = ctx or EvalContext()
    ctx.check_order(module.kind)
    walker = _Walker(module, ctx, mode="dry")
    walker.run()
    meta = _extract_metadata(module, walker)
    bound = _static_primcall_count(module.body)
    if len(walker.tape.nodes) > bound:
        raise EvalError(
            f"tape grew past its static bound ({len(walker.tape.nodes)} > {bound})"
        )
    return meta, walker.tape


def full_run(module: ModuleDecl, ctx: EvalContext, bindings: dict,
             tape: TapeGraph | None = None):
    """Execute a module over bound datasets, yielding PrimitiveEvents.

    `bindings` maps tape source-node ids to lists of records.  dry_run must
    have succeeded for the same (module, ctx); pass its tape to keep node
    ids aligned (it is recomputed otherwise).
    """
    if tape is None:
        _, tape = dry_run(module, ctx)
    walker = _Walker(module, ctx, mode="full", data=bindings, tape=tape)
    return walker.iter_events()


# ------------------------------------------------------------------ the walker


class _Walker:
    def __init__(self, module: ModuleDecl, ctx: EvalContext, mode: str,
                 data: dict | None = None, tape: TapeGraph | None = None):
        self.module = module
        self.ctx = ctx
        self.mode = mode  # "dry" | "full"
        self.data = data or {}
        self.tape = tape if tape is not None else TapeGraph()
        self._replay = tape is not None and mode == "full"
        self._node_cursor = 0
        self.scope: dict = {}
        self.env: dict = {}
        self.failed = False
        self.fail_reason: str | None = None
        self.returned = None
        self.events: list = []
        self.iter_depth: list = [0]
        self._aborted = False
        self._bind_params()

    # -- parameters --------------------------------------------------------

    def _bind_params(self) -> None:
        for p in self.module.params:
            if p.name in self.ctx.bindings:
                self.scope[p.name] = self.ctx.bindings[p.name]
            elif p.default is not None:
                self.scope[p.name] = p.default
            elif self.mode == "full":
                raise EvalError(f"parameter {p.name!r} has no binding and no default", p.span)
            else:
                self.scope[p.name] = SymVal(instantiate(p.type))

    # -- driver --------------------------------------------------------------

    def run(self) -> None:
        for stmt in self.module.body:
            if self.failed or self._aborted:
                break
            self._stmt(stmt)

    def iter_events(self):
        for stmt in self.module.body:
            if self._aborted:
                break
            yield from self._stmt_events(stmt)

    # In full mode every statement walk is a generator so events stream out
    # in body order; in dry mode the same code runs with no events yielded.

    def _stmt(self, stmt) -> None:
        for _ in self._stmt_events(stmt):
            pass

    def _stmt_events(self, stmt):
        if isinstance(stmt, LetStmt):
            self.scope[stmt.name] = yield from self._expr(stmt.value)
            return
        if isinstance(stmt, PrimCallStmt):
            yield from self._expr(stmt.call)
            return
        if isinstance(stmt, ForEachStmt):
            yield from self._foreach(stmt)
            return
        if isinstance(stmt, IfStmt):
            yield from self._if(stmt)
            return
        if isinstance(stmt, FailWhenStmt):
            yield from self._fail_when(stmt)
            return
        if isinstance(stmt, ReturnStmt):
            self.returned = yield from self._expr(stmt.value)
            return
        raise EvalError(f"unknown statement {type(stmt).__name__}", getattr(stmt, "span", None))

    def _foreach(self, stmt: ForEachStmt):
        source = yield from self._expr(stmt.source)
        if not isinstance(source, SourceVal):
            raise EvalError("foreach must iterate a declared data source", stmt.span)
        if self.mode == "dry":
            # One symbolic element per source.
            self.scope[stmt.var] = SymVal(instantiate(source.spec.elem_type),
                                          source=source.node)
            for b in stmt.body:
                if self.failed:
                    return
                yield from self._stmt_events(b)
            return
        if source.node not in self.data:
            raise DataError(
                f"source {source.spec.name} (node {source.node}) has no bound dataset"
            )
        records = self.data[source.node]
        self.iter_depth.append(0)
        try:
            for i, record in enumerate(records):
                err = datagen.validate_value(record, source.spec.elem_type)
                if err:
                    raise DataError(
                        f"source {source.spec.name} record {i}: {err} "
                        f"(expected {render_type(source.spec.elem_type)})"
                    )
                self.iter_depth[-1] = i
                self.scope[stmt.var] = record
                for b in stmt.body:
                    if self._aborted:
                        return
                    yield from self._stmt_events(b)
        finally:
            self.iter_depth.pop()

    def _if(self, stmt: IfStmt):
        cond = yield from self._expr(stmt.cond)
        if isinstance(cond, SymVal):
            if self.mode == "full":
                raise EvalError("if condition did not resolve to a value", stmt.span)
            # Data-dependent branch: record both arms.
            for b in stmt.then + stmt.orelse:
                if self.failed:
                    return
                yield from self._stmt_events(b)
            return
        branch = stmt.then if _truthy(cond, stmt.span) else stmt.orelse
        for b in branch:
            if self.failed or self._aborted:
                return
            yield from self._stmt_events(b)

    def _fail_when(self, stmt: FailWhenStmt):
        cond = yield from self._expr(stmt.cond)
        if isinstance(cond, SymVal):
            # Not statically decidable; full runs will evaluate it per datum.
            return
        if _truthy(cond, stmt.span):
            reason = stmt.reason if stmt.reason is not None else _render_cond(stmt.cond)
            if self.mode == "dry":
                self.failed = True
                self.fail_reason = reason
            else:
                self._aborted = True
                yield PrimitiveEvent(-1, "Fail.When", [reason], self.iter_depth[-1])

    # -- expressions -------------------------------------------------------

    def _expr(self, expr: Expr):
        if isinstance(expr, LiteralExpr):
            return expr.value
        if isinstance(expr, NameExpr):
            if expr.name not in self.scope:
                raise EvalError(f"unbound name {expr.name!r}", expr.span)
            return self.scope[expr.name]
        if isinstance(expr, TypeLiteralExpr):
            return expr
        if isinstance(expr, FieldExpr):
            base = yield from self._expr(expr.base)
            return self._field(base, expr)
        if isinstance(expr, UnaryExpr):
            val = yield from self._expr(expr.operand)
            return self._unary(expr, val)
        if isinstance(expr, BinaryExpr):
            left = yield from self._expr(expr.left)
            right = yield from self._expr(expr.right)
            return self._binary(expr, left, right)
        if isinstance(expr, PrimCallExpr):
            result = yield from self._primcall(expr)
            return result
        raise EvalError(f"unknown expression {type(expr).__name__}", getattr(expr, "span", None))

    def _field(self, base, expr: FieldExpr):
        if isinstance(base, SymVal):
            if isinstance(base.type, RecordT):
                ftype = base.type.field_type(expr.name)
                if ftype is None:
                    raise EvalError(
                        f"element of type {render_type(base.type)} has no field {expr.name!r}",
                        expr.span,
                    )
                return SymVal(ftype, source=base.source)
            raise EvalError(
                f"cannot access field {expr.name!r} on {render_type(base.type)}", expr.span
            )
        if isinstance(base, dict):
            if expr.name not in base:
                raise DataError(f"record has no field {expr.name!r}")
            return base[expr.name]
        if isinstance(base, Atom):
            if expr.name in ("z", "pos", "vel"):
                return getattr(base, expr.name)
            raise EvalError(f"Atom has no field {expr.name!r}", expr.span)
        raise EvalError(f"cannot access field {expr.name!r} on {type(base).__name__}", expr.span)

    def _unary(self, expr: UnaryExpr, val):
        if isinstance(val, SymVal):
            return SymVal(val.type if expr.op == "-" else ScalarT())
        if expr.op == "-":
            if isinstance(val, (int, float)) and not isinstance(val, bool):
                return -val
            raise EvalError("unary minus needs a number", expr.span)
        return not _truthy(val, expr.span)

    def _binary(self, expr: BinaryExpr, left, right):
        op = expr.op
        if isinstance(left, SymVal) or isinstance(right, SymVal):
            return SymVal(ScalarT())
        if op in ("and", "or"):
            l, r = _truthy(left, expr.span), _truthy(right, expr.span)
            return (l and r) if op == "and" else (l or r)
        if op in ("==", "!="):
            eq = left == right
            return eq if op == "==" else not eq
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                   for v in (left, right)):
            raise EvalError(f"operator {op!r} needs numeric operands", expr.span)
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op == "/":
            if right == 0:
                raise EvalError("division by zero", expr.span)
            return left / right
        if op == "<":
            return left < right
        if op == "<=":
            return left <= right
        if op == ">":
            return left > right
        if op == ">=":
            return left >= right
        raise EvalError(f"unknown operator {op!r}", expr.span)

    # -- primitives -----------------------------------------------------------

    def _primcall(self, call: PrimCallExpr):
        args = []
        for a in call.args:
            val = yield from self._expr(a)
            args.append(val)
        if self.mode == "dry":
            return self._record_prim(call, args)
        value, emit = self._full_prim(call, args)
        if emit:
            yield PrimitiveEvent(self._node_id_for(call), call.prim,
                                 args, self.iter_depth[-1])
        return value

    # In full mode node ids are looked up from the dry tape by source span,
    # keeping event.node stable between the two runs.

    def _node_id_for(self, call: PrimCallExpr) -> int:
        for node in self.tape.nodes:
            if node.span == call.span and node.prim == call.prim:
                return node.id
        return -1

    def _record_prim(self, call: PrimCallExpr, args: list):
        kind = self.module.kind
        prim = call.prim
        arg_refs = [self._arg_ref(a) for a in args]
        arg_types = [self._arg_type(a) for a in args]

        def node(result_type):
            return self.tape.add(prim, arg_refs, arg_types, result_type, call.span)

        if call.obj == "Data":
            if call.method == "Input":
                t = self._type_arg(call, args, 0)
                n = node(t)
                return SymVal(t, node=n.id)
            spec_args = tuple(self._literal_args(call, args))
            try:
                spec = datagen.source_spec(call.method, spec_args)
            except datagen.GeneratorError as e:
                raise EvalError(str(e), call.span)
            n = node(spec.elem_type)
            return SourceVal(n.id, spec)

        if call.obj == "Env":
            if call.method == "Get":
                key = self._str_arg(call, args, 0)
                node(ScalarT())
                return self._env_get(key)
            if call.method == "Set":
                key = self._str_arg(call, args, 0)
                node(None)
                self.env[key] = args[1] if not isinstance(args[1], SymVal) else None
                return None
            raise EvalError(f"unknown Env primitive {call.method!r}", call.span)

        if call.obj == "Train":
            self._need_arity(call, args, 2)
            node(None)
            return None

        if call.obj == "Test":
            self._need_arity(call, args, 2)
            node(None)
            return None

        if call.obj == "Gradient":
            if call.method != "Input":
                raise EvalError(f"unknown Gradient primitive {call.method!r}", call.span)
            self._need_arity(call, args, 1)
            t = _gradient_type(arg_types[0])
            n = node(t)
            return SymVal(t, node=n.id)

        if call.obj == "Model":
            return self._model_prim(call, args, arg_types, node, kind)

        raise EvalError(f"unknown primitive object {call.obj!r}", call.span)

    def _model_prim(self, call: PrimCallExpr, args, arg_types, node, kind: ModuleKind):
        m = call.method
        if m == "Predict" and kind != ModuleKind.MODEL:
            self._need_arity(call, args, 1)
            t = fresh_typevar()
            n = node(t)
            return SymVal(t, node=n.id)
        if m in ("Predict", "Classify", "Pretrain"):
            # Head declaration: (value read by the head, emitted type).
            if kind != ModuleKind.MODEL:
                raise EvalError(f"Model.{m} head outside a model module", call.span)
            self._need_arity(call, args, 2)
            if not isinstance(args[1], TypeLiteralExpr):
                raise EvalError(f"Model.{m} second argument must be a type", call.span)
            node(instantiate(args[1].type))
            return None
        if m == "Linear":
            self._need_arity(call, args, 2)
            width = args[1]
            if isinstance(width, TypeLiteralExpr):
                out = instantiate(width.type)
            elif isinstance(width, (int, float)) and not isinstance(width, bool):
                out = TensorT((int(width),))
            elif isinstance(width, SymVal):
                out = TensorT((fresh_dim(),))
            else:
                raise EvalError("Model.Linear width must be a number or a type", call.span)
            n = node(out)
            return SymVal(out, node=n.id)
        if m in ("Tanh", "Relu", "Softmax"):
            self._need_arity(call, args, 1)
            t = arg_types[0] or ScalarT()
            n = node(t)
            return SymVal(t, node=n.id)
        if m == "Sum":
            self._need_arity(call, args, 1)
            t = arg_types[0]
            if not isinstance(t, ListT):
                raise EvalError("Model.Sum needs a List value", call.span)
            n = node(t.elem)
            return SymVal(t.elem, node=n.id)
        if m == "Map":
            self._need_arity(call, args, 1)
            t = arg_types[0]
            if not isinstance(t, ListT):
                raise EvalError("Model.Map needs a List value", call.span)
            out = ListT(ScalarT())
            n = node(out)
            return SymVal(out, node=n.id)
        if m == "Nearest":
            self._need_arity(call, args, 2)
            out = LabelT(fresh_dim())
            n = node(out)
            return SymVal(out, node=n.id)
        raise EvalError(f"unknown Model primitive {m!r}", call.span)

    def _full_prim(self, call: PrimCallExpr, args: list) -> tuple:
        """Returns (value, emit_event).  Declarative primitives stay silent."""
        if call.obj == "Data":
            if call.method == "Input":
                raise EvalError("Data.Input is symbolic-only; bind a dataset instead",
                                call.span)
            spec_args = tuple(self._literal_args(call, args))
            spec = datagen.source_spec(call.method, spec_args)
            return SourceVal(self._node_id_for(call), spec), False
        if call.obj == "Env":
            if call.method == "Get":
                return self._env_get(self._str_arg(call, args, 0)), False
            self.env[self._str_arg(call, args, 0)] = args[1]
            return None, False
        if call.obj == "Gradient":
            return GradientRef(self._node_id_for(call), args[0]), True
        if call.obj == "Model" and call.method == "Predict" \
                and self.module.kind != ModuleKind.MODEL:
            return PredictRef(self._node_id_for(call), args[0]), True
        if call.obj in ("Train", "Test"):
            return None, True  # the event carries the values
        if call.obj == "Model":
            return None, False  # head declarations produce no runtime value
        raise EvalError(f"unknown primitive object {call.obj!r}", call.span)

    # -- helpers ------------------------------------------------------------

    def _env_get(self, key: str):
        if "." in key:
            kind, _, field_name = key.partition(".")
            meta = self.ctx.lookup(kind)
            if meta is None:
                return SymVal(fresh_typevar())
            value = meta.derived(field_name)
            return SymVal(fresh_typevar()) if value is None else value
        if key in self.env:
            return self.env[key]
        return SymVal(fresh_typevar())

    def _arg_ref(self, val) -> dict:
        if isinstance(val, SymVal):
            if val.node is not None:
                return {"kind": "node", "id": val.node}
            if val.source is not None:
                return {"kind": "elem", "source": val.source}
            return {"kind": "sym"}
        if isinstance(val, SourceVal):
            return {"kind": "node", "id": val.node}
        if isinstance(val, TypeLiteralExpr):
            return {"kind": "type", "type": render_type(val.type)}
        return {"kind": "lit", "value": val}

    def _arg_type(self, val) -> SemanticType | None:
        if isinstance(val, SymVal):
            return val.type
        if isinstance(val, SourceVal):
            return ListT(val.spec.elem_type)
        if isinstance(val, TypeLiteralExpr):
            return val.type
        if isinstance(val, bool):
            return ScalarT()
        if isinstance(val, (int, float)):
            return ScalarT()
        if isinstance(val, str):
            return ScalarT()
        return None

    def _type_arg(self, call, args, i) -> SemanticType:
        if i >= len(args) or not isinstance(args[i], TypeLiteralExpr):
            raise EvalError(f"{call.prim} argument {i} must be a type", call.span)
        return instantiate(args[i].type)

    def _str_arg(self, call, args, i) -> str:
        if i >= len(args) or not isinstance(args[i], str):
            raise EvalError(f"{call.prim} argument {i} must be a string", call.span)
        return args[i]

    def _literal_args(self, call, args) -> list:
        out = []
        for i, a in enumerate(args):
            if isinstance(a, SymVal):
                raise EvalError(
                    f"{call.prim} argument {i} must be a constant or parameter", call.span
                )
            if isinstance(a, (bool, int, float, str)):
                out.append(a)
            else:
                raise EvalError(f"{call.prim} argument {i} has no literal value", call.span)
        return out

    def _need_arity(self, call, args, n: int) -> None:
        if len(args) != n:
            raise EvalError(f"{call.prim} takes {n} argument(s), got {len(args)}", call.span)


def _truthy(v, span) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return v != 0
    raise EvalError(f"expected a boolean, got {type(v).__name__}", span)


def _render_cond(expr: Expr) -> str:
    from .sail_ast import render_expr

    return render_expr(expr)


def _gradient_type(t: SemanticType | None) -> SemanticType:
    """Type of d(model output)/d(input): positions only for atom lists."""
    if isinstance(t, ListT) and isinstance(t.elem, AtomT):
        return TensorT((fresh_dim(),))
    if isinstance(t, TensorT):
        return t
    return ScalarT() if t is None or isinstance(t, ScalarT) else TensorT((fresh_dim(),))


# ---------------------------------------------------------- metadata extraction


_MODEL_INVOKING = ("Train.Classify", "Train.Predict", "Test.Compare")


def infer_io_types(tape: TapeGraph) -> tuple:
    """(input type, output type) flowing through model-invoking primitives.

    Both must come out ground; wildcards surviving inference mean the module
    under-determines its data and is reported as an InferenceError.
    """
    ins: list[SemanticType] = []
    outs: list[SemanticType] = []
    for node in tape.nodes:
        if node.prim in _MODEL_INVOKING:
            if node.arg_types[0] is not None:
                ins.append(node.arg_types[0])
            if len(node.arg_types) > 1 and node.arg_types[1] is not None:
                outs.append(node.arg_types[1])
        elif node.prim == "Model.Predict" and len(node.arg_types) == 1:
            if node.arg_types[0] is not None:
                ins.append(node.arg_types[0])
    if not ins:
        raise InferenceError("tape has no model-invoking primitives")
    in_type = _unify_all(ins, "input")
    out_type = _unify_all(outs, "output") if outs else None
    if not in_type.is_ground():
        raise InferenceError(f"inferred input type {render_type(in_type)} is not ground")
    if out_type is not None and not out_type.is_ground():
        raise InferenceError(f"inferred output type {render_type(out_type)} is not ground")
    if out_type is None:
        raise InferenceError("tape never fixes a model output type")
    return in_type, out_type


def _unify_all(types: list, label: str) -> SemanticType:
    acc = types[0]
    subst = None
    for t in types[1:]:
        subst = unify(acc, t, subst)
        if not subst:
            raise InferenceError(
                f"conflicting {label} types: {render_type(acc)} vs {render_type(t)} "
                f"({subst.reason})"
            )
        acc = subst.apply(acc)
    return subst.apply(acc) if subst else acc


def _extract_metadata(module: ModuleDecl, walker: _Walker) -> ModuleMetadata:
    tape = walker.tape
    tasks = set()
    fixtures = set()
    task_heads: dict = {}
    has_train_nodes = False
    for node in tape.nodes:
        obj, _, method = node.prim.partition(".")
        if obj == "Train":
            tasks.add(method.lower())
            has_train_nodes = True
        elif obj == "Test":
            if method == "Compare":
                tasks.add("compare")
            else:
                fixtures.add(method.lower())
        elif obj == "Model" and method in ("Predict", "Classify", "Pretrain"):
            if module.kind == ModuleKind.MODEL:
                tasks.add(method.lower())
                task_heads[method.lower()] = node.result_type
            else:
                tasks.add("predict")

    meta_map = {m.key: m.value for m in module.metas}
    md = ModuleMetadata(
        kind=module.kind,
        name=module.name,
        field=str(meta_map.get("field", "")),
        tasks=tuple(sorted(tasks)),
        fixtures=tuple(sorted(fixtures)),
        suggestions={p.name: list(p.suggest) for p in module.params if p.suggest},
        params={p.name: p.default for p in module.params},
        relationships=tuple((r.kind.value, r.name) for r in module.requires),
        meta=meta_map,
        env=dict(walker.env),
        failed=walker.failed,
        reason=walker.fail_reason,
    )
    md._has_train_nodes = has_train_nodes
    md.task_heads = task_heads

    if module.kind == ModuleKind.PROBLEM:
        try:
            md.in_type, md.out_type = infer_io_types(tape)
        except InferenceError:
            if not walker.failed:
                raise
        pre = [n for n in tape.nodes if n.prim == "Train.Pretrain"]
        if pre:
            p_in = _unify_all([n.arg_types[0] for n in pre], "pretrain input")
            p_out = _unify_all([n.arg_types[1] for n in pre], "pretrain output")
            md.pretrain_io = (p_in, p_out)
        md.data_stats = _data_stats(tape)
        md.data_stats["input_width"] = _dense_width(md.in_type, md.data_stats)
        md.data_stats["classes"] = (
            md.out_type.k
            if isinstance(md.out_type, LabelT) and isinstance(md.out_type.k, int)
            else 1
        )
    elif module.kind == ModuleKind.MODEL:
        inputs = [n for n in tape.nodes if n.prim == "Data.Input"]
        if not inputs and not walker.failed:
            raise EvalError(f"model {module.name!r} declares no Data.Input")
        if inputs:
            md.in_type = inputs[0].result_type
        md.out_type = md.task_heads.get("predict") or md.task_heads.get("classify")
    elif module.kind == ModuleKind.CONVERTER:
        inputs = [n for n in tape.nodes if n.prim == "Data.Input"]
        kernel = meta_map.get("kernel")
        dst = walker.returned
        if not inputs or kernel is None or not isinstance(dst, TypeLiteralExpr):
            raise EvalError(
                f"converter {module.name!r} needs a Data.Input, a `meta kernel`, "
                "and a returned type"
            )
        md.converter = (inputs[0].result_type, dst.type, str(kernel))
        md.in_type, md.out_type = inputs[0].result_type, dst.type
    return md


def _dense_width(t: SemanticType | None, stats: dict) -> int:
    """Flattened feature count of an input type (8 per embedded atom)."""
    from .typesys import ImageT

    if isinstance(t, TensorT) and all(isinstance(d, int) for d in t.dims):
        width = 1
        for d in t.dims:
            width *= d
        return width
    if isinstance(t, ImageT) and all(isinstance(d, int) for d in (t.h, t.w, t.c)):
        return t.h * t.w * t.c
    if isinstance(t, ListT) and isinstance(t.elem, AtomT):
        for src in stats.get("sources", []):
            if src.get("elems", 1) > 1:
                return 8 * max(1, src["elems"] // 7)
        return 8
    return 1


def _data_stats(tape: TapeGraph) -> dict:
    sources = []
    total = 0
    train_samples = 0
    test_samples = 0
    consumed_by_train = _source_consumers(tape)
    for node in tape.nodes:
        if not node.prim.startswith("Data.") or node.prim == "Data.Input":
            continue
        args = [a.get("value") for a in node.args if a["kind"] == "lit"]
        try:
            spec = datagen.source_spec(node.prim.split(".", 1)[1], tuple(args))
        except datagen.GeneratorError:
            continue
        sources.append({"node": node.id, "name": spec.name, "samples": spec.n_samples,
                        "elems": spec.elems_per_sample})
        total += spec.total_elements
        if node.id in consumed_by_train:
            train_samples += spec.n_samples
        else:
            test_samples += spec.n_samples
    return {
        "sources": sources,
        "total_elements": total,
        "train_samples": train_samples,
        "test_samples": test_samples,
    }


def _source_consumers(tape: TapeGraph) -> set:
    """Source node ids whose elements feed any Train.* primitive."""
    train_sources = set()
    for node in tape.nodes:
        if node.prim.startswith("Train."):
            for ref in node.args:
                if ref["kind"] == "elem":
                    train_sources.add(ref["source"])
    return train_sources
