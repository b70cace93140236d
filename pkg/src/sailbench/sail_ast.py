"""AST node types for SAIL module files, plus canonical JSON and a printer.

Nodes compare structurally: source spans are carried for diagnostics but
excluded from equality, so `parse(render(decls)) == decls` holds even though
printing moves everything around.  Type expressions compare up to wildcard
renaming for the same reason.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .typesys import SemanticType, render_type, types_alpha_equal


class ModuleKind(str, Enum):
    PROBLEM = "problem"
    MODEL = "model"
    METRIC = "metric"
    RANKING = "ranking"
    SOFTWARE = "software"
    HARDWARE = "hardware"
    CONVERTER = "converter"


KIND_KEYWORDS = {k.value: k for k in ModuleKind}

# Well-known objects a primitive call can target.
PRIM_OBJECTS = ("Train", "Test", "Model", "Env", "Data", "Gradient")


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int  # 1-based
    col: int  # 1-based
    length: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


def _span_field():
    return field(compare=False, repr=False)


# ------------------------------------------------------------------ expressions


class Expr:
    pass


@dataclass
class LiteralExpr(Expr):
    value: object  # int | float | str | bool
    span: SourceSpan = _span_field()


@dataclass
class NameExpr(Expr):
    name: str
    span: SourceSpan = _span_field()


@dataclass
class FieldExpr(Expr):
    base: Expr
    name: str
    span: SourceSpan = _span_field()


@dataclass
class UnaryExpr(Expr):
    op: str  # "-" | "not"
    operand: Expr
    span: SourceSpan = _span_field()


@dataclass
class BinaryExpr(Expr):
    op: str  # == != < <= > >= + - * / and or
    left: Expr
    right: Expr
    span: SourceSpan = _span_field()


@dataclass
class TypeLiteralExpr(Expr):
    """A type used as a value (converter targets, layer output shapes)."""

    type: SemanticType
    span: SourceSpan = _span_field()

    def __eq__(self, other):
        return isinstance(other, TypeLiteralExpr) and types_alpha_equal(
            self.type, other.type
        )


@dataclass
class PrimCallExpr(Expr):
    """`Obj.Method(args)` where Obj is a well-known object."""

    obj: str
    method: str
    args: list
    span: SourceSpan = _span_field()

    @property
    def prim(self) -> str:
        return f"{self.obj}.{self.method}"


# ------------------------------------------------------------------- statements


class Stmt:
    pass


@dataclass
class LetStmt(Stmt):
    name: str
    value: Expr
    span: SourceSpan = _span_field()


@dataclass
class ForEachStmt(Stmt):
    var: str
    source: Expr
    body: list
    span: SourceSpan = _span_field()


@dataclass
class IfStmt(Stmt):
    cond: Expr
    then: list
    orelse: list
    span: SourceSpan = _span_field()


@dataclass
class FailWhenStmt(Stmt):
    cond: Expr
    reason: str | None
    span: SourceSpan = _span_field()


@dataclass
class ReturnStmt(Stmt):
    value: Expr
    span: SourceSpan = _span_field()


@dataclass
class PrimCallStmt(Stmt):
    call: PrimCallExpr
    span: SourceSpan = _span_field()


# ----------------------------------------------------------------- module items


@dataclass
class MetaDecl:
    key: str
    value: object  # literal
    span: SourceSpan = _span_field()


@dataclass
class ParamDecl:
    name: str
    type: SemanticType
    default: object | None
    suggest: list | None
    span: SourceSpan = _span_field()

    def __eq__(self, other):
        return (
            isinstance(other, ParamDecl)
            and self.name == other.name
            and types_alpha_equal(self.type, other.type)
            and self.default == other.default
            and self.suggest == other.suggest
        )


@dataclass
class RequiresDecl:
    kind: ModuleKind
    name: str
    span: SourceSpan = _span_field()


@dataclass
class ModuleDecl:
    kind: ModuleKind
    name: str
    metas: list
    params: list
    requires: list
    body: list  # statements
    span: SourceSpan = _span_field()


# -------------------------------------------------------------- canonical JSON


def ast_to_canonical_json(decls: list) -> str:
    """Stable textual form of a parsed file: sorted keys, compact separators.

    The same source parses to the same bytes on any platform, so these
    strings are safe to diff and to freeze as golden files.
    """
    payload = [_decl_dict(d) for d in decls]
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _decl_dict(d: ModuleDecl) -> dict:
    return {
        "node": "module",
        "kind": d.kind.value,
        "name": d.name,
        "meta": [{"key": m.key, "value": _lit(m.value), "span": _span(m.span)} for m in d.metas],
        "params": [
            {
                "name": p.name,
                "type": render_type(p.type),
                "default": _lit(p.default),
                "suggest": None if p.suggest is None else [_lit(v) for v in p.suggest],
                "span": _span(p.span),
            }
            for p in d.params
        ],
        "requires": [
            {"kind": r.kind.value, "name": r.name, "span": _span(r.span)} for r in d.requires
        ],
        "body": [_stmt_dict(s) for s in d.body],
        "span": _span(d.span),
    }


def _span(s: SourceSpan) -> dict:
    return {"line": s.line, "col": s.col, "len": s.length}


def _lit(v):
    # bools before ints: bool is an int subclass.
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    raise ValueError(f"not a literal: {v!r}")


def _stmt_dict(s: Stmt) -> dict:
    if isinstance(s, LetStmt):
        return {"node": "let", "name": s.name, "value": _expr_dict(s.value), "span": _span(s.span)}
    if isinstance(s, ForEachStmt):
        return {
            "node": "foreach",
            "var": s.var,
            "source": _expr_dict(s.source),
            "body": [_stmt_dict(b) for b in s.body],
            "span": _span(s.span),
        }
    if isinstance(s, IfStmt):
        return {
            "node": "if",
            "cond": _expr_dict(s.cond),
            "then": [_stmt_dict(b) for b in s.then],
            "else": [_stmt_dict(b) for b in s.orelse],
            "span": _span(s.span),
        }
    if isinstance(s, FailWhenStmt):
        return {
            "node": "fail_when",
            "cond": _expr_dict(s.cond),
            "reason": s.reason,
            "span": _span(s.span),
        }
    if isinstance(s, ReturnStmt):
        return {"node": "return", "value": _expr_dict(s.value), "span": _span(s.span)}
    if isinstance(s, PrimCallStmt):
        return {"node": "call", "call": _expr_dict(s.call), "span": _span(s.span)}
    raise ValueError(f"unknown statement {s!r}")


def _expr_dict(e: Expr) -> dict:
    if isinstance(e, LiteralExpr):
        return {"node": "lit", "value": _lit(e.value), "span": _span(e.span)}
    if isinstance(e, NameExpr):
        return {"node": "name", "name": e.name, "span": _span(e.span)}
    if isinstance(e, FieldExpr):
        return {"node": "field", "base": _expr_dict(e.base), "name": e.name, "span": _span(e.span)}
    if isinstance(e, UnaryExpr):
        return {"node": "unary", "op": e.op, "operand": _expr_dict(e.operand), "span": _span(e.span)}
    if isinstance(e, BinaryExpr):
        return {
            "node": "binary",
            "op": e.op,
            "left": _expr_dict(e.left),
            "right": _expr_dict(e.right),
            "span": _span(e.span),
        }
    if isinstance(e, TypeLiteralExpr):
        return {"node": "type", "type": render_type(e.type), "span": _span(e.span)}
    if isinstance(e, PrimCallExpr):
        return {
            "node": "prim",
            "obj": e.obj,
            "method": e.method,
            "args": [_expr_dict(a) for a in e.args],
            "span": _span(e.span),
        }
    raise ValueError(f"unknown expression {e!r}")


# ------------------------------------------------------------------- rendering


def render(decls: list) -> str:
    """Canonical printer.  parse(render(decls)) == decls, spans aside."""
    chunks = [_render_decl(d) for d in decls]
    return "\n".join(chunks) + ("\n" if chunks else "")


def _render_decl(d: ModuleDecl) -> str:
    lines = [f'{d.kind.value} "{_escape(d.name)}" {{']
    for m in d.metas:
        lines.append(f"  meta {m.key} = {_render_lit(m.value)}")
    for p in d.params:
        line = f"  param {p.name}: {render_type(p.type)}"
        if p.default is not None:
            line += f" = {_render_lit(p.default)}"
        if p.suggest is not None:
            line += " suggest [" + ", ".join(_render_lit(v) for v in p.suggest) + "]"
        lines.append(line)
    for r in d.requires:
        lines.append(f'  requires {r.kind.value} "{_escape(r.name)}"')
    for s in d.body:
        lines.extend(_render_stmt(s, 1))
    lines.append("}")
    return "\n".join(lines)


def _render_stmt(s: Stmt, depth: int) -> list:
    pad = "  " * depth
    if isinstance(s, LetStmt):
        return [f"{pad}let {s.name} = {render_expr(s.value)}"]
    if isinstance(s, ForEachStmt):
        out = [f"{pad}foreach {s.var} in {render_expr(s.source)} {{"]
        for b in s.body:
            out.extend(_render_stmt(b, depth + 1))
        out.append(f"{pad}}}")
        return out
    if isinstance(s, IfStmt):
        out = [f"{pad}if {render_expr(s.cond)} {{"]
        for b in s.then:
            out.extend(_render_stmt(b, depth + 1))
        if s.orelse:
            out.append(f"{pad}}} else {{")
            for b in s.orelse:
                out.extend(_render_stmt(b, depth + 1))
        out.append(f"{pad}}}")
        return out
    if isinstance(s, FailWhenStmt):
        line = f"{pad}fail when {render_expr(s.cond)}"
        if s.reason is not None:
            line += f' "{_escape(s.reason)}"'
        return [line]
    if isinstance(s, ReturnStmt):
        return [f"{pad}return {render_expr(s.value)}"]
    if isinstance(s, PrimCallStmt):
        return [f"{pad}{render_expr(s.call)}"]
    raise ValueError(f"unknown statement {s!r}")


_PRECEDENCE = {
    "or": 1, "and": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4, "*": 5, "/": 5,
}


def render_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, LiteralExpr):
        return _render_lit(e.value)
    if isinstance(e, NameExpr):
        return e.name
    if isinstance(e, FieldExpr):
        return f"{render_expr(e.base, 9)}.{e.name}"
    if isinstance(e, UnaryExpr):
        inner = render_expr(e.operand, 8)
        text = f"not {inner}" if e.op == "not" else f"-{inner}"
        return f"({text})" if parent_prec >= 8 else text
    if isinstance(e, BinaryExpr):
        prec = _PRECEDENCE[e.op]
        text = f"{render_expr(e.left, prec)} {e.op} {render_expr(e.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, TypeLiteralExpr):
        return render_type(e.type)
    if isinstance(e, PrimCallExpr):
        args = ", ".join(render_expr(a) for a in e.args)
        return f"{e.obj}.{e.method}({args})"
    raise ValueError(f"unknown expression {e!r}")


def _render_lit(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return f'"{_escape(v)}"'
    raise ValueError(f"not a literal: {v!r}")


def _escape(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"')
    return out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
