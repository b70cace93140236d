"""Lexer and recursive-descent parser for SAIL module files.

Grammar::

    file      := moduledecl*
    moduledecl:= KIND STRING "{" item* "}"
    KIND      := "problem" | "model" | "metric" | "ranking"
               | "software" | "hardware" | "converter"
    item      := "meta" IDENT "=" literal
               | "param" IDENT ":" typeexpr ("=" literal)?
                         ("suggest" "[" literal ("," literal)* "]")?
               | "requires" KIND STRING
               | stmt
    stmt      := "let" IDENT "=" expr
               | "foreach" IDENT "in" expr "{" stmt* "}"
               | "if" expr "{" stmt* "}" ("else" "{" stmt* "}")?
               | "fail" "when" expr (STRING)?
               | "return" expr
               | primcall
    primcall  := ("Train"|"Test"|"Model"|"Env"|"Data"|"Gradient") "." IDENT
                 "(" (expr ("," expr)*)? ")"
    typeexpr  := "Scalar" | "Tensor" "[" dims "]" | "List" "[" typeexpr "]"
               | "Atom" | "Image" "[" dim "," dim "," dim "]" | "Label" "[" dim "]"
    dim       := INT | "?"
    literal   := INT | FLOAT | STRING | "true" | "false"

Expressions support `or`/`and`/`not`, comparisons, `+ - * /`, unary minus,
field access (`p.x`), parentheses, and primitive calls.  Comments run from
`#` or `//` to end of line.  Files are UTF-8 with LF line endings.

The parser never throws anything other than LexError/ParseError, whatever
the input bytes, and both carry the source span of the offending token.
"""

from __future__ import annotations

from .sail_ast import (
    KIND_KEYWORDS,
    PRIM_OBJECTS,
    BinaryExpr,
    Expr,
    FailWhenStmt,
    FieldExpr,
    ForEachStmt,
    IfStmt,
    LetStmt,
    LiteralExpr,
    MetaDecl,
    ModuleDecl,
    NameExpr,
    ParamDecl,
    PrimCallExpr,
    PrimCallStmt,
    RequiresDecl,
    ReturnStmt,
    SourceSpan,
    Stmt,
    TypeLiteralExpr,
    UnaryExpr,
)
from .typesys import (
    AtomT,
    ImageT,
    LabelT,
    ListT,
    ScalarT,
    SemanticType,
    TensorT,
    fresh_dim,
)

# Token kinds.  Keywords get their own kind ("kw_<word>").
T_IDENT = "ident"
T_INT = "int"
T_FLOAT = "float"
T_STR = "str"
T_PUNCT = "punct"
T_EOF = "eof"

KEYWORDS = (
    list(KIND_KEYWORDS)
    + ["meta", "param", "requires", "suggest", "let", "foreach", "in", "if",
       "else", "fail", "when", "return", "true", "false", "and", "or", "not"]
)

_PUNCT_DOUBLES = ("==", "!=", "<=", ">=")
_PUNCT_SINGLES = "{}[](),:=.<>+-*/?"


class SailError(Exception):
    """Base for lex and parse errors; carries a source span."""

    def __init__(self, message: str, span: SourceSpan, expected: tuple = ()):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span
        self.expected = expected


class LexError(SailError):
    pass


class ParseError(SailError):
    pass


class Token:
    __slots__ = ("kind", "text", "value", "span")

    def __init__(self, kind: str, text: str, value, span: SourceSpan):
        self.kind = kind
        self.text = text
        self.value = value
        self.span = span

    def __repr__(self) -> str:
        return f"Token({self.kind}, {self.text!r})"


def tokenize(source: str, path: str = "<memory>") -> list:
    """Lex a file into tokens.  Whitespace and comments are discarded."""
    tokens: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)

    def span(length: int, at_line: int | None = None, at_col: int | None = None) -> SourceSpan:
        return SourceSpan(path, at_line or line, at_col or col, length)

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#" or source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch == '"':
            text, value, length = _lex_string(source, i, span(1))
            tokens.append(Token(T_STR, text, value, span(length)))
            i += length
            col += length
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            text, value, length = _lex_number(source, i)
            kind = T_FLOAT if isinstance(value, float) else T_INT
            tokens.append(Token(kind, text, value, span(length)))
            i += length
            col += length
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            if word in KEYWORDS:
                tokens.append(Token(f"kw_{word}", word, word, span(len(word))))
            else:
                tokens.append(Token(T_IDENT, word, word, span(len(word))))
            col += j - i
            i = j
            continue
        two = source[i : i + 2]
        if two in _PUNCT_DOUBLES:
            tokens.append(Token(T_PUNCT, two, two, span(2)))
            i += 2
            col += 2
            continue
        if ch in _PUNCT_SINGLES:
            tokens.append(Token(T_PUNCT, ch, ch, span(1)))
            i += 1
            col += 1
            continue
        raise LexError(f"unexpected character {ch!r}", span(1))
    return tokens


def _lex_string(source: str, start: int, open_span: SourceSpan):
    i = start + 1
    n = len(source)
    out: list[str] = []
    while i < n:
        ch = source[i]
        if ch == '"':
            length = i + 1 - start
            return source[start : i + 1], "".join(out), length
        if ch == "\n":
            break
        if ch == "\\":
            if i + 1 >= n:
                break
            esc = source[i + 1]
            mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
            if mapped is None:
                raise LexError(f"bad escape \\{esc}", open_span)
            out.append(mapped)
            i += 2
            continue
        out.append(ch)
        i += 1
    raise LexError("unterminated string", open_span)


def _lex_number(source: str, start: int):
    i = start
    n = len(source)
    while i < n and source[i].isdigit():
        i += 1
    is_float = False
    if i < n and source[i] == "." and i + 1 < n and source[i + 1].isdigit():
        is_float = True
        i += 1
        while i < n and source[i].isdigit():
            i += 1
    if i < n and source[i] in "eE":
        j = i + 1
        if j < n and source[j] in "+-":
            j += 1
        if j < n and source[j].isdigit():
            is_float = True
            i = j
            while i < n and source[i].isdigit():
                i += 1
    text = source[start:i]
    return text, (float(text) if is_float else int(text)), len(text)


# ---------------------------------------------------------------------- parser


def parse(source: str, path: str = "<memory>") -> list:
    """Parse a file into a list of ModuleDecl.  Raises LexError/ParseError."""
    tokens = tokenize(source, path)
    return _Parser(tokens, path).parse_file()


class _Parser:
    def __init__(self, tokens: list, path: str):
        eof_span = SourceSpan(path, tokens[-1].span.line if tokens else 1,
                              tokens[-1].span.col + tokens[-1].span.length if tokens else 1, 0)
        self.tokens = tokens + [Token(T_EOF, "", None, eof_span)]
        self.pos = 0

    # -- cursor helpers ---------------------------------------------------

    def _peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def _advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != T_EOF:
            self.pos += 1
        return tok

    def _check(self, kind: str, text: str | None = None) -> bool:
        tok = self._peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def _match(self, kind: str, text: str | None = None) -> Token | None:
        if self._check(kind, text):
            return self._advance()
        return None

    def _expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        tok = self._peek()
        if self._check(kind, text):
            return self._advance()
        wanted = what or (text if text else kind)
        raise ParseError(
            f"expected {wanted}, found {tok.text!r}" if tok.kind != T_EOF
            else f"expected {wanted}, found end of file",
            tok.span,
            expected=(wanted,),
        )

    # -- file level --------------------------------------------------------

    def parse_file(self) -> list:
        decls: list[ModuleDecl] = []
        names: set[str] = set()
        while not self._check(T_EOF):
            decl = self._parse_module()
            if decl.name in names:
                raise ParseError(f"duplicate module name {decl.name!r} in file", decl.span)
            names.add(decl.name)
            decls.append(decl)
        return decls

    def _parse_module(self) -> ModuleDecl:
        tok = self._peek()
        kind = KIND_KEYWORDS.get(tok.text) if tok.kind.startswith("kw_") else None
        if kind is None:
            raise ParseError(
                f"expected a module kind, found {tok.text!r}" if tok.kind != T_EOF
                else "expected a module kind, found end of file",
                tok.span,
                expected=tuple(KIND_KEYWORDS),
            )
        self._advance()
        name_tok = self._expect(T_STR, what="module name string")
        span = SourceSpan(tok.span.file, tok.span.line, tok.span.col,
                          name_tok.span.col + name_tok.span.length - tok.span.col)
        self._expect(T_PUNCT, "{")
        metas: list[MetaDecl] = []
        params: list[ParamDecl] = []
        requires: list[RequiresDecl] = []
        body: list[Stmt] = []
        while not self._match(T_PUNCT, "}"):
            if self._check(T_EOF):
                raise ParseError("unterminated module body", self._peek().span, expected=("}",))
            if self._check("kw_meta"):
                metas.append(self._parse_meta())
            elif self._check("kw_param"):
                params.append(self._parse_param())
            elif self._check("kw_requires"):
                requires.append(self._parse_requires())
            else:
                body.append(self._parse_stmt())
        return ModuleDecl(kind, name_tok.value, metas, params, requires, body, span)

    def _parse_meta(self) -> MetaDecl:
        kw = self._advance()
        key = self._expect(T_IDENT, what="meta key")
        self._expect(T_PUNCT, "=")
        value = self._parse_literal()
        return MetaDecl(key.value, value, kw.span)

    def _parse_param(self) -> ParamDecl:
        kw = self._advance()
        name = self._expect(T_IDENT, what="parameter name")
        self._expect(T_PUNCT, ":")
        ptype = self._parse_typeexpr()
        default = None
        if self._match(T_PUNCT, "="):
            default = self._parse_literal()
        suggest = None
        if self._match("kw_suggest"):
            self._expect(T_PUNCT, "[")
            suggest = [self._parse_literal()]
            while self._match(T_PUNCT, ","):
                suggest.append(self._parse_literal())
            self._expect(T_PUNCT, "]")
        return ParamDecl(name.value, ptype, default, suggest, kw.span)

    def _parse_requires(self) -> RequiresDecl:
        kw = self._advance()
        tok = self._peek()
        kind = KIND_KEYWORDS.get(tok.text) if tok.kind.startswith("kw_") else None
        if kind is None:
            raise ParseError(
                f"expected a module kind after requires, found {tok.text!r}",
                tok.span,
                expected=tuple(KIND_KEYWORDS),
            )
        self._advance()
        name = self._expect(T_STR, what="required module name")
        return RequiresDecl(kind, name.value, kw.span)

    def _parse_literal(self):
        tok = self._peek()
        if tok.kind in (T_INT, T_FLOAT, T_STR):
            return self._advance().value
        if tok.kind == "kw_true":
            self._advance()
            return True
        if tok.kind == "kw_false":
            self._advance()
            return False
        if tok.kind == T_PUNCT and tok.text == "-" and self._peek(1).kind in (T_INT, T_FLOAT):
            self._advance()
            return -self._advance().value
        raise ParseError(
            f"expected a literal, found {tok.text!r}", tok.span,
            expected=("number", "string", "true", "false"),
        )

    # -- statements ----------------------------------------------------------

    def _parse_stmt(self) -> Stmt:
        tok = self._peek()
        if self._check("kw_let"):
            self._advance()
            name = self._expect(T_IDENT, what="binding name")
            self._expect(T_PUNCT, "=")
            value = self._parse_expr()
            return LetStmt(name.value, value, tok.span)
        if self._check("kw_foreach"):
            self._advance()
            var = self._expect(T_IDENT, what="loop variable")
            self._expect("kw_in", what="in")
            source = self._parse_expr()
            body = self._parse_block()
            return ForEachStmt(var.value, source, body, tok.span)
        if self._check("kw_if"):
            self._advance()
            cond = self._parse_expr()
            then = self._parse_block()
            orelse: list[Stmt] = []
            if self._match("kw_else"):
                orelse = self._parse_block()
            return IfStmt(cond, then, orelse, tok.span)
        if self._check("kw_fail"):
            self._advance()
            self._expect("kw_when", what="when")
            cond = self._parse_expr()
            reason = None
            if self._check(T_STR):
                reason = self._advance().value
            return FailWhenStmt(cond, reason, tok.span)
        if self._check("kw_return"):
            self._advance()
            value = self._parse_expr()
            return ReturnStmt(value, tok.span)
        if tok.kind == T_IDENT and tok.text in PRIM_OBJECTS and self._peek(1).text == ".":
            call = self._parse_primcall()
            return PrimCallStmt(call, call.span)
        raise ParseError(
            f"expected a statement, found {tok.text!r}" if tok.kind != T_EOF
            else "expected a statement, found end of file",
            tok.span,
            expected=("let", "foreach", "if", "fail", "return", "primitive call"),
        )

    def _parse_block(self) -> list:
        self._expect(T_PUNCT, "{")
        body: list[Stmt] = []
        while not self._match(T_PUNCT, "}"):
            if self._check(T_EOF):
                raise ParseError("unterminated block", self._peek().span, expected=("}",))
            body.append(self._parse_stmt())
        return body

    # -- expressions -----------------------------------------------------------

    def _parse_expr(self) -> Expr:
        return self._parse_or()

    def _parse_or(self) -> Expr:
        left = self._parse_and()
        while self._check("kw_or"):
            op = self._advance()
            right = self._parse_and()
            left = BinaryExpr("or", left, right, op.span)
        return left

    def _parse_and(self) -> Expr:
        left = self._parse_not()
        while self._check("kw_and"):
            op = self._advance()
            right = self._parse_not()
            left = BinaryExpr("and", left, right, op.span)
        return left

    def _parse_not(self) -> Expr:
        if self._check("kw_not"):
            op = self._advance()
            return UnaryExpr("not", self._parse_not(), op.span)
        return self._parse_comparison()

    def _parse_comparison(self) -> Expr:
        left = self._parse_additive()
        tok = self._peek()
        if tok.kind == T_PUNCT and tok.text in ("==", "!=", "<", "<=", ">", ">="):
            self._advance()
            right = self._parse_additive()
            return BinaryExpr(tok.text, left, right, tok.span)
        return left

    def _parse_additive(self) -> Expr:
        left = self._parse_multiplicative()
        while self._peek().kind == T_PUNCT and self._peek().text in ("+", "-"):
            op = self._advance()
            right = self._parse_multiplicative()
            left = BinaryExpr(op.text, left, right, op.span)
        return left

    def _parse_multiplicative(self) -> Expr:
        left = self._parse_unary()
        while self._peek().kind == T_PUNCT and self._peek().text in ("*", "/"):
            op = self._advance()
            right = self._parse_unary()
            left = BinaryExpr(op.text, left, right, op.span)
        return left

    def _parse_unary(self) -> Expr:
        if self._check(T_PUNCT, "-"):
            op = self._advance()
            return UnaryExpr("-", self._parse_unary(), op.span)
        return self._parse_postfix()

    def _parse_postfix(self) -> Expr:
        expr = self._parse_primary()
        while self._check(T_PUNCT, "."):
            dot = self._advance()
            name = self._expect(T_IDENT, what="field name")
            expr = FieldExpr(expr, name.value, dot.span)
        return expr

    def _parse_primary(self) -> Expr:
        tok = self._peek()
        if tok.kind in (T_INT, T_FLOAT, T_STR):
            self._advance()
            return LiteralExpr(tok.value, tok.span)
        if tok.kind in ("kw_true", "kw_false"):
            self._advance()
            return LiteralExpr(tok.kind == "kw_true", tok.span)
        if tok.kind == T_IDENT and tok.text in _TYPE_HEADS:
            return self._parse_type_literal()
        if tok.kind == T_IDENT and tok.text in PRIM_OBJECTS and self._peek(1).text == ".":
            return self._parse_primcall()
        if tok.kind == T_IDENT:
            self._advance()
            return NameExpr(tok.value, tok.span)
        if self._match(T_PUNCT, "("):
            inner = self._parse_expr()
            self._expect(T_PUNCT, ")")
            return inner
        raise ParseError(
            f"expected an expression, found {tok.text!r}" if tok.kind != T_EOF
            else "expected an expression, found end of file",
            tok.span,
            expected=("literal", "name", "type", "primitive call", "("),
        )

    def _parse_primcall(self) -> PrimCallExpr:
        obj = self._advance()
        self._expect(T_PUNCT, ".")
        method = self._expect(T_IDENT, what="primitive method name")
        self._expect(T_PUNCT, "(")
        args: list[Expr] = []
        if not self._check(T_PUNCT, ")"):
            args.append(self._parse_expr())
            while self._match(T_PUNCT, ","):
                args.append(self._parse_expr())
        self._expect(T_PUNCT, ")")
        return PrimCallExpr(obj.value, method.value, args, obj.span)

    # -- types -------------------------------------------------------------------

    def _parse_type_literal(self) -> TypeLiteralExpr:
        tok = self._peek()
        t = self._parse_typeexpr()
        return TypeLiteralExpr(t, tok.span)

    def _parse_typeexpr(self) -> SemanticType:
        tok = self._peek()
        if tok.kind != T_IDENT or tok.text not in _TYPE_HEADS:
            raise ParseError(
                f"expected a type, found {tok.text!r}", tok.span, expected=_TYPE_HEADS,
            )
        self._advance()
        head = tok.text
        if head == "Scalar":
            return ScalarT()
        if head == "Atom":
            return AtomT()
        if head == "Tensor":
            self._expect(T_PUNCT, "[")
            dims = [self._parse_dim()]
            while self._match(T_PUNCT, ","):
                dims.append(self._parse_dim())
            self._expect(T_PUNCT, "]")
            return TensorT(tuple(dims))
        if head == "List":
            self._expect(T_PUNCT, "[")
            elem = self._parse_typeexpr()
            self._expect(T_PUNCT, "]")
            return ListT(elem)
        if head == "Image":
            self._expect(T_PUNCT, "[")
            h = self._parse_dim()
            self._expect(T_PUNCT, ",")
            w = self._parse_dim()
            self._expect(T_PUNCT, ",")
            c = self._parse_dim()
            self._expect(T_PUNCT, "]")
            return ImageT(h, w, c)
        if head == "Label":
            self._expect(T_PUNCT, "[")
            k = self._parse_dim()
            self._expect(T_PUNCT, "]")
            return LabelT(k)
        raise ParseError(f"unknown type head {head!r}", tok.span)

    def _parse_dim(self):
        tok = self._peek()
        if tok.kind == T_INT:
            self._advance()
            return tok.value
        if tok.kind == T_PUNCT and tok.text == "?":
            self._advance()
            return fresh_dim()
        raise ParseError(
            f"expected a dimension, found {tok.text!r}", tok.span, expected=("INT", "?"),
        )


_TYPE_HEADS = ("Scalar", "Tensor", "List", "Atom", "Image", "Label")
