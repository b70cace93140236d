"""Semantic types, unification, and converter-chain composition.

Types describe what a value *means* to a benchmark module, not how it is
stored: a ``Tensor[2]`` input of a problem and the ``Tensor[?]`` input of a
model are compatible because they unify, and a ``List[Atom]`` input can feed
a ``Tensor[?]`` model if a chain of registered converters bridges the gap.
Chains are found by breadth-first search over converter edges, so the
shortest composition wins and module authors never declare glue explicitly.

Grammar of types (as written in SAIL source)::

    typeexpr := "Scalar" | "Tensor" "[" dims "]" | "List" "[" typeexpr "]"
              | "Atom" | "Image" "[" dim "," dim "," dim "]" | "Label" "[" dim "]"
    dim      := INT | "?"

A ``?`` is a wildcard dimension: it stands for a concrete size that will be
fixed by unification against a ground type.  Wildcards are only legal in
declared types (model and converter signatures); types inferred from data
are always ground.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

MAX_RANK = 4

_wildcard_ids = itertools.count(1)


class TypeError_(Exception):
    """Malformed semantic type (e.g. tensor rank above MAX_RANK)."""


@dataclass(frozen=True)
class DimVar:
    """A wildcard dimension.  Identity matters for unification only."""

    id: int

    def __repr__(self) -> str:
        return f"?{self.id}"


def fresh_dim() -> DimVar:
    return DimVar(next(_wildcard_ids))


Dim = "int | DimVar"


class SemanticType:
    """Base class; concrete types below are immutable value objects."""

    def is_ground(self) -> bool:
        return not _collect_vars(self)

    def __str__(self) -> str:
        return render_type(self)


@dataclass(frozen=True)
class ScalarT(SemanticType):
    unit: str = ""


@dataclass(frozen=True)
class TensorT(SemanticType):
    dims: tuple  # of int | DimVar

    def __post_init__(self):
        if not 1 <= len(self.dims) <= MAX_RANK:
            raise TypeError_(f"tensor rank must be 1..{MAX_RANK}, got {len(self.dims)}")


@dataclass(frozen=True)
class ListT(SemanticType):
    elem: SemanticType


@dataclass(frozen=True)
class AtomT(SemanticType):
    """A particle: atomic number, position, velocity."""


@dataclass(frozen=True)
class ImageT(SemanticType):
    h: object  # int | DimVar
    w: object
    c: object


@dataclass(frozen=True)
class LabelT(SemanticType):
    k: object  # int | DimVar; number of classes


@dataclass(frozen=True)
class TupleT(SemanticType):
    items: tuple  # of SemanticType


@dataclass(frozen=True)
class RecordT(SemanticType):
    """Named-field element type of a data source (internal, not SAIL syntax)."""

    fields: tuple  # of (name, SemanticType), ordered

    def field_type(self, name: str) -> "SemanticType | None":
        for fname, ftype in self.fields:
            if fname == name:
                return ftype
        return None


@dataclass(frozen=True)
class TypeVarT(SemanticType):
    """A full type variable (result of a model invocation before inference)."""

    id: int


_typevar_ids = itertools.count(1)


def fresh_typevar() -> TypeVarT:
    return TypeVarT(next(_typevar_ids))


def render_type(t: SemanticType) -> str:
    """Canonical source form.  All wildcards render as '?'."""
    if isinstance(t, ScalarT):
        return f"Scalar{{{t.unit}}}" if t.unit else "Scalar"
    if isinstance(t, TensorT):
        return "Tensor[" + ",".join(_render_dim(d) for d in t.dims) + "]"
    if isinstance(t, ListT):
        return f"List[{render_type(t.elem)}]"
    if isinstance(t, AtomT):
        return "Atom"
    if isinstance(t, ImageT):
        return f"Image[{_render_dim(t.h)},{_render_dim(t.w)},{_render_dim(t.c)}]"
    if isinstance(t, LabelT):
        return f"Label[{_render_dim(t.k)}]"
    if isinstance(t, TupleT):
        return "Tuple[" + ",".join(render_type(i) for i in t.items) + "]"
    if isinstance(t, RecordT):
        inner = ",".join(f"{n}:{render_type(ft)}" for n, ft in t.fields)
        return "Record[" + inner + "]"
    if isinstance(t, TypeVarT):
        return f"'t{t.id}"
    raise TypeError_(f"unknown type node {t!r}")


def _render_dim(d) -> str:
    return "?" if isinstance(d, DimVar) else str(d)


def _collect_vars(t: SemanticType, out: list | None = None) -> list:
    if out is None:
        out = []
    if isinstance(t, TensorT):
        out.extend(d for d in t.dims if isinstance(d, DimVar))
    elif isinstance(t, ListT):
        _collect_vars(t.elem, out)
    elif isinstance(t, ImageT):
        out.extend(d for d in (t.h, t.w, t.c) if isinstance(d, DimVar))
    elif isinstance(t, LabelT):
        if isinstance(t.k, DimVar):
            out.append(t.k)
    elif isinstance(t, TupleT):
        for item in t.items:
            _collect_vars(item, out)
    elif isinstance(t, RecordT):
        for _, ftype in t.fields:
            _collect_vars(ftype, out)
    elif isinstance(t, TypeVarT):
        out.append(t)
    return out


def types_alpha_equal(a: SemanticType, b: SemanticType) -> bool:
    """Structural equality where any wildcard matches any wildcard.

    Used for AST round-trip comparison: parsing the printed form of a type
    mints fresh wildcard ids, which must not break equality.
    """
    if isinstance(a, TypeVarT) and isinstance(b, TypeVarT):
        return True
    if type(a) is not type(b):
        return False
    if isinstance(a, ScalarT):
        return a.unit == b.unit
    if isinstance(a, TensorT):
        return len(a.dims) == len(b.dims) and all(
            _dims_alpha_equal(x, y) for x, y in zip(a.dims, b.dims)
        )
    if isinstance(a, ListT):
        return types_alpha_equal(a.elem, b.elem)
    if isinstance(a, AtomT):
        return True
    if isinstance(a, ImageT):
        return all(
            _dims_alpha_equal(x, y) for x, y in ((a.h, b.h), (a.w, b.w), (a.c, b.c))
        )
    if isinstance(a, LabelT):
        return _dims_alpha_equal(a.k, b.k)
    if isinstance(a, TupleT):
        return len(a.items) == len(b.items) and all(
            types_alpha_equal(x, y) for x, y in zip(a.items, b.items)
        )
    if isinstance(a, RecordT):
        return len(a.fields) == len(b.fields) and all(
            na == nb and types_alpha_equal(ta, tb)
            for (na, ta), (nb, tb) in zip(a.fields, b.fields)
        )
    return False


def _dims_alpha_equal(x, y) -> bool:
    if isinstance(x, DimVar) and isinstance(y, DimVar):
        return True
    return x == y


# ---------------------------------------------------------------- unification


@dataclass
class Mismatch:
    """Failed unification; says which constructors or dims conflicted."""

    reason: str

    def __bool__(self) -> bool:  # lets callers write `if unify(...)`
        return False


@dataclass
class Subst:
    """Substitution from variable ids to dims / types."""

    dims: dict = field(default_factory=dict)  # DimVar.id -> int | DimVar
    types: dict = field(default_factory=dict)  # TypeVarT.id -> SemanticType

    def __bool__(self) -> bool:
        return True

    def apply(self, t: SemanticType) -> SemanticType:
        if isinstance(t, TypeVarT):
            bound = self.types.get(t.id)
            return self.apply(bound) if bound is not None else t
        if isinstance(t, TensorT):
            return TensorT(tuple(self._apply_dim(d) for d in t.dims))
        if isinstance(t, ListT):
            return ListT(self.apply(t.elem))
        if isinstance(t, ImageT):
            return ImageT(*(self._apply_dim(d) for d in (t.h, t.w, t.c)))
        if isinstance(t, LabelT):
            return LabelT(self._apply_dim(t.k))
        if isinstance(t, TupleT):
            return TupleT(tuple(self.apply(i) for i in t.items))
        if isinstance(t, RecordT):
            return RecordT(tuple((n, self.apply(ft)) for n, ft in t.fields))
        return t

    def _apply_dim(self, d):
        while isinstance(d, DimVar) and d.id in self.dims:
            d = self.dims[d.id]
        return d


def unify(a: SemanticType, b: SemanticType, subst: Subst | None = None):
    """Unify two types.  Returns a Subst on success, a Mismatch otherwise."""
    subst = subst if subst is not None else Subst()
    a = subst.apply(a)
    b = subst.apply(b)
    if isinstance(a, TypeVarT):
        subst.types[a.id] = b
        return subst
    if isinstance(b, TypeVarT):
        subst.types[b.id] = a
        return subst
    if type(a) is not type(b):
        return Mismatch(f"constructor mismatch: {a} vs {b}")
    if isinstance(a, ScalarT):
        if a.unit != b.unit:
            return Mismatch(f"unit mismatch: {a} vs {b}")
        return subst
    if isinstance(a, AtomT):
        return subst
    if isinstance(a, TensorT):
        if len(a.dims) != len(b.dims):
            return Mismatch(f"rank mismatch: {a} vs {b}")
        return _unify_dims(zip(a.dims, b.dims), subst, a, b)
    if isinstance(a, ImageT):
        return _unify_dims(((a.h, b.h), (a.w, b.w), (a.c, b.c)), subst, a, b)
    if isinstance(a, LabelT):
        return _unify_dims(((a.k, b.k),), subst, a, b)
    if isinstance(a, TupleT):
        if len(a.items) != len(b.items):
            return Mismatch(f"arity mismatch: {a} vs {b}")
        for x, y in zip(a.items, b.items):
            subst = unify(x, y, subst)
            if not subst:
                return subst
        return subst
    if isinstance(a, ListT):
        return unify(a.elem, b.elem, subst)
    if isinstance(a, RecordT):
        if tuple(n for n, _ in a.fields) != tuple(n for n, _ in b.fields):
            return Mismatch(f"record fields differ: {a} vs {b}")
        for (_, x), (_, y) in zip(a.fields, b.fields):
            subst = unify(x, y, subst)
            if not subst:
                return subst
        return subst
    return Mismatch(f"cannot unify {a} vs {b}")


def _unify_dims(pairs, subst: Subst, a, b):
    for x, y in pairs:
        x = subst._apply_dim(x)
        y = subst._apply_dim(y)
        if isinstance(x, DimVar):
            if not (isinstance(y, DimVar) and y.id == x.id):
                subst.dims[x.id] = y
        elif isinstance(y, DimVar):
            subst.dims[y.id] = x
        elif x != y:
            return Mismatch(f"dim mismatch ({x} vs {y}) in {a} vs {b}")
    return subst


def instantiate(t: SemanticType) -> SemanticType:
    """Copy a declared type with fresh wildcard ids (so reuse is safe)."""
    mapping: dict = {}

    def dim(d):
        if isinstance(d, DimVar):
            if d.id not in mapping:
                mapping[d.id] = fresh_dim()
            return mapping[d.id]
        return d

    def walk(t: SemanticType) -> SemanticType:
        if isinstance(t, TensorT):
            return TensorT(tuple(dim(d) for d in t.dims))
        if isinstance(t, ListT):
            return ListT(walk(t.elem))
        if isinstance(t, ImageT):
            return ImageT(dim(t.h), dim(t.w), dim(t.c))
        if isinstance(t, LabelT):
            return LabelT(dim(t.k))
        if isinstance(t, TupleT):
            return TupleT(tuple(walk(i) for i in t.items))
        if isinstance(t, RecordT):
            return RecordT(tuple((n, walk(ft)) for n, ft in t.fields))
        if isinstance(t, TypeVarT):
            return fresh_typevar()
        return t

    return walk(t)


# ------------------------------------------------------------ converter graph


@dataclass(frozen=True)
class ConverterEdge:
    """One registered conversion.  `lifted` marks the elementwise List form."""

    conv_id: str  # module record id
    name: str
    src: SemanticType
    dst: SemanticType
    kernel: str
    lifted: bool = False

    def describe(self) -> str:
        if self.lifted:
            # Lifted edges store List[..] endpoints; describe the element map.
            inner = f"{self.name}:{render_type(self.src.elem)}->{render_type(self.dst.elem)}"
            return f"map({inner})"
        return f"{self.name}:{render_type(self.src)}->{render_type(self.dst)}"


@dataclass
class NoPath:
    """find_conversion failure value."""

    src: SemanticType
    dst: SemanticType
    max_len: int

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        return (
            f"no converter chain {render_type(self.src)} -> "
            f"{render_type(self.dst)} within {self.max_len} steps"
        )


class ConverterGraph:
    """Registered converter edges, in registration order.

    Every base edge A -> B also induces the lifted edge
    List[A] -> List[B] (apply elementwise) at the same unit cost.
    """

    def __init__(self):
        self.edges: list[ConverterEdge] = []
        # A ground (variable-free) type only unifies with an identical ground
        # type or a pattern, so indexing ground srcs by rendering lets the
        # search skip edges that cannot match.
        self._ground: dict[str, list[int]] = {}
        self._patterns: list[int] = []
        self._src_render: list = []  # per edge: render str, or None if vars
        self._dst_ground: list = []

    def register(self, conv_id: str, name: str, src: SemanticType,
                 dst: SemanticType, kernel: str) -> None:
        base = ConverterEdge(conv_id, name, src, dst, kernel)
        lifted = ConverterEdge(conv_id, name, ListT(src), ListT(dst), kernel,
                               lifted=True)
        for edge in (base, lifted):
            pos = len(self.edges)
            self.edges.append(edge)
            if _collect_vars(edge.src):
                self._patterns.append(pos)
                self._src_render.append(None)
            else:
                render = render_type(edge.src)
                self._ground.setdefault(render, []).append(pos)
                self._src_render.append(render)
            self._dst_ground.append(not _collect_vars(edge.dst))

    def candidate_positions(self, cur_render: str) -> list:
        """Edge positions that could match a ground type, registration order."""
        exact = self._ground.get(cur_render, [])
        if not self._patterns:
            return exact
        return sorted(exact + self._patterns)


def find_conversion(graph: ConverterGraph, src: SemanticType, dst: SemanticType,
                    max_len: int = 3):
    """Shortest chain of converter edges from src to dst.

    Unit cost per edge; BFS guarantees minimal length, and expanding edges
    in registration order makes ties deterministic.  Returns [] when the
    types unify directly, a list of ConverterEdge otherwise, or NoPath.
    """
    dst_inst = instantiate(dst)
    if unify(instantiate(src), dst_inst):
        return []
    dst_render = None if _collect_vars(dst) else render_type(dst)
    all_positions = range(len(graph.edges))
    seen = {render_type(src)}
    frontier: list[tuple[SemanticType, list[ConverterEdge]]] = [(src, [])]
    for _ in range(max_len):
        nxt: list[tuple[SemanticType, list[ConverterEdge]]] = []
        for cur, path in frontier:
            if _collect_vars(cur):
                cur_render = None
                positions = all_positions
            else:
                cur_render = render_type(cur)
                positions = graph.candidate_positions(cur_render)
            for pos in positions:
                edge = graph.edges[pos]
                if cur_render is not None and graph._src_render[pos] is not None:
                    # Both ground: the index already matched them exactly, so
                    # the step needs no unification.
                    if graph._src_render[pos] != cur_render:
                        continue
                    stepped = _kernel_out_type(edge.kernel, edge.src,
                                               lifted=edge.lifted)
                    if stepped is None:
                        stepped = (edge.dst if graph._dst_ground[pos]
                                   else instantiate(edge.dst))
                else:
                    stepped = _step(edge, cur)
                    if stepped is None:
                        continue
                chain = path + [edge]
                key = render_type(stepped)
                if dst_render is not None and not _collect_vars(stepped):
                    if key == dst_render:
                        return chain
                elif unify(instantiate(stepped), dst_inst):
                    return chain
                if key not in seen:
                    seen.add(key)
                    nxt.append((stepped, chain))
        frontier = nxt
    return NoPath(src, dst, max_len)


def _step(edge: ConverterEdge, cur: SemanticType) -> SemanticType | None:
    """Type after applying edge to cur, or None if the edge does not match."""
    pattern = instantiate(edge.src)
    subst = unify(pattern, cur)
    if not subst:
        return None
    ground = subst.apply(pattern)
    out = _kernel_out_type(edge.kernel, ground, lifted=edge.lifted)
    if out is not None:
        return out
    return subst.apply(instantiate(edge.dst))


def _kernel_out_type(kernel: str, src: SemanticType, lifted: bool) -> SemanticType | None:
    """Output type computed by a builtin kernel for a concrete input type.

    Kernels that know their exact output shape (e.g. flatten) report it here
    so chains carry ground dims; others fall back to the declared pattern.
    """
    if lifted and isinstance(src, ListT):
        inner = _kernel_out_type(kernel, src.elem, lifted=False)
        return ListT(inner) if inner is not None else None
    if kernel == "flatten" and isinstance(src, ImageT):
        if all(isinstance(d, int) for d in (src.h, src.w, src.c)):
            return TensorT((src.h * src.w * src.c,))
        return TensorT((fresh_dim(),))
    if kernel == "atom_embed" and isinstance(src, AtomT):
        return TensorT((8,))
    return None


class ConversionError(Exception):
    """A chain could not be applied to a runtime value."""


def apply_chain(chain: list[ConverterEdge], value):
    """Run a converter chain on a concrete value."""
    for edge in chain:
        value = _apply_edge(edge, value)
    return value


def _apply_edge(edge: ConverterEdge, value):
    if edge.lifted:
        if not isinstance(value, (list, tuple)):
            raise ConversionError(f"{edge.describe()} expects a list, got {type(value).__name__}")
        return [_apply_kernel(edge.kernel, v) for v in value]
    return _apply_kernel(edge.kernel, value)


def _apply_kernel(kernel: str, value):
    import numpy as np

    if kernel == "flatten":
        arr = np.asarray(value, dtype=np.float64)
        return arr.reshape(-1)
    if kernel == "atom_embed":
        # Fixed 8-wide embedding: [z, pos0, pos1, pos2, vel0, vel1, vel2, 0].
        try:
            z = float(value.z)
            pos = np.asarray(value.pos, dtype=np.float64)
            vel = np.asarray(value.vel, dtype=np.float64)
        except AttributeError:
            raise ConversionError(
                f"atom_embed expects an atom, got {type(value).__name__}"
            ) from None
        if pos.shape != (3,) or vel.shape != (3,):
            raise ConversionError("atom_embed expects 3-vector pos and vel")
        return np.concatenate(([z], pos, vel, [0.0]))
    if kernel == "concat":
        if not isinstance(value, (list, tuple)):
            raise ConversionError(f"concat expects a list, got {type(value).__name__}")
        parts = [np.asarray(v, dtype=np.float64).reshape(-1) for v in value]
        if not parts:
            raise ConversionError("concat of an empty list")
        return np.concatenate(parts)
    raise ConversionError(f"unknown converter kernel {kernel!r}")
