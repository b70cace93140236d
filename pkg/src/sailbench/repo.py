"""Module repository: scan .sail trees, index records, assemble converters.

A record identity is content-addressed: hash of (relative path, module name,
file bytes).  Editing a module therefore changes every scenario id built on
it, which is exactly what keeps old results from being misattributed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from . import evalrun, parser
from .sail_ast import ModuleDecl, ModuleKind
from .typesys import ConverterGraph

INDEX_VERSION = 1


class RepoError(Exception):
    pass


class DuplicateName(RepoError):
    """Two modules in the repository share a name."""


class VersionMismatch(RepoError):
    """A persisted index was written by an incompatible format version."""


@dataclass
class ModuleRecord:
    id: str
    kind: ModuleKind
    name: str
    path: str  # posix-relative to the repo root
    decl: ModuleDecl = field(repr=False, compare=False)
    meta: "evalrun.ModuleMetadata" = field(repr=False, compare=False)

    def to_index_entry(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "path": self.path,
        }


def record_id(path: str, name: str, content: str) -> str:
    h = hashlib.sha256()
    for part in (path, name, content):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass
class Repo:
    root: Path
    records: list = field(default_factory=list)
    graph: ConverterGraph = field(default_factory=ConverterGraph)

    def by_kind(self, kind: ModuleKind) -> list:
        return [r for r in self.records if r.kind == kind]

    def by_name(self, name: str) -> "ModuleRecord | None":
        for r in self.records:
            if r.name == name:
                return r
        return None

    def by_id(self, rid: str) -> "ModuleRecord | None":
        for r in self.records:
            if r.id == rid:
                return r
        return None


def scan(root: "str | Path") -> Repo:
    """Parse every .sail file under root and build the in-memory repository.

    Files are visited in sorted relative-path order so record order (and
    hence converter registration order) is stable across platforms.
    """
    root = Path(root)
    if not root.is_dir():
        raise RepoError(f"not a directory: {root}")
    repo = Repo(root=root)
    seen: dict[str, str] = {}
    for file in sorted(root.rglob("*.sail"), key=lambda p: str(p.relative_to(root))):
        rel = str(PurePosixPath(*file.relative_to(root).parts))
        content = file.read_text(encoding="utf-8")
        decls = parser.parse(content, rel)
        for decl in decls:
            if decl.name in seen:
                raise DuplicateName(
                    f"module {decl.name!r} defined in both {seen[decl.name]} and {rel}"
                )
            seen[decl.name] = rel
            meta, _ = evalrun.dry_run(decl)
            repo.records.append(
                ModuleRecord(
                    id=record_id(rel, decl.name, content),
                    kind=decl.kind,
                    name=decl.name,
                    path=rel,
                    decl=decl,
                    meta=meta,
                )
            )
    for rec in repo.records:
        if rec.kind == ModuleKind.CONVERTER:
            src, dst, kernel = rec.meta.converter
            repo.graph.register(rec.id, rec.name, src, dst, kernel)
    return repo


def save_index(repo: Repo, path: "str | Path") -> None:
    payload = {
        "v": INDEX_VERSION,
        "records": [r.to_index_entry() for r in repo.records],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_index(path: "str | Path") -> dict:
    """Load a persisted index (metadata only; sources are re-scanned to use)."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise RepoError(f"cannot read index {path}: {e}")
    if not isinstance(payload, dict) or payload.get("v") != INDEX_VERSION:
        raise VersionMismatch(
            f"index version {payload.get('v')!r} is not {INDEX_VERSION}"
            if isinstance(payload, dict) else "index is not an object"
        )
    return payload
