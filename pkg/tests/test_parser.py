import json
import pathlib

import pytest

from sailbench import sail_ast
from sailbench.parser import LexError, ParseError, SailError, parse, tokenize
from sailbench.rng import SplitMix64

from conftest import CORPUS, GOLDEN


def strip_spans(obj):
    if isinstance(obj, dict):
        return {k: strip_spans(v) for k, v in obj.items() if k != "span"}
    if isinstance(obj, list):
        return [strip_spans(v) for v in obj]
    return obj


def canonical(decls, spans=True):
    payload = json.loads(sail_ast.ast_to_canonical_json(decls))
    return payload if spans else strip_spans(payload)


def corpus_files():
    return sorted(CORPUS.rglob("*.sail"))


def test_corpus_is_nonempty():
    assert len(corpus_files()) >= 10


@pytest.mark.parametrize("path", corpus_files(), ids=lambda p: p.stem)
def test_corpus_file_parses(path: pathlib.Path):
    decls = parse(path.read_text(encoding="utf-8"), str(path))
    assert decls
    for d in decls:
        assert d.name
        assert d.span.line >= 1


def test_corpus_module_count():
    total = sum(len(parse(p.read_text(encoding="utf-8"))) for p in corpus_files())
    assert total == 21


def test_golden_ast():
    src = (GOLDEN / "sample.sail").read_text(encoding="utf-8")
    want = (GOLDEN / "sample.ast.json").read_text(encoding="utf-8").strip()
    got = sail_ast.ast_to_canonical_json(parse(src, "sample.sail"))
    assert got == want


@pytest.mark.parametrize(
    "path", corpus_files() + [GOLDEN / "sample.sail"], ids=lambda p: p.stem
)
def test_render_round_trip(path: pathlib.Path):
    decls = parse(path.read_text(encoding="utf-8"), str(path))
    rendered = sail_ast.render(decls)
    reparsed = parse(rendered, f"render({path.name})")
    assert canonical(decls, spans=False) == canonical(reparsed, spans=False)


def test_render_is_idempotent():
    src = (GOLDEN / "sample.sail").read_text(encoding="utf-8")
    once = sail_ast.render(parse(src))
    twice = sail_ast.render(parse(once))
    assert once == twice


def test_string_escapes_round_trip():
    src = 'metric "m" {\n  meta note = "tab\\t quote\\" backslash\\\\ nl\\n"\n}\n'
    decls = parse(src)
    assert decls[0].metas[0].value == 'tab\t quote" backslash\\ nl\n'
    again = parse(sail_ast.render(decls))
    assert again[0].metas[0].value == decls[0].metas[0].value


def test_comments_are_ignored():
    src = '# leading\nmodel "m" { // trailing\n  meta solver = "linear" # end\n}\n'
    decls = parse(src)
    assert decls[0].name == "m"
    assert decls[0].metas[0].key == "solver"


def test_negative_literals():
    src = 'metric "m" {\n  meta lo = -3\n  meta hi = -0.25\n}\n'
    decls = parse(src)
    values = [m.value for m in decls[0].metas]
    assert -3 in values and -0.25 in values


def test_precedence_shape():
    src = 'problem "p" {\n  let v = 1 + 2 * 3\n  let w = (1 + 2) * 3\n}\n'
    decls = parse(src)
    v = decls[0].body[0].value
    w = decls[0].body[1].value
    assert v.op == "+" and v.right.op == "*"
    assert w.op == "*" and w.left.op == "+"


def test_comparison_is_non_associative():
    with pytest.raises(ParseError):
        parse('problem "p" {\n  let v = 1 < 2 < 3\n}\n')


@pytest.mark.parametrize(
    "bad",
    [
        "problem {\n}\n",  # missing name
        'problem "p" {\n',  # unclosed brace
        'widget "w" {}\n',  # unknown kind
        'problem "p" {\n  let = 3\n}\n',
        'problem "p" {\n  meta x 3\n}\n',
        'problem "p" {\n  let v = Data.TwoGaussians(1,\n}\n',
        'problem "p" {\n  let v = Frob.Nicate(1)\n}\n',
        'problem "p" {\n  param n: Gizmo = 1\n}\n',
        'problem "p" {\n  let t = Data.Input(Tensor[-1])\n}\n',
        'problem "p" {\n  let s = "unterminated\n}\n',
    ],
)
def test_malformed_inputs_raise(bad: str):
    with pytest.raises(SailError):
        parse(bad)


def test_error_carries_location():
    try:
        parse('problem "p" {\n  meta x 3\n}\n', "loc.sail")
    except ParseError as e:
        assert e.span.line == 2
        assert "loc.sail" in str(e) or e.path == "loc.sail"
    else:
        pytest.fail("expected ParseError")


def test_corruption_never_escapes_sail_errors():
    # Inject a byte the grammar has no use for at 100 random offsets. Each
    # variant must either fail with a located SailError or (when the byte
    # lands inside a string literal) parse to a visibly different AST.
    # Rendering first drops comments, so nothing can absorb the byte silently.
    raw = (GOLDEN / "sample.sail").read_text(encoding="utf-8")
    base = sail_ast.render(parse(raw, "sample.sail"))
    base_ast = canonical(parse(base), spans=False)
    rng = SplitMix64(2024)
    raised = 0
    for _ in range(100):
        at = rng.randint(len(base))
        corrupted = base[:at] + "@" + base[at:]
        try:
            got = parse(corrupted, "corrupt.sail")
        except SailError as e:
            raised += 1
            assert e.span.line >= 1
            assert e.span.col >= 1
        else:
            assert canonical(got, spans=False) != base_ast
    # The sample is mostly structure, so most insertions must be rejected.
    assert raised >= 60


def test_tokenizer_tracks_lines():
    toks = tokenize('problem "p" {\n  meta a = 1\n}\n')
    meta_tok = next(t for t in toks if t.value == "meta")
    assert meta_tok.span.line == 2


def test_crlf_and_missing_trailing_newline():
    src = 'metric "m" {\r\n  meta builtin = "mean_loss"\r\n}'
    decls = parse(src)
    assert decls[0].metas[0].key == "builtin"
