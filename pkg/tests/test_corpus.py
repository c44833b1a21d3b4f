from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings

from diachrony.corpus import AnnotatedSentence, SyntaxNode, Token, Treebank, leaf_order, linearize, validate
from diachrony.errors import InvalidTree
from diachrony.ingest import parse_penn

from strategies import render, trees

FIXTURES = Path(__file__).parent / "fixtures"


def _simple():
    toks = (Token(0, "a", pos="D"), Token(1, "b", pos="N"), Token(2, "c", pos="VB"))
    tree = (
        SyntaxNode("r", "IP", (0, 1, 2)),
        SyntaxNode("np", "NP", (0, 1), parent="r"),
        SyntaxNode("l0", "D", (0,), parent="np"),
        SyntaxNode("l1", "N", (1,), parent="np"),
        SyntaxNode("l2", "VB", (2,), parent="r"),
    )
    return AnnotatedSentence("s1", "t", toks, tree, {})


def test_validate_well_formed_is_empty():
    assert validate(Treebank((_simple(),), "penn")) == []


def test_validate_dangling_parent():
    s = _simple()
    tree = tuple(replace(n, parent="missing") if n.id == "l2" else n for n in s.tree)
    report = validate([replace(s, tree=tree)])
    rules = [v.rule for v in report]
    assert rules.count("dangling-parent") == 1
    assert all(v.sentence_id == "s1" for v in report)


def test_validate_span_out_of_range():
    s = _simple()
    tree = tuple(replace(n, span=(7,)) if n.id == "l2" else n for n in s.tree)
    rules = [v.rule for v in validate([replace(s, tree=tree)])]
    assert rules.count("span-out-of-range") == 1


def test_validate_duplicate_sentence_ids_and_bad_indices():
    s = _simple()
    bad = replace(s, tokens=(Token(0, "a"), Token(2, "b"), Token(2, "c")))
    rules = {v.rule for v in validate([s, bad])}
    assert "duplicate-sentence-id" in rules
    assert "token-index" in rules


def test_validate_cycle_and_roots():
    toks = (Token(0, "a"), Token(1, "b"))
    tree = (SyntaxNode("x", "A", (0, 1), parent="y"), SyntaxNode("y", "B", (0, 1), parent="x"))
    rules = {v.rule for v in validate([AnnotatedSentence("c", "t", toks, tree, {})])}
    assert "cycle" in rules


def test_validate_is_idempotent_and_pure():
    s = _simple()
    tree = tuple(replace(n, span=(7,)) if n.id == "l2" else n for n in s.tree)
    s = replace(s, tree=tree)
    first = validate([s])
    assert validate([s]) == first
    assert s.tree == tree


def test_linearize_single_leaf():
    toks = (Token(0, "x"),)
    assert linearize((SyntaxNode("n0", "X", (0,)),), toks) == list(toks)


def test_linearize_roland():
    s = parse_penn((FIXTURES / "roland.psd").read_text())[0]
    forms = [t.form for t in linearize(s.tree, s.tokens)]
    assert " ".join(forms) == "Li reis Marsilie esteit en Sarraguce ."


def test_linearize_rejects_overlapping_siblings():
    toks = (Token(0, "a"), Token(1, "b"))
    tree = (SyntaxNode("r", "IP", (0, 1)), SyntaxNode("x", "A", (0, 1), parent="r"),
            SyntaxNode("y", "B", (1,), parent="r"))
    with pytest.raises(InvalidTree):
        linearize(tree, toks)


def test_linearize_rejects_child_outside_parent():
    toks = (Token(0, "a"), Token(1, "b"))
    tree = (SyntaxNode("r", "IP", (0, 1)), SyntaxNode("x", "A", (0,), parent="r"),
            SyntaxNode("y", "B", (1,), parent="x"))
    with pytest.raises(InvalidTree):
        linearize(tree, toks)


@settings(max_examples=150, deadline=None)
@given(trees)
def test_linearize_is_identity_on_token_order(tree):
    text = render(tree if not isinstance(tree[1], str) else ("IP", [tree]))
    s = parse_penn(text)[0]
    assert validate([s]) == []
    assert [t.index for t in linearize(s.tree, s.tokens)] == list(range(len(s.tokens)))
    assert leaf_order(s.tree) == list(range(len(s.tokens)))


def test_tree_navigation():
    s = _simple()
    assert [n.id for n in s.roots] == ["r"]
    assert [n.id for n in s.children["r"]] == ["np", "l2"]
    assert [n.id for n in s.ancestors("l1")] == ["np", "r"]
    assert {n.id for n in s.descendants("np")} == {"l0", "l1"}
    assert s.leaf_for_token(2).id == "l2"
    assert s.text == "a b c"
