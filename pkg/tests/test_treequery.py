import itertools
import random
import re
import time
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from diachrony.corpus import AnnotatedSentence, Token
from diachrony.errors import MissingLayer, QuerySyntaxError
from diachrony.ingest import parse_penn, parse_tiger_xml, parse_token_lines
from diachrony.treequery import (
    Constraint,
    QueryAst,
    eval_query,
    extract,
    parse_corpussearch,
    parse_query,
    split_function_tags,
)

from strategies import random_tree, render

FIXTURES = Path(__file__).parent / "fixtures"
ROLAND = (FIXTURES / "roland.psd").read_text()

CS_NOMINAL_OBJECT = "node: IP-MAT*\nquery: (IP-INF* iDominates NP-ACC*)\nAND (NP-ACC* iDominates !PRO*)"
EDGE_NOMINAL_OBJECT = '#n0:[cat="IP"]>INF #n1:[cat="IP"] &\n #n1>ACC #n2:[cat="NP"]&\n #n2>[pos!="PRO"]'
TWO_LAYER_INFINITIVE = 'pos="VB" &\n pos2=/V--.NA---|(Unk)/&\n #1 _=_ #2'


# ---------------------------------------------------------------------------
# brute-force oracle: enumerate every assignment of every variable

def _oracle_values(s: AnnotatedSentence):
    """(id, span, attribute dict) for each searchable element, computed directly."""
    if s.tree is None:
        return [(f"t{t.index}", (t.index,), {"cat": None, "word": t.form, "lemma": t.lemma, "pos": t.pos,
                                             "pos2": t.pos2, "morph": t.morph}) for t in s.tokens]
    parents = {n.parent for n in s.tree}
    out = []
    for n in s.tree:
        vals = {"cat": n.label, "word": None, "lemma": None, "pos": None, "pos2": None, "morph": None}
        if n.id not in parents:
            t = s.tokens[n.span[0]]
            vals.update(word=t.form, lemma=t.lemma, pos=t.pos, pos2=t.pos2, morph=t.morph)
        out.append((n.id, tuple(sorted(n.span)), vals))
    return out


def _pattern_hit(c: Constraint, value):
    if value is None:
        hit = False
    elif c.kind == "glob":
        hit = re.fullmatch(".*".join(re.escape(p) for p in c.pattern.split("*")), value) is not None
    else:
        hit = re.fullmatch(c.pattern, value) is not None
    return hit if c.op == "=" else not hit


def brute_force(ast: QueryAst, s: AnnotatedSentence):
    elems = _oracle_values(s)
    parent = {n.id: n.parent for n in s.tree} if s.tree else {}
    edge = {n.id: n.edge_label for n in s.tree} if s.tree else {}

    def dominates(a, b):
        cur = parent.get(b)
        while cur is not None:
            if cur == a:
                return True
            cur = parent.get(cur)
        return False

    outputs = [v for v in ast.variables if v not in ast.anonymous]
    found = set()
    for combo in itertools.product(range(len(elems)), repeat=len(ast.variables)):
        b = dict(zip(ast.variables, combo))
        if not all(_pattern_hit(c, elems[b[v]][2][c.attr]) for v in ast.variables for c in ast.constraints[v]):
            continue
        ok = True
        for e in ast.edges:
            a, c = elems[b[e.parent]][0], elems[b[e.child]][0]
            if e.kind == ">":
                ok = parent.get(c) == a and (e.label is None or edge.get(c) == e.label)
            else:
                ok = dominates(a, c)
            if not ok:
                break
        if ok and all(elems[b[al.left]][1] == elems[b[al.right]][1] for al in ast.aligns):
            found.add(tuple(b[v] for v in outputs))
    return [{v: elems[i][0] for v, i in zip(outputs, key)} for key in sorted(found)]


def _token_sentence(rng, n, sid="s"):
    pos = ["VB", "N", "D", "VBP"]
    pos2 = ["V--PNA---", "Unk", "N-S---", "V--PPA---"]
    toks = tuple(Token(i, f"w{i}", pos=rng.choice(pos), pos2=rng.choice(pos2)) for i in range(n))
    return AnnotatedSentence(sid, "t", toks, None, {})


TREE_QUERIES = [
    'node:[cat="IP*"]',
    '#a:[cat="NP*"] > #b:[pos="N"]',
    '#a:[cat="IP*"] >> #b:[cat="NP*"]',
    '#a:[cat="IP-INF*"] > #b:[cat="NP-ACC*"] & #b > [pos!="PRO"]',
    '#a:[cat=/IP-(MAT|INF)/] >> #b:[pos="VB"] & #a > #c:[cat!="NP*"]',
    '#x:[pos="N"] & #y:[word="rex"] & #x _=_ #y',
    '#a:[cat="*"] > #b:[cat="*"] & #b > #c:[cat="*"]',
    '[cat="IP*"] >> #v:[pos="VB" & word!="videre"]',
]


@pytest.fixture(scope="module")
def random_trees():
    rng = random.Random(1234)
    out = []
    for k in range(200):
        s = parse_penn(render(random_tree(rng, 12)), {"text_id": "r"})[0]
        assert len(s.tree) <= 12
        out.append(s)
    return out


def test_oracle_equivalence_on_random_trees(random_trees):
    start = time.perf_counter()
    queries = [parse_query(q) for q in TREE_QUERIES] + [parse_corpussearch(CS_NOMINAL_OBJECT)]
    edge_query = parse_query(EDGE_NOMINAL_OBJECT)
    total = 0
    for s in random_trees:
        for ast in queries:
            got = eval_query(ast, s).assignments
            assert got == brute_force(ast, s), (ast, s.id)
            total += len(got)
        split = split_function_tags(s)
        assert eval_query(edge_query, split).assignments == brute_force(edge_query, split)
    rng = random.Random(9)
    two_layer = parse_query(TWO_LAYER_INFINITIVE)
    for k in range(200):
        s = _token_sentence(rng, rng.randint(1, 8))
        got = eval_query(two_layer, s).assignments
        assert got == brute_force(two_layer, s)
        total += len(got)
    assert total > 0
    assert time.perf_counter() - start < 30


def test_conjunction_is_natural_join(random_trees):
    a = '#p:[cat="IP*"] > #q:[cat="NP*"]'
    b = '#q:[cat="NP*"] > #r:[pos="N"]'
    both = parse_query(f"{a} & {b}")
    for s in random_trees:
        left = eval_query(parse_query(a), s).assignments
        right = eval_query(parse_query(b), s).assignments
        joined = sorted(({**x, **y} for x in left for y in right if x["q"] == y["q"]),
                        key=lambda d: (d["p"], d["q"], d["r"]))
        got = eval_query(both, s).assignments
        key = lambda d: (d["p"], d["q"], d["r"])  # noqa: E731
        assert sorted(got, key=key) == joined


def test_transitive_dominance_is_closure_of_immediate(random_trees):
    imm = parse_query('#a:[cat="*"] > #b:[cat="*"]')
    trans = parse_query('#a:[cat="*"] >> #b:[cat="*"]')
    for s in random_trees[:50]:
        pairs = {(m["a"], m["b"]) for m in eval_query(imm, s)}
        closure = set(pairs)
        while True:
            extra = {(a, d) for a, b in closure for c, d in pairs if b == c} - closure
            if not extra:
                break
            closure |= extra
        assert {(m["a"], m["b"]) for m in eval_query(trans, s)} == closure


def test_wildcard_monotonicity(random_trees):
    for s in random_trees:
        exact = {m["n"] for m in eval_query(parse_query('#n:[cat="NP"]'), s)}
        wild = {m["n"] for m in eval_query(parse_query('#n:[cat="NP*"]'), s)}
        assert exact <= wild


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["cat", "pos", "word"]), st.sampled_from(["NP*", "IP-INF*", "N", "rex", "*", "V?"]),
       st.integers(0, 10_000))
def test_negation_partitions_candidates(attr, pattern, seed):
    s = parse_penn(render(random_tree(random.Random(seed), 12)))[0]
    pos = {m["n"] for m in eval_query(parse_query(f'#n:[{attr}="{pattern}"]'), s)}
    neg = {m["n"] for m in eval_query(parse_query(f'#n:[{attr}!="{pattern}"]'), s)}
    assert pos.isdisjoint(neg)
    assert pos | neg == {n.id for n in s.tree}


def test_hyphenated_wildcard_decision():
    [s] = parse_penn("(IP-MAT (IP-INF-SPE (VB dicere)) (IP-INF (VB ire)))")
    hits = {s.nodes[m["n"]].label for m in eval_query(parse_query('#n:[cat="IP-INF*"]'), s)}
    assert hits == {"IP-INF-SPE", "IP-INF"}


# ---------------------------------------------------------------------------
# parsing

def test_single_node_term():
    ast = parse_query('#n1:[cat="NP"]')
    assert ast.variables == ("n1",)
    assert ast.constraints["n1"] == (Constraint("cat", "=", "glob", "NP"),)
    assert ast.edges == () and ast.aligns == ()


def test_edge_query_structure():
    ast = parse_query(EDGE_NOMINAL_OBJECT)
    assert ast.output_variables == ("n0", "n1", "n2")
    labelled = [e for e in ast.edges if e.kind == ">" and e.label]
    assert [(e.parent, e.child, e.label) for e in labelled] == [("n0", "n1", "INF"), ("n1", "n2", "ACC")]
    negated = [c for cs in ast.constraints.values() for c in cs if c.op == "!="]
    assert negated == [Constraint("pos", "!=", "glob", "PRO")]


def test_two_layer_query_structure():
    ast = parse_query(TWO_LAYER_INFINITIVE)
    assert ast.variables == ("1", "2")
    assert ast.constraints["1"] == (Constraint("pos", "=", "glob", "VB"),)
    assert ast.constraints["2"][0].kind == "regex" and ast.constraints["2"][0].attr == "pos2"
    assert [(a.left, a.right) for a in ast.aligns] == [("1", "2")]


def test_dominance_synonyms():
    a = parse_query('#a:[cat="IP"] iDominates #b:[cat="NP"]')
    b = parse_query('#a:[cat="IP"] > #b:[cat="NP"]')
    c = parse_query('#a:[cat="IP"] Dominates #b:[cat="NP"]')
    assert a == b
    assert c.edges[0].kind == ">>"


def test_corpussearch_translation():
    ast = parse_corpussearch(CS_NOMINAL_OBJECT)
    assert ast.output_variables == ("c1", "c2")
    kinds = [(e.parent, e.kind) for e in ast.edges]
    assert ("c1", ">") in kinds and ("c2", ">") in kinds


@pytest.mark.parametrize("text,pos", [
    ('#n:[cat="NP"', 12),
    ('#n:[cat=NP]', 8),
    ('#n:[colour="red"]', 4),
    ('pos="VB" & #1 _=_ #3', 18),
    ('#n:[cat=/a{2}/]', 10),
    ('#n:[cat=/(?i)np/]', 9),
    ('', 0),
])
def test_syntax_errors(text, pos):
    with pytest.raises(QuerySyntaxError) as err:
        parse_query(text)
    assert err.value.position == pos
    assert err.value.expected


def test_corpussearch_syntax_error():
    with pytest.raises(QuerySyntaxError):
        parse_corpussearch("query: (IP-INF* iDominates)")


# ---------------------------------------------------------------------------
# evaluation examples

def test_ip_wildcard_on_roland():
    [s] = parse_penn(ROLAND)
    hits = [s.nodes[m["n"]].label for m in eval_query(parse_query('#n:[cat="IP*"]'), s)]
    assert hits == ["IP-MAT"]


def test_contradiction_is_empty():
    [s] = parse_token_lines("a A\nb B\n")
    ast = parse_query('#x:[pos="A"] & #x:[pos!="A"]')
    assert len(eval_query(ast, s)) == 0


def test_missing_layer():
    [s] = parse_token_lines("a A\nb B\n")
    with pytest.raises(MissingLayer) as err:
        eval_query(parse_query('#x:[pos2="A"]'), s)
    assert err.value.to_json()["attr"] == "pos2"
    with pytest.raises(MissingLayer):
        eval_query(parse_query('#x:[cat="NP"]'), s)


def test_two_layer_query_on_tokens():
    [s] = parse_token_lines("auctus VB Unk\nest VBP V3SPIA\nfacere VB V--PNA---\nrex N N-S---\n")
    ms = eval_query(parse_query(TWO_LAYER_INFINITIVE), s)
    assert [(m["1"], m["2"]) for m in ms] == [("t0", "t0"), ("t2", "t2")]


def test_edge_query_on_tiger_style_edges():
    [s] = parse_penn("(IP-MAT (IP-INF (NP-ACC (N urbem)) (VB videre)) (VBP vult))")
    s = split_function_tags(s)
    ms = eval_query(parse_query(EDGE_NOMINAL_OBJECT), s)
    assert len(ms) == 1
    m = ms.assignments[0]
    assert (s.nodes[m["n1"]].edge_label, s.nodes[m["n2"]].edge_label) == ("INF", "ACC")


def test_tiger_edge_labels_queryable():
    xml = (FIXTURES / "egeria.xml").read_text()
    [s] = parse_tiger_xml(xml)
    ms = eval_query(parse_query('#a:[cat="V-"] >adv #b:[cat="R-"]'), s)
    assert [(m["a"], m["b"]) for m in ms] == [("p766469", "p766470")]
    # the word-level attributes sit on the terminal under each nonterminal
    ms = eval_query(parse_query('#a:[cat="R-"] >obl #b:[cat="Nb"] & #b > #w:[lemma="scriptura"]'), s)
    assert [m["w"] for m in ms] == ["w766471"]


def test_split_function_tags():
    [s] = parse_penn("(IP-MAT (NP-ACC-1 (N x)) (IP-INF-SPE (VB y)))")
    out = split_function_tags(s)
    labels = {(n.label, n.edge_label) for n in out.tree}
    assert ("NP", "ACC") in labels and ("IP", "INF-SPE") in labels and ("IP", "MAT") in labels
    assert ("N", None) in labels


# ---------------------------------------------------------------------------
# extraction

def test_extract_empty():
    assert extract([], parse_corpussearch(CS_NOMINAL_OBJECT)) == []


def test_extract_nominal_object():
    tb = parse_penn("( (IP-MAT (IP-INF (NP-ACC (N urbem)) (VB videre)) (VBP vult)) (ID T,1))")
    recs = extract(tb, parse_corpussearch(CS_NOMINAL_OBJECT))
    assert len(recs) == 1
    rec = recs[0]
    assert rec.sentence_id == "T,1"
    assert rec.clause[0].label == "IP-INF"
    assert {n.label for n in rec.clause} >= {"IP-INF", "NP-ACC", "N", "VB"}


def test_extract_pronoun_object_excluded():
    tb = parse_penn("( (IP-MAT (IP-INF (NP-ACC (PRO eum)) (VB videre)) (VBP vult)) (ID T,1))")
    assert extract(tb, parse_corpussearch(CS_NOMINAL_OBJECT)) == []


def test_extract_requires_boundary():
    # no IP-MAT above the infinitive: the node: boundary filters it out
    tb = parse_penn("( (CP (IP-INF (NP-ACC (N urbem)) (VB videre))) (ID T,1))")
    assert extract(tb, parse_corpussearch(CS_NOMINAL_OBJECT)) == []


def test_extract_skips_sentences_without_layer():
    tb = parse_penn("( (IP-MAT (IP-INF (NP-ACC (N urbem)) (VB videre))) (ID T,1))") + \
        parse_token_lines("a X\n")
    assert len(extract(tb, parse_corpussearch(CS_NOMINAL_OBJECT))) == 1
