"""Query language over trees and token layers.

One grammar covers three idioms: node definitions with labelled
immediate dominance (``#n0:[cat="IP"] >INF #n1:[cat="IP"]``), bare layer
terms joined by span alignment (``pos="VB" & pos2=/V.*/ & #1 _=_ #2``) and,
through :func:`parse_corpussearch`, CorpusSearch dominance queries.

Quoted patterns are full-string matches in which ``*`` stands for any run
of characters, hyphens included, so ``IP-INF*`` matches ``IP-INF-SPE``.
Regular expressions (``/.../``) are restricted to literals, ``.``, ``*``,
``+``, ``?``, ``|``, groups, character classes and the ``^``/``$`` anchors,
and are also applied as full matches.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

from .corpus import AnnotatedSentence, SyntaxNode
from .errors import MissingLayer, QuerySyntaxError

log = logging.getLogger(__name__)

ATTRS = ("cat", "pos", "pos2", "word", "lemma", "morph")
TOKEN_ATTRS = ("word", "lemma", "pos", "pos2", "morph")


@dataclass(frozen=True)
class Constraint:
    attr: str
    op: str  # "=" or "!="
    kind: str  # "glob" or "regex"
    pattern: str

    def matches(self, value: str | None) -> bool:
        hit = value is not None and _compile(self.kind, self.pattern).fullmatch(value) is not None
        return hit if self.op == "=" else not hit


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    kind: str  # ">" immediate, ">>" transitive
    label: str | None = None


@dataclass(frozen=True)
class Align:
    left: str
    right: str


@dataclass(frozen=True)
class QueryAst:
    variables: tuple[str, ...]
    constraints: Mapping[str, tuple[Constraint, ...]]
    edges: tuple[Edge, ...] = ()
    aligns: tuple[Align, ...] = ()
    anonymous: frozenset = frozenset()

    @property
    def output_variables(self) -> tuple[str, ...]:
        return tuple(v for v in self.variables if v not in self.anonymous)

    def attrs(self) -> set[str]:
        return {c.attr for cs in self.constraints.values() for c in cs}


@dataclass
class MatchSet:
    sentence_id: str
    assignments: list[dict[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.assignments)

    def __iter__(self):
        return iter(self.assignments)


# ---------------------------------------------------------------------------
# patterns

_REGEX_FORBIDDEN = re.compile(r"\(\?|\{|\\[A-Za-z0-9]")


def _glob_to_regex(pattern: str) -> str:
    return ".*".join(re.escape(part) for part in pattern.split("*"))


@lru_cache(maxsize=512)
def _compile(kind: str, pattern: str) -> re.Pattern:
    if kind == "glob":
        return re.compile(_glob_to_regex(pattern), re.S)
    return re.compile(pattern)


def check_regex(pattern: str, position: int = 0) -> None:
    """Reject constructs outside the supported regex subset."""
    m = _REGEX_FORBIDDEN.search(pattern)
    if m:
        raise QuerySyntaxError(position + m.start(), "supported regex construct")
    try:
        re.compile(pattern)
    except re.error as exc:
        raise QuerySyntaxError(position + (exc.pos or 0), f"valid regex ({exc.msg})") from None


# ---------------------------------------------------------------------------
# tokenizer and parser

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<align>_=_)
  | (?P<dom2>>>)
  | (?P<dom>>)
  | (?P<neq>!=)
  | (?P<eq>=)
  | (?P<amp>&)
  | (?P<colon>:)
  | (?P<lbr>\[)
  | (?P<rbr>\])
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<regex>/(?:[^/\\]|\\.)*/)
  | (?P<ident>\#?[A-Za-z0-9_][A-Za-z0-9_\-]*)
""", re.X)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    out = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m:
            raise QuerySyntaxError(i, "query token")
        if m.lastgroup != "ws":
            out.append(_Tok(m.lastgroup, m.group(), i))
        i = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.variables: list[str] = []
        self.constraints: dict[str, list[Constraint]] = {}
        self.defined: set[str] = set()
        self.edges: list[Edge] = []
        self.aligns: list[Align] = []
        self.anonymous: set[str] = set()
        self.n_anon = 0
        self.n_nodes = 0

    # helpers
    def peek(self, k=0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self, kind: str, expected: str) -> _Tok:
        tok = self.peek()
        if tok.kind != kind:
            raise QuerySyntaxError(tok.pos, expected)
        self.i += 1
        return tok

    def _introduce(self, var: str) -> None:
        if var not in self.constraints:
            self.variables.append(var)
            self.constraints[var] = []
            self.n_nodes += 1

    def _use(self, var: str, pos: int) -> str:
        if var not in self.constraints:
            if var.isdigit():
                # ANNIS-style reference to a numbered node that is never defined
                raise QuerySyntaxError(pos, f"definition of node #{var}")
            self._introduce(var)
        return var

    # grammar
    def parse(self) -> QueryAst:
        self.term()
        while self.peek().kind == "amp":
            self.i += 1
            self.term()
        self.take("end", "'&' or end of query")
        pending = [v for v in self.variables if v.isdigit() and v not in self.defined]
        if pending:
            raise QuerySyntaxError(len(self.text), f"definition of node #{pending[0]}")
        return QueryAst(
            variables=tuple(self.variables),
            constraints={v: tuple(cs) for v, cs in self.constraints.items()},
            edges=tuple(self.edges),
            aligns=tuple(self.aligns),
            anonymous=frozenset(self.anonymous),
        )

    def term(self) -> None:
        tok = self.peek()
        if tok.kind == "ident" and tok.text in ATTRS and self.peek(1).kind in ("eq", "neq"):
            # bare layer term: introduces the next numbered node
            var = str(self.n_nodes + 1)
            self._introduce(var)
            self.defined.add(var)
            self.constraints[var].append(self.constraint())
            return
        left = self.node_expr()
        tok = self.peek()
        if tok.kind in ("dom", "dom2") or (tok.kind == "ident" and tok.text in ("iDominates", "Dominates")):
            self.i += 1
            kind = ">>" if tok.kind == "dom2" or tok.text == "Dominates" else ">"
            label = None
            if kind == ">" and tok.kind == "dom" and self.peek().kind == "ident" \
                    and self.peek(1).kind in ("ident", "lbr"):
                label = self.peek().text
                self.i += 1
            right = self.node_expr()
            self.edges.append(Edge(left, right, kind, label))
        elif tok.kind == "align":
            self.i += 1
            right = self.node_expr()
            self.aligns.append(Align(left, right))

    def node_expr(self) -> str:
        tok = self.peek()
        if tok.kind == "lbr":
            self.n_anon += 1
            var = f"_{self.n_anon}"
            self.anonymous.add(var)
            self._introduce(var)
            self.defined.add(var)
            self.bracket(var)
            return var
        if tok.kind != "ident" or tok.text in ("iDominates", "Dominates"):
            raise QuerySyntaxError(tok.pos, "variable or '['")
        self.i += 1
        var = tok.text.lstrip("#")
        if self.peek().kind == "colon":
            self.i += 1
            self._introduce(var)
            self.defined.add(var)
            self.bracket(var)
        else:
            self._use(var, tok.pos)
        return var

    def bracket(self, var: str) -> None:
        self.take("lbr", "'['")
        self.constraints[var].append(self.constraint())
        while self.peek().kind == "amp":
            self.i += 1
            self.constraints[var].append(self.constraint())
        self.take("rbr", "']'")

    def constraint(self) -> Constraint:
        tok = self.take("ident", "attribute name")
        if tok.text not in ATTRS:
            raise QuerySyntaxError(tok.pos, "one of " + "|".join(ATTRS))
        op = self.peek()
        if op.kind not in ("eq", "neq"):
            raise QuerySyntaxError(op.pos, "'=' or '!='")
        self.i += 1
        pat = self.peek()
        if pat.kind == "str":
            self.i += 1
            value = re.sub(r"\\(.)", r"\1", pat.text[1:-1])
            return Constraint(tok.text, op.text, "glob", value)
        if pat.kind == "regex":
            self.i += 1
            value = pat.text[1:-1].replace("\\/", "/")
            check_regex(value, pat.pos + 1)
            return Constraint(tok.text, op.text, "regex", value)
        raise QuerySyntaxError(pat.pos, "quoted pattern or /regex/")


def parse_query(text: str) -> QueryAst:
    """Parse a query into a :class:`QueryAst`."""
    if not text.strip():
        raise QuerySyntaxError(0, "query term")
    return _Parser(text).parse()


_CS_CLAUSE = re.compile(r"\(\s*(!?[^\s()]+)\s+(iDominates|Dominates)\s+(!?[^\s()]+)\s*\)")


def parse_corpussearch(text: str) -> QueryAst:
    """Translate a CorpusSearch query (``node: X; query: (A iDominates B) AND ...``).

    Repeated argument labels denote the same node.  A ``!``-prefixed argument
    is a fresh node whose label does not match the pattern.  The ``node:``
    boundary becomes an anonymous ancestor of the first argument.
    """
    boundary = None
    body = text.strip()
    m = re.match(r"node:[ \t]*([^;\s]+)[ \t]*(?:;|\n)", body)
    if m:
        boundary = m.group(1)
        body = body[m.end():].strip()
    m = re.match(r"query:\s*", body)
    if not m:
        raise QuerySyntaxError(len(text) - len(body), "'query:'")
    offset = len(text) - len(body) + m.end()
    body = body[m.end():]

    variables: list[str] = []
    constraints: dict[str, list[Constraint]] = {}
    anonymous: set[str] = set()
    named: dict[str, str] = {}
    edges: list[Edge] = []

    def arg(label: str) -> str:
        if label.startswith("!"):
            var = f"_{len(anonymous) + 1}"
            anonymous.add(var)
            variables.append(var)
            constraints[var] = [Constraint("cat", "!=", "glob", label[1:])]
            return var
        if label not in named:
            var = f"c{len(named) + 1}"
            named[label] = var
            variables.append(var)
            constraints[var] = [Constraint("cat", "=", "glob", label)]
        return named[label]

    pos = 0
    while True:
        c = _CS_CLAUSE.match(body, pos)
        if not c:
            raise QuerySyntaxError(offset + pos, "'(A iDominates B)' clause")
        left, rel, right = c.groups()
        if left.startswith("!"):
            raise QuerySyntaxError(offset + c.start(1), "positive left argument")
        edges.append(Edge(arg(left), arg(right), ">" if rel == "iDominates" else ">>"))
        pos = c.end()
        rest = re.match(r"\s*AND\s*", body[pos:])
        if rest:
            pos += rest.end()
            continue
        if body[pos:].strip():
            raise QuerySyntaxError(offset + pos, "'AND' or end of query")
        break
    if boundary is not None and variables and boundary not in named:
        var = f"_{len(anonymous) + 1}"
        anonymous.add(var)
        variables.append(var)
        constraints[var] = [Constraint("cat", "=", "glob", boundary)]
        edges.append(Edge(var, variables[0], ">>"))
    return QueryAst(tuple(variables), {v: tuple(cs) for v, cs in constraints.items()},
                    tuple(edges), (), frozenset(anonymous))


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class Element:
    id: str
    span: tuple[int, ...]
    values: Mapping[str, str | None]
    order: int


def split_function_tags(sentence: AnnotatedSentence) -> AnnotatedSentence:
    """Move Penn function tags into edge labels: ``NP-ACC-1`` becomes
    category ``NP`` under edge ``ACC``.  Nodes that already carry an edge
    label and empty categories are left alone."""
    from dataclasses import replace

    if sentence.tree is None:
        return sentence
    nodes = []
    for n in sentence.tree:
        if n.edge_label is not None or n.is_empty or "-" not in n.label.strip("-"):
            nodes.append(n)
            continue
        parts = [p for p in n.label.split("-") if p and not p.isdigit()]
        if len(parts) < 2:
            nodes.append(n)
            continue
        nodes.append(replace(n, label=parts[0], edge_label="-".join(parts[1:])))
    return replace(sentence, tree=tuple(nodes))


def elements(sentence: AnnotatedSentence) -> list[Element]:
    """Searchable elements: tree nodes when a tree exists, tokens otherwise."""
    tokens = sentence.tokens
    if sentence.tree is None:
        return [Element(f"t{t.index}", (t.index,),
                        {"cat": None, "word": t.form, "lemma": t.lemma, "pos": t.pos,
                         "pos2": t.pos2, "morph": t.morph}, i)
                for i, t in enumerate(tokens)]
    out = []
    for i, n in enumerate(sentence.tree):
        values: dict[str, str | None] = {a: None for a in ATTRS}
        values["cat"] = n.label
        if not sentence.children[n.id] and len(n.span) == 1 and n.span[0] < len(tokens):
            t = tokens[n.span[0]]
            values.update(word=t.form, lemma=t.lemma, pos=t.pos, pos2=t.pos2, morph=t.morph)
        out.append(Element(n.id, tuple(sorted(n.span)), values, i))
    return out


def _check_layers(ast: QueryAst, sentence: AnnotatedSentence) -> None:
    needed = ast.attrs()
    if ("cat" in needed or ast.edges) and sentence.tree is None:
        raise MissingLayer("cat")
    for attr in ("lemma", "pos", "pos2", "morph"):
        if attr in needed and all(getattr(t, attr) is None for t in sentence.tokens):
            raise MissingLayer(attr)


def _edge_label(node: SyntaxNode) -> str | None:
    return node.edge_label


def eval_query(ast: QueryAst, sentence: AnnotatedSentence) -> MatchSet:
    """All assignments of the query's named variables that satisfy every term.

    Variables are bound in order of increasing candidate count; anonymous
    nodes are existential and do not appear in the result.
    """
    _check_layers(ast, sentence)
    elems = elements(sentence)
    cands = {v: [e for e in elems if all(c.matches(e.values[c.attr]) for c in ast.constraints[v])]
             for v in ast.variables}
    result = MatchSet(sentence.id)
    if any(not c for c in cands.values()):
        return result

    nodes = sentence.nodes
    anc_cache: dict[str, set[str]] = {}

    def ancestors(nid: str) -> set[str]:
        if nid not in anc_cache:
            anc_cache[nid] = {a.id for a in sentence.ancestors(nid)}
        return anc_cache[nid]

    def edge_ok(edge: Edge, a: Element, b: Element) -> bool:
        if edge.kind == ">":
            child = nodes[b.id]
            if child.parent != a.id:
                return False
            return edge.label is None or _edge_label(child) == edge.label
        return a.id in ancestors(b.id)

    order = sorted(ast.variables, key=lambda v: (len(cands[v]), ast.variables.index(v)))
    rank = {v: i for i, v in enumerate(order)}
    # attach each binary constraint to whichever endpoint is bound last
    checks: dict[str, list] = {v: [] for v in order}
    for e in ast.edges:
        checks[max(e.parent, e.child, key=rank.get)].append(("edge", e))
    for al in ast.aligns:
        checks[max(al.left, al.right, key=rank.get)].append(("align", al))

    binding: dict[str, Element] = {}
    seen: set[tuple] = set()
    found: list[tuple] = []
    outputs = ast.output_variables

    def consistent(var: str) -> bool:
        for kind, c in checks[var]:
            if kind == "edge":
                if not edge_ok(c, binding[c.parent], binding[c.child]):
                    return False
            elif binding[c.left].span != binding[c.right].span:
                return False
        return True

    def search(k: int) -> None:
        if k == len(order):
            key = tuple(binding[v].order for v in outputs)
            if key not in seen:
                seen.add(key)
                found.append(key)
            return
        var = order[k]
        for e in cands[var]:
            binding[var] = e
            if consistent(var):
                search(k + 1)
        binding.pop(var, None)

    search(0)
    for key in sorted(found):
        result.assignments.append({v: elems[i].id for v, i in zip(outputs, key)})
    return result


@dataclass(frozen=True)
class Extracted:
    sentence_id: str
    bindings: Mapping[str, str]
    clause: tuple[SyntaxNode, ...] | None
    sentence: AnnotatedSentence = field(compare=False, repr=False)


def subtree(sentence: AnnotatedSentence, node_id: str) -> tuple[SyntaxNode, ...]:
    root = sentence.nodes[node_id]
    return (root,) + tuple(sentence.descendants(node_id))


def extract(treebank: Iterable[AnnotatedSentence], ast: QueryAst) -> list[Extracted]:
    """One record per match, with the subtree rooted at the first variable.

    Sentences lacking a layer the query needs are skipped.
    """
    out = []
    skipped = 0
    outputs = ast.output_variables
    for s in treebank:
        try:
            ms = eval_query(ast, s)
        except MissingLayer:
            skipped += 1
            continue
        for a in ms:
            clause = None
            if s.tree is not None and outputs:
                clause = subtree(s, a[outputs[0]])
            out.append(Extracted(s.id, a, clause, s))
    if skipped:
        log.info("skipped %d sentences without the queried layers", skipped)
    return out
