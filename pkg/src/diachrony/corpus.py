"""In-memory model of annotated sentences and syntax trees.

Trees are stored as flat collections of :class:`SyntaxNode` linked by
parent ids.  Each node records the set of token indices it covers, which
lets the same structure hold Penn constituency trees, TIGER graphs and
(flagged) discontinuous constituents.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import InvalidTree

EMPTY_PREFIX = "*"


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    lemma: str | None = None
    pos: str | None = None
    pos2: str | None = None
    morph: str | None = None


@dataclass(frozen=True)
class SyntaxNode:
    id: str
    label: str
    span: tuple[int, ...]
    parent: str | None = None
    edge_label: str | None = None

    @property
    def is_empty(self) -> bool:
        """Empty categories and traces carry a leading ``*`` on the label."""
        return self.label.startswith(EMPTY_PREFIX)


@dataclass(frozen=True)
class AnnotatedSentence:
    id: str
    text_id: str
    tokens: tuple[Token, ...]
    tree: tuple[SyntaxNode, ...] | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def text(self) -> str:
        return " ".join(t.form for t in self.tokens)

    @cached_property
    def nodes(self) -> dict[str, SyntaxNode]:
        return {n.id: n for n in self.tree or ()}

    @cached_property
    def children(self) -> dict[str, list[SyntaxNode]]:
        """Child lists ordered by the first token each child covers."""
        kids: dict[str, list[SyntaxNode]] = {n.id: [] for n in self.tree or ()}
        for n in self.tree or ():
            if n.parent is not None and n.parent in kids:
                kids[n.parent].append(n)
        for lst in kids.values():
            lst.sort(key=lambda n: (min(n.span) if n.span else -1, n.id))
        return kids

    @cached_property
    def roots(self) -> list[SyntaxNode]:
        return [n for n in self.tree or () if n.parent is None]

    def leaves(self, node_id: str) -> list[SyntaxNode]:
        """Leaf nodes below ``node_id`` in traversal order."""
        out = []
        stack = [self.nodes[node_id]]
        while stack:
            n = stack.pop()
            kids = self.children[n.id]
            if not kids:
                out.append(n)
            else:
                stack.extend(reversed(kids))
        return out

    def ancestors(self, node_id: str) -> list[SyntaxNode]:
        out = []
        seen = {node_id}
        parent = self.nodes[node_id].parent
        while parent is not None and parent in self.nodes and parent not in seen:
            seen.add(parent)
            out.append(self.nodes[parent])
            parent = self.nodes[parent].parent
        return out

    def descendants(self, node_id: str) -> list[SyntaxNode]:
        out = []
        stack = list(reversed(self.children[node_id]))
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(self.children[n.id]))
        return out

    def leaf_for_token(self, index: int) -> SyntaxNode | None:
        for n in self.tree or ():
            if n.span == (index,) and not self.children[n.id]:
                return n
        return None


@dataclass(frozen=True)
class Treebank:
    sentences: tuple[AnnotatedSentence, ...]
    source_format: str = "lines"

    def __iter__(self):
        return iter(self.sentences)

    def __len__(self):
        return len(self.sentences)


@dataclass(frozen=True)
class Violation:
    sentence_id: str
    rule: str
    detail: str = ""


def _sentence_violations(s: AnnotatedSentence) -> list[Violation]:
    out = []

    def flag(rule, detail=""):
        out.append(Violation(s.id, rule, detail))

    for pos, tok in enumerate(s.tokens):
        if not tok.form:
            flag("empty-form", f"token {pos}")
        if tok.index != pos:
            flag("token-index", f"position {pos} has index {tok.index}")
    if s.tree is None:
        return out

    n_tok = len(s.tokens)
    ids = [n.id for n in s.tree]
    if len(set(ids)) != len(ids):
        flag("duplicate-node-id")
    nodes = s.nodes
    for n in s.tree:
        if n.parent is not None and n.parent not in nodes:
            flag("dangling-parent", f"node {n.id} -> {n.parent}")
        if not n.span:
            flag("empty-span", n.id)
        bad = [i for i in n.span if not 0 <= i < n_tok]
        if bad:
            flag("span-out-of-range", f"node {n.id} covers {bad}")

    # cycles: walk each node up to a root
    cyclic = set()
    for n in s.tree:
        seen = set()
        cur = n
        while cur is not None and cur.parent is not None and cur.parent in nodes:
            if cur.id in seen:
                cyclic.add(n.id)
                break
            seen.add(cur.id)
            cur = nodes[cur.parent]
    if cyclic:
        flag("cycle", ",".join(sorted(cyclic)))
    if len(s.roots) > 1:
        flag("multiple-roots", ",".join(r.id for r in s.roots))
    elif not s.roots and s.tree:
        flag("no-root")

    for n in s.tree:
        kids = s.children[n.id]
        if kids:
            union = set()
            for k in kids:
                union.update(k.span)
            if union != set(n.span):
                flag("span-mismatch", n.id)
        elif len(n.span) > 1:
            flag("span-mismatch", f"leaf {n.id} covers {len(n.span)} tokens")
    return out


def validate(tb: Treebank | Iterable[AnnotatedSentence]) -> list[Violation]:
    """Return every invariant violation in ``tb``; an empty list means valid."""
    sentences = tb.sentences if isinstance(tb, Treebank) else tuple(tb)
    report = []
    seen = set()
    for s in sentences:
        if s.id in seen:
            report.append(Violation(s.id, "duplicate-sentence-id"))
        seen.add(s.id)
        report.extend(_sentence_violations(s))
    return report


def _check_hierarchy(tree: Sequence[SyntaxNode]) -> dict[str, list[SyntaxNode]]:
    nodes = {n.id: n for n in tree}
    kids: dict[str, list[SyntaxNode]] = {n.id: [] for n in tree}
    for n in tree:
        if n.parent is not None:
            if n.parent not in nodes:
                raise InvalidTree(f"node {n.id} has unknown parent {n.parent}")
            if not set(n.span) <= set(nodes[n.parent].span):
                raise InvalidTree(f"node {n.id} is not contained in its parent")
            kids[n.parent].append(n)
    for parent, lst in kids.items():
        covered: set[int] = set()
        for k in lst:
            if covered & set(k.span):
                raise InvalidTree(f"children of {parent} overlap")
            covered.update(k.span)
    return kids


def leaf_order(tree: Sequence[SyntaxNode]) -> list[int]:
    """Token indices in the order a left-to-right leaf traversal visits them."""
    kids = _check_hierarchy(tree)
    for lst in kids.values():
        lst.sort(key=lambda n: min(n.span))
    roots = sorted((n for n in tree if n.parent is None), key=lambda n: min(n.span))
    order: list[int] = []
    stack = list(reversed(roots))
    while stack:
        n = stack.pop()
        if kids[n.id]:
            stack.extend(reversed(kids[n.id]))
        else:
            order.extend(sorted(n.span))
    return order


def linearize(tree: Sequence[SyntaxNode] | None, tokens: Sequence[Token]) -> list[Token]:
    """Surface order of ``tokens``.

    Raises :class:`InvalidTree` when sibling spans overlap or a child is not
    contained in its parent.
    """
    if tree:
        _check_hierarchy(tree)
    return sorted(tokens, key=lambda t: t.index)
