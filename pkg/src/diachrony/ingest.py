"""Readers for Penn brackets, TIGER-XML and token-per-line files, plus the
unified JSON-lines interchange format."""
from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from typing import Iterable, Mapping

from .corpus import EMPTY_PREFIX, AnnotatedSentence, SyntaxNode, Token
from .errors import (
    DanglingEdgeRef,
    DataError,
    EmptyLabel,
    MalformedLine,
    MalformedXml,
    UnbalancedBrackets,
)

_PENN_TOKEN = re.compile(r"\(|\)|[^\s()]+")
# subtrees that carry sentence metadata rather than words
_PENN_META_LABELS = {"ID", "CODE"}


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        try:
            return bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"input is not valid UTF-8: {exc}") from None
    return data


def _text_id(meta: Mapping | None) -> str:
    return str((meta or {}).get("text_id", "text"))


# ---------------------------------------------------------------------------
# Penn brackets

def _read_groups(text: str):
    """Yield top-level bracket groups as nested lists ``[label, pos, children]``.

    Atoms are ``(word, offset)`` tuples; groups are ``(label, offset, kids)``.
    """
    stack: list[list] = []
    for m in _PENN_TOKEN.finditer(text):
        tok, pos = m.group(), m.start()
        if tok == "(":
            stack.append([None, pos, []])
        elif tok == ")":
            if not stack:
                raise UnbalancedBrackets(pos)
            label, start, kids = stack.pop()
            group = (label, start, kids)
            if stack:
                stack[-1][2].append(group)
            else:
                yield group
        else:
            if not stack:
                raise UnbalancedBrackets(pos)
            top = stack[-1]
            if top[0] is None and not top[2]:
                top[0] = tok
            else:
                top[2].append((tok, pos))
    if stack:
        raise UnbalancedBrackets(stack[-1][1])


def _is_group(item) -> bool:
    return len(item) == 3


def parse_penn(text, meta: Mapping | None = None) -> list[AnnotatedSentence]:
    """Parse Penn-style bracketed trees, one sentence per top-level group.

    Preterminal labels become token ``pos``; an ``(ID x)`` child of the
    outermost group supplies the sentence id.  Words beginning with ``*``
    (traces, empty pronouns) stay in the token list, and their leaf nodes
    get a ``*`` label prefix.
    """
    text = _as_text(text)
    meta = dict(meta or {})
    text_id = _text_id(meta)
    out = []
    for n_sent, group in enumerate(_read_groups(text)):
        label, start, kids = group
        sent_id = None
        extra: dict[str, object] = {}
        if label is None:
            content = []
            for k in kids:
                if not _is_group(k):
                    raise EmptyLabel(k[1])
                if k[0] in _PENN_META_LABELS and len(k[2]) == 1 and not _is_group(k[2][0]):
                    if k[0] == "ID":
                        sent_id = k[2][0][0]
                    else:
                        extra.setdefault("code", []).append(k[2][0][0])
                    continue
                content.append(k)
            if not content:
                raise EmptyLabel(start)
            if len(content) == 1:
                root = content[0]
            else:
                root = ("ROOT", start, content)
        else:
            root = group

        tokens: list[Token] = []
        nodes: list[dict] = []

        def build(g, parent):
            lbl, pos, children = g
            if lbl is None:
                raise EmptyLabel(pos)
            node = {"id": f"n{len(nodes)}", "label": lbl, "parent": parent, "span": []}
            nodes.append(node)
            if len(children) == 1 and not _is_group(children[0]):
                word = children[0][0]
                tokens.append(Token(index=len(tokens), form=word, pos=lbl))
                node["span"] = [len(tokens) - 1]
                if word.startswith(EMPTY_PREFIX):
                    node["label"] = EMPTY_PREFIX + lbl
                return node["span"]
            if not children:
                raise EmptyLabel(pos)
            span = []
            for c in children:
                if not _is_group(c):
                    raise EmptyLabel(c[1])
                span.extend(build(c, node["id"]))
            node["span"] = span
            return span

        build(root, None)
        tree = tuple(
            SyntaxNode(id=n["id"], label=n["label"], span=tuple(sorted(n["span"])), parent=n["parent"])
            for n in nodes
        )
        s_meta = dict(meta)
        s_meta.update(extra)
        s_meta.pop("text_id", None)
        out.append(AnnotatedSentence(
            id=sent_id or f"{text_id}.{n_sent + 1}",
            text_id=text_id,
            tokens=tuple(tokens),
            tree=tree,
            meta=s_meta,
        ))
    return out


def _penn_string(s: AnnotatedSentence) -> str:
    """Render a sentence back to one-line brackets (used for display and fixtures)."""
    def render(n):
        kids = s.children[n.id]
        label = n.label[len(EMPTY_PREFIX):] if n.is_empty else n.label
        if not kids:
            return f"({label} {' '.join(s.tokens[i].form for i in n.span)})"
        return f"({label} {' '.join(render(k) for k in kids)})"
    body = " ".join(render(r) for r in s.roots)
    return f"( {body} (ID {s.id}))"


# ---------------------------------------------------------------------------
# TIGER-XML

_TIGER_PROMOTED = {"id", "word", "lemma", "pos", "cat"}


def _morph(attrs: Mapping[str, str]) -> str | None:
    rest = [f"{k}={v}" for k, v in attrs.items() if k not in _TIGER_PROMOTED]
    return "|".join(rest) or None


def _tiger_sentence(elem, sent_id: str, text_id: str, meta: dict) -> AnnotatedSentence:
    terminals = [e for e in elem.iter() if e.tag == "t"]
    nonterminals = [e for e in elem.iter() if e.tag == "nt"]
    tokens: list[Token] = []
    leaves: list[dict] = []  # leaf node records, one per token
    declared: dict[str, dict] = {}

    for t in terminals:
        a = t.attrib
        tid = a.get("id") or f"t{len(tokens)}"
        tokens.append(Token(len(tokens), a.get("word", ""), a.get("lemma"), a.get("pos"), None, _morph(a)))
        rec = {"id": tid, "label": a.get("pos") or "t", "parent": None, "edge": None,
               "token": len(tokens) - 1}
        leaves.append(rec)
        declared[tid] = rec

    nts = []
    for nt in nonterminals:
        a = nt.attrib
        nid = a.get("id")
        if not nid:
            raise MalformedXml("nt element without id")
        rec = {"id": nid, "label": a.get("cat") or a.get("pos") or "nt", "parent": None,
               "edge": None, "token": None}
        declared[nid] = rec
        nts.append((nt, rec))

    for nt, rec in nts:
        a = nt.attrib
        own_terminal = None
        if not terminals and "word" in a:
            tokens.append(Token(len(tokens), a["word"], a.get("lemma"), a.get("pos"), None, _morph(a)))
            own_terminal = {"id": None, "label": a.get("pos") or "t", "parent": rec["id"],
                            "edge": None, "token": len(tokens) - 1}
            leaves.append(own_terminal)
        for edge in (e for e in nt if e.tag == "edge"):
            ref = edge.attrib.get("idref")
            label = edge.attrib.get("label")
            if ref in declared:
                child = declared[ref]
            elif own_terminal is not None and own_terminal["id"] is None:
                # the word-bearing nt points at its own (undeclared) terminal
                own_terminal["id"] = ref
                declared[ref] = own_terminal
                child = own_terminal
            else:
                raise DanglingEdgeRef(ref)
            child["parent"] = rec["id"]
            child["edge"] = label
        if own_terminal is not None and own_terminal["id"] is None:
            own_terminal["id"] = f"{rec['id']}_w"
            declared[own_terminal["id"]] = own_terminal

    if not tokens and not nts:
        return AnnotatedSentence(sent_id, text_id, (), None, meta)

    records = leaves + [rec for _, rec in nts]
    spans: dict[str, set[int]] = {r["id"]: set() for r in records}
    for leaf in leaves:
        cur, seen = leaf, set()
        while cur is not None and cur["id"] not in seen:
            seen.add(cur["id"])
            spans[cur["id"]].add(leaf["token"])
            cur = declared.get(cur["parent"]) if cur["parent"] else None
    tree = tuple(
        SyntaxNode(id=r["id"], label=r["label"], span=tuple(sorted(spans[r["id"]])),
                   parent=r["parent"], edge_label=r["edge"])
        for r in sorted(records, key=lambda r: (r["token"] is None, r["token"] or 0))
    )
    return AnnotatedSentence(sent_id, text_id, tuple(tokens), tree, meta)


def parse_tiger_xml(text, meta: Mapping | None = None) -> list[AnnotatedSentence]:
    """Parse TIGER-XML sentences (``<s>``) or a bare fragment of ``<nt>`` elements.

    Only ``word``, ``lemma`` and ``pos`` are promoted to token fields; other
    attributes are kept in ``morph`` as ``key=value`` pairs joined by ``|``.
    """
    text = _as_text(text)
    meta = dict(meta or {})
    text_id = _text_id(meta)
    meta.pop("text_id", None)
    body = re.sub(r"^\s*<\?xml[^>]*\?>", "", text)
    try:
        root = ET.fromstring(f"<_fragment>{body}</_fragment>")
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None
    sentences = [e for e in root.iter() if e.tag == "s"]
    if not sentences:
        if not any(e.tag in ("nt", "t") for e in root.iter()):
            return []
        sentences = [root]
    out = []
    for k, s in enumerate(sentences):
        sid = s.attrib.get("id") or f"{text_id}.{k + 1}"
        out.append(_tiger_sentence(s, sid, text_id, dict(meta)))
    return out


# ---------------------------------------------------------------------------
# token-per-line

def parse_token_lines(text, meta: Mapping | None = None) -> list[AnnotatedSentence]:
    """One token per line (``form [pos [pos2]]``); blank lines end sentences.

    Columns beyond the third are joined into ``morph``.
    """
    text = _as_text(text)
    meta = dict(meta or {})
    text_id = _text_id(meta)
    meta.pop("text_id", None)
    out: list[AnnotatedSentence] = []
    block: list[Token] = []

    def flush():
        if block:
            out.append(AnnotatedSentence(f"{text_id}.{len(out) + 1}", text_id, tuple(block), None, dict(meta)))
            block.clear()

    for line in text.splitlines():
        cols = line.split()
        if not cols:
            flush()
            continue
        block.append(Token(
            index=len(block),
            form=cols[0],
            pos=cols[1] if len(cols) > 1 else None,
            pos2=cols[2] if len(cols) > 2 else None,
            morph=" ".join(cols[3:]) or None,
        ))
    flush()
    return out


PARSERS = {"penn": parse_penn, "tiger": parse_tiger_xml, "lines": parse_token_lines}


# ---------------------------------------------------------------------------
# unified JSON lines

def sentence_to_dict(s: AnnotatedSentence) -> dict:
    toks = []
    for t in s.tokens:
        d = {"i": t.index, "form": t.form}
        for key in ("lemma", "pos", "pos2", "morph"):
            value = getattr(t, key)
            if value is not None:
                d[key] = value
        toks.append(d)
    d = {"id": s.id, "text_id": s.text_id, "tokens": toks}
    if s.tree is not None:
        nodes = []
        for n in s.tree:
            nd = {"id": n.id, "label": n.label}
            if n.edge_label is not None:
                nd["edge"] = n.edge_label
            if n.parent is not None:
                nd["parent"] = n.parent
            nd["span"] = list(n.span)
            nodes.append(nd)
        d["tree"] = nodes
    d["meta"] = dict(s.meta)
    return d


def sentence_from_dict(d: Mapping) -> AnnotatedSentence:
    tokens = tuple(
        Token(index=int(t["i"]), form=str(t["form"]), lemma=t.get("lemma"), pos=t.get("pos"),
              pos2=t.get("pos2"), morph=t.get("morph"))
        for t in d["tokens"]
    )
    tree = None
    if d.get("tree") is not None:
        tree = tuple(
            SyntaxNode(id=str(n["id"]), label=str(n["label"]), span=tuple(int(i) for i in n["span"]),
                       parent=n.get("parent"), edge_label=n.get("edge"))
            for n in d["tree"]
        )
    return AnnotatedSentence(str(d["id"]), str(d["text_id"]), tokens, tree, dict(d.get("meta") or {}))


def write_unified(sentences: Iterable[AnnotatedSentence]) -> bytes:
    lines = [json.dumps(sentence_to_dict(s), ensure_ascii=False, separators=(",", ":"))
             for s in sentences]
    return "".join(line + "\n" for line in lines).encode("utf-8")


def read_unified(data) -> list[AnnotatedSentence]:
    text = _as_text(data)
    out = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise TypeError("not an object")
            out.append(sentence_from_dict(d))
        except (ValueError, TypeError, KeyError, AttributeError) as exc:
            raise MalformedLine(lineno, str(exc)) from None
    return out


def read_unified_file(path) -> list[AnnotatedSentence]:
    with open(path, "rb") as fh:
        return read_unified(fh.read())
