"""Coding of extracted infinitival clauses into a factor table.

A clause is identified by a sentence and the id of its clause node
(typically an ``IP-INF``).  The object is the accusative NP inside the
clause; its order relative to the infinitive is decided by the position
of the NP's head noun, so split NPs are coded by the noun alone.
"""
from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

from .corpus import AnnotatedSentence, SyntaxNode
from .errors import DataError, DuplicateSidecarKey, NoInfinitive, NoObject

log = logging.getLogger(__name__)

PATTERNS = ("OV", "VO", "OVX", "OXV", "VOX", "VXO", "XOV", "XVO", "XOVX", "XVOX",
            "SOV", "SVO", "OSV", "OVS", "VSO", "VOS")
VERB_CLASSES = ("aci", "restructuring", "control", "raising", "simple", "prepositional")

INFINITIVE_TAGS = ("VB", "VX")
OBJECT_LABEL = "NP-ACC"
SUBJECT_LABEL = "NP-SBJ"
NOUN_PREFIXES = ("N", "NPR", "NCS", "NCPL", "NCPO")
NON_WORD_TAGS = ("D", "P", "CONJ", "CONJS", "CONJO")  # exact, or with a hyphenated suffix
PUNCT_PREFIXES = ("PON", "PUNC", ".", ",")
POSTMODIFIERS = ("CP-REL", "CP", "PP", "NP-PRN", "IP-PPL")
TRACE_WORDS = ("*T*", "*ICH*")


@dataclass(frozen=True)
class Excluded:
    reason: str


@dataclass
class ClauseRecord:
    id: str
    text_id: str
    language: str = "latin"
    date_median: int | None = None
    period_cluster: str | None = None
    order: str = "OV"
    pattern: str = "OV"
    split: bool = False
    intervening: bool = False
    subject: str = "absent"
    inf_position: str = "independent"
    verb_class: str = "aci"
    tense: str = "none"
    heaviness_words: int = 1
    heaviness_syn: str = "light"
    animacy: str | None = None
    info_status: str | None = None
    info_relevance: str | None = None
    genre: str | None = None
    theme: str | None = None
    metric: bool = False
    lemma: str | None = None
    lemma_freq: int = 1
    author: str | None = None
    flags: str = ""

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise DataError(f"pattern {self.pattern!r} not in the inventory")
        if self.order != pattern_order(self.pattern):
            raise DataError(f"order {self.order} disagrees with pattern {self.pattern}")
        if self.heaviness_words < 1 or self.lemma_freq < 1:
            raise DataError("heaviness_words and lemma_freq must be at least 1")


COLUMNS = tuple(f.name for f in fields(ClauseRecord))


def pattern_order(pattern: str) -> str:
    return "OV" if pattern.index("O") < pattern.index("V") else "VO"


# ---------------------------------------------------------------------------
# tree helpers

def _matches(label: str, prefix: str) -> bool:
    """``label`` equals ``prefix`` or extends it with a hyphenated suffix."""
    return label == prefix or label.startswith(prefix + "-")


def _is_noun(label: str) -> bool:
    return label.startswith("N") and not label.startswith(("NEG", "NUM"))


def _is_empty_leaf(s: AnnotatedSentence, node: SyntaxNode) -> bool:
    if node.is_empty:
        return True
    if len(node.span) == 1 and node.span[0] < len(s.tokens):
        return s.tokens[node.span[0]].form.startswith("*")
    return False


def _clause_ip(s: AnnotatedSentence, node_id: str) -> str | None:
    """Nearest IP (clause) ancestor of a node."""
    for a in s.ancestors(node_id):
        if a.label.startswith("IP"):
            return a.id
    return None


def _own_nodes(s: AnnotatedSentence, clause_id: str) -> list[SyntaxNode]:
    """Descendants whose nearest clause ancestor is ``clause_id``."""
    return [n for n in s.descendants(clause_id) if _clause_ip(s, n.id) == clause_id]


def find_infinitive(s: AnnotatedSentence, clause_id: str,
                    inf_tags: Sequence[str] = INFINITIVE_TAGS) -> SyntaxNode:
    for n in _own_nodes(s, clause_id):
        if not s.children[n.id] and n.label in inf_tags:
            return n
    raise NoInfinitive(f"clause {clause_id} of {s.id} has no infinitive")


def find_object(s: AnnotatedSentence, clause_id: str) -> SyntaxNode:
    for n in _own_nodes(s, clause_id):
        if _matches(n.label.lstrip("*"), OBJECT_LABEL):  # empty leaves carry a "*" prefix
            return n
    raise NoObject(f"clause {clause_id} of {s.id} has no accusative object")


def _np_leaves(s: AnnotatedSentence, np_id: str) -> list[SyntaxNode]:
    """Leaves of the NP proper, not those inside clausal or PP postmodifiers."""
    out = []
    stack = list(reversed(s.children[np_id]))
    while stack:
        n = stack.pop()
        if any(_matches(n.label, m) for m in ("CP-REL", "CP", "PP", "IP-PPL")):
            continue
        kids = s.children[n.id]
        if kids:
            stack.extend(reversed(kids))
        else:
            out.append(n)
    return out


def head_noun(s: AnnotatedSentence, np_id: str) -> SyntaxNode | None:
    """First noun leaf of the NP; failing that, its first contentful leaf."""
    leaves = [n for n in _np_leaves(s, np_id) if not _is_empty_leaf(s, n)]
    for n in leaves:
        if _is_noun(n.label):
            return n
    for n in leaves:
        if not n.label.startswith(("D", "P", "CONJ", "PON")):
            return n
    return None


def _is_pronoun(s: AnnotatedSentence, np_id: str) -> bool:
    leaves = [n for n in _np_leaves(s, np_id) if not _is_empty_leaf(s, n)]
    content = [n for n in leaves if not n.label.startswith(("D", "PON", "CONJ"))]
    return bool(content) and all(n.label.startswith("PRO") for n in content)


# ---------------------------------------------------------------------------
# operations

def code_ovvo(s: AnnotatedSentence, clause_id: str, inf_tags: Sequence[str] = INFINITIVE_TAGS):
    """``"OV"``, ``"VO"`` or :class:`Excluded` for the clause's object."""
    inf = find_infinitive(s, clause_id, inf_tags)
    obj = find_object(s, clause_id)
    leaves = s.leaves(obj.id)
    if obj.is_empty or all(_is_empty_leaf(s, n) for n in leaves):
        forms = [s.tokens[n.span[0]].form for n in leaves if n.span and n.span[0] < len(s.tokens)]
        if any(f.startswith(TRACE_WORDS) for f in forms):
            return Excluded("scrambled")
        return Excluded("empty")
    if _is_pronoun(s, obj.id):
        return Excluded("pronoun")
    head = head_noun(s, obj.id)
    if head is None:
        return Excluded("empty")
    return "OV" if head.span[0] < inf.span[0] else "VO"


def pattern_from_positions(o: int, v: int, s: int | None = None, xs: Iterable[int] = ()) -> str:
    """Pattern label from linear positions of object, verb, subject and
    other constituents.

    With an explicit subject the label is the order of S, O and V.
    Otherwise X marks the slots before, between and after O and V that
    hold some other constituent; a medial X is dropped when an outer one
    is present, since the inventory has no such labels.

    Which constituents count as X is an interpretation, flagged for audit:
    here every clause-level constituent other than O, V and the subject,
    one X per slot however many fill it.
    """
    if s is not None:
        return "".join(c for _, c in sorted([(o, "O"), (v, "V"), (s, "S")]))
    lo, hi = min(o, v), max(o, v)
    pre = any(x < lo for x in xs)
    mid = any(lo < x < hi for x in xs)
    post = any(x > hi for x in xs)
    first, second = ("O", "V") if o < v else ("V", "O")
    if mid and not (pre or post):
        return first + "X" + second
    return ("X" if pre else "") + first + second + ("X" if post else "")


def _constituent_position(s: AnnotatedSentence, node: SyntaxNode) -> int | None:
    leaves = [n for n in s.leaves(node.id) if not _is_empty_leaf(s, n)]
    return min(n.span[0] for n in leaves) if leaves else None


def clause_positions(s: AnnotatedSentence, clause_id: str, inf_tags=INFINITIVE_TAGS):
    """(o, v, s, xs) positions for :func:`pattern_from_positions`."""
    inf = find_infinitive(s, clause_id, inf_tags)
    obj = find_object(s, clause_id)
    head = head_noun(s, obj.id)
    o = head.span[0] if head else min(obj.span)
    v = inf.span[0]
    subj = None
    xs = []
    kids = s.children[clause_id]
    for i, k in enumerate(kids):
        if k.id in (inf.id, obj.id) or inf.id in {d.id for d in s.descendants(k.id)}:
            continue
        pos = _constituent_position(s, k)
        if pos is None or k.label.startswith(("PON", "PUNC")):
            continue
        if i == 0 and not s.children[k.id] and k.label in ("P", "TO"):
            continue  # prepositional marker of the clause
        if _matches(k.label, SUBJECT_LABEL):
            subj = pos
            continue
        xs.append(pos)
    return o, v, subj, xs


def classify_pattern(s: AnnotatedSentence, clause_id: str, inf_tags=INFINITIVE_TAGS) -> str:
    return pattern_from_positions(*clause_positions(s, clause_id, inf_tags))


def measure_heaviness(s: AnnotatedSentence, np_id: str) -> tuple[int, str]:
    """Word count (without determiners, prepositions and conjunctions) and
    light/heavy: coordinated NPs and NPs with a postmodifier are heavy."""
    words = 0
    for leaf in s.leaves(np_id):
        if _is_empty_leaf(s, leaf) or leaf.label.startswith(PUNCT_PREFIXES) or \
                any(_matches(leaf.label, t) for t in NON_WORD_TAGS):
            continue
        words += 1
    kids = s.children[np_id]
    coordinated = any(k.label.startswith("CONJ") for k in kids) or \
        sum(1 for k in kids if k.label.startswith("NP") and not _matches(k.label, "NP-PRN")) > 1
    postmod = any(any(_matches(k.label, m) for m in POSTMODIFIERS) for k in kids)
    return max(1, words), "heavy" if coordinated or postmod else "light"


def find_matrix_verb(s: AnnotatedSentence, clause_id: str, inf_tags=INFINITIVE_TAGS) -> SyntaxNode | None:
    """Finite verb of the clause governing ``clause_id``, if any."""
    parent = _clause_ip(s, clause_id)
    if parent is None:
        return None
    for k in s.children[parent]:
        if not s.children[k.id] and k.label.startswith(("V", "MD")) and k.label not in inf_tags \
                and not _is_empty_leaf(s, k):
            return k
    return None


def code_inf_position(s: AnnotatedSentence, clause_id: str, matrix: SyntaxNode | None = None,
                      inf_tags=INFINITIVE_TAGS) -> str:
    node = s.nodes[clause_id]
    parent = s.nodes.get(node.parent) if node.parent else None
    kids = s.children[clause_id]
    if (parent is not None and parent.label.startswith("PP")) or \
            (kids and not s.children[kids[0].id] and kids[0].label in ("P", "TO")):
        return "prepositional"
    if matrix is None:
        matrix = find_matrix_verb(s, clause_id, inf_tags)
    if matrix is None:
        return "independent"
    inf = find_infinitive(s, clause_id, inf_tags)
    return "preposed" if inf.span[0] < matrix.span[0] else "postposed"


# ---------------------------------------------------------------------------
# lexicons

def read_tsv(source) -> dict[str, str]:
    """Two-column TSV (``#`` comments allowed) from a path, text or bytes."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                      and "\t" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2:
            raise DataError(f"line {lineno}: expected two tab-separated columns")
        out[parts[0].strip()] = parts[1].strip()
    return out


def shipped_lexicon(name: str) -> dict[str, str]:
    """One of the TSV files bundled in ``diachrony/data``."""
    return read_tsv(resources.files("diachrony").joinpath("data", name).read_text(encoding="utf-8"))


def verb_lexicon(language: str) -> dict[str, str]:
    return shipped_lexicon({"latin": "verbs_latin.tsv", "oldfrench": "verbs_oldfrench.tsv"}[language])


def frequency_lexicon(language: str = "latin") -> dict[str, int]:
    if language != "latin":
        return {}
    return {k: int(v) for k, v in shipped_lexicon("lemma_freq_latin.tsv").items()}


def classify_verb(lemma: str | None, lexicon: Mapping[str, str], default: str = "simple",
                  unlisted: Counter | None = None) -> str:
    """Class of a matrix verb; unlisted verbs get ``default`` and a warning
    (or are tallied in ``unlisted`` when given, for one summary warning)."""
    if lemma is not None:
        cls = lexicon.get(lemma) or lexicon.get(lemma.lower())
        if cls:
            if cls not in VERB_CLASSES:
                raise DataError(f"unknown verb class {cls!r} for {lemma!r}")
            return cls
    if unlisted is not None:
        unlisted[lemma] += 1
    else:
        log.warning("matrix verb %r not in lexicon; using %r", lemma, default)
    return default


def lookup_lemma_frequency(lemma: str, lexicon: Mapping[str, int],
                           corpus_counts: Mapping[str, int] | None = None) -> int:
    """Lexicon count, falling back to the lemma's own corpus count."""
    if lemma in lexicon:
        return int(lexicon[lemma])
    return max(1, int((corpus_counts or {}).get(lemma, 1)))


def infinitive_tense(token, language: str) -> str:
    if language != "latin":
        return "none"
    morph = token.morph or ""
    for part in morph.split("|"):
        if part.startswith("tense="):
            return "past" if part[6:] in ("perf", "r", "past", "pqp") else "present"
    return "past" if token.form.lower().endswith("isse") else "present"


# ---------------------------------------------------------------------------
# sidecar annotations

SIDECAR_FIELDS = ("info_status", "info_relevance", "animacy")


def read_sidecar(source) -> dict[tuple[str, str], dict[str, str]]:
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    if "\n" not in text and Path(text).exists():
        text = Path(text).read_text(encoding="utf-8")
    table: dict[tuple[str, str], dict[str, str]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["text_id"], row["clause_id"])
        values = {k: row[k] for k in SIDECAR_FIELDS if row.get(k)}
        if key in table and table[key] != values:
            raise DuplicateSidecarKey(key)
        table[key] = values
    return table


def attach_annotations(records: Sequence[ClauseRecord], sidecar) -> list[ClauseRecord]:
    """Fill info status, relevance and animacy; unmatched records are
    flagged ``unannotated`` and kept."""
    table = sidecar if isinstance(sidecar, Mapping) else read_sidecar(sidecar)
    out = []
    for r in records:
        values = table.get((r.text_id, r.id))
        if values is None:
            flags = ";".join(f for f in (r.flags, "unannotated") if f)
            out.append(replace(r, flags=flags))
        else:
            out.append(replace(r, **values))
    return out


# ---------------------------------------------------------------------------
# clause coding

@dataclass
class CodingConfig:
    language: str = "latin"
    inf_tags: tuple[str, ...] = INFINITIVE_TAGS
    verb_lexicon: Mapping[str, str] | None = None
    frequency_lexicon: Mapping[str, int] | None = None
    default_verb_class: str = "simple"
    texts: Mapping[str, Mapping] = field(default_factory=dict)


def code_clause(s: AnnotatedSentence, clause_id: str, config: CodingConfig,
                corpus_counts: Mapping[str, int] | None = None, unlisted: Counter | None = None):
    """Full record for one clause, or :class:`Excluded`."""
    order = code_ovvo(s, clause_id, config.inf_tags)
    if isinstance(order, Excluded):
        return order
    inf = find_infinitive(s, clause_id, config.inf_tags)
    obj = find_object(s, clause_id)
    o, v, subj, xs = clause_positions(s, clause_id, config.inf_tags)
    pattern = pattern_from_positions(o, v, subj, xs)
    own = set(obj.span) | {v}
    between = range(min(o, v) + 1, max(o, v))
    intervening = any(i not in own and not s.tokens[i].form.startswith("*") for i in between)
    matrix = find_matrix_verb(s, clause_id, config.inf_tags)
    position = code_inf_position(s, clause_id, matrix, config.inf_tags)
    lexicon = config.verb_lexicon if config.verb_lexicon is not None else verb_lexicon(config.language)
    if position == "independent":
        verb_class = "aci"
    elif position == "prepositional":
        verb_class = "prepositional"
    else:
        mtok = s.tokens[matrix.span[0]]
        verb_class = classify_verb(mtok.lemma or mtok.form, lexicon, config.default_verb_class, unlisted)
        if verb_class == "prepositional":
            verb_class = config.default_verb_class
    words, syn = measure_heaviness(s, obj.id)
    tok = s.tokens[inf.span[0]]
    lemma = tok.lemma or tok.form.lower()
    freq_lex = config.frequency_lexicon if config.frequency_lexicon is not None else \
        frequency_lexicon(config.language)
    meta = dict(config.texts.get(s.text_id, {}))
    meta.update({k: v for k, v in s.meta.items() if k in ("date_median", "author", "genre", "theme", "metric")})
    sorted_obj = sorted(obj.span)
    split = sorted_obj != list(range(sorted_obj[0], sorted_obj[-1] + 1))
    return ClauseRecord(
        id=f"{s.id}:{clause_id}",
        text_id=s.text_id,
        language=config.language,
        date_median=int(meta["date_median"]) if meta.get("date_median") is not None else None,
        order=order,
        pattern=pattern,
        split=split,
        intervening=intervening,
        subject="explicit" if subj is not None else "absent",
        inf_position=position,
        verb_class=verb_class,
        tense=infinitive_tense(tok, config.language),
        heaviness_words=words,
        heaviness_syn=syn,
        genre=meta.get("genre"),
        theme=meta.get("theme"),
        metric=_as_bool(meta.get("metric", False)),
        lemma=lemma,
        lemma_freq=lookup_lemma_frequency(lemma, freq_lex, corpus_counts),
        author=meta.get("author"),
    )


def code_extracted(extracted: Iterable, config: CodingConfig):
    """Code every extracted clause; returns ``(records, exclusions)`` where
    exclusions maps clause ids to a reason."""
    extracted = list(extracted)
    counts: dict[str, int] = {}
    for e in extracted:
        for t in e.sentence.tokens:
            if t.lemma:
                counts[t.lemma] = counts.get(t.lemma, 0) + 1
    records, excluded = [], {}
    unlisted: Counter = Counter()
    for e in extracted:
        clause_id = next(iter(e.bindings.values()))
        try:
            result = code_clause(e.sentence, clause_id, config, counts, unlisted)
        except (NoInfinitive, NoObject) as exc:
            result = Excluded(type(exc).__name__)
        if isinstance(result, Excluded):
            excluded[f"{e.sentence_id}:{clause_id}"] = result.reason
        else:
            records.append(result)
    for lemma, n in sorted(unlisted.items(), key=lambda kv: str(kv[0])):
        log.warning("matrix verb %r not in lexicon (%d clauses); using %r", lemma, n, config.default_verb_class)
    return records, excluded


def assign_periods(records: Sequence[ClauseRecord], clusters: Sequence[tuple[str, float, float]]):
    """Label each record with the cluster whose [lo, hi] range holds its date."""
    out = []
    for r in records:
        label = None
        if r.date_median is not None:
            for name, lo, hi in clusters:
                if lo <= r.date_median <= hi:
                    label = name
                    break
        out.append(replace(r, period_cluster=label))
    return out


# ---------------------------------------------------------------------------
# factor table

def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("true", "1", "yes")
    return bool(v)


@dataclass
class FactorTable:
    columns: tuple[str, ...]
    rows: list[dict]
    response: str = "order"

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            if set(row) != set(self.columns):
                raise DataError(f"row {i} does not match the table columns")
            if row.get(self.response) in (None, ""):
                raise DataError(f"row {i} has no {self.response}")

    def __len__(self):
        return len(self.rows)

    @property
    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(self.columns))

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow(["" if row[c] is None else ("true" if row[c] is True else "false" if row[c] is False
                                                   else row[c]) for c in self.columns])
        return buf.getvalue().encode("utf-8")

    def records(self) -> list[ClauseRecord]:
        return [ClauseRecord(**row) for row in self.rows]


_INT_FIELDS = {"date_median", "heaviness_words", "lemma_freq"}
_BOOL_FIELDS = {"split", "intervening", "metric"}


def build_factor_table(records: Iterable[ClauseRecord]) -> tuple[FactorTable, bytes]:
    """Table with one row per record, columns in :data:`COLUMNS` order."""
    table = FactorTable(COLUMNS, [asdict(r) for r in records])
    return table, table.to_csv()


def read_factor_table(data) -> FactorTable:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise DataError("empty factor table") from None
    rows = []
    for raw in reader:
        if not raw:
            continue
        if len(raw) != len(header):
            raise DataError(f"row has {len(raw)} cells, header has {len(header)}")
        row: dict = {}
        for name, cell in zip(header, raw):
            if name in _BOOL_FIELDS:
                row[name] = _as_bool(cell)
            elif cell == "":
                row[name] = "" if name == "flags" else None
            elif name in _INT_FIELDS:
                row[name] = int(cell)
            else:
                row[name] = cell
        rows.append(row)
    return FactorTable(header, rows)
