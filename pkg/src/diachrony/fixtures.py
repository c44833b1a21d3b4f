"""Synthetic Latin mini-treebank used by the tests and the example pipeline.

The corpus is generated to fixed period margins of OV and VO infinitival
clauses (976 coded clauses over five periods) with a sprinkling of
pronominal objects that the coder must exclude.  Clause-level annotations
(information status, relevance, animacy) are written to a sidecar CSV and
are skewed so that contrastive focus favours OV.
"""
from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass
from pathlib import Path

import yaml

from .ingest import parse_penn

# label, date median, OV count, VO count
LATIN_MARGINS = (
    ("1st BC", -50, 210, 54),
    ("1st AD", 50, 43, 14),
    ("2nd", 150, 82, 39),
    ("4th", 380, 152, 203),
    ("6th", 530, 102, 77),
)
LATIN_PERIODS = (
    ("1st BC", -100, 0),
    ("1st AD", 1, 100),
    ("2nd", 101, 250),
    ("4th", 251, 450),
    ("6th", 451, 650),
)

MATRIX_VERBS = ("dicit", "coepit", "iubet", "videtur", "oportet", "putat", "potest", "cogit")
INFINITIVES = ("habere", "facere", "videre", "dare", "mittere", "accipere", "reddere",
               "relinquere", "parare", "vocare", "ferre", "scribere", "laudare", "movere")
NOUNS = ("castra", "partes", "legem", "urbem", "pecuniam", "librum", "verba", "gratiam",
         "fidem", "milites", "arma", "consilium")
ADJECTIVES = ("magnam", "novam", "bonum", "omnia")
ADVERBS = ("statim", "iterum", "bene", "semper")
SUBJECTS = ("illum", "Caesarem", "hominem")

PRONOUN_EVERY = 12  # one excluded pronominal object per this many clauses


@dataclass
class Fixture:
    texts: dict[str, str]  # text id -> Penn text
    text_meta: list[dict]
    sidecar: list[dict]
    excluded: int


def _object(rng: random.Random) -> str:
    noun = rng.choice(NOUNS)
    r = rng.random()
    if r < 0.12:
        return f"(NP-ACC (N {noun}) (CP-REL (WNP qui) (C 0) (IP-SUB (VBP manet))))"
    if r < 0.2:
        return f"(NP-ACC (N {noun}) (CONJ et) (N {rng.choice(NOUNS)}))"
    if r < 0.4:
        return f"(NP-ACC (ADJ {rng.choice(ADJECTIVES)}) (N {noun}))"
    return f"(NP-ACC (N {noun}))"


def _clause(rng: random.Random, order: str, pronoun: bool = False) -> str:
    inf = f"(VB {rng.choice(INFINITIVES)})"
    obj = "(NP-ACC (PRO eum))" if pronoun else _object(rng)
    parts = [obj, inf] if order == "OV" else [inf, obj]
    r = rng.random()
    if r < 0.15:
        parts.insert(1, f"(ADVP (ADV {rng.choice(ADVERBS)}))")
    elif r < 0.25:
        parts.insert(0, f"(ADVP (ADV {rng.choice(ADVERBS)}))")
    elif r < 0.32:
        parts.append(f"(ADVP (ADV {rng.choice(ADVERBS)}))")
    elif r < 0.40:
        parts.insert(0, f"(NP-SBJ (N {rng.choice(SUBJECTS)}))")
    ip = "(IP-INF " + " ".join(parts) + ")"
    if rng.random() < 0.08:
        return f"(IP-MAT {ip} (PONFP .))"
    verb = f"(VBP {rng.choice(MATRIX_VERBS)})"
    body = f"{ip} {verb}" if rng.random() < 0.5 else f"{verb} {ip}"
    return f"(IP-MAT {body} (PONFP .))"


def latin_fixture(seed: int = 0) -> Fixture:
    """Generate the corpus; identical seeds give identical files."""
    rng = random.Random(seed)
    texts: dict[str, list[str]] = {}
    meta = []
    sidecar = []
    excluded = 0
    for p, (label, date, n_ov, n_vo) in enumerate(LATIN_MARGINS, 1):
        text_ids = [f"P{p}{a}" for a in "ab"]
        for k, tid in enumerate(text_ids):
            texts[tid] = []
            meta.append({"text_id": tid, "date_median": date - 10 + 20 * k,
                         "author": f"author{p}{'ab'[k]}", "genre": rng.choice(["prose", "letters"]),
                         "theme": rng.choice(["history", "religion"]), "metric": "false"})
        orders = ["OV"] * n_ov + ["VO"] * n_vo
        rng.shuffle(orders)
        for i, order in enumerate(orders):
            tid = text_ids[i % 2]
            sent_no = len(texts[tid]) + 1
            tree = _clause(rng, order)
            texts[tid].append(f"( {tree} (ID {tid},{sent_no}))")
            contrast_p = 0.55 if order == "OV" else 0.15
            sidecar.append({
                "text_id": tid, "sentence": f"{tid},{sent_no}",
                "info_status": rng.choice(["new", "accessible", "given"]),
                "info_relevance": "contrast" if rng.random() < contrast_p else "infofocus",
                "animacy": "human" if rng.random() < 0.2 else "nonhuman",
            })
            if (i + 1) % PRONOUN_EVERY == 0:
                sent_no += 1
                texts[tid].append(f"( {_clause(rng, rng.choice(['OV', 'VO']), pronoun=True)} (ID {tid},{sent_no}))")
                excluded += 1
    # resolve the clause node ids the coder will use as keys
    rows = []
    by_sentence = {r["sentence"]: r for r in sidecar}
    for tid, trees in texts.items():
        for s in parse_penn("\n".join(trees), {"text_id": tid}):
            row = by_sentence.get(s.id)
            if row is None:
                continue
            clause = next(n for n in s.tree if n.label == "IP-INF")
            rows.append({"text_id": tid, "clause_id": f"{s.id}:{clause.id}",
                         "info_status": row["info_status"], "info_relevance": row["info_relevance"],
                         "animacy": row["animacy"]})
    return Fixture({k: "\n".join(v) + "\n" for k, v in texts.items()}, meta, rows, excluded)


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def default_config(seed: int = 42) -> dict:
    predictors = ["period_cluster", "verb_class", "inf_position", "heaviness_syn", "info_relevance",
                  "info_status", "animacy"]
    return {
        "seed": seed,
        "language": "latin",
        "corpus": "corpus",
        "format": "penn",
        "texts": "texts.csv",
        "sidecar": "sidecar.csv",
        "query": "node: IP-MAT*; query: (IP-INF* iDominates NP-ACC*)",
        "query_syntax": "corpussearch",
        "periods": [list(p) for p in LATIN_PERIODS],
        "stages": ["ingest", "query", "code", "fit", "cre", "ca", "vnc", "citree", "rf", "bayes", "report"],
        "cre": {"context": "inf_position"},
        "ca": {"rows": "period_cluster", "cols": "pattern"},
        "citree": {"predictors": predictors, "B": 499, "min_node": 40},
        "rf": {"predictors": predictors, "trees": 100},
        "bayes": {
            "fixed": ["period_index", "info_relevance", "inf_position", "log(lemma_freq)"],
            "references": {"info_relevance": "infofocus", "inf_position": "postposed"},
            "random": ["author", "lemma"],
            "chains": 2, "iters": 1500, "burn": 500,
        },
    }


def write_fixture(directory, seed: int = 0, config_seed: int = 42) -> Path:
    """Write corpus files, metadata, sidecar and ``config.yaml``; returns the
    config path."""
    d = Path(directory)
    fx = latin_fixture(seed)
    (d / "corpus").mkdir(parents=True, exist_ok=True)
    for tid, text in fx.texts.items():
        (d / "corpus" / f"{tid}.psd").write_text(text, encoding="utf-8")
    (d / "texts.csv").write_text(_csv(fx.text_meta), encoding="utf-8")
    (d / "sidecar.csv").write_text(_csv(fx.sidecar), encoding="utf-8")
    cfg = d / "config.yaml"
    cfg.write_text(yaml.safe_dump(default_config(config_seed), sort_keys=False), encoding="utf-8")
    return cfg
