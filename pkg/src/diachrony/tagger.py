"""Second-order HMM part-of-speech tagger in the style of TnT.

Transition probabilities are linear interpolations of unigram, bigram and
trigram maximum-likelihood estimates with weights chosen by deleted
interpolation.  Unknown words are scored through a suffix model estimated
on rare words, with successive suffix lengths smoothed by the standard
deviation of the unconditioned tag distribution.
"""
from __future__ import annotations

import fnmatch
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import AnnotatedSentence
from .errors import DataError, EmptyCorpus, LengthMismatch, NoDefaultForUnmappedTag

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
MODEL_FORMAT = "diachrony-hmm-tagger"
MODEL_VERSION = 1
_TIE_TOL = 1e-9


@dataclass
class TaggerConfig:
    max_suffix: int = 10
    rare_cutoff: int = 10
    # None: every tag seen on a rare word may be guessed for unknown words
    open_class: tuple[str, ...] | None = None
    beam: int | None = None


@dataclass
class TaggerModel:
    tags: list[str]
    unigrams: dict[str, int]
    bigrams: dict[tuple[str, str], int]
    trigrams: dict[tuple[str, str, str], int]
    lexicon: dict[str, dict[str, int]]
    lambdas: tuple[float, float, float]
    suffixes: dict[str, dict[str, int]]
    theta: float
    open_class: list[str]
    config: TaggerConfig = field(default_factory=TaggerConfig)

    # -- derived quantities -------------------------------------------------
    def _history_counts(self):
        h1: Counter = Counter()
        h2: Counter = Counter()
        for (a, b), c in self.bigrams.items():
            h1[a] += c
        for (a, b, _), c in self.trigrams.items():
            h2[(a, b)] += c
        return h1, h2

    def transition(self, t1: str, t2: str, t3: str) -> float:
        """Smoothed P(t3 | t1, t2); components with an unseen history are
        dropped and the remaining weights renormalised."""
        if not hasattr(self, "_hist"):
            self._hist = self._history_counts()
            self._n_uni = sum(self.unigrams.values())
        h1, h2 = self._hist
        l1, l2, l3 = self.lambdas
        parts = [(l1, self.unigrams.get(t3, 0) / self._n_uni)]
        if h1.get(t2):
            parts.append((l2, self.bigrams.get((t2, t3), 0) / h1[t2]))
        if h2.get((t1, t2)):
            parts.append((l3, self.trigrams.get((t1, t2, t3), 0) / h2[(t1, t2)]))
        total = sum(w for w, _ in parts)
        if total <= 0:
            # degenerate weights; fall back to equal mixing
            return sum(p for _, p in parts) / len(parts)
        return sum(w * p for w, p in parts) / total

    def transition_table(self) -> np.ndarray:
        """log P(t3 | t1, t2) indexed by [BOS+tags, BOS+tags, tags+EOS]."""
        if getattr(self, "_log_trans", None) is None:
            hist = [BOS] + self.tags
            targets = self.tags + [EOS]
            table = np.empty((len(hist), len(hist), len(targets)))
            for i, a in enumerate(hist):
                for j, b in enumerate(hist):
                    for k, c in enumerate(targets):
                        table[i, j, k] = self.transition(a, b, c)
            with np.errstate(divide="ignore"):
                self._log_trans = np.log(table)
        return self._log_trans

    def _suffix_posterior(self, word: str) -> np.ndarray:
        base = np.array([self.suffixes.get("", {}).get(t, 0) for t in self.tags], float)
        prob = base / base.sum() if base.sum() > 0 else np.full(len(self.tags), 1 / len(self.tags))
        for i in range(1, min(self.config.max_suffix, len(word)) + 1):
            counts = self.suffixes.get(word[-i:])
            if not counts:
                break
            c = np.array([counts.get(t, 0) for t in self.tags], float)
            prob = (c / c.sum() + self.theta * prob) / (1 + self.theta)
        return prob

    def log_emissions(self, word: str) -> np.ndarray:
        """log P(word | tag) for every tag (up to a per-word constant for unknowns)."""
        counts = self.lexicon.get(word)
        with np.errstate(divide="ignore"):
            if counts:
                return np.log(np.array(
                    [counts.get(t, 0) / self.unigrams[t] for t in self.tags], float))
            n = sum(self.unigrams[t] for t in self.tags)
            prior = np.array([self.unigrams[t] / n for t in self.tags])
            score = np.log(self._suffix_posterior(word)) - np.log(prior)
        allowed = set(self.open_class) if self.open_class else set(self.tags)
        mask = np.array([t in allowed for t in self.tags])
        score[~mask] = -np.inf
        return score

    # -- persistence ---------------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": {"max_suffix": self.config.max_suffix, "rare_cutoff": self.config.rare_cutoff,
                       "open_class": list(self.config.open_class) if self.config.open_class else None,
                       "beam": self.config.beam},
            "tags": self.tags,
            "lambdas": list(self.lambdas),
            "theta": self.theta,
            "open_class": self.open_class,
            "unigrams": self.unigrams,
            "bigrams": [[a, b, c] for (a, b), c in sorted(self.bigrams.items())],
            "trigrams": [[a, b, c, n] for (a, b, c), n in sorted(self.trigrams.items())],
            "lexicon": self.lexicon,
            "suffixes": self.suffixes,
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TaggerModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise DataError("not a tagger model file")
        if doc.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported tagger model version {doc.get('version')}")
        cfg = doc["config"]
        return cls(
            tags=doc["tags"],
            unigrams=doc["unigrams"],
            bigrams={(a, b): c for a, b, c in doc["bigrams"]},
            trigrams={(a, b, c): n for a, b, c, n in doc["trigrams"]},
            lexicon=doc["lexicon"],
            lambdas=tuple(doc["lambdas"]),
            suffixes=doc["suffixes"],
            theta=doc["theta"],
            open_class=doc["open_class"],
            config=TaggerConfig(cfg["max_suffix"], cfg["rare_cutoff"],
                                tuple(cfg["open_class"]) if cfg["open_class"] else None, cfg["beam"]),
        )


def _tag_sequences(corpus) -> list[list[tuple[str, str]]]:
    out = []
    for sent in corpus:
        if isinstance(sent, AnnotatedSentence):
            pairs = [(t.form, t.pos) for t in sent.tokens]
        else:
            pairs = list(sent)
        for w, t in pairs:
            if t is None:
                raise DataError(f"token {w!r} has no tag")
        out.append(pairs)
    return out


def deleted_interpolation(unigrams, bigrams, trigrams) -> tuple[float, float, float]:
    """Brants' deleted interpolation: each trigram votes, with its count, for
    the order whose leave-one-out estimate is largest."""
    h1: Counter = Counter()
    h2: Counter = Counter()
    for (a, _), c in bigrams.items():
        h1[a] += c
    for (a, b, _), c in trigrams.items():
        h2[(a, b)] += c
    n = sum(unigrams.values())
    lam = [0.0, 0.0, 0.0]

    def ratio(num, den):
        return (num - 1) / (den - 1) if den > 1 else 0.0

    for (a, b, c), f in trigrams.items():
        cands = (
            ratio(unigrams.get(c, 0), n),
            ratio(bigrams.get((b, c), 0), h1[b]),
            ratio(f, h2[(a, b)]),
        )
        best = max(range(3), key=lambda i: (cands[i], i))
        lam[best] += f
    total = sum(lam)
    if total == 0:
        return (1 / 3, 1 / 3, 1 / 3)
    return tuple(x / total for x in lam)


def train(corpus: Iterable, config: TaggerConfig | None = None) -> TaggerModel:
    """Estimate a tagger from sentences of ``(word, tag)`` pairs or
    :class:`AnnotatedSentence` objects with ``pos`` set."""
    config = config or TaggerConfig()
    seqs = [s for s in _tag_sequences(corpus) if s]
    if not seqs:
        raise EmptyCorpus("no tagged tokens to train on")
    unigrams: Counter = Counter()
    bigrams: Counter = Counter()
    trigrams: Counter = Counter()
    lexicon: dict[str, Counter] = defaultdict(Counter)
    for seq in seqs:
        tags = [BOS, BOS] + [t for _, t in seq] + [EOS]
        for w, t in seq:
            lexicon[w][t] += 1
        for i in range(2, len(tags)):
            unigrams[tags[i]] += 1
            bigrams[(tags[i - 1], tags[i])] += 1
            trigrams[(tags[i - 2], tags[i - 1], tags[i])] += 1
    tagset = sorted(t for t in unigrams if t != EOS)

    word_freq = {w: sum(c.values()) for w, c in lexicon.items()}
    suffixes: dict[str, Counter] = defaultdict(Counter)
    for w, counts in lexicon.items():
        if word_freq[w] > config.rare_cutoff:
            continue
        for t, c in counts.items():
            suffixes[""][t] += c
            for i in range(1, min(config.max_suffix, len(w)) + 1):
                suffixes[w[-i:]][t] += c

    n_tags = sum(unigrams[t] for t in tagset)
    probs = np.array([unigrams[t] / n_tags for t in tagset])
    theta = float(np.std(probs, ddof=1)) if len(tagset) > 1 else 0.0

    if config.open_class is not None:
        open_class = [t for t in tagset if t in set(config.open_class)]
    else:
        open_class = sorted(suffixes[""]) or list(tagset)

    return TaggerModel(
        tags=tagset,
        unigrams=dict(unigrams),
        bigrams=dict(bigrams),
        trigrams=dict(trigrams),
        lexicon={w: dict(c) for w, c in lexicon.items()},
        lambdas=deleted_interpolation(unigrams, bigrams, trigrams),
        suffixes={s: dict(c) for s, c in suffixes.items()},
        theta=theta,
        open_class=open_class,
        config=config,
    )


def sequence_log_prob(model: TaggerModel, words: Sequence[str], tags: Sequence[str]) -> float:
    """Joint log P(words, tags) under the model, including the end transition."""
    idx = {t: i for i, t in enumerate(model.tags)}
    hist = [BOS, BOS] + list(tags)
    total = 0.0
    for i, w in enumerate(words):
        p = model.transition(hist[i], hist[i + 1], tags[i])
        total += math.log(p) if p > 0 else -math.inf
        total += float(model.log_emissions(w)[idx[tags[i]]])
    p_end = model.transition(hist[-2], hist[-1], EOS)
    return total + (math.log(p_end) if p_end > 0 else -math.inf)


def _decode_exact(trans: np.ndarray, emit: np.ndarray) -> list[int]:
    """Lexicographically smallest among maximum-probability tag paths.

    A backward max-sum pass gives the best completion score from every
    state; the path is then built left to right, taking the smallest tag
    that still attains the global optimum.
    """
    n, T = emit.shape
    # beta[k][h1, h2]: best log score of positions k+1.. given state (h1, h2) at k
    beta = [None] * n
    beta[n - 1] = trans[:, :, T]
    for k in range(n - 2, -1, -1):
        # choosing tag t at k+1 moves state (h1, h2) to (h2, t+1)
        cand = trans[:, :, :T] + emit[k + 1][None, None, :] + beta[k + 1][None, :, 1:]
        beta[k] = cand.max(axis=2)
    # position 0 starts from history (BOS, BOS)
    best_first = trans[0, 0, :T] + emit[0] + beta[0][0, 1:]
    best = best_first.max()
    if not np.isfinite(best):
        return [int(np.argmax(emit[0]))] + [int(np.argmax(e)) for e in emit[1:]]
    path: list[int] = []
    prefix = 0.0
    h1, h2 = 0, 0
    for k in range(n):
        scores = prefix + trans[h1, h2, :T] + emit[k] + beta[k][h2, 1:]
        tol = _TIE_TOL * max(1.0, abs(best))
        t = int(np.flatnonzero(scores >= best - tol)[0])
        path.append(t)
        prefix += trans[h1, h2, t] + emit[k][t]
        h1, h2 = h2, t + 1
    return path


def _decode_beam(trans: np.ndarray, emit: np.ndarray, beam: int) -> list[int]:
    n, T = emit.shape
    H = T + 1
    delta = np.full((H, H), -np.inf)
    delta[0, 0] = 0.0
    back = []
    for k in range(n):
        cand = delta[:, :, None] + trans[:, :, :T] + emit[k][None, None, :]
        arg = cand.argmax(axis=0)  # over h1 -> shape (H, T)
        new = np.full((H, H), -np.inf)
        new[:, 1:] = np.take_along_axis(cand, arg[None], axis=0)[0]
        flat = new.ravel()
        finite = np.flatnonzero(np.isfinite(flat))
        if len(finite) > beam:
            keep = finite[np.argsort(-flat[finite], kind="stable")[:beam]]
            pruned = np.full_like(flat, -np.inf)
            pruned[keep] = flat[keep]
            new = pruned.reshape(H, H)
        back.append(arg)
        delta = new
    final = delta + trans[:, :, T]
    h1, h2 = np.unravel_index(int(np.argmax(final)), final.shape)
    path = [h2 - 1]
    for k in range(n - 1, 0, -1):
        prev = back[k][h1, h2 - 1]
        path.append(h1 - 1)
        h1, h2 = prev, h1
    return list(reversed(path))


def tag(model: TaggerModel, words: Sequence[str]) -> list[str]:
    """Most probable tag sequence for ``words`` (exact unless a beam is configured)."""
    words = [w.form if hasattr(w, "form") else w for w in words]
    if not words:
        return []
    trans = model.transition_table()
    emit = np.vstack([model.log_emissions(w) for w in words])
    if model.config.beam:
        path = _decode_beam(trans, emit, model.config.beam)
    else:
        path = _decode_exact(trans, emit)
    return [model.tags[i] for i in path]


def tag_sentences(model: TaggerModel, sentences: Iterable[AnnotatedSentence],
                  layer: str = "pos") -> list[AnnotatedSentence]:
    """Fill ``layer`` (``pos`` or ``pos2``) of every token with the model's tags."""
    out = []
    for s in sentences:
        tags = tag(model, [t.form for t in s.tokens])
        toks = tuple(replace(t, **{layer: g}) for t, g in zip(s.tokens, tags))
        out.append(replace(s, tokens=toks))
    return out


# ---------------------------------------------------------------------------
# tagset mapping

def normalize_tag(tag: str) -> str:
    """Collapse spaced positional tags such as ``a – s – – – ma–`` to ``a-s---ma-``."""
    return "".join(tag.replace("\u2013", "-").replace("\u2014", "-").split())


def read_mapping(text: str) -> dict[str, str]:
    mapping = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        src, dst = line.split("\t") if "\t" in line else line.split()
        mapping[src] = dst
    return mapping


def _lookup(mapping: Mapping[str, str], tag: str) -> str | None:
    if tag in mapping:
        return mapping[tag]
    norm = normalize_tag(tag)
    if norm in mapping:
        return mapping[norm]
    for pattern, target in mapping.items():
        if any(ch in pattern for ch in "*?[") and fnmatch.fnmatchcase(norm, pattern):
            return target
    return None


def map_tagset(sentences: Iterable[AnnotatedSentence], mapping: Mapping[str, str],
               default: str | None = None, layer: str = "pos"):
    """Rewrite ``layer`` through ``mapping``.

    Keys may be exact tags or glob patterns (tried in order after exact
    matches).  Returns ``(sentences, unmapped)`` where ``unmapped`` counts the
    source tags that fell through to ``default``.
    """
    unmapped: Counter = Counter()
    out = []
    for s in sentences:
        toks = []
        for t in s.tokens:
            src = getattr(t, layer)
            if src is None:
                toks.append(t)
                continue
            dst = _lookup(mapping, src)
            if dst is None:
                if default is None:
                    raise NoDefaultForUnmappedTag(src)
                unmapped[src] += 1
                dst = default
            toks.append(replace(t, **{layer: dst}))
        out.append(replace(s, tokens=tuple(toks)))
    for src, n in sorted(unmapped.items()):
        log.warning("tag %r not in mapping; %d tokens set to %r", src, n, default)
    return out, unmapped


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f: float
    true_positives: int
    predicted: int
    gold: int
    confusion: dict = field(default_factory=dict, compare=False)


def _flatten(seqs) -> list[str]:
    out = []
    for s in seqs:
        if isinstance(s, AnnotatedSentence):
            out.extend(t.pos for t in s.tokens)
        elif isinstance(s, str):
            out.append(s)
        else:
            out.extend(s)
    return out


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate(gold, predicted, target_tags: Iterable[str]) -> EvalReport:
    """Precision, recall and F for the tags in ``target_tags``.

    A prediction counts as correct when it is a target tag equal to the
    gold tag.  Inputs are token-aligned tag sequences (or sentences).
    """
    g = _flatten(gold)
    p = _flatten(predicted)
    if len(g) != len(p):
        raise LengthMismatch(f"{len(g)} gold tokens vs {len(p)} predicted")
    target = set(target_tags)
    tp = sum(1 for a, b in zip(g, p) if b in target and a == b)
    n_pred = sum(1 for b in p if b in target)
    n_gold = sum(1 for a in g if a in target)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    confusion = Counter(zip(g, p))
    return EvalReport(precision, recall, f_measure(precision, recall), tp, n_pred, n_gold,
                      {f"{a}\t{b}": c for (a, b), c in sorted(confusion.items())})
