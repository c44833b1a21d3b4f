import itertools
import json
import logging
import math
import random
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diachrony import tagger
from diachrony.corpus import AnnotatedSentence, Token
from diachrony.errors import DataError, EmptyCorpus, LengthMismatch, NoDefaultForUnmappedTag
from diachrony.ingest import parse_token_lines
from diachrony.tagger import BOS, EOS, TaggerConfig

FIXTURES = Path(__file__).parent / "fixtures"
SHIPPED = Path(tagger.__file__).parent / "data"


def brute_force(model, words):
    """Lexicographically smallest maximum-probability tag sequence, by enumeration."""
    best, best_seq = -math.inf, None
    for seq in itertools.product(model.tags, repeat=len(words)):
        lp = tagger.sequence_log_prob(model, words, seq)
        tol = 1e-9 * max(1.0, abs(best)) if math.isfinite(best) else 0.0
        if best_seq is None or lp > best + tol:
            best, best_seq = lp, list(seq)
    return best, best_seq


def random_corpus(rng, n_tags, n_sent=30):
    tags = ["A", "B", "C", "D"][:n_tags]
    vocab = [f"w{i}{s}" for i in range(8) for s in ("", "er")][: 6 + 2 * n_tags]
    out = []
    for _ in range(n_sent):
        n = rng.randint(1, 6)
        out.append([(rng.choice(vocab), rng.choice(tags)) for _ in range(n)])
    return out, vocab


def test_viterbi_equals_brute_force():
    rng = random.Random(7)
    checked = 0
    for trial in range(60):
        n_tags = 2 + trial % 3
        corpus, vocab = random_corpus(rng, n_tags)
        model = tagger.train(corpus, TaggerConfig(rare_cutoff=rng.choice([1, 3, 10])))
        for _ in range(4):
            n = rng.randint(1, 6)
            words = [rng.choice(vocab + ["unseen", "novumer", "x"]) for _ in range(n)]
            best, expected = brute_force(model, words)
            got = tagger.tag(model, words)
            assert got == expected, (words, got, expected)
            assert tagger.sequence_log_prob(model, words, got) == pytest.approx(best, abs=1e-9)
            checked += 1
    assert checked == 240


def test_viterbi_tie_break_is_lexicographic():
    # A and B are interchangeable everywhere, so every path ties with its mirror
    corpus = [[("x", "A"), ("x", "B")], [("x", "B"), ("x", "A")], [("x", "A"), ("x", "A")],
              [("x", "B"), ("x", "B")]]
    model = tagger.train(corpus)
    for n in range(1, 5):
        words = ["x"] * n
        assert tagger.tag(model, words) == brute_force(model, words)[1]
        assert tagger.tag(model, words)[0] == "A"


def test_beam_wide_equals_exact():
    rng = random.Random(3)
    corpus, vocab = random_corpus(rng, 4, 60)
    model = tagger.train(corpus)
    wide = tagger.TaggerModel.from_json(model.to_json())
    wide.config.beam = 10_000
    for _ in range(30):
        words = [rng.choice(vocab) for _ in range(rng.randint(1, 8))]
        a, b = tagger.tag(model, words), tagger.tag(wide, words)
        assert tagger.sequence_log_prob(model, words, a) == pytest.approx(
            tagger.sequence_log_prob(model, words, b), abs=1e-9)


def test_transition_distributions_are_proper():
    rng = random.Random(11)
    for n_tags in (2, 3, 4):
        corpus, _ = random_corpus(rng, n_tags, 20)
        model = tagger.train(corpus)
        assert sum(model.lambdas) == pytest.approx(1.0, abs=1e-9)
        for h1 in [BOS] + model.tags:
            for h2 in [BOS] + model.tags:
                total = sum(model.transition(h1, h2, t) for t in model.tags + [EOS])
                assert total == pytest.approx(1.0, abs=1e-9), (h1, h2)


def test_emission_and_suffix_distributions_are_proper():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    model = tagger.train(corpus)
    for t in model.tags:
        total = sum(c.get(t, 0) for c in model.lexicon.values()) / model.unigrams[t]
        assert total == pytest.approx(1.0, abs=1e-9)
    for word in ("moyler", "x", "zzzzzzzzzzzzer", ""):
        assert model._suffix_posterior(word).sum() == pytest.approx(1.0, abs=1e-9)


def test_train_counts_one_sentence():
    model = tagger.train([[("a", "X"), ("b", "Y")]])
    assert model.bigrams[("X", "Y")] == 1
    assert model.trigrams[(BOS, "X", "Y")] == 1
    assert model.unigrams["X"] == 1 and model.unigrams["Y"] == 1
    assert model.lexicon == {"a": {"X": 1}, "b": {"Y": 1}}


def test_single_tag_lexicon_reproduces_training():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    lex = {}
    for s in corpus:
        for t in s.tokens:
            lex.setdefault(t.form, set()).add(t.pos)
    assert all(len(v) == 1 for v in lex.values())
    model = tagger.train(corpus)
    for s in corpus:
        assert tagger.tag(model, [t.form for t in s.tokens]) == [t.pos for t in s.tokens]


def test_known_single_tag_words_ignore_context():
    model = tagger.train([[("le", "D"), ("chat", "N")], [("chat", "N"), ("le", "D")]])
    assert tagger.tag(model, ["chat", "chat", "le", "le"]) == ["N", "N", "D", "D"]


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        tagger.train([])
    with pytest.raises(EmptyCorpus):
        tagger.train([[]])


def test_untagged_token_rejected():
    s = AnnotatedSentence("s", "t", (Token(0, "a"),), None, {})
    with pytest.raises(DataError):
        tagger.train([s])


def test_trigram_mle_matches_generating_process():
    # second-order Markov chain over two tags with known probabilities
    p_a = {("A", "A"): 0.2, ("A", "B"): 0.7, ("B", "A"): 0.5, ("B", "B"): 0.9}
    rng = np.random.default_rng(5)
    corpus = []
    for _ in range(400):
        tags = ["A", "B"]
        for _ in range(25):
            tags.append("A" if rng.random() < p_a[(tags[-2], tags[-1])] else "B")
        corpus.append([(f"w{t}", t) for t in tags])
    model = tagger.train(corpus)
    for (h1, h2), p in p_a.items():
        n = sum(model.trigrams.get((h1, h2, t), 0) for t in ("A", "B", EOS))
        n_end = model.trigrams.get((h1, h2, EOS), 0)
        est = model.trigrams.get((h1, h2, "A"), 0) / (n - n_end)
        se = math.sqrt(p * (1 - p) / (n - n_end))
        assert abs(est - p) < 4 * se, (h1, h2, est, p)


def _grammar_sentence(rng):
    nouns = ["rex", "miles", "urbs", "liber", "donum", "servus"] + [f"nov{i}us" for i in range(30)]
    verbs = ["videt", "amat", "dat", "capit"] + [f"fac{i}it" for i in range(30)]
    sent = [("ille", "D"), (rng.choice(nouns), "N"), (rng.choice(verbs), "V")]
    if rng.random() < 0.5:
        sent += [("hunc", "D"), (rng.choice(nouns), "N")]
    # "sed" is ambiguous: conjunction before D, adverb at the end
    sent += [("sed", "C"), ("ille", "D"), (rng.choice(nouns), "N"), (rng.choice(verbs), "V")] \
        if rng.random() < 0.5 else [("sed", "ADV")]
    return sent


def test_accuracy_at_least_majority_baseline():
    rng = random.Random(2)
    train = [_grammar_sentence(rng) for _ in range(150)]
    test = [_grammar_sentence(rng) for _ in range(150)]
    model = tagger.train(train)
    by_word: dict[str, Counter] = {}
    for s in train:
        for w, t in s:
            by_word.setdefault(w, Counter())[t] += 1
    overall = Counter(t for s in train for _, t in s).most_common(1)[0][0]
    correct = base = total = 0
    for s in test:
        words = [w for w, _ in s]
        gold = [t for _, t in s]
        pred = tagger.tag(model, words)
        correct += sum(a == b for a, b in zip(pred, gold))
        base += sum((by_word[w].most_common(1)[0][0] if w in by_word else overall) == t for w, t in s)
        total += len(s)
    assert correct / total >= base / total
    assert correct / total > 0.97


def test_moyler_error_mode():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    model = tagger.train(corpus)
    assert "moyler" not in model.lexicon
    assert tagger.tag(model, "Or volt que prenget moyler".split()) == ["ADV", "VJ", "CONJS", "VJ", "VX"]


def test_unknown_words_restricted_to_open_class():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    model = tagger.train(corpus, TaggerConfig(open_class=("NCS", "VX")))
    assert model.open_class == ["NCS", "VX"]
    emit = model.log_emissions("inconnu")
    allowed = {t for t, e in zip(model.tags, emit) if np.isfinite(e)}
    assert allowed == {"NCS", "VX"}


def test_theta_is_sd_of_tag_probabilities():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    model = tagger.train(corpus)
    probs = np.array([model.unigrams[t] for t in model.tags], float)
    assert model.theta == pytest.approx(np.std(probs / probs.sum(), ddof=1))


def test_model_json_round_trip():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    model = tagger.train(corpus)
    text = model.to_json()
    doc = json.loads(text)
    assert doc["format"] == tagger.MODEL_FORMAT and doc["version"] == tagger.MODEL_VERSION
    back = tagger.TaggerModel.from_json(text)
    assert back.to_json() == text
    words = "Or volt que prenget moyler".split()
    assert tagger.tag(back, words) == tagger.tag(model, words)
    with pytest.raises(DataError):
        tagger.TaggerModel.from_json(json.dumps({"format": "other"}))


def test_tag_sentences_second_layer():
    corpus = parse_token_lines((FIXTURES / "oldfrench_tagged.txt").read_text())
    model = tagger.train(corpus)
    [s] = parse_token_lines("Or\nvolt\naler\n")
    [out] = tagger.tag_sentences(model, [s], layer="pos2")
    assert [t.pos2 for t in out.tokens] == ["ADV", "VJ", "VX"]
    assert [t.pos for t in out.tokens] == [None, None, None]


# ---------------------------------------------------------------------------
# tagset mapping

def _sent(*tags):
    return AnnotatedSentence("s", "t", tuple(Token(i, f"w{i}", pos=t) for i, t in enumerate(tags)), None, {})


def test_map_ldt_adjective_to_jj():
    mapping = tagger.read_mapping((SHIPPED / "ldt_to_penn.tsv").read_text())
    [out], unmapped = tagger.map_tagset([_sent("a – s – – – ma–")], mapping)
    assert out.tokens[0].pos == "JJ"
    assert not unmapped


def test_map_identity():
    s = _sent("N", "VB", "D")
    [out], unmapped = tagger.map_tagset([s], {"N": "N", "VB": "VB", "D": "D"})
    assert out == s and not unmapped


def test_map_default_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        [out], unmapped = tagger.map_tagset([_sent("N", "Q", "Q")], {"N": "NN"}, default="X")
    assert [t.pos for t in out.tokens] == ["NN", "X", "X"]
    assert unmapped == Counter({"Q": 2})
    assert any("Q" in r.getMessage() for r in caplog.records)


def test_map_without_default_raises():
    with pytest.raises(NoDefaultForUnmappedTag):
        tagger.map_tagset([_sent("Q")], {"N": "NN"})


# ---------------------------------------------------------------------------
# evaluation

def _seqs(tp, fp, fn, other=0, target="VX"):
    gold = [target] * tp + ["N"] * fp + [target] * fn + ["N"] * other
    pred = [target] * tp + [target] * fp + ["N"] * fn + ["N"] * other
    return gold, pred


def test_evaluate_perfect():
    gold = [["VX", "N"], ["VB"]]
    rep = tagger.evaluate(gold, gold, ["VX", "VB"])
    assert (rep.precision, rep.recall, rep.f) == (1.0, 1.0, 1.0)


def test_evaluate_old_french_counts():
    # 12 correct of 16 predicted infinitives, 13 gold: P=0.75, R=0.9231
    gold, pred = _seqs(12, 4, 1, other=20)
    rep = tagger.evaluate(gold, pred, ["VX"])
    assert (rep.true_positives, rep.predicted, rep.gold) == (12, 16, 13)
    assert rep.precision == pytest.approx(0.75)
    assert rep.recall == pytest.approx(0.9231, abs=5e-5)
    assert rep.f == pytest.approx(0.8276, abs=5e-5)
    assert rep.confusion["N\tVX"] == 4


def test_evaluate_latin_counts():
    gold, pred = _seqs(36, 1, 0, other=10)
    rep = tagger.evaluate(gold, pred, ["VX"])
    assert rep.precision == pytest.approx(0.9730, abs=5e-5)
    assert rep.recall == 1.0
    assert rep.f == pytest.approx(0.9863, abs=5e-5)


def test_f_measure_harmonic_mean():
    assert tagger.f_measure(0.75, 0.9231) == pytest.approx(0.8276, abs=5e-5)
    assert tagger.f_measure(0.9730, 1.0) == pytest.approx(0.9863, abs=5e-5)
    assert tagger.f_measure(0.0, 0.0) == 0.0


def test_evaluate_length_mismatch():
    with pytest.raises(LengthMismatch):
        tagger.evaluate(["VX", "N"], ["VX"], ["VX"])


def test_evaluate_no_target_hits():
    rep = tagger.evaluate(["N", "N"], ["N", "N"], ["VX"])
    assert (rep.precision, rep.recall, rep.f) == (0.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC")), min_size=1, max_size=40),
       st.sets(st.sampled_from("ABC"), min_size=1))
def test_evaluate_swap_symmetry(pairs, targets):
    gold = [g for g, _ in pairs]
    pred = [p for _, p in pairs]
    a = tagger.evaluate(gold, pred, targets)
    b = tagger.evaluate(pred, gold, targets)
    assert a.precision == b.recall and a.recall == b.precision
    assert 0 <= a.f <= 1 and a.f == b.f
