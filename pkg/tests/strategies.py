"""Shared generators for property tests: random bracketed trees."""
from __future__ import annotations

import random

from hypothesis import strategies as st

PHRASE_LABELS = ("IP-MAT", "IP-INF", "IP-INF-SPE", "NP-ACC", "NP-SBJ", "PP", "CP-REL", "ADVP")
WORD_TAGS = ("N", "VB", "VBP", "D", "ADJ", "P", "PRO", "ADV")
WORDS = ("rex", "urbem", "videre", "et", "in", "bonum", "eum", "statim")


def render(tree) -> str:
    label, kids = tree
    if isinstance(kids, str):
        return f"({label} {kids})"
    return f"({label} " + " ".join(render(k) for k in kids) + ")"


def count_nodes(tree) -> int:
    label, kids = tree
    return 1 if isinstance(kids, str) else 1 + sum(count_nodes(k) for k in kids)


leaves = st.tuples(st.sampled_from(WORD_TAGS), st.sampled_from(WORDS))
trees = st.recursive(
    leaves,
    lambda inner: st.tuples(st.sampled_from(PHRASE_LABELS), st.lists(inner, min_size=1, max_size=3)),
    max_leaves=8,
)


def random_tree(rng: random.Random, max_nodes: int = 12):
    """Random nested tree with at most ``max_nodes`` nodes (root included)."""
    budget = [max_nodes - 1]

    def grow(depth):
        if budget[0] <= 0 or depth > 3 or rng.random() < 0.35:
            return (rng.choice(WORD_TAGS), rng.choice(WORDS))
        kids = []
        for _ in range(rng.randint(1, 3)):
            if budget[0] <= 0:
                break
            budget[0] -= 1
            kids.append(grow(depth + 1))
        if not kids:
            return (rng.choice(WORD_TAGS), rng.choice(WORDS))
        return (rng.choice(PHRASE_LABELS), kids)

    kids = []
    while budget[0] > 0 and len(kids) < 3:
        budget[0] -= 1
        kids.append(grow(1))
    return ("IP-MAT", kids or [("N", "rex")])
