"""Conditional inference trees and random-forest permutation importance.

The tree tests each predictor against the response with a permutation
test (chi-square for factors, a standardized mean difference for numeric
predictors), Bonferroni-adjusts over predictors and splits on the most
significant one.  The forest uses scikit-learn CART trees on bootstrap
samples and measures importance as the out-of-bag accuracy lost when a
predictor is permuted.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.tree import DecisionTreeClassifier

from ..errors import DataError, UnknownColumn
from ..glm import as_frame, binary_response, is_categorical

MAX_SUBSET_LEVELS = 10


@dataclass
class CiConfig:
    alpha: float = 0.05
    B: int = 9999
    min_node: int = 20
    seed: int = 0


@dataclass
class CiNode:
    id: int
    n: int
    proportion: float  # share of the positive response
    split: str | None = None
    rule: dict = field(default_factory=dict)  # {"left": [...]} or {"threshold": t}
    p: float | None = None
    children: tuple[int, ...] = ()
    pvalues: dict = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass
class CiTree:
    nodes: list[CiNode]
    response: str
    positive: str
    alpha: float

    @property
    def root(self) -> CiNode:
        return self.nodes[0]

    def to_dict(self) -> dict:
        return {"response": self.response, "positive": self.positive, "alpha": self.alpha,
                "nodes": [{"id": n.id, "n": n.n, "proportion": n.proportion, "split": n.split,
                           "rule": n.rule, "p": n.p, "children": list(n.children),
                           "pvalues": n.pvalues} for n in self.nodes]}


def _chi2_stats(onehot: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pearson chi-square of (levels x 2) tables for each column of Y."""
    n = onehot.shape[0]
    row = onehot.sum(axis=0)  # per level
    pos = onehot.T @ Y  # levels x B
    tot_pos = Y.sum(axis=0)
    keep = row > 0
    row, pos = row[keep], pos[keep]
    e_pos = np.outer(row, tot_pos) / n
    e_neg = row[:, None] - e_pos
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (pos - e_pos) ** 2 / e_pos + ((row[:, None] - pos) - e_neg) ** 2 / e_neg
    return np.nansum(np.where(np.isfinite(s), s, 0.0), axis=0)


def _mean_diff_stats(x: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Squared standardized difference of x means between response groups."""
    n = len(x)
    k = Y.sum(axis=0)
    sx = x @ Y
    mean_pos = sx / np.where(k > 0, k, 1)
    mean_neg = (x.sum() - sx) / np.where(n - k > 0, n - k, 1)
    var = x.var(ddof=1) if n > 1 else 0.0
    denom = var * (1 / np.where(k > 0, k, np.inf) + 1 / np.where(n - k > 0, n - k, np.inf))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (mean_pos - mean_neg) ** 2 / denom
    return np.where(np.isfinite(out), out, 0.0)


def _statistic(col: pd.Series, Y: np.ndarray) -> np.ndarray:
    if is_categorical(col):
        codes, _ = pd.factorize(col.astype(str), sort=True)
        onehot = np.eye(codes.max() + 1)[codes]
        return _chi2_stats(onehot, Y)
    return _mean_diff_stats(col.to_numpy(float), Y)


def permutation_pvalue(col: pd.Series, y: np.ndarray, B: int, rng: np.random.Generator) -> float:
    obs = _statistic(col, y[:, None])[0]
    perms = rng.permuted(np.tile(y, (B, 1)), axis=1).T
    null = _statistic(col, perms)
    return float((1 + np.sum(null >= obs - 1e-12 * max(1.0, abs(obs)))) / (B + 1))


def _chi2_2x2(mask: np.ndarray, y: np.ndarray) -> float:
    onehot = np.column_stack([mask, ~mask]).astype(float)
    return float(_chi2_stats(onehot, y[:, None].astype(float))[0])


def best_split(col: pd.Series, y: np.ndarray):
    """Binary split of one predictor maximizing the 2x2 chi-square."""
    best = None
    if is_categorical(col):
        values = col.astype(str).to_numpy()
        levels = sorted(set(values))
        if len(levels) < 2:
            return None
        if len(levels) > MAX_SUBSET_LEVELS:
            # order levels by response rate and search contiguous cuts instead
            rates = {lev: y[values == lev].mean() for lev in levels}
            levels = sorted(levels, key=lambda lev: (rates[lev], lev))
            subsets = [levels[:k] for k in range(1, len(levels))]
        else:
            first, rest = levels[0], levels[1:]
            subsets = [[first, *combo] for r in range(0, len(rest))
                       for combo in itertools.combinations(rest, r)]
        for left in subsets:
            mask = np.isin(values, left)
            stat = _chi2_2x2(mask, y)
            if best is None or stat > best[0]:
                best = (stat, {"left": sorted(left)}, mask)
    else:
        x = col.to_numpy(float)
        uniq = np.unique(x)
        for a, b in zip(uniq[:-1], uniq[1:]):
            t = (a + b) / 2
            mask = x <= t
            stat = _chi2_2x2(mask, y)
            if best is None or stat > best[0]:
                best = (stat, {"threshold": float(t)}, mask)
    return best


def citree(table, response: str, predictors: Sequence[str], config: CiConfig | None = None,
           positive=None) -> CiTree:
    """Grow a conditional inference tree."""
    config = config or CiConfig()
    df = as_frame(table)
    for c in (response, *predictors):
        if c not in df.columns:
            raise UnknownColumn(c)
    y_all = binary_response(df[response], positive)
    pos_label = str(positive) if positive is not None else (
        str(sorted(df[response].astype(str).unique())[-1]) if len(df) else "")
    rng = np.random.default_rng(config.seed)
    nodes: list[CiNode] = []

    def grow(idx: np.ndarray) -> int:
        y = y_all[idx]
        node = CiNode(len(nodes), len(idx), float(y.mean()) if len(idx) else float("nan"))
        nodes.append(node)
        if len(idx) < config.min_node or y.min(initial=0) == y.max(initial=0):
            return node.id
        sub = df.iloc[idx]
        pvals = {}
        for p in predictors:
            raw = permutation_pvalue(sub[p], y, config.B, rng)
            pvals[p] = min(1.0, raw * len(predictors))
        node.pvalues = pvals
        best_p = min(pvals.values())
        if best_p >= config.alpha:
            return node.id
        var = min(predictors, key=lambda p: (pvals[p], predictors.index(p)))
        split = best_split(sub[var], y)
        if split is None:
            return node.id
        _, rule, mask = split
        if mask.all() or not mask.any():
            return node.id
        node.split, node.rule, node.p = var, rule, best_p
        left = grow(idx[mask])
        right = grow(idx[~mask])
        node.children = (left, right)
        return node.id

    grow(np.arange(len(df)))
    return CiTree(nodes, response, pos_label, config.alpha)


# ---------------------------------------------------------------------------
# forest

@dataclass
class RfConfig:
    trees: int = 500
    mtry: int | None = None
    seed: int = 0
    min_samples_leaf: int = 1


@dataclass
class ImportanceReport:
    importance: dict[str, float]
    threshold: float
    oob_accuracy: float

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.importance.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_dict(self) -> dict:
        return {"importance": self.importance, "threshold": self.threshold,
                "oob_accuracy": self.oob_accuracy}


def encode_predictors(df: pd.DataFrame, predictors: Sequence[str], y: np.ndarray) -> np.ndarray:
    """Numeric matrix; factor levels are ranked by their positive-response
    rate so that ordered splits reach the best binary level subsets."""
    cols = []
    for p in predictors:
        col = df[p]
        if is_categorical(col):
            values = col.astype(str).to_numpy()
            levels = sorted(set(values))
            rates = {lev: y[values == lev].mean() for lev in levels}
            rank = {lev: i for i, lev in enumerate(sorted(levels, key=lambda lev: (rates[lev], lev)))}
            cols.append(np.array([rank[v] for v in values], float))
        else:
            cols.append(col.to_numpy(float))
    return np.column_stack(cols)


def importance_threshold(importance: dict[str, float]) -> float:
    neg = [v for v in importance.values() if v < 0]
    return abs(min(neg)) if neg else 0.0


def rf_importance(table, response: str, predictors: Sequence[str], config: RfConfig | None = None,
                  positive=None) -> ImportanceReport:
    """Mean out-of-bag permutation importance over a bootstrap forest."""
    config = config or RfConfig()
    if len(predictors) < 2:
        raise DataError("forest importance needs at least two predictors")
    df = as_frame(table)
    for c in (response, *predictors):
        if c not in df.columns:
            raise UnknownColumn(c)
    y = binary_response(df[response], positive).astype(int)
    X = encode_predictors(df, predictors, y)
    n, p = X.shape
    mtry = config.mtry or math.ceil(math.sqrt(p))
    seeds = np.random.SeedSequence(config.seed).spawn(config.trees)
    drops = np.zeros(p)
    counted = 0
    oob_correct = 0
    oob_total = 0
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, n)
        oob = np.setdiff1d(np.arange(n), boot)
        if len(oob) == 0:
            continue
        tree = DecisionTreeClassifier(max_features=mtry, min_samples_leaf=config.min_samples_leaf,
                                      random_state=int(rng.integers(2 ** 31 - 1)))
        tree.fit(X[boot], y[boot])
        Xo, yo = X[oob], y[oob]
        base = np.mean(tree.predict(Xo) == yo)
        oob_correct += base * len(oob)
        oob_total += len(oob)
        for j in range(p):
            Xp = Xo.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            drops[j] += base - np.mean(tree.predict(Xp) == yo)
        counted += 1
    imp = {pred: float(drops[j] / max(counted, 1)) for j, pred in enumerate(predictors)}
    return ImportanceReport(imp, importance_threshold(imp), float(oob_correct / max(oob_total, 1)))
