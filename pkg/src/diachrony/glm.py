"""Logistic regression, rates of change and contingency-table statistics.

The logit is ``log(p / (1 - p))`` and a change over time is modelled as
``logit(p) = k + s * t``: ``s`` is the rate (slope) and ``k`` the value at
``t = 0``.  Categorical predictors use treatment coding; the reference is
the alphabetically first level unless one is given.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit as _expit
from scipy.special import gammaln

from .errors import (
    DataError,
    DegenerateContext,
    DomainError,
    MissingTerm,
    NumericError,
    RankDeficient,
    Separation,
    UnknownColumn,
    UnknownReferenceLevel,
    ZeroMargin,
)

INTERCEPT = "(Intercept)"
SEPARATION_BOUND = 15.0


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("logit is defined on the open interval (0, 1)")
    out = np.log(p / (1 - p))
    return float(out) if out.ndim == 0 else out


def expit(x):
    out = _expit(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# design matrices

_LOG_TERM = re.compile(r"^log\((\w+)\)$")


def as_frame(table) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        return table
    if hasattr(table, "frame"):
        return table.frame
    return pd.DataFrame(table)


def is_categorical(series: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(series) or pd.api.types.is_bool_dtype(series)


def design_matrix(table, terms: Sequence[str], references: Mapping[str, str] | None = None,
                  intercept: bool = True) -> tuple[np.ndarray, list[str], list[tuple[str, list[str]]]]:
    """Build a treatment-coded design matrix.

    Terms are column names or ``log(column)``.  Returns the matrix, the
    column names and, per term, the names of the columns it produced.
    """
    df = as_frame(table)
    references = dict(references or {})
    cols: list[np.ndarray] = []
    names: list[str] = []
    blocks: list[tuple[str, list[str]]] = []
    if intercept:
        cols.append(np.ones(len(df)))
        names.append(INTERCEPT)
    for term in terms:
        m = _LOG_TERM.match(term)
        col = m.group(1) if m else term
        if col not in df.columns:
            raise UnknownColumn(col)
        series = df[col]
        if m:
            values = series.to_numpy(dtype=float)
            if np.any(values <= 0):
                raise DomainError(f"log({col}) needs positive values")
            cols.append(np.log(values))
            names.append(term)
            blocks.append((term, [term]))
            continue
        if is_categorical(series):
            levels = sorted(series.astype(str).unique())
            ref = references.get(col, levels[0] if levels else None)
            if ref is None or str(ref) not in levels:
                raise UnknownReferenceLevel(col, ref)
            values = series.astype(str).to_numpy()
            block = []
            for lev in levels:
                if lev == str(ref):
                    continue
                cols.append((values == lev).astype(float))
                names.append(f"{col}[{lev}]")
                block.append(names[-1])
            blocks.append((term, block))
        else:
            cols.append(series.to_numpy(dtype=float))
            names.append(term)
            blocks.append((term, [term]))
    X = np.column_stack(cols) if cols else np.empty((len(df), 0))
    return X, names, blocks


def binary_response(series: pd.Series, positive=None) -> np.ndarray:
    """0/1 response; for two-level labels the positive level defaults to the
    alphabetically last one."""
    if pd.api.types.is_numeric_dtype(series) and not is_categorical(series):
        y = series.to_numpy(dtype=float)
        if positive is not None:
            return (y == float(positive)).astype(float)
        if np.any((y < 0) | (y > 1)):
            raise DataError("numeric response must lie in [0, 1]")
        return y
    values = series.astype(str).to_numpy()
    levels = sorted(set(values))
    if positive is None:
        if len(levels) > 2:
            raise DataError(f"response has {len(levels)} levels; name the positive one")
        positive = levels[-1]
    return (values == str(positive)).astype(float)


# ---------------------------------------------------------------------------
# fitting

@dataclass
class GlmFit:
    names: list[str]
    beta: np.ndarray
    cov: np.ndarray
    deviance: float
    loglik: float
    iterations: int
    converged: bool
    deviance_trace: list[float] = field(default_factory=list, repr=False)
    score_max: float = 0.0
    n_obs: float = 0.0

    @property
    def coef(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.beta)))

    @property
    def se(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, np.sqrt(np.diag(self.cov)))))

    def to_dict(self) -> dict:
        return {"coef": self.coef, "se": self.se, "deviance": self.deviance,
                "loglik": self.loglik, "iterations": self.iterations,
                "converged": self.converged, "n": self.n_obs}


def _loglik(y, mu, w) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = w * (np.where(y > 0, y * np.log(mu), 0.0) + np.where(y < 1, (1 - y) * np.log1p(-mu), 0.0))
    return float(np.sum(ll))


def _deviance(y, mu, w) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(y / mu), 0.0)
        b = np.where(y < 1, (1 - y) * np.log((1 - y) / (1 - mu)), 0.0)
    return float(2 * np.sum(w * (a + b)))


def irls(X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None, tol: float = 1e-10,
         max_iter: int = 100, names: Sequence[str] | None = None) -> GlmFit:
    """Iteratively reweighted least squares with step halving.

    ``w`` are frequency (or trial) weights; ``y`` may be proportions.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    w = np.ones(len(y)) if w is None else np.asarray(w, float)
    names = list(names) if names is not None else [f"x{i}" for i in range(X.shape[1])]
    keep = w > 0
    if X.shape[1] and np.linalg.matrix_rank(X[keep]) < X.shape[1]:
        raise RankDeficient("design matrix is not of full column rank")
    beta = np.zeros(X.shape[1])
    eta = X @ beta
    mu = _expit(eta)
    dev = _deviance(y, mu, w)
    trace = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        var = mu * (1 - mu)
        W = w * var
        z = eta + (y - mu) / np.where(var > 0, var, 1.0)
        XtW = X.T * W
        try:
            new = np.linalg.solve(XtW @ X, XtW @ z)
        except np.linalg.LinAlgError:
            raise RankDeficient("weighted normal equations are singular") from None
        step = new - beta
        for _ in range(30):
            cand = beta + step
            mu_c = _expit(X @ cand)
            dev_c = _deviance(y, mu_c, w)
            if dev_c <= dev + 1e-12 * max(1.0, abs(dev)):
                break
            step = step / 2
        beta = cand
        eta = X @ beta
        mu = mu_c
        change = dev - dev_c
        dev = dev_c
        trace.append(dev)
        score = X.T @ (w * (y - mu))
        if np.max(np.abs(beta), initial=0) > SEPARATION_BOUND:
            raise Separation(f"coefficient magnitude exceeds {SEPARATION_BOUND:g} on the logit scale")
        if np.max(np.abs(score), initial=0) < 1e-8 and abs(change) < tol * (abs(dev) + 1):
            converged = True
            break
    if not converged:
        raise NumericError(f"IRLS did not converge in {max_iter} iterations")
    var = mu * (1 - mu)
    info = (X.T * (w * var)) @ X
    cov = np.linalg.inv(info)
    return GlmFit(names, beta, cov, dev, _loglik(y, mu, w), it, converged, trace,
                  float(np.max(np.abs(score), initial=0)), float(w.sum()))


def fit_logistic(table, response: str, terms: Sequence[str], weights: str | None = None,
                 references: Mapping[str, str] | None = None, positive=None) -> GlmFit:
    """Binomial logistic regression of ``response`` on ``terms``.

    ``weights`` names a column of frequency weights, which lets a table of
    counts (one row per cell) stand in for individual observations.
    """
    df = as_frame(table)
    if response not in df.columns:
        raise UnknownColumn(response)
    if weights is not None and weights not in df.columns:
        raise UnknownColumn(weights)
    X, names, _ = design_matrix(df, terms, references)
    y = binary_response(df[response], positive)
    w = df[weights].to_numpy(dtype=float) if weights else None
    return irls(X, y, w, names=names)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    se_slope: float = float("nan")
    se_intercept: float = float("nan")
    loglik: float = float("nan")

    @property
    def exp_slope(self) -> float:
        return math.exp(self.slope)

    @property
    def exp_intercept(self) -> float:
        return math.exp(self.intercept)

    def predict(self, t):
        return expit(self.intercept + self.slope * np.asarray(t, float))

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "exp_slope": self.exp_slope,
                "exp_intercept": self.exp_intercept, "se_slope": self.se_slope,
                "se_intercept": self.se_intercept, "loglik": self.loglik}


def rate_of_change(fit: GlmFit, time_term: str) -> RateFit:
    coef, se = fit.coef, fit.se
    for term in (time_term, INTERCEPT):
        if term not in coef:
            raise MissingTerm(f"fit has no term {term!r}")
    return RateFit(coef[time_term], coef[INTERCEPT], se[time_term], se[INTERCEPT], fit.loglik)


def fit_rate(times: Sequence[float], successes: Sequence[float], totals: Sequence[float]) -> RateFit:
    """Rate of change from aggregated counts per time point."""
    t = np.asarray(times, float)
    s = np.asarray(successes, float)
    n = np.asarray(totals, float)
    if np.any(n <= 0) or np.any(s < 0) or np.any(s > n):
        raise DataError("need 0 <= successes <= totals and totals > 0")
    X = np.column_stack([np.ones_like(t), t])
    fit = irls(X, s / n, n, names=[INTERCEPT, "t"])
    return rate_of_change(fit, "t")


# ---------------------------------------------------------------------------
# constant rate effect

@dataclass
class CreResult:
    fits: dict[str, RateFit]
    common_slope: float
    lr: float
    df: int
    p: float

    def to_dict(self) -> dict:
        return {"contexts": {k: v.to_dict() for k, v in self.fits.items()},
                "common_slope": self.common_slope, "lr": self.lr, "df": self.df, "p": self.p}


def cre_test(table, response: str, time: str, context: str, weights: str | None = None,
             positive=None) -> CreResult:
    """Likelihood-ratio test of a common slope across contexts.

    The null model has one intercept per context and a shared slope; the
    alternative gives each context its own slope.  The statistic is
    referred to chi-square with C - 1 degrees of freedom.
    """
    df = as_frame(table)
    for col in (response, time, context) + ((weights,) if weights else ()):
        if col not in df.columns:
            raise UnknownColumn(col)
    y = binary_response(df[response], positive)
    w = df[weights].to_numpy(float) if weights else np.ones(len(df))
    t = df[time].to_numpy(float)
    ctx = df[context].astype(str).to_numpy()
    levels = sorted(set(ctx))
    if len(levels) < 2:
        raise DataError("the constant rate test needs at least two contexts")
    for lev in levels:
        m = (ctx == lev) & (w > 0)
        if len(set(t[m])) < 2:
            raise DataError(f"context {lev!r} has fewer than two time points")
        share = np.sum(w[m] * y[m]) / np.sum(w[m])
        if share <= 0 or share >= 1:
            raise DegenerateContext(lev)
    ind = np.column_stack([(ctx == lev).astype(float) for lev in levels])
    X0 = np.column_stack([ind, t])
    X1 = np.column_stack([ind, ind * t[:, None]])
    names1 = [f"{lev}:intercept" for lev in levels] + [f"{lev}:slope" for lev in levels]
    f0 = irls(X0, y, w)
    f1 = irls(X1, y, w, names=names1)
    C = len(levels)
    se = np.sqrt(np.diag(f1.cov))
    fits = {lev: RateFit(float(f1.beta[C + i]), float(f1.beta[i]), float(se[C + i]), float(se[i]))
            for i, lev in enumerate(levels)}
    lr = max(0.0, 2 * (f1.loglik - f0.loglik))
    return CreResult(fits, float(f0.beta[-1]), lr, C - 1, float(stats.chi2.sf(lr, C - 1)))


def ratefit_table_chisq(fits: Mapping[str, RateFit] | Sequence[tuple[float, float]]):
    """Pearson chi-square on the table of (exp slope, exp intercept) rows.

    This is not a valid test of slope equality (the cells are not counts);
    it exists to reproduce published comparisons computed this way.
    Returns ``(stat, df, p)``.
    """
    if isinstance(fits, Mapping):
        rows = [[f.exp_slope, f.exp_intercept] for f in fits.values()]
    else:
        rows = [list(r) for r in fits]
    res = chi_square(np.asarray(rows, float))
    return res.stat, res.df, res.p


# ---------------------------------------------------------------------------
# contingency tables

@dataclass(frozen=True)
class ChiSquare:
    stat: float
    df: int
    p: float
    expected: np.ndarray = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"stat": self.stat, "df": self.df, "p": self.p, "expected": self.expected.tolist()}


def _counts(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise DataError("expected a two-dimensional table")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise DataError("counts must be finite and nonnegative")
    if np.any(m.sum(axis=0) == 0) or np.any(m.sum(axis=1) == 0):
        raise ZeroMargin("a row or column total is zero")
    return m


def expected_counts(matrix) -> np.ndarray:
    m = _counts(matrix)
    return np.outer(m.sum(axis=1), m.sum(axis=0)) / m.sum()


def chi_square(matrix) -> ChiSquare:
    m = _counts(matrix)
    e = expected_counts(m)
    stat = float(np.sum((m - e) ** 2 / e))
    df = (m.shape[0] - 1) * (m.shape[1] - 1)
    return ChiSquare(stat, df, float(stats.chi2.sf(stat, df)) if df > 0 else 1.0, e)


def fisher_exact_2x2(matrix) -> float:
    """Two-sided Fisher exact p: total probability of tables, with the same
    margins, no more likely than the observed one."""
    m = np.asarray(matrix)
    if m.shape != (2, 2) or np.any(m < 0) or np.any(m != np.round(m)):
        raise DataError("need a 2x2 table of nonnegative integers")
    (a, b), (c, d) = (int(x) for x in m[0]), (int(x) for x in m[1])
    r1, r2, c1 = a + b, c + d, a + c
    c2 = b + d
    if min(r1, r2, c1, c2) == 0:
        raise ZeroMargin("a row or column total is zero")
    n = r1 + r2
    lo, hi = max(0, c1 - r2), min(r1, c1)
    x = np.arange(lo, hi + 1)
    logp = (gammaln(r1 + 1) + gammaln(r2 + 1) + gammaln(c1 + 1) + gammaln(c2 + 1) - gammaln(n + 1)
            - gammaln(x + 1) - gammaln(r1 - x + 1) - gammaln(c1 - x + 1) - gammaln(r2 - c1 + x + 1))
    obs = logp[a - lo]
    mask = logp <= obs + 1e-7
    p = float(np.exp(logp[mask]).sum())
    return min(1.0, p)


def distinctiveness(matrix) -> float:
    return abs(math.log10(fisher_exact_2x2(matrix)))  # abs avoids -0.0 when p = 1


# ---------------------------------------------------------------------------
# variable rules

@dataclass(frozen=True)
class VariableRuleSpec:
    p0: float
    effects: tuple[float, ...] = ()
    mode: str = "additive"

    def __post_init__(self):
        if self.mode not in ("additive", "multiplicative"):
            raise DataError(f"unknown combination mode {self.mode!r}")
        for p in (self.p0, *self.effects):
            if not 0 <= p <= 1:
                raise DomainError(f"probability {p} outside [0, 1]")


@dataclass(frozen=True)
class VariableRuleResult:
    p: float
    clamped: bool


def variable_rule_combine(spec: VariableRuleSpec) -> VariableRuleResult:
    """Combine an input probability with feature effects.

    The value is returned unclamped; ``clamped`` flags results outside
    [0, 1], the known defect of the additive model.
    """
    if spec.mode == "additive":
        p = spec.p0 + sum(spec.effects)
    else:
        p = spec.p0 * math.prod(spec.effects)
    return VariableRuleResult(p, not 0 <= p <= 1)
