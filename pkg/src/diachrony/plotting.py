"""SVG figures for rate fits, CA maps, dendrograms, posteriors and importances.

Figures are plain matplotlib renderings.  Text is kept as SVG text and the
element-id salt is fixed so the same result always produces the same bytes.
Key elements carry ``gid`` attributes (``fit-line``, ``observed-<i>``,
``leaf-label-<i>``, ...) so tests and downstream tools can find them.
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.cluster.hierarchy import dendrogram as _scipy_dendrogram  # noqa: E402

from .bayes import Posterior, hdi  # noqa: E402
from .errors import KindMismatch  # noqa: E402
from .glm import RateFit  # noqa: E402
from .multivariate.ca import CaSolution  # noqa: E402
from .multivariate.cluster import Dendrogram  # noqa: E402
from .multivariate.trees import ImportanceReport  # noqa: E402

KINDS = {
    "rate": RateFit,
    "ca": CaSolution,
    "dendrogram": Dendrogram,
    "posterior": Posterior,
    "importance": ImportanceReport,
}

_RC = {"svg.fonttype": "none", "svg.hashsalt": "diachrony", "font.size": 9}


def _to_svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def empirical_logit(successes, totals) -> np.ndarray:
    """log((s + 0.5) / (n - s + 0.5)); finite even for 0% and 100% cells."""
    s = np.asarray(successes, float)
    n = np.asarray(totals, float)
    return np.log((s + 0.5) / (n - s + 0.5))


def _rate(fit: RateFit, observed=None, labels=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if observed is not None:
        t, s, n = (np.asarray(v, float) for v in observed)
        y = empirical_logit(s, n)
        for i, (ti, yi) in enumerate(zip(t, y)):
            ax.plot([ti], [yi], "o", color="black", gid=f"observed-{i}")
        grid = np.linspace(t.min(), t.max(), 50)
    else:
        grid = np.linspace(0, 1, 50)
    ax.plot(grid, fit.intercept + fit.slope * grid, "-", color="tab:blue", gid="fit-line")
    if observed is not None and labels is not None:
        ax.set_xticks(observed[0])
        ax.set_xticklabels([str(x) for x in labels])
    ax.set_xlabel("time")
    ax.set_ylabel("logit")
    ax.set_title(f"slope {fit.slope:.3f}, intercept {fit.intercept:.3f}")
    fig.tight_layout()
    return fig


def _ca(sol: CaSolution):
    sol.require_2d()
    fig, ax = plt.subplots(figsize=(5, 5))
    r, c = sol.row_coords, sol.col_coords
    ax.axhline(0, color="grey", lw=0.5)
    ax.axvline(0, color="grey", lw=0.5)
    for i, lab in enumerate(sol.row_labels):
        ax.plot([r[i, 0]], [r[i, 1]], "o", color="tab:blue", gid=f"row-{i}")
        ax.annotate(str(lab), (r[i, 0], r[i, 1]), color="tab:blue")
    for j, lab in enumerate(sol.col_labels):
        ax.plot([c[j, 0]], [c[j, 1]], "^", color="tab:red", gid=f"col-{j}")
        ax.annotate(str(lab), (c[j, 0], c[j, 1]), color="tab:red")
    ax.set_xlabel(f"Dim 1 ({100 * sol.shares[0]:.1f}%)")
    ax.set_ylabel(f"Dim 2 ({100 * sol.shares[1]:.1f}%)")
    fig.tight_layout()
    return fig


def _dendrogram(tree: Dendrogram):
    n = tree.n_leaves
    fig, ax = plt.subplots(figsize=(max(4, 0.4 * n), 3.5))
    if n >= 2:
        info = _scipy_dendrogram(tree.to_linkage(), no_plot=True)
        for xs, ys in zip(info["icoord"], info["dcoord"]):
            ax.plot(xs, ys, "-", color="black", lw=1)
        order = info["leaves"]
    else:
        order = list(range(n))
    ax.set_xticks([])
    for pos, leaf in enumerate(order):
        ax.text(5 + 10 * pos, 0, str(tree.labels[leaf]), rotation=90, ha="center", va="top",
                gid=f"leaf-label-{leaf}")
    ax.set_xlim(0, 10 * max(n, 1))
    ax.set_ylabel("height")
    fig.tight_layout()
    return fig


def _posterior(post: Posterior):
    names = post.parameters
    fig, axes = plt.subplots(len(names), 1, figsize=(5, 1.6 * len(names)), squeeze=False)
    for k, (name, ax) in enumerate(zip(names, axes[:, 0])):
        x = post.param(name).ravel()
        counts, edges = np.histogram(x, bins=40, density=True)
        ax.stairs(counts, edges, color="black", gid=f"density-{k}")
        lo, hi = hdi(x)
        ax.plot([lo, hi], [0, 0], "-", lw=4, color="tab:red", gid=f"hdi-{k}")
        ax.axvline(0, color="grey", lw=0.5, ls=":")
        ax.set_title(f"{name}: 95% HDI [{lo:.3g}, {hi:.3g}]", fontsize=8)
        ax.set_yticks([])
    fig.tight_layout()
    return fig


def _importance(rep: ImportanceReport):
    ranked = list(reversed(rep.ranked()))
    fig, ax = plt.subplots(figsize=(5, 0.35 * len(ranked) + 1))
    for i, (name, val) in enumerate(ranked):
        ax.plot([val], [i], "o", color="black", gid=f"importance-{i}")
    ax.set_yticks(range(len(ranked)))
    ax.set_yticklabels([name for name, _ in ranked])
    ax.axvline(rep.threshold, ls="--", color="grey", gid="threshold")
    ax.set_xlabel("mean decrease in accuracy")
    fig.tight_layout()
    return fig


_DRAW = {"rate": _rate, "ca": _ca, "dendrogram": _dendrogram, "posterior": _posterior,
         "importance": _importance}


def emit_plot(result, kind: str, **kwargs) -> bytes:
    """Render ``result`` as SVG.  ``kind`` must match the result's type.

    Rate plots accept ``observed=(times, successes, totals)`` and optional
    ``labels`` for the time axis.
    """
    if kind not in KINDS:
        raise KindMismatch(f"unknown plot kind {kind!r}")
    if not isinstance(result, KINDS[kind]):
        raise KindMismatch(f"{kind} plot needs a {KINDS[kind].__name__}, got {type(result).__name__}")
    with plt.rc_context(_RC):
        fig = _DRAW[kind](result, **kwargs)
        return _to_svg(fig)
