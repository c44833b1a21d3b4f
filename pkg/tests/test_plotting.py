import re
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from diachrony.bayes import McmcConfig, build_model, sample
from diachrony.errors import DegenerateRank, KindMismatch
from diachrony.glm import fit_rate
from diachrony.multivariate import correspondence_analysis, hclust, vnc
from diachrony.multivariate.trees import ImportanceReport
from diachrony.plotting import emit_plot, empirical_logit

from published import LATIN_OV, LATIN_SOV, LATIN_VO

SVG = "{http://www.w3.org/2000/svg}"


def _ids(svg: bytes) -> list[str]:
    root = ET.fromstring(svg)  # strict: raises on malformed XML
    assert root.tag == SVG + "svg"
    return [el.get("id") for el in root.iter() if el.get("id")]


def _rate():
    t = [1, 2, 3, 4, 5]
    n = [o + v for o, v in zip(LATIN_OV, LATIN_VO)]
    return fit_rate(t, LATIN_VO, n), (t, LATIN_VO, n)


def test_rate_plot_has_one_line_and_a_point_per_period():
    fit, observed = _rate()
    ids = _ids(emit_plot(fit, "rate", observed=observed, labels=["a", "b", "c", "d", "e"]))
    assert ids.count("fit-line") == 1
    assert sorted(i for i in ids if i.startswith("observed-")) == [f"observed-{k}" for k in range(5)]


def test_rate_plot_points_are_empirical_logits():
    fit, observed = _rate()
    svg = emit_plot(fit, "rate", observed=observed).decode()
    assert "slope 0.380" in svg
    e = empirical_logit([0, 5], [5, 5])
    assert np.all(np.isfinite(e)) and e[0] == -e[1]


def test_dendrogram_has_one_label_per_leaf():
    tree = hclust(np.random.default_rng(0).normal(size=(7, 2)), "ward", list("abcdefg"))
    ids = _ids(emit_plot(tree, "dendrogram"))
    assert sorted(i for i in ids if i.startswith("leaf-label-")) == sorted(f"leaf-label-{k}" for k in range(7))
    pair = vnc([0.3, 0.5], ["x", "y"])
    assert sorted(i for i in _ids(emit_plot(pair, "dendrogram")) if i.startswith("leaf-label-")) == \
        ["leaf-label-0", "leaf-label-1"]


def test_ca_plot_marks_rows_and_columns():
    sol = correspondence_analysis(LATIN_SOV, list("ABCD"), list("vwxyz"))
    ids = _ids(emit_plot(sol, "ca"))
    assert sum(i.startswith("row-") for i in ids) == 4 and sum(i.startswith("col-") for i in ids) == 5


def test_ca_plot_needs_two_dimensions():
    sol = correspondence_analysis([[10, 0], [0, 10]])
    with pytest.raises(DegenerateRank):
        emit_plot(sol, "ca")


def test_posterior_and_importance_plots():
    rng = np.random.default_rng(1)
    df = pd.DataFrame({"x": rng.normal(size=100)})
    df["y"] = (rng.random(100) < 0.5).astype(int)
    spec, data = build_model(["x"], table=df, response="y")
    post = sample(spec, data, McmcConfig(chains=1, iters=200, burn=50))
    ids = _ids(emit_plot(post, "posterior"))
    assert {"density-0", "density-1", "hdi-0", "hdi-1"} <= set(ids)
    rep = ImportanceReport({"a": 0.1, "b": -0.01, "c": 0.03}, 0.01, 0.8)
    ids = _ids(emit_plot(rep, "importance"))
    assert sum(i.startswith("importance-") for i in ids) == 3 and "threshold" in ids


def test_plots_are_deterministic_and_undated():
    fit, observed = _rate()
    a = emit_plot(fit, "rate", observed=observed)
    b = emit_plot(fit, "rate", observed=observed)
    assert a == b
    assert not re.search(rb"<dc:date>", a)


def test_kind_mismatch():
    fit, _ = _rate()
    with pytest.raises(KindMismatch):
        emit_plot(fit, "ca")
    with pytest.raises(KindMismatch):
        emit_plot(fit, "histogram")
