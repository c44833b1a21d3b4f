import json
import subprocess
import sys

import pandas as pd
import pytest

from diachrony.cli import main
from diachrony.fixtures import LATIN_MARGINS, LATIN_PERIODS, write_fixture

from published import GIVE_TABLE, LATIN_OV, LATIN_SOV, LATIN_SOV_COLS, LATIN_SOV_ROWS, LATIN_VO


def run(capsys, *argv):
    """Run the CLI in-process; returns (exit code, stdout, parsed stderr JSON or None)."""
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    err_lines = [line for line in err.splitlines() if line.startswith("{")]
    return code, out, json.loads(err_lines[-1]) if err_lines else None


def test_exit_codes_and_error_json(capsys, tmp_path):
    code, _, err = run(capsys, "ca", str(tmp_path / "missing.csv"))
    assert code == 2 and err["error"] == "ConfigError" and err["path"].endswith("missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\nx,1\n")
    code, _, err = run(capsys, "ca", str(bad))
    assert code == 3 and err["error"] == "DataError"
    code, _, err = run(capsys, "fit", "--counts", "1:0:10", "2:10:10")
    assert code == 4 and err["error"] == "Separation"
    code, _, err = run(capsys, "no-such-command")
    assert code == 2 and err["error"] == "ConfigError"


def test_console_script_process_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "diachrony.cli", "ct", "1", "2", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"] == "ConfigError"


def test_fit_counts(capsys):
    triples = [f"{t}:{vo}:{ov + vo}" for t, (ov, vo) in enumerate(zip(LATIN_OV, LATIN_VO), 1)]
    code, out, _ = run(capsys, "fit", "--counts", *triples)
    res = json.loads(out)
    assert code == 0 and res["slope"] == pytest.approx(0.37988, abs=1e-5)


def test_ct_chi2_and_fisher(capsys):
    cells = [str(x) for row in GIVE_TABLE for x in row]
    code, out, _ = run(capsys, "ct", *cells)
    res = json.loads(out)
    assert code == 0 and round(res["expected"][0][0]) == 213
    code, out, _ = run(capsys, "ct", "--test", "fisher", "3", "1", "1", "3")
    res = json.loads(out)
    assert res["p"] == pytest.approx(0.4857142857, abs=1e-9)


def test_ca_matrix_and_chisq(capsys, tmp_path):
    m = tmp_path / "sov.csv"
    pd.DataFrame(LATIN_SOV, index=LATIN_SOV_ROWS, columns=LATIN_SOV_COLS).to_csv(m)
    plot = tmp_path / "ca.svg"
    code, out, _ = run(capsys, "ca", str(m), "--chisq", "--plot", str(plot))
    res = json.loads(out)
    assert code == 0 and res["rows"] == list(LATIN_SOV_ROWS)
    assert sum(res["shares"]) == pytest.approx(1.0)
    assert res["chi_square"]["df"] == 12
    assert plot.read_bytes().startswith(b"<?xml")


def test_vnc_value_and_time(capsys, tmp_path):
    s = tmp_path / "series.csv"
    pd.DataFrame({"other": [0, 0, 0, 0, 0, 0], "rate": [9, 1, 9, 1, 1, 9], "year": [4, 1, 5, 2, 3, 6]}).to_csv(
        s, index=False)
    code, out, _ = run(capsys, "vnc", str(s), "--value", "rate", "--time", "year", "-k", "2")
    res = json.loads(out)
    assert code == 0 and res["labels"] == ["1", "2", "3", "4", "5", "6"]
    assert res["clusters"] == [0, 0, 0, 1, 1, 1]
    code, _, _ = run(capsys, "vnc", str(s), "--value", "nope")
    assert code == 2


def test_hclust(capsys, tmp_path):
    d = tmp_path / "profiles.csv"
    pd.DataFrame({"x": [0, 0.1, 5, 5.1], "y": [0, 0, 1, 1]}, index=list("abcd")).to_csv(d)
    code, out, _ = run(capsys, "hclust", str(d), "--method", "complete")
    res = json.loads(out)
    assert code == 0 and len(res["merges"]) == 3


@pytest.fixture(scope="module")
def coded(tmp_path_factory):
    """Fixture corpus ingested and coded through the standalone subcommands."""
    d = tmp_path_factory.mktemp("cli")
    write_fixture(d)
    corpus = d / "corpus.jsonl"
    files = sorted(str(p) for p in (d / "corpus").iterdir())
    assert main(["ingest", *files, "-o", str(corpus)]) == 0
    periods = []
    for lab, lo, hi in LATIN_PERIODS:
        periods += ["--period", f"{lab}:{lo}:{hi}"]
    table = d / "factors.csv"
    assert main(["code", "--syntax", "corpussearch", "--q", "node: IP-MAT*; query: (IP-INF* iDominates NP-ACC*)",
                 str(corpus), "--texts", str(d / "texts.csv"), "--sidecar", str(d / "sidecar.csv"),
                 *periods, "-o", str(table)]) == 0
    return d, table


def test_code_subcommand_reproduces_margins(coded):
    _, table = coded
    df = pd.read_csv(table)
    for lab, _, ov, vo in LATIN_MARGINS:
        sub = df[df["period_cluster"] == lab]
        assert ((sub["order"] == "OV").sum(), (sub["order"] == "VO").sum()) == (ov, vo)


def test_fit_formula_and_terms_forms_agree(capsys, coded):
    _, table = coded
    code, a, _ = run(capsys, "fit", str(table), "--formula", "order ~ info_relevance", "--positive", "VO")
    code2, b, _ = run(capsys, "fit", "--table", str(table), "--response", "order", "--terms", "info_relevance",
                      "--positive", "VO")
    assert code == code2 == 0 and json.loads(a) == json.loads(b)
    assert json.loads(a)["coef"]["info_relevance[infofocus]"] > 0  # contrast (reference) favours OV


def test_cre_and_ca_on_factor_table(capsys, coded):
    _, table = coded
    periods = ",".join(m[0] for m in LATIN_MARGINS)
    code, out, _ = run(capsys, "cre", str(table), "--context", "inf_position", "--periods", periods)
    res = json.loads(out)
    assert code == 0 and set(res["contexts"]) == {"independent", "postposed", "preposed"}
    assert 0 <= res["p"] <= 1
    code, out, _ = run(capsys, "ca", str(table), "--rows", "period_cluster", "--cols", "pattern")
    assert code == 0 and len(json.loads(out)["rows"]) == 5
    code, _, err = run(capsys, "ca", str(table), "--rows", "period_cluster", "--cols", "colour")
    assert code == 3 and err["error"] == "UnknownColumn"


def test_bayes_subcommand(capsys, coded, tmp_path):
    _, table = coded
    periods = ",".join(m[0] for m in LATIN_MARGINS)
    plot = tmp_path / "post.svg"
    code, out, _ = run(capsys, "bayes", "--table", str(table), "--fixed", "period_index+info_relevance",
                       "--ref", "info_relevance=infofocus", "--periods", periods, "--chains", "2",
                       "--iters", "800", "--burn", "300", "--seed", "3", "--plot", str(plot))
    res = json.loads(out)
    assert code == 0
    contrast = res["summary"]["info_relevance[contrast]"]
    assert contrast["credible"] and contrast["hdi_hi"] < 0
    assert plot.exists()
    code, _, err = run(capsys, "bayes", "--table", str(table), "--fixed", "info_relevance",
                       "--ref", "info_relevance=topic")
    assert code == 3 and err["error"] == "UnknownReferenceLevel"
