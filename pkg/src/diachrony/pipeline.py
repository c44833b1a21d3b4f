"""Declarative pipeline runs and their reports.

A run is described by one YAML file (see ``fixtures.default_config`` for a
complete example).  Stages execute in the listed order inside a run
directory; each writes its outputs and records the sha256 of its inputs
and outputs, plus its seed, in ``manifest.json``.  Only the manifest
carries a timestamp, so two runs of the same config and seed produce
byte-identical stage outputs.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
import yaml

from . import bayes, coding, glm, ingest, treequery
from .errors import ConfigError, DiachronyError, IncompleteRun, StageFailure
from .multivariate import CiConfig, RfConfig, citree, correspondence_analysis, rf_importance, vnc
from .plotting import emit_plot

log = logging.getLogger(__name__)

STAGES = ("ingest", "tag", "query", "code", "fit", "cre", "ca", "vnc", "citree", "rf", "bayes", "report")
REQUIRES = {"tag": "ingest", "query": "ingest", "code": "query", "fit": "code", "cre": "code",
            "ca": "code", "vnc": "code", "citree": "code", "rf": "code", "bayes": "code"}

CORPUS_FILE = "corpus.jsonl"
MATCHES_FILE = "matches.jsonl"
FACTORS_FILE = "factors.csv"
MANIFEST = "manifest.json"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj) -> bytes:
    return (json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# configuration

def load_config(path) -> tuple[dict, Path, bytes]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(path, "config file not found")
    raw = path.read_bytes()
    try:
        cfg = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(path, f"invalid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(path, "top level must be a mapping")
    validate_config(cfg, path)
    return cfg, path.parent, raw


def validate_config(cfg: dict, path) -> None:
    stages = cfg.get("stages")
    if not isinstance(stages, list) or not stages:
        raise ConfigError(path, "'stages' must be a non-empty list")
    seen = set()
    for st in stages:
        if st not in STAGES:
            raise ConfigError(path, f"unknown stage {st!r}")
        req = REQUIRES.get(st)
        if req and req not in seen:
            raise ConfigError(path, f"stage {st!r} needs {req!r} earlier in the list")
        seen.add(st)
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        raise ConfigError(path, "'seed' must be an integer")
    if "ingest" in seen and "corpus" not in cfg:
        raise ConfigError(path, "'corpus' is required for the ingest stage")
    if "query" in seen and "query" not in cfg:
        raise ConfigError(path, "'query' is required for the query stage")
    if "tag" in seen and "tagger_model" not in cfg:
        raise ConfigError(path, "'tagger_model' is required for the tag stage")
    base = Path(path).parent
    for key in ("corpus", "texts", "sidecar", "tagger_model", "verb_lexicon", "frequency_lexicon"):
        if key in cfg:
            entries = cfg[key] if isinstance(cfg[key], list) else [cfg[key]]
            for e in entries:
                if not (base / e).exists():
                    raise ConfigError(base / e, f"file referenced by '{key}' does not exist")
    if cfg.get("format", "penn") not in ingest.PARSERS:
        raise ConfigError(path, f"unknown corpus format {cfg.get('format')!r}")
    periods = cfg.get("periods")
    if periods is not None:
        if not isinstance(periods, list) or any(not isinstance(p, list) or len(p) != 3 for p in periods):
            raise ConfigError(path, "'periods' must be a list of [label, lo, hi]")


def stage_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# run context

class Run:
    def __init__(self, cfg: dict, base: Path, out: Path, config_bytes: bytes):
        self.cfg = cfg
        self.base = base
        self.out = out
        self.seed = int(cfg.get("seed", 0))
        self.manifest: dict[str, Any] = {"seed": self.seed, "config_sha256": sha256(config_bytes),
                                         "stages": []}
        self._inputs: dict[str, str] = {}
        self._outputs: dict[str, str] = {}

    # file helpers record hashes for the manifest
    def read_input(self, rel) -> bytes:
        data = (self.base / rel).read_bytes()
        self._inputs[str(rel)] = sha256(data)
        return data

    def read(self, name: str) -> bytes:
        p = self.out / name
        if not p.exists():
            raise IncompleteRun(f"{name} is missing from the run directory")
        data = p.read_bytes()
        self._inputs[name] = sha256(data)
        return data

    def write(self, name: str, data: bytes) -> None:
        (self.out / name).write_bytes(data)
        self._outputs[name] = sha256(data)

    def begin(self):
        self._inputs, self._outputs = {}, {}

    def end(self, stage: str, seed: int):
        self.manifest["stages"].append({"stage": stage, "seed": seed, "inputs": dict(sorted(self._inputs.items())),
                                        "outputs": dict(sorted(self._outputs.items()))})

    def factors(self) -> pd.DataFrame:
        df = coding.read_factor_table(self.read(FACTORS_FILE)).frame
        labels = [p[0] for p in self.cfg.get("periods") or []]
        if labels:
            index = {lab: i + 1 for i, lab in enumerate(labels)}
            df["period_index"] = df["period_cluster"].map(index)
        return df

    def period_order(self, df: pd.DataFrame) -> list[str]:
        labels = [p[0] for p in self.cfg.get("periods") or []]
        present = set(df["period_cluster"].dropna())
        return [lab for lab in labels if lab in present] or sorted(present)


# ---------------------------------------------------------------------------
# stages

def _stage_ingest(run: Run, seed: int):
    fmt = run.cfg.get("format", "penn")
    entries = run.cfg["corpus"] if isinstance(run.cfg["corpus"], list) else [run.cfg["corpus"]]
    files = []
    for e in entries:
        p = run.base / e
        files.extend(sorted(q for q in p.iterdir() if q.is_file()) if p.is_dir() else [p])
    sentences = []
    for f in files:
        rel = f.relative_to(run.base)
        sentences.extend(ingest.PARSERS[fmt](run.read_input(rel), {"text_id": f.stem}))
    run.write(CORPUS_FILE, ingest.write_unified(sentences))


def _stage_tag(run: Run, seed: int):
    from . import tagger

    model = tagger.TaggerModel.from_json(run.read_input(run.cfg["tagger_model"]).decode("utf-8"))
    sents = ingest.read_unified(run.read(CORPUS_FILE))
    layer = run.cfg.get("tag", {}).get("layer", "pos") if isinstance(run.cfg.get("tag"), dict) else "pos"
    run.write(CORPUS_FILE, ingest.write_unified(tagger.tag_sentences(model, sents, layer)))


def _parse_query(text: str, syntax: str):
    if syntax == "corpussearch":
        return treequery.parse_corpussearch(text)
    return treequery.parse_query(text)


def _stage_query(run: Run, seed: int):
    ast = _parse_query(run.cfg["query"], run.cfg.get("query_syntax", "native"))
    sents = ingest.read_unified(run.read(CORPUS_FILE))
    if run.cfg.get("split_function_tags"):
        sents = [treequery.split_function_tags(s) for s in sents]
    lines = []
    for rec in treequery.extract(sents, ast):
        lines.append(json.dumps({"sentence_id": rec.sentence_id, "bindings": dict(rec.bindings)},
                                ensure_ascii=False))
    run.write(MATCHES_FILE, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def _texts_table(run: Run) -> dict:
    if "texts" not in run.cfg:
        return {}
    rows = csv.DictReader(io.StringIO(run.read_input(run.cfg["texts"]).decode("utf-8")))
    return {r["text_id"]: r for r in rows}


def _stage_code(run: Run, seed: int):
    sents = {s.id: s for s in ingest.read_unified(run.read(CORPUS_FILE))}
    matches = [json.loads(line) for line in run.read(MATCHES_FILE).decode("utf-8").splitlines() if line]
    extracted = [treequery.Extracted(m["sentence_id"], m["bindings"], None, sents[m["sentence_id"]])
                 for m in matches]
    config = coding.CodingConfig(language=run.cfg.get("language", "latin"), texts=_texts_table(run))
    if "verb_lexicon" in run.cfg:
        config.verb_lexicon = coding.read_tsv(run.read_input(run.cfg["verb_lexicon"]))
    if "frequency_lexicon" in run.cfg:
        config.frequency_lexicon = {k: int(v) for k, v in
                                    coding.read_tsv(run.read_input(run.cfg["frequency_lexicon"])).items()}
    records, excluded = coding.code_extracted(extracted, config)
    if run.cfg.get("periods"):
        records = coding.assign_periods(records, [tuple(p) for p in run.cfg["periods"]])
        run.write("periods.json", dump_json([p[0] for p in run.cfg["periods"]]))
    if "sidecar" in run.cfg:
        records = coding.attach_annotations(records, run.read_input(run.cfg["sidecar"]))
    _, data = coding.build_factor_table(records)
    run.write(FACTORS_FILE, data)
    run.write("exclusions.json", dump_json(excluded))


def _period_counts(df: pd.DataFrame, order: list[str]):
    rows = []
    for lab in order:
        sub = df[df["period_cluster"] == lab]
        rows.append((lab, int((sub["order"] == "OV").sum()), int((sub["order"] == "VO").sum())))
    return rows


def _stage_fit(run: Run, seed: int):
    df = run.factors()
    df = df[df["period_cluster"].notna()]
    order = run.period_order(df)
    counts = _period_counts(df, order)
    t = list(range(1, len(order) + 1))
    fit = glm.fit_rate(t, [vo for _, _, vo in counts], [ov + vo for _, ov, vo in counts])
    result = {"time": "period_index", "periods": order, "positive": "VO", **fit.to_dict()}
    run.write("rate.json", dump_json(result))
    observed = (t, [vo for _, _, vo in counts], [ov + vo for _, ov, vo in counts])
    run.write("rate.svg", emit_plot(fit, "rate", observed=observed, labels=order))


def _stage_cre(run: Run, seed: int):
    opts = run.cfg.get("cre") or {}
    context = opts.get("context", "verb_class")
    df = run.factors()
    df = df[df["period_cluster"].notna()]
    res = glm.cre_test(df, "order", "period_index", context, positive="VO")
    out = {"context": context, **res.to_dict()}
    out["table_chisq"] = dict(zip(("stat", "df", "p"), glm.ratefit_table_chisq(res.fits)))
    run.write("cre.json", dump_json(out))


def _stage_ca(run: Run, seed: int):
    opts = run.cfg.get("ca") or {}
    rows, cols = opts.get("rows", "period_cluster"), opts.get("cols", "pattern")
    df = run.factors()
    df = df[df[rows].notna()]
    tab = pd.crosstab(df[rows], df[cols])
    if rows == "period_cluster":
        tab = tab.reindex(run.period_order(df))
    sol = correspondence_analysis(tab.to_numpy(), list(tab.index), list(tab.columns))
    run.write("ca.json", dump_json(sol.to_dict()))
    if sol.n_dims >= 2:
        run.write("ca.svg", emit_plot(sol, "ca"))


def _stage_vnc(run: Run, seed: int):
    opts = run.cfg.get("vnc") or {}
    df = run.factors()
    df = df[df["date_median"].notna()]
    per = df.groupby("text_id").agg(date=("date_median", "first"),
                                    vo=("order", lambda s: float((s == "VO").mean())))
    per = per.reset_index().sort_values(["date", "text_id"], kind="stable")
    tree = vnc(per["vo"].to_numpy(), list(per["text_id"]), opts.get("measure", "sd"))
    result = {"series": [{"text_id": r.text_id, "date": int(r.date), "vo_rate": r.vo}
                         for r in per.itertuples()], **tree.to_dict()}
    if "k" in opts:
        result["clusters"] = tree.cut(int(opts["k"]))
    run.write("vnc.json", dump_json(result))
    run.write("vnc.svg", emit_plot(tree, "dendrogram"))


def _stage_citree(run: Run, seed: int):
    opts = run.cfg.get("citree") or {}
    df = run.factors()
    preds = opts.get("predictors") or ["verb_class", "inf_position", "heaviness_syn"]
    df = df.dropna(subset=preds)
    tree = citree(df, "order", preds, CiConfig(alpha=opts.get("alpha", 0.05), B=opts.get("B", 9999),
                                               min_node=opts.get("min_node", 20), seed=seed), positive="VO")
    run.write("citree.json", dump_json(tree.to_dict()))


def _stage_rf(run: Run, seed: int):
    opts = run.cfg.get("rf") or {}
    df = run.factors()
    preds = opts.get("predictors") or ["verb_class", "inf_position", "heaviness_syn"]
    df = df.dropna(subset=preds)
    rep = rf_importance(df, "order", preds, RfConfig(trees=opts.get("trees", 500), mtry=opts.get("mtry"),
                                                     seed=seed), positive="VO")
    run.write("rf.json", dump_json(rep.to_dict()))
    run.write("importance.svg", emit_plot(rep, "importance"))


def _stage_bayes(run: Run, seed: int):
    opts = run.cfg.get("bayes") or {}
    df = run.factors()
    fixed = opts.get("fixed") or ["period_index"]
    random = opts.get("random") or []
    cols = [c for c in df.columns if any(c == f or f == f"log({c})" for f in fixed)] + list(random)
    df = df.dropna(subset=cols).reset_index(drop=True)
    spec, data = bayes.build_model(fixed, random, df, references=opts.get("references"), response="order",
                                   positive="VO", prior_precision=opts.get("prior_precision", 1e-12))
    mcmc = bayes.McmcConfig(chains=opts.get("chains", 4), iters=opts.get("iters", 10000),
                            burn=opts.get("burn", 2000), thin=opts.get("thin", 1), seed=seed,
                            workers=int(run.cfg.get("threads", 1)))
    post = bayes.sample(spec, data, mcmc)
    summary = {k: v.to_dict() for k, v in bayes.summarize(post).items()}
    out = {"spec": spec.to_dict(), "summary": summary, "diagnostics": bayes.diagnose(post),
           "acceptance": post.acceptance.mean(axis=0).tolist(), "mode": post.mode()}
    run.write("posterior.json", dump_json(out))
    run.write("posterior.svg", emit_plot(post, "posterior"))


def _stage_report(run: Run, seed: int):
    # verify what earlier stages wrote before summarizing it
    verify_outputs(run.out, run.manifest)
    for name, data in build_report(run.out, run.cfg).items():
        run.write(name, data)


_STAGE_FUNCS: dict[str, Callable[[Run, int], None]] = {
    "ingest": _stage_ingest, "tag": _stage_tag, "query": _stage_query, "code": _stage_code,
    "fit": _stage_fit, "cre": _stage_cre, "ca": _stage_ca, "vnc": _stage_vnc, "citree": _stage_citree,
    "rf": _stage_rf, "bayes": _stage_bayes, "report": _stage_report,
}


def run_pipeline(config_path, out=None, seed: int | None = None, threads: int | None = None) -> Path:
    """Execute the configured stages; returns the run directory."""
    cfg, base, raw = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    if threads is not None:
        cfg["threads"] = threads
    out_dir = Path(out) if out is not None else base / cfg.get("out", "run")
    out_dir.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, base, out_dir, raw)
    for i, stage in enumerate(cfg["stages"]):
        s = stage_seed(run.seed, i)
        run.begin()
        try:
            _STAGE_FUNCS[stage](run, s)
        except DiachronyError as exc:
            _write_manifest(run, failed=stage)
            raise StageFailure(stage, exc) from exc
        run.end(stage, s)
        log.info("stage %s done", stage)
    _write_manifest(run)
    return out_dir


def _write_manifest(run: Run, failed: str | None = None) -> None:
    m = dict(run.manifest)
    m["created"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    if failed:
        m["failed"] = failed
    (run.out / MANIFEST).write_bytes(dump_json(m))


# ---------------------------------------------------------------------------
# reporting

def verify_outputs(run_dir: Path, manifest: dict) -> None:
    for st in manifest.get("stages", []):
        for name, digest in st.get("outputs", {}).items():
            p = Path(run_dir) / name
            if not p.exists():
                raise IncompleteRun(f"{name} (stage {st['stage']}) is missing")
            if sha256(p.read_bytes()) != digest:
                raise IncompleteRun(f"{name} (stage {st['stage']}) does not match its manifest hash")


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _pct(a: int, total: int) -> int:
    return int(round(100 * a / total)) if total else 0


def build_report(run_dir: Path, cfg: dict | None = None) -> dict[str, bytes]:
    """Summary tables from whatever analyses the run directory holds."""
    run_dir = Path(run_dir)
    out: dict[str, bytes] = {}
    text = []
    fpath = run_dir / FACTORS_FILE
    if fpath.exists():
        df = coding.read_factor_table(fpath.read_bytes()).frame
        labels = [p[0] for p in (cfg or {}).get("periods") or []]
        present = set(df["period_cluster"].dropna())
        order = [lab for lab in labels if lab in present] or sorted(present)
        rows = []
        for lab, ov, vo in _period_counts(df, order):
            rows.append([lab, ov, _pct(ov, ov + vo), vo, _pct(vo, ov + vo), ov + vo])
        tov, tvo = sum(r[1] for r in rows), sum(r[3] for r in rows)
        rows.append(["Total", tov, _pct(tov, tov + tvo), tvo, _pct(tvo, tov + tvo), tov + tvo])
        header = ["Period", "OV", "%", "VO", "%", "Total"]
        out["report_periods.csv"] = _csv_bytes(header, rows)
        text.append("OV/VO by period")
        text.extend("\t".join(str(c) for c in r) for r in [header] + rows)
    slopes = []
    if (run_dir / "rate.json").exists():
        r = json.loads((run_dir / "rate.json").read_text())
        slopes.append(["all", r["slope"], r["intercept"], r["exp_slope"], r["exp_intercept"]])
    if (run_dir / "cre.json").exists():
        c = json.loads((run_dir / "cre.json").read_text())
        for name, f in sorted(c["contexts"].items()):
            slopes.append([name, f["slope"], f["intercept"], f["exp_slope"], f["exp_intercept"]])
    if slopes:
        header = ["Context", "Slope", "Intercept", "Slope (exp)", "Intercept (exp)"]
        out["report_slopes.csv"] = _csv_bytes(header, slopes)
        text.append("")
        text.append("Rates of change")
        text.extend("\t".join(f"{x:.4f}" if isinstance(x, float) else str(x) for x in r)
                    for r in [header] + slopes)
    if (run_dir / "posterior.json").exists():
        p = json.loads((run_dir / "posterior.json").read_text())
        header = ["Parameter", "Mean", "HDI low", "HDI high", "Credible"]
        rows = [[k, v["mean"], v["hdi_lo"], v["hdi_hi"], "yes" if v["credible"] else "no"]
                for k, v in p["summary"].items()]
        out["report_posterior.csv"] = _csv_bytes(header, rows)
        text.append("")
        text.append("Posterior summary (95% HDI)")
        text.extend("\t".join(f"{x:.4f}" if isinstance(x, float) else str(x) for x in r)
                    for r in [header] + rows)
    out["report.txt"] = ("\n".join(text) + "\n").encode("utf-8")
    return out


def report(run_dir) -> dict[str, bytes]:
    """Check the run's manifest hashes and build the summary tables."""
    run_dir = Path(run_dir)
    mpath = run_dir / MANIFEST
    if not mpath.exists():
        raise IncompleteRun(f"{run_dir} has no manifest")
    manifest = json.loads(mpath.read_text())
    if manifest.get("failed"):
        raise IncompleteRun(f"run stopped at stage {manifest['failed']!r}")
    # the report's own files are regenerated, so only verify the analysis outputs
    manifest = {"stages": [s for s in manifest.get("stages", []) if s["stage"] != "report"]}
    verify_outputs(run_dir, manifest)
    return build_report(run_dir, _saved_config(run_dir))


def _saved_config(run_dir: Path) -> dict:
    periods_file = run_dir / "periods.json"
    if periods_file.exists():
        return {"periods": [[lab] for lab in json.loads(periods_file.read_text())]}
    return {}
