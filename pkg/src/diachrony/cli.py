"""Command line entry point.

Every analysis stage is also a standalone subcommand.  Results go to
``--out`` (or stdout); errors are written to stderr as one JSON object and
the exit status says what kind of failure it was: 2 configuration,
3 input data, 4 numerical.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, bayes, coding, glm, ingest, pipeline, tagger, treequery
from .errors import ConfigError, DataError, DiachronyError, UnknownColumn
from .multivariate import CiConfig, RfConfig, citree, correspondence_analysis, hclust, rf_importance, vnc
from .plotting import emit_plot

log = logging.getLogger("diachrony")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(ConfigError("<command line>", message))


def _fail(exc: DiachronyError):
    sys.stderr.write(json.dumps(exc.to_json(), sort_keys=True, default=str) + "\n")
    sys.exit(exc.exit_code)


# ---------------------------------------------------------------------------
# io helpers

def _read(path) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(p, "input file not found")
    return p.read_bytes()


def _emit(args, data: bytes) -> None:
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _emit_json(args, obj) -> None:
    _emit(args, pipeline.dump_json(obj))


def _write_plot(path, result, kind, **kw) -> None:
    if path:
        Path(path).write_bytes(emit_plot(result, kind, **kw))


def _table(path) -> pd.DataFrame:
    data = _read(path)
    try:
        return coding.read_factor_table(data).frame
    except DataError:
        return pd.read_csv(io.BytesIO(data))


def _with_period_index(df: pd.DataFrame, periods: str | None) -> pd.DataFrame:
    """Add ``period_index`` (1-based position in ``periods``) from ``period_cluster``."""
    if periods:
        index = {lab: i + 1 for i, lab in enumerate(_split(periods))}
        df = df[df["period_cluster"].isin(index)].copy()
        df["period_index"] = df["period_cluster"].map(index)
    return df


def _refs(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError("<command line>", f"{item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def _split(text: str | None) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()] if text else []


def _formula_terms(formula: str) -> tuple[str, list[str]]:
    return bayes.parse_formula(formula)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args):
    parse = ingest.PARSERS[args.format]
    extra = _refs(args.meta)
    sentences = []
    for f in args.files:
        sentences.extend(parse(_read(f), {"text_id": Path(f).stem, **extra}))
    _emit(args, ingest.write_unified(sentences))


def cmd_tag_train(args):
    sents = ingest.read_unified(_read(args.corpus))
    if args.layer != "pos":
        sents = [[(t.form, getattr(t, args.layer)) for t in s.tokens] for s in sents]
    model = tagger.train(sents, tagger.TaggerConfig(max_suffix=args.max_suffix, rare_cutoff=args.rare_cutoff,
                                                    beam=args.beam))
    _emit(args, model.to_json().encode("utf-8"))


def cmd_tag_apply(args):
    model = tagger.TaggerModel.from_json(_read(args.model).decode("utf-8"))
    if args.beam is not None:
        model.config.beam = args.beam
    sents = ingest.read_unified(_read(args.corpus))
    _emit(args, ingest.write_unified(tagger.tag_sentences(model, sents, args.layer)))


def cmd_tag_eval(args):
    gold = ingest.read_unified(_read(args.gold))
    pred = ingest.read_unified(_read(args.pred))
    rep = tagger.evaluate([[getattr(t, args.layer) for t in s.tokens] for s in gold],
                          [[getattr(t, args.layer) for t in s.tokens] for s in pred], _split(args.target_tags))
    out = {"precision": rep.precision, "recall": rep.recall, "f": rep.f, "true_positives": rep.true_positives,
           "predicted": rep.predicted, "gold": rep.gold}
    _emit_json(args, out)


def cmd_tag_map(args):
    mapping = tagger.read_mapping(_read(args.mapping).decode("utf-8"))
    sents, _ = tagger.map_tagset(ingest.read_unified(_read(args.corpus)), mapping, args.default, args.layer)
    _emit(args, ingest.write_unified(sents))


def _query_ast(args):
    if args.syntax == "corpussearch":
        return treequery.parse_corpussearch(args.query)
    return treequery.parse_query(args.query)


def _load_for_query(args):
    sents = ingest.read_unified(_read(args.corpus))
    if args.split_function_tags:
        sents = [treequery.split_function_tags(s) for s in sents]
    return sents


def cmd_query(args):
    ast = _query_ast(args)
    lines = []
    for rec in treequery.extract(_load_for_query(args), ast):
        lines.append(json.dumps({"sentence_id": rec.sentence_id, "bindings": dict(rec.bindings)},
                                ensure_ascii=False))
    _emit(args, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def _period(text: str):
    parts = text.rsplit(":", 2)
    if len(parts) != 3:
        raise ConfigError("<command line>", f"period {text!r} must look like LABEL:LO:HI")
    try:
        return parts[0], float(parts[1]), float(parts[2])
    except ValueError:
        raise ConfigError("<command line>", f"period {text!r} has a non-numeric bound") from None


def cmd_code(args):
    ast = _query_ast(args)
    extracted = treequery.extract(_load_for_query(args), ast)
    texts = {}
    if args.texts:
        texts = {r["text_id"]: r for r in csv.DictReader(io.StringIO(_read(args.texts).decode("utf-8")))}
    config = coding.CodingConfig(language=args.language, texts=texts)
    if args.verb_lexicon:
        config.verb_lexicon = coding.read_tsv(_read(args.verb_lexicon))
    records, excluded = coding.code_extracted(extracted, config)
    if args.period:
        records = coding.assign_periods(records, [_period(p) for p in args.period])
    if args.sidecar:
        records = coding.attach_annotations(records, _read(args.sidecar))
    for reason in sorted(set(excluded.values())):
        log.info("excluded %d clauses: %s", sum(1 for r in excluded.values() if r == reason), reason)
    _emit(args, coding.build_factor_table(records)[1])


def cmd_fit(args):
    if args.counts:
        rows = [tuple(float(x) for x in c.split(":")) for c in args.counts]
        if any(len(r) != 3 for r in rows):
            raise ConfigError("<command line>", "--counts items must look like t:successes:total")
        t, s, n = zip(*rows)
        fit = glm.fit_rate(t, s, n)
        _write_plot(args.plot, fit, "rate", observed=(t, s, n))
        _emit_json(args, fit.to_dict())
        return
    table = args.table or args.table_opt
    if args.formula:
        response, terms = _formula_terms(args.formula)
    elif args.response and args.terms:
        response, terms = args.response, [t.strip() for t in args.terms.split("+") if t.strip()]
    else:
        response = terms = None
    if not table or response is None:
        raise ConfigError("<command line>", "fit needs a table and --formula (or --response and --terms), "
                                            "or --counts")
    fit = glm.fit_logistic(_table(table), response, terms, weights=args.weights,
                           references=_refs(args.ref), positive=args.positive)
    out = fit.to_dict()
    if args.time:
        rate = glm.rate_of_change(fit, args.time)
        out["rate"] = rate.to_dict()
        _write_plot(args.plot, rate, "rate")
    _emit_json(args, out)


def cmd_cre(args):
    res = glm.cre_test(_with_period_index(_table(args.table), args.periods), args.response, args.time, args.context, weights=args.weights,
                       positive=args.positive)
    out = res.to_dict()
    out["table_chisq"] = dict(zip(("stat", "df", "p"), glm.ratefit_table_chisq(res.fits)))
    _emit_json(args, out)


def cmd_ct(args):
    if len(args.cells) != 4:
        raise ConfigError("<command line>", "ct needs the four cells a b c d of a 2x2 table")
    m = np.array(args.cells, float).reshape(2, 2)
    if args.test == "fisher":
        out = {"test": "fisher", "p": glm.fisher_exact_2x2(m), "distinctiveness": glm.distinctiveness(m)}
    else:
        out = {"test": "chi2", **glm.chi_square(m).to_dict()}
    _emit_json(args, out)


def _matrix(path):
    df = pd.read_csv(io.BytesIO(_read(path)), index_col=0)
    return df.to_numpy(float), [str(x) for x in df.index], [str(x) for x in df.columns]


def cmd_ca(args):
    if args.rows or args.cols:
        if not (args.rows and args.cols):
            raise ConfigError("<command line>", "--rows and --cols go together")
        df = _table(args.matrix)
        for c in (args.rows, args.cols):
            if c not in df.columns:
                raise UnknownColumn(c)
        tab = pd.crosstab(df[args.rows].astype(str), df[args.cols].astype(str))
        m, rows, cols = tab.to_numpy(float), list(tab.index), list(tab.columns)
    else:
        m, rows, cols = _matrix(args.matrix)
    sol = correspondence_analysis(m, rows, cols)
    _write_plot(args.plot, sol, "ca")
    out = sol.to_dict()
    if args.chisq:
        out["chi_square"] = glm.chi_square(m).to_dict()
    _emit_json(args, out)


def cmd_vnc(args):
    df = pd.read_csv(io.BytesIO(_read(args.series)))
    if args.time:
        if args.time not in df.columns:
            raise ConfigError("<command line>", f"no column {args.time!r}")
        df = df.sort_values(args.time, kind="stable")
        label_col = args.time
    else:
        label_col = df.columns[0]
    if args.value:
        if args.value not in df.columns:
            raise ConfigError("<command line>", f"no column {args.value!r}")
        values = df[args.value].to_numpy(float)
    else:
        values = df.drop(columns=[label_col]).to_numpy(float)
    if values.ndim == 2 and values.shape[1] == 1:
        values = values[:, 0]
    tree = vnc(values, [str(x) for x in df[label_col]], args.measure)
    out = tree.to_dict()
    if args.k:
        out["clusters"] = tree.cut(args.k)
    _write_plot(args.plot, tree, "dendrogram")
    _emit_json(args, out)


def cmd_hclust(args):
    df = pd.read_csv(io.BytesIO(_read(args.data)), index_col=0)
    tree = hclust(df.to_numpy(float), args.method, [str(x) for x in df.index])
    _write_plot(args.plot, tree, "dendrogram")
    _emit_json(args, tree.to_dict())


def cmd_citree(args):
    preds = _split(args.predictors)
    tree = citree(_table(args.table), args.response, preds,
                  CiConfig(alpha=args.alpha, B=args.B, min_node=args.min_node, seed=args.seed),
                  positive=args.positive)
    _emit_json(args, tree.to_dict())


def cmd_rf(args):
    rep = rf_importance(_table(args.table), args.response, _split(args.predictors),
                        RfConfig(trees=args.trees, mtry=args.mtry, seed=args.seed), positive=args.positive)
    _write_plot(args.plot, rep, "importance")
    _emit_json(args, {**rep.to_dict(), "ranked": rep.ranked()})


def cmd_bayes(args):
    df = _with_period_index(_table(args.table), args.periods)
    fixed = [t.strip() for t in args.fixed.split("+") if t.strip()]
    spec, data = bayes.build_model(fixed, _split(args.random), df, references=_refs(args.ref),
                                   response=args.response, positive=args.positive,
                                   prior_precision=args.prior_precision)
    post = bayes.sample(spec, data, bayes.McmcConfig(chains=args.chains, iters=args.iters, burn=args.burn,
                                                     thin=args.thin, seed=args.seed, workers=args.threads))
    _write_plot(args.plot, post, "posterior")
    _emit_json(args, {"spec": spec.to_dict(), "summary": {k: v.to_dict() for k, v in bayes.summarize(post).items()},
                      "diagnostics": bayes.diagnose(post), "mode": post.mode()})


def cmd_report(args):
    files = pipeline.report(args.run_dir)
    target = Path(args.out) if args.out else None
    if target is not None:
        target.mkdir(parents=True, exist_ok=True)
        for name, data in files.items():
            (target / name).write_bytes(data)
    sys.stdout.buffer.write(files["report.txt"])


def cmd_pipeline(args):
    out = pipeline.run_pipeline(args.config, out=args.out, seed=args.seed_override, threads=args.threads)
    print(out)


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, suppress):
        # subcommands accept the flags too, without overwriting values given earlier
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        parser.add_argument("--seed", type=int, default=d(None), help="master random seed (default 0)")
        parser.add_argument("--threads", type=int, default=d(1))
        parser.add_argument("-o", "--out", default=d(None), help="output file (or directory for report/pipeline)")
        parser.add_argument("-v", "--verbose", action="store_true", default=d(False))

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)

    p = _Parser(prog="diachrony", description="Corpus-based word order change analysis.")
    global_flags(p, suppress=False)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, **kw):
        sp = sub.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        return sp

    sp = add("ingest", cmd_ingest, help="parse treebank files into the unified JSONL format")
    sp.add_argument("files", nargs="+")
    sp.add_argument("--format", choices=sorted(ingest.PARSERS), default="penn")
    sp.add_argument("--meta", nargs="*", metavar="KEY=VALUE", help="sentence metadata, e.g. text_id=ROLAND")

    tag = sub.add_parser("tag", parents=[common], help="train, apply, evaluate or map part-of-speech tags")
    tsub = tag.add_subparsers(dest="tag_command", required=True, parser_class=_Parser)
    sp = tsub.add_parser("train", parents=[common])
    sp.set_defaults(func=cmd_tag_train)
    sp.add_argument("corpus")
    sp.add_argument("--layer", default="pos", choices=["pos", "pos2"])
    sp.add_argument("--max-suffix", type=int, default=10)
    sp.add_argument("--rare-cutoff", type=int, default=10)
    sp.add_argument("--beam", type=int, default=None, help="keep this many states per position")
    sp = tsub.add_parser("apply", parents=[common])
    sp.set_defaults(func=cmd_tag_apply)
    sp.add_argument("model")
    sp.add_argument("corpus")
    sp.add_argument("--layer", default="pos", choices=["pos", "pos2"])
    sp.add_argument("--beam", type=int, default=None, help="keep this many states per position")
    sp = tsub.add_parser("eval", parents=[common])
    sp.set_defaults(func=cmd_tag_eval)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--target-tags", required=True, help="comma-separated, e.g. VX,VB")
    sp.add_argument("--layer", default="pos", choices=["pos", "pos2"])
    sp = tsub.add_parser("map", parents=[common])
    sp.set_defaults(func=cmd_tag_map)
    sp.add_argument("corpus")
    sp.add_argument("--mapping", required=True)
    sp.add_argument("--default")
    sp.add_argument("--layer", default="pos", choices=["pos", "pos2"])

    def query_args(sp):
        sp.add_argument("--q", "--query", dest="query", required=True, help="query text")
        sp.add_argument("corpus")
        sp.add_argument("--syntax", choices=["native", "corpussearch"], default="native")
        sp.add_argument("--split-function-tags", action="store_true")

    sp = add("query", cmd_query, help="run a tree query and list the matches")
    query_args(sp)

    sp = add("code", cmd_code, help="extract and code clauses into a factor table")
    query_args(sp)
    sp.add_argument("--language", default="latin", choices=["latin", "oldfrench"])
    sp.add_argument("--texts")
    sp.add_argument("--sidecar")
    sp.add_argument("--verb-lexicon")
    sp.add_argument("--period", action="append", help="LABEL:LO:HI, repeatable, in temporal order")

    sp = add("fit", cmd_fit, help="logistic regression or rate of change")
    sp.add_argument("table", nargs="?")
    sp.add_argument("--table", dest="table_opt", help="same as the positional table")
    sp.add_argument("--formula", help="e.g. 'order ~ period_index + verb_class'")
    sp.add_argument("--response")
    sp.add_argument("--terms", help="terms joined by '+', used with --response")
    sp.add_argument("--time", help="term whose slope is the rate of change")
    sp.add_argument("--counts", nargs="+", help="t:successes:total triples")
    sp.add_argument("--ref", action="append")
    sp.add_argument("--weights")
    sp.add_argument("--positive")
    sp.add_argument("--plot")

    sp = add("cre", cmd_cre, help="test a common slope across contexts")
    sp.add_argument("table")
    sp.add_argument("--response", default="order")
    sp.add_argument("--time", default="period_index")
    sp.add_argument("--context", required=True)
    sp.add_argument("--periods", help="comma-separated period labels in temporal order; adds period_index")
    sp.add_argument("--weights")
    sp.add_argument("--positive", default="VO")

    sp = add("ct", cmd_ct, help="chi-square or Fisher exact test of a 2x2 table")
    sp.add_argument("--test", choices=["chi2", "fisher"], default="chi2")
    sp.add_argument("cells", nargs="+", type=float, help="a b c d, row by row")

    sp = add("ca", cmd_ca, help="correspondence analysis of a contingency table CSV")
    sp.add_argument("matrix", help="count matrix CSV (labels in the first column), or a factor table with --rows/--cols")
    sp.add_argument("--rows", help="cross-tabulate this column of a factor table...")
    sp.add_argument("--cols", help="...against this one")
    sp.add_argument("--chisq", action="store_true")
    sp.add_argument("--plot")

    sp = add("vnc", cmd_vnc, help="variability-based neighbour clustering of a time series CSV")
    sp.add_argument("series", help="CSV with a time label column followed by value columns")
    sp.add_argument("--value", help="use only this value column")
    sp.add_argument("--time", help="time column to order by and label with (default: the first column)")
    sp.add_argument("--measure", choices=["sd", "cv"], default="sd")
    sp.add_argument("-k", type=int)
    sp.add_argument("--plot")

    sp = add("hclust", cmd_hclust, help="hierarchical clustering of row profiles")
    sp.add_argument("data")
    sp.add_argument("--method", choices=["ward", "single", "complete"], default="ward")
    sp.add_argument("--plot")

    for name, func in (("citree", cmd_citree), ("rf", cmd_rf)):
        sp = add(name, func)
        sp.add_argument("table")
        sp.add_argument("--response", default="order")
        sp.add_argument("--predictors", required=True)
        sp.add_argument("--positive", default="VO")
        if name == "citree":
            sp.add_argument("--alpha", type=float, default=0.05)
            sp.add_argument("-B", type=int, default=9999)
            sp.add_argument("--min-node", type=int, default=20)
        else:
            sp.add_argument("--trees", type=int, default=500)
            sp.add_argument("--mtry", type=int)
            sp.add_argument("--plot")

    sp = add("bayes", cmd_bayes, help="hierarchical Bayesian logistic regression")
    sp.add_argument("--table", required=True)
    sp.add_argument("--response", default="order")
    sp.add_argument("--fixed", required=True, help="fixed-effect terms joined by '+', e.g. period_index+log(lemma_freq)")
    sp.add_argument("--random", help="comma-separated grouping columns")
    sp.add_argument("--periods", help="comma-separated period labels in temporal order; adds period_index")
    sp.add_argument("--ref", action="append")
    sp.add_argument("--positive", default="VO")
    sp.add_argument("--prior-precision", type=float, default=1e-12)
    sp.add_argument("--chains", type=int, default=4)
    sp.add_argument("--iters", type=int, default=10000)
    sp.add_argument("--burn", type=int, default=2000)
    sp.add_argument("--thin", type=int, default=1)
    sp.add_argument("--plot")

    sp = add("report", cmd_report, help="summary tables of a finished run")
    sp.add_argument("run_dir")

    sp = add("pipeline", cmd_pipeline, help="run every stage declared in a config file")
    sp.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    # the pipeline takes its seed from the config unless one is given
    args.seed_override = args.seed
    if args.seed is None:
        args.seed = 0
    try:
        args.func(args)
    except DiachronyError as exc:
        _fail(exc)
    except OSError as exc:
        _fail(ConfigError(getattr(exc, "filename", None) or "<io>", exc.strerror or str(exc)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
