"""Command-line interface.

Commands
--------
simulate   synthetic corpora with a truth record per replicate
fit        run the Gibbs sampler and store long-format draws
summarize  parameter summaries, predictive criteria and branching ratios
compare    one row of criteria per fit directory
ppc        posterior predictive replication of reported totals

Exit status is 0 on success, 2 for invalid input or configuration and 3
for numerical failures. Errors are also printed to stderr as one JSON
record.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import io
from .errors import MixHawkesError, NumericalError, ValidationError
from .gibbs import default_threads, run_fit
from .model import expected_cluster_size
from .rng import SCHEME
from .simulate import simulate_study

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _finish(out, command, config, seed, inputs, outputs, start, counters=None, extra=None):
    manifest = io.build_manifest(command, __version__, config, seed, SCHEME, inputs, outputs,
                                 round(time.perf_counter() - start, 3), counters, extra,
                                 root=out)
    io.write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    start = time.perf_counter()
    cfg = io.load_config(args.config)
    sim = dict(cfg["simulate"])
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    n_rep = args.replicates if args.replicates is not None else int(sim.get("replicates", 1))
    if args.m is not None:
        sim["m"] = args.m
    config = io.sim_config_from(sim)
    out = _out_dir(args.out)
    outputs = []
    for rep in simulate_study(config, seed, n_rep):
        d = out / f"rep_{rep.truth['replicate']:03d}"
        d.mkdir(exist_ok=True)
        io.emit_events(rep.dataset, d / "events.csv")
        io.emit_covariates(rep.dataset, d / "covariates.csv")
        truth = dict(rep.truth)
        truth["subjects"] = [{k: v for k, v in s.items() if k != "times"}
                             for s in truth["subjects"]]
        truth["covariates"] = {"distribution": f"Bernoulli({config.covariate_prob})",
                               "background": list(config.background_covariates),
                               "offspring": list(config.offspring_covariates)}
        io.write_json(d / "truth.json", truth)
        io.write_json(d / "config.json", {"model": io.structure_to(rep.structure)})
        outputs += [d / "events.csv", d / "covariates.csv", d / "truth.json", d / "config.json"]
    record = {"simulate": {**sim, "replicates": n_rep, "seed": seed}}
    inputs = [args.config] if args.config else []
    _finish(out, "simulate", record, seed, inputs, outputs, start)
    return EXIT_OK


def cmd_fit(args):
    start = time.perf_counter()
    cfg = io.load_config(args.config)
    dataset = io.ingest(args.events, args.covariates)
    threads = args.threads if args.threads is not None else cfg["mcmc"].get(
        "threads", default_threads())
    config = io.fit_config_from(cfg, seed=args.seed, chains=args.chains, iters=args.iters,
                                burnin=args.burnin, threads=threads)
    config = replace(config, structure=dataset.complete_structure(config.structure))
    post = run_fit(dataset, config)
    out = _out_dir(args.out)
    draws = out / ("draws.csv.gz" if args.gzip else "draws.csv")
    io.write_draws(post, draws)
    io.emit_events(dataset, out / "events.csv")
    io.emit_covariates(dataset, out / "covariates.csv")
    effective = io.effective_fit_config(config)
    io.write_json(out / "fit.json", {**effective, "subject_ids": post.subject_ids,
                                     "draws": draws.name, "init": post.init})
    outputs = [draws, out / "events.csv", out / "covariates.csv", out / "fit.json"]
    inputs = [p for p in (args.events, args.covariates, args.config) if p]
    counters = {str(c): v for c, v in enumerate(post.counters)}
    _finish(out, "fit", effective, config.seed, inputs, outputs, start, counters)
    return EXIT_OK


def load_fit(fit_dir):
    fit_dir = Path(fit_dir)
    try:
        meta = json.loads((fit_dir / "fit.json").read_text())
    except FileNotFoundError:
        raise ValidationError("not a fit directory (fit.json missing)",
                              path=str(fit_dir)) from None
    structure = io.structure_from(meta["model"])
    post = io.read_draws(fit_dir / meta["draws"], structure, meta["subject_ids"])
    return meta, post


def cmd_summarize(args):
    start = time.perf_counter()
    meta, post = load_fit(args.fit)
    out = _out_dir(args.out)
    rows = dg.summarize(post, prob=args.prob, transformed=args.transformed)
    summary = _write_csv(out / "summary.csv",
                         ("name", "mean", "sd", "hpd_lower", "hpd_upper", "rhat", "degenerate"),
                         [(r.name, io.fmt(r.mean), io.fmt(r.sd), io.fmt(r.hpd_lower),
                           io.fmt(r.hpd_upper), io.fmt(r.rhat), int(r.degenerate))
                          for r in rows])
    metrics = dg.fit_metrics(post.loglik)
    crit = _write_csv(out / "metrics.csv", ("criterion", "value"),
                      [(k, io.fmt(v)) for k, v in (
                          ("DIC", metrics.dic), ("p_DIC", metrics.p_dic), ("WAIC", metrics.waic),
                          ("p_WAIC", metrics.p_waic), ("WAIC_SE", metrics.waic_se),
                          ("LOO", metrics.loo), ("p_LOO", metrics.p_loo),
                          ("LOO_SE", metrics.loo_se), ("-LPML", metrics.neg_lpml),
                          ("n_flagged", int(metrics.flagged.sum())))])
    pointwise = _write_csv(out / "metrics_pointwise.csv",
                           ("subject_id", "p_waic", "p_loo", "pareto_k", "flagged"),
                           [(s, io.fmt(a), io.fmt(b), io.fmt(k), int(f)) for s, a, b, k, f in
                            zip(post.subject_ids, metrics.pointwise_p_waic,
                                metrics.pointwise_p_loo, metrics.pareto_k, metrics.flagged)])
    # branching ratio and cluster size at every offspring covariate set to 0
    r = dg.global_branching_ratio(post).ravel()
    offspring_rows = [("branching_ratio", r)]
    if np.all(r < 1):
        offspring_rows.append(("cluster_size", expected_cluster_size(r)))
    off = []
    for name, d in offspring_rows:
        lo, hi = dg.hpd_interval(d, args.prob)
        off.append((name, io.fmt(np.median(d)), io.fmt(lo), io.fmt(hi)))
    offspring = _write_csv(out / "offspring.csv", ("name", "median", "hpd_lower", "hpd_upper"),
                           off)
    fit_dir = Path(args.fit)
    inputs = [fit_dir / "fit.json", fit_dir / meta["draws"]]
    _finish(out, "summarize", {"prob": args.prob, "transformed": args.transformed}, None,
            inputs, [summary, crit, pointwise, offspring], start)
    return EXIT_OK


def cmd_compare(args):
    start = time.perf_counter()
    labels = args.labels.split(",") if args.labels else [Path(f).name for f in args.fits]
    if len(labels) != len(args.fits):
        raise ValidationError("need one label per fit directory")
    out = _out_dir(args.out)
    rows, inputs = [], []
    for label, fit in zip(labels, args.fits):
        meta, post = load_fit(fit)
        m = dg.fit_metrics(post.loglik)
        rows.append((label, io.fmt(m.dic), io.fmt(m.waic), io.fmt(m.loo), io.fmt(m.neg_lpml)))
        inputs += [Path(fit) / "fit.json", Path(fit) / meta["draws"]]
    table = _write_csv(out / "criteria.csv", ("model", "DIC", "WAIC", "LOO", "-LPML"), rows)
    _finish(out, "compare", {"labels": labels}, None, inputs, [table], start)
    return EXIT_OK


def cmd_ppc(args):
    start = time.perf_counter()
    meta, post = load_fit(args.fit)
    fit_dir = Path(args.fit)
    events = args.events or fit_dir / "events.csv"
    covariates = args.covariates or fit_dir / "covariates.csv"
    dataset = io.ingest(events, covariates)
    if dataset.subject_ids != post.subject_ids:
        raise ValidationError("dataset subjects do not match the fit")
    wanted = [s for s in (args.daily or "").split(",") if s]
    index = {s: i for i, s in enumerate(dataset.subject_ids)}
    unknown = [s for s in wanted if s not in index]
    if unknown:
        raise ValidationError(f"unknown subjects for daily series: {unknown}")
    seed = args.seed if args.seed is not None else 0
    rep = dg.posterior_predictive(post, dataset, n_rep=args.reps, seed=seed,
                                  daily_subjects=[index[s] for s in wanted])
    out = _out_dir(args.out)
    totals = _write_csv(out / "ppc.csv", ("subject_id", "rep", "total", "observed", "capped"),
                        [(sid, r, int(rep.totals[r, i]), int(rep.observed[i]),
                          int(rep.capped[r, i]))
                         for i, sid in enumerate(dataset.subject_ids)
                         for r in range(args.reps)])
    outputs = [totals]
    if wanted:
        daily_rows = []
        for s in wanted:
            series = rep.cumulative[index[s]]
            for r in range(args.reps):
                daily_rows += [(s, r, d + 1, int(v)) for d, v in enumerate(series[r])]
        outputs.append(_write_csv(out / "ppc_daily.csv",
                                  ("subject_id", "rep", "day", "cumulative"), daily_rows))
    inputs = [fit_dir / "fit.json", fit_dir / meta["draws"], events, covariates]
    _finish(out, "ppc", {"reps": args.reps, "daily": wanted}, seed, inputs, outputs, start,
            {"capped_draws": int(rep.capped.sum())})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="mixhawkes", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate study replicates")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--m", type=int, help="subjects per replicate")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the Gibbs sampler")
    f.add_argument("--events", required=True)
    f.add_argument("--covariates")
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--iters", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--threads", type=int,
                   help="worker processes (default: $MIXHAWKES_THREADS or 1)")
    f.add_argument("--gzip", action="store_true", help="compress the draws file")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="posterior summaries of a fit")
    m.add_argument("fit")
    m.add_argument("--out", required=True)
    m.add_argument("--prob", type=float, default=0.95)
    m.add_argument("--transformed", action="store_true",
                   help="exponentiate coefficients and invert precisions")
    m.set_defaults(func=cmd_summarize)

    c = sub.add_parser("compare", help="predictive criteria across fits")
    c.add_argument("fits", nargs="+")
    c.add_argument("--out", required=True)
    c.add_argument("--labels", help="comma-separated model labels")
    c.set_defaults(func=cmd_compare)

    q = sub.add_parser("ppc", help="posterior predictive replication")
    q.add_argument("fit")
    q.add_argument("--out", required=True)
    q.add_argument("--events")
    q.add_argument("--covariates")
    q.add_argument("--seed", type=int)
    q.add_argument("--reps", type=int, default=200)
    q.add_argument("--daily", help="comma-separated subject ids for cumulative series")
    q.set_defaults(func=cmd_ppc)
    return p


def _error_record(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "path", "chain", "sweep", "operation"):
        v = getattr(exc, attr, None)
        if v is not None:
            rec[attr] = v if isinstance(v, (int, float, str)) else str(v)
    return rec


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MixHawkesError, FileNotFoundError) as exc:
        code = EXIT_NUMERICAL if isinstance(exc, NumericalError) else EXIT_VALIDATION
        print(json.dumps(_error_record(exc, code), sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
