"""Command-line interface: ``dtmm {fit,simulate,summarize,classify,transform,eval}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .classify import ClassifierModel, train
from .io import (OtuTable, chain_header, fmt, match_labels, read_chain, read_labels,
                 read_otu_table, write_chain, write_json, write_labels, write_matrix,
                 write_otu_table)
from .marginal import QuadGrid
from .metrics import jaccard_index, r_squared, relative_abundance, rmse_jaccard
from .sampler import GibbsSampler, PosteriorChain, PriorConfig, Trace
from .simgen import T6_NEWICK, ScenarioConfig, generate
from .summaries import (activation_means, centroids, coclustering, least_squares_clustering,
                        otu_importance)
from .tree import NewickError, inverse_tree_ratio_transform, read_newick, tree_ratio_transform

THREADS_ENV = "DTMM_THREADS"


def _tau_grid(text: str):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LOG10_MIN:LOG10_MAX:STEP, e.g. -1:4:0.5") from None
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError("need LOG10_MAX >= LOG10_MIN and STEP > 0")
    return lo, hi, step


def _floats(text: str):
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _prior_args(p):
    p.add_argument("--iters", type=int, default=2000, help="total sweeps T")
    p.add_argument("--burnin", type=int, default=1000, help="discarded sweeps B")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-theta", type=int, default=128, help="theta quadrature nodes")
    p.add_argument("--tau-grid", type=_tau_grid, default=(-1.0, 4.0, 0.5),
                   help="log10 tau support as MIN:MAX:STEP")
    p.add_argument("--theta0", type=float, default=0.5)
    p.add_argument("--nu0", type=float, default=1.0)
    p.add_argument("--a0", type=float, default=1.0)
    p.add_argument("--b0", type=float, default=1.0)
    p.add_argument("--init-clusters", type=int, default=5)


def _config(args) -> PriorConfig:
    lo, hi, step = args.tau_grid
    return PriorConfig(
        theta0=args.theta0, nu0=args.nu0, a0=args.a0, b0=args.b0,
        n_theta=args.grid_theta, log10_tau_min=lo, log10_tau_max=hi, log10_tau_step=step,
        iterations=args.iters, burn_in=args.burnin, init_clusters=args.init_clusters,
        seed=args.seed,
    )


def _run_chain(counts, newick, config, seed_seq):
    from .tree import parse_newick

    tree = parse_newick(newick)
    trace = Trace()
    sampler = GibbsSampler(counts, tree, config, np.random.default_rng(seed_seq))
    chain = sampler.run(trace=trace)
    return chain, trace.as_array()


def _load(args):
    tree = read_newick(args.tree, resolve=getattr(args, "resolve", False))
    table = read_otu_table(args.table).align(tree)
    table = table.filter_rows(getattr(args, "min_row_total", 0))
    return tree, table


def _write_summaries(out: Path, tree, table: OtuTable, chains, grid: QuadGrid, raw: bool):
    merged = PosteriorChain.concat(chains)
    pi = coclustering(merged)
    labels, t0 = least_squares_clustering(merged, pi)
    idx = int(np.flatnonzero(merged.t == t0)[0])
    gamma_rep = merged.s[idx]
    write_matrix(out / "pi_hat.csv", table.sample_ids, pi)
    write_labels(out / "cls.csv", table.sample_ids, labels)
    write_json(out / "activation.json", {
        "nodes": tree.node_table().splitlines()[1:],
        "mean": activation_means(merged).tolist(),
    })
    cent = centroids(table.counts, tree, labels, gamma_rep, grid)
    write_json(out / "centroids.json", {"iteration": t0, **cent.to_dict(tree)})
    if np.unique(labels).size > 1:
        y = table.counts if raw else relative_abundance(table.counts)
        score = otu_importance(y, labels)
        with open(out / "importance.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["otu", "importance"])
            for otu, v in zip(table.otu_ids, score):
                w.writerow([otu, "" if np.isnan(v) else fmt(v)])
    return labels, t0


def cmd_fit(args) -> int:
    tree, table = _load(args)
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(args.chains)
    jobs = max(1, min(args.jobs, args.chains))
    work = [(table.counts, tree.to_newick(), config, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_chain, *zip(*work)))
    else:
        results = [_run_chain(*w) for w in work]
    chains = [r[0] for r in results]
    header = chain_header(tree, table, config.to_dict(), len(chains))
    write_chain(out / "chain.jsonl", header, chains)
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", "n_clusters", "n_active", "beta", "lambda"])
        for ci, (_, tr) in enumerate(results):
            for it, row in enumerate(tr, start=1):
                w.writerow([ci, it, int(row[0]), int(row[1]), fmt(row[2]), fmt(row[3])])
    labels, t0 = _write_summaries(out, tree, table, chains, config.grid(), args.raw)
    print(f"kept {sum(len(c) for c in chains)} draws; C_LS from iteration {t0} "
          f"with {np.unique(labels).size} clusters; outputs in {out}")
    return 0


def cmd_summarize(args) -> int:
    header, chains = read_chain(args.chain)
    tree, table = _load(args)
    if header["tree"] != tree.digest():
        raise ValueError("the chain was fitted on a different tree")
    if header["data"] != table.digest():
        raise ValueError("the chain was fitted on a different table")
    cfg = PriorConfig(**header["config"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels, t0 = _write_summaries(out, tree, table, chains, cfg.grid(), args.raw)
    print(f"C_LS from iteration {t0} with {np.unique(labels).size} clusters; outputs in {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = ScenarioConfig(scenario=args.scenario, level=args.level, n=args.n,
                         null=args.null, seed=args.seed)
    ds = generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = ds.sample_ids
    write_otu_table(OtuTable(ids, list(ds.tree.leaves), ds.counts), out / "table.tsv")
    write_labels(out / "labels.csv", ids, ds.labels)
    (out / "tree.nwk").write_text(T6_NEWICK + "\n", encoding="utf-8")
    print(f"wrote {len(ids)} samples to {out}")
    return 0


def cmd_classify_train(args) -> int:
    tree, table = _load(args)
    ids, labels = read_labels(args.labels)
    labels = match_labels(table.sample_ids, ids, labels)
    lo, hi, step = args.tau_grid
    grid = QuadGrid.build(args.grid_theta, log10_tau_min=lo, log10_tau_max=hi, log10_tau_step=step)
    model = train(table.counts, labels, tree, grid, lambda0=args.lambda0)
    Path(args.model).write_text(model.to_json(), encoding="utf-8")
    print(f"trained on {len(labels)} samples in {len(model.classes)} classes")
    return 0


def cmd_classify_predict(args) -> int:
    model = ClassifierModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    table = read_otu_table(args.table).align(model.tree)
    rows = [model.predict(y) for y in table.counts]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["sample_id"] + [str(c) for c in model.classes])
    for sid, p in zip(table.sample_ids, rows):
        w.writerow([sid] + [fmt(v) for v in p])
    return 0


def cmd_transform(args) -> int:
    tree = read_newick(args.tree)
    values = args.values
    if args.inverse:
        out = inverse_tree_ratio_transform(tree, values)
    else:
        out = tree_ratio_transform(tree, values)
    print(",".join(fmt(v) for v in np.atleast_1d(out)))
    return 0


def cmd_eval(args) -> int:
    ids, labels = read_labels(args.labels)
    tids, truth = read_labels(args.truth)
    truth = match_labels(ids, tids, truth)
    j = jaccard_index(labels, truth)
    print(f"jaccard={fmt(j)}")
    print(f"rmse={fmt(rmse_jaccard([j]))}")
    if args.table:
        table = read_otu_table(args.table)
        lab = match_labels(table.sample_ids, ids, labels)
        print(f"r_squared={fmt(r_squared(table.counts, lab))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtmm", description="Dirichlet-tree multinomial mixtures")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the Gibbs sampler and write summaries")
    p.add_argument("--table", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolve", action="store_true", help="binarize multifurcations")
    p.add_argument("--min-row-total", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="importance on raw counts")
    p.add_argument("--jobs", type=int, default=int(os.environ.get(THREADS_ENV, "1")))
    _prior_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="recompute summaries from a chain file")
    p.add_argument("--chain", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolve", action="store_true")
    p.add_argument("--min-row-total", type=int, default=0)
    p.add_argument("--raw", action="store_true")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    p.add_argument("--scenario", choices=["I", "II", "III", "IV", "V"], required=True)
    p.add_argument("--level", choices=["W", "M", "S"], default="M")
    p.add_argument("--n", type=int, default=90)
    p.add_argument("--null", action="store_true", help="single cluster")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("classify", help="supervised classification")
    csub = p.add_subparsers(dest="action", required=True)
    t = csub.add_parser("train")
    t.add_argument("--table", required=True)
    t.add_argument("--tree", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--model", required=True)
    t.add_argument("--lambda0", type=float, default=0.5)
    t.add_argument("--grid-theta", type=int, default=128)
    t.add_argument("--tau-grid", type=_tau_grid, default=(-1.0, 4.0, 0.5))
    t.set_defaults(func=cmd_classify_train)
    t = csub.add_parser("predict")
    t.add_argument("--model", required=True)
    t.add_argument("--table", required=True)
    t.set_defaults(func=cmd_classify_predict)

    p = sub.add_parser("transform", help="tree ratio transform and its inverse")
    p.add_argument("--tree", required=True)
    p.add_argument("--inverse", action="store_true")
    p.add_argument("values", type=_floats)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("eval", help="compare a clustering with the truth")
    p.add_argument("--labels", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--table")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, NewickError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
