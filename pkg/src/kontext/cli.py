"""Command-line entry point.

Subcommands: generate, ingest, estimate, train, evaluate, benchmark, sweep,
lr-test. Single results print JSON to stdout; sweeps and benchmarks write
CSV files. Exit codes: 0 success, 1 domain error (budget exceeded, sampling
exhausted, parse failure) with a one-line diagnostic on stderr, 2 usage
errors (argparse). All file outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import experiments as exp
from . import hmm as hmm_mod
from . import mps as mps_mod
from .errors import KontextError
from .estimators import build_hypergraph, coloring_estimate, exact_bruteforce, greedy_estimate
from .generators import GhzSpec, RandomModelSpec, ghz_model, noncontextual_model, random_model
from .ingest import WindowedModelSpec, load_corpus, pad_sequences, windowed_model
from .model import load_model, save_model, write_atomic


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{v} is not a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kontext",
        description="Strong k-contextuality estimation and sequence-model benchmarks",
    )
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("generate", help="generate a benchmark empirical model",
                       formatter_class=fmt)
    g.add_argument("--family", choices=["random", "ghz", "noncontextual"], required=True)
    g.add_argument("--n", type=_positive_int, default=4,
                   help="size parameter (contexts/observables/outcomes or particles)")
    g.add_argument("--sparsity", type=_positive_int, default=2,
                   help="support size per context (random family)")
    g.add_argument("--target-k", type=int, default=None,
                   help="resample random models until this contextuality number")
    g.add_argument("--max-resamples", type=_positive_int, default=100_000,
                   help="rejection-sampling attempt cap for --target-k")
    g.add_argument("--contexts", type=_positive_int, default=4,
                   help="context count (noncontextual family)")
    g.add_argument("--obs", type=_positive_int, default=3,
                   help="observables per context (noncontextual family)")
    g.add_argument("--seed", type=int, default=0, help="RNG seed")
    g.add_argument("--out", required=True, help="output model JSON path")

    i = sub.add_parser("ingest", help="build an empirical model from a token corpus",
                       formatter_class=fmt)
    i.add_argument("corpus", help="corpus file path")
    i.add_argument("--format", choices=["plain", "fasta", "csv"], default="plain")
    i.add_argument("--alphabet", default=None, help="explicit token alphabet, e.g. acgt")
    i.add_argument("--csv-column", type=int, default=0, help="sequence column for csv format")
    i.add_argument("--n", type=_positive_int, required=True, help="prefix/continuation length")
    i.add_argument("--stride", type=_positive_int, default=1, help="window step")
    i.add_argument("--min-count", type=_positive_int, default=2,
                   help="minimum occurrences for a prefix to become a context")
    i.add_argument("--pad-to", type=int, default=None,
                   help="pad each window half to this length with uniform tokens")
    i.add_argument("--seed", type=int, default=0, help="padding RNG seed")
    i.add_argument("--out", required=True, help="output model JSON path")

    e = sub.add_parser("estimate", help="estimate the contextuality number",
                       formatter_class=fmt)
    e.add_argument("model", help="model JSON path")
    e.add_argument("--method", choices=["exact", "greedy", "coloring"], default="greedy")
    e.add_argument("--perms", type=_positive_int, default=100,
                   help="sampled orderings for the greedy method")
    e.add_argument("--seed", type=int, default=0, help="ordering RNG seed")
    e.add_argument("--max-rank", type=int, default=None,
                   help="hyperedge rank cap (coloring; default sparsity + 1)")
    e.add_argument("--budget", type=int, default=10_000_000,
                   help="section-enumeration node budget")
    e.add_argument("--perm-budget", type=int, default=100_000,
                   help="ordering budget for the exact method")

    t = sub.add_parser("train", help="fit a sequence model to an empirical model",
                       formatter_class=fmt)
    t.add_argument("model", help="target model JSON path")
    t.add_argument("--model-class", dest="model_class", choices=["hmm", "qhmm"],
                   required=True, help="classical latent-state model or Born machine")
    t.add_argument("--states", "--bond-dim", dest="dim", type=_positive_int, default=2,
                   help="latent-state count / bond dimension")
    t.add_argument("--restarts", type=_positive_int, default=1, help="training restarts")
    t.add_argument("--steps", type=_positive_int, default=2000,
                   help="gradient steps (qhmm)")
    t.add_argument("--lr", type=float, default=0.01, help="learning rate (qhmm)")
    t.add_argument("--max-iters", type=_positive_int, default=500,
                   help="EM iteration cap (hmm)")
    t.add_argument("--tol", type=float, default=1e-7, help="EM convergence tolerance")
    t.add_argument("--seed", type=int, default=0, help="init RNG seed")
    t.add_argument("--out", required=True, help="trained model path (.json for hmm, .bin for qhmm)")
    t.add_argument("--report", default=None, help="optional JSON training report path")

    v = sub.add_parser("evaluate", help="score a trained model against a target",
                       formatter_class=fmt)
    v.add_argument("model", help="target model JSON path")
    v.add_argument("--hmm", default=None, help="trained classical model JSON path")
    v.add_argument("--qhmm", default=None, help="trained Born-machine binary path")

    b = sub.add_parser("benchmark", help="benchmark estimators on generated models",
                       formatter_class=fmt)
    b.add_argument("--n", type=_positive_int, default=5, help="model size")
    b.add_argument("--sparsity", type=_positive_int, default=2, help="support size")
    b.add_argument("--count", type=_positive_int, default=20, help="models per setting")
    b.add_argument("--methods", default="exact,greedy,coloring",
                   help="comma-separated methods")
    b.add_argument("--perms", type=_positive_int, default=1,
                   help="greedy orderings per model")
    b.add_argument("--seed", type=int, default=0, help="generation seed")
    b.add_argument("--out", required=True, help="output CSV path")

    s = sub.add_parser("sweep", help="classical/quantum KL gap sweep",
                       formatter_class=fmt)
    s.add_argument("--config", required=True, help="TOML sweep configuration")
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--dims", default=None,
                   help="override: comma-separated bond/state dims")
    s.add_argument("--seed", type=int, default=None, help="override: base seed")
    s.add_argument("--workers", type=int, default=None,
                   help="parallel cells (default KONTEXT_THREADS or 1)")

    l = sub.add_parser("lr-test", help="likelihood-ratio test from per-token log-likelihoods",
                       formatter_class=fmt)
    l.add_argument("--ll-classical", type=float, required=True,
                   help="classical per-token average log-likelihood")
    l.add_argument("--ll-quantum", type=float, required=True,
                   help="quantum per-token average log-likelihood")
    l.add_argument("--tokens", type=_positive_int, required=True, help="dataset token count")
    l.add_argument("--df", type=_positive_int, required=True, help="degrees of freedom")
    return p


def _cmd_generate(args) -> int:
    if args.family == "random":
        model = random_model(RandomModelSpec(
            n=args.n, sparsity=args.sparsity, seed=args.seed, target_k=args.target_k,
            max_resamples=args.max_resamples,
        ))
    elif args.family == "ghz":
        model = ghz_model(GhzSpec(args.n))
    else:
        model = noncontextual_model(args.contexts, args.obs, args.seed)
    save_model(model, args.out)
    print(json.dumps({
        "family": args.family, "contexts": len(model.contexts),
        "observables": model.num_observables, "outcomes": model.num_outcomes,
        "out": args.out,
    }))
    return 0


def _cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus, args.format, alphabet=args.alphabet,
                         csv_column=args.csv_column)
    spec = WindowedModelSpec(n=args.n, stride=args.stride, min_count=args.min_count,
                             pad_to=args.pad_to, pad_seed=args.seed)
    model = windowed_model(corpus, spec)
    save_model(model, args.out)
    print(json.dumps({
        "sequences": len(corpus.sequences), "alphabet": "".join(corpus.alphabet),
        "contexts": len(model.contexts), "observables": model.num_observables,
        "out": args.out,
    }))
    return 0


def _cmd_estimate(args) -> int:
    model = load_model(args.model)
    t0 = time.perf_counter()
    trace = None
    certificate = None
    if args.method == "exact":
        k, cert = exact_bruteforce(model, permutation_budget=args.perm_budget,
                                   node_budget=args.budget, seed=args.seed)
        certificate = cert
    elif args.method == "greedy":
        est = greedy_estimate(model, args.perms, args.seed, node_budget=args.budget)
        k, trace, certificate = est.final_k, est.best_so_far, est.certificate
    else:
        k, classes, hg = coloring_estimate(model, max_rank=args.max_rank,
                                           node_budget=args.budget)
        certificate = classes
    runtime_ms = (time.perf_counter() - t0) * 1000.0
    out = {"method": args.method, "k": k, "runtime_ms": runtime_ms}
    if trace is not None:
        out["trace"] = [list(t) for t in trace]
    if args.method == "coloring":
        out["certificate"] = certificate
        out["subset_checks"] = hg.subset_checks
        out["edges"] = len(hg.edges)
    elif certificate is not None:
        out["certificate"] = {
            "parts": [list(p) for p in certificate.parts],
            "witnesses": [dict(w.assignment) for w in certificate.witness_sections],
        }
    print(json.dumps(out))
    return 0


def _cmd_train(args) -> int:
    target = load_model(args.model)
    if args.model_class == "hmm":
        best = exp.train_classical_best(target, args.dim, restarts=args.restarts,
                                        base_seed=args.seed, max_iters=args.max_iters,
                                        tol=args.tol)
        h, rep = best
        hmm_mod.save_hmm(h, args.out)
        report = {
            "model_class": "hmm", "states": args.dim,
            "final_kl": exp._fmt(rep.final_kl), "iterations": rep.iterations,
            "converged": rep.converged, "out": args.out,
        }
        if args.report:
            write_atomic(args.report, json.dumps({
                **report, "log_likelihoods": list(rep.log_likelihoods),
            }) + "\n")
    else:
        best = exp.train_quantum_best(target, args.dim, restarts=args.restarts,
                                      base_seed=args.seed, steps=args.steps, lr=args.lr)
        qm, qrep = best
        mps_mod.save_mps(qm, args.out)
        report = {
            "model_class": "qhmm", "bond_dim": args.dim,
            "final_kl": exp._fmt(qrep.final_kl), "steps": len(qrep.nll_trace),
            "out": args.out,
        }
        if args.report:
            write_atomic(args.report, json.dumps({
                **report,
                "nll_trace": list(qrep.nll_trace),
                "grad_norms": list(qrep.grad_norms),
            }) + "\n")
    print(json.dumps(report))
    return 0


def _cmd_evaluate(args) -> int:
    target = load_model(args.model)
    if (args.hmm is None) == (args.qhmm is None):
        raise KontextError("provide exactly one of --hmm / --qhmm")
    if args.hmm:
        h = hmm_mod.load_hmm(args.hmm)
        scores = exp.evaluate_classical(target, h)
    else:
        qm = mps_mod.load_mps(args.qhmm)
        scores = exp.evaluate_quantum(target, qm)
    print(json.dumps({k: exp._fmt(v) if isinstance(v, float) else v
                      for k, v in scores.items()}))
    return 0


def _cmd_benchmark(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    models = []
    for i in range(args.count):
        m = random_model(RandomModelSpec(n=args.n, sparsity=args.sparsity,
                                         seed=args.seed + i))
        models.append((f"random-n{args.n}-s{args.sparsity}-{args.seed + i}",
                       "random", args.n, args.sparsity, m))
    rows = exp.estimator_benchmark(models, methods=methods,
                                   greedy_permutations=args.perms, seed=args.seed)
    write_atomic(args.out, exp.benchmark_csv(rows))
    agree = sum(1 for r in rows if r.k_est == r.k_true)
    print(json.dumps({"rows": len(rows), "exact_matches": agree, "out": args.out}))
    return 0


def _load_toml(path: str) -> dict:
    try:
        import tomllib  # python >= 3.11
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except ModuleNotFoundError:
        import toml
        with open(path, "r", encoding="utf-8") as fh:
            return toml.load(fh)


def _cmd_sweep(args) -> int:
    cfg = _load_toml(args.config)
    families = cfg.get("models", [])
    if not families:
        raise KontextError("sweep config has no [[models]] entries")
    sweep_cfg = cfg.get("sweep", {})
    dims = args.dims or sweep_cfg.get("dims", [2, 4])
    if isinstance(dims, str):
        dims = [int(d) for d in dims.split(",")]
    seed = args.seed if args.seed is not None else int(sweep_cfg.get("seed", 0))
    trainers = cfg.get("trainers", {})
    models = exp.build_sweep_models(
        families,
        estimate_with=sweep_cfg.get("estimator", "greedy"),
        estimate_perms=int(sweep_cfg.get("estimator_perms", 100)),
        seed=seed,
    )
    spec = exp.SweepSpec(
        models=models,
        dims=tuple(int(d) for d in dims),
        restarts_classical=int(trainers.get("restarts_classical", 5)),
        restarts_quantum=int(trainers.get("restarts_quantum", 3)),
        seed=seed,
        em_max_iters=int(trainers.get("em_max_iters", 500)),
        em_tol=float(trainers.get("em_tol", 1e-7)),
        q_steps=int(trainers.get("q_steps", 2000)),
        q_lr=float(trainers.get("q_lr", 0.01)),
        df_override=trainers.get("df"),
    )
    records = exp.gap_sweep(spec, workers=args.workers)
    exp.write_sweep_csv(records, args.out)
    print(json.dumps({"cells": len(records), "out": args.out}))
    return 0


def _cmd_lr_test(args) -> int:
    res = exp.likelihood_ratio_test(args.ll_classical, args.ll_quantum,
                                    args.tokens, args.df)
    print(json.dumps({
        "statistic": res.statistic, "df": res.df, "p_value": res.p_value,
        "reject_at_3sigma": res.reject_at_3sigma, "n_tokens": res.n_tokens,
        "scale": res.scale,
    }))
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "ingest": _cmd_ingest,
    "estimate": _cmd_estimate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark,
    "sweep": _cmd_sweep,
    "lr-test": _cmd_lr_test,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except KontextError as err:
        print(f"kontext: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"kontext: {err}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
