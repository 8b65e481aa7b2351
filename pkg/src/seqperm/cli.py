"""Command-line entry point: ``seqperm {test,simulate,maxt,bound,bench}``.

Exit status: 0 on success, 1 for data or I/O problems, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .engine import EngineConfig, adaptive_B, run, worst_case_avg_bound
from .errors import ConfigurationError, DataError, InvalidArgumentError, SeqPermError
from .io import (RunManifest, filter_zero_genes, ingest_matrix,
                 normalize_library_size, results_table)
from .pvalue_core import AvBcParams, BesagCliffordParams, BinMixParams, ClassicalParams
from .stats_perm import PermutationLosses

STRATEGIES = ("classical", "bc", "avbc", "aggressive", "binmix")


def make_strategy(name, h=10, b=0.9, B=None):
    """(strategy params, permutation cap) for a CLI strategy name."""
    if name == "classical":
        return ClassicalParams(B or 10000), None
    if name == "bc":
        return BesagCliffordParams(h, B or 10000), None
    if name == "avbc":
        return AvBcParams(h), B
    if name == "aggressive":
        return AvBcParams(1), B
    if name == "binmix":
        return BinMixParams(b), B
    raise InvalidArgumentError(f"unknown strategy {name!r}")


def strategy_from_dict(d):
    kinds = {c.__name__: c for c in (ClassicalParams, BesagCliffordParams, AvBcParams, BinMixParams)}
    d = dict(d)
    return kinds[d.pop("__type__")](**d)


def _add_data_args(p):
    p.add_argument("input", nargs="?", help="samples x hypotheses matrix (tsv or csv)")
    p.add_argument("--format", choices=("tsv", "csv"), default=None)
    p.add_argument("--label-col", default=None)
    p.add_argument("--labels", default=None, help="file with one 0/1 label per line")
    p.add_argument("--sample-col", action="store_true", help="first column holds sample ids")
    p.add_argument("--normalize", action="store_true", help="divide by library size")
    p.add_argument("--filter-zeros", action="store_true", help="drop all-zero columns")
    p.add_argument("--statistic", choices=("mann-whitney", "mean-diff"), default="mann-whitney")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqperm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="sequential permutation testing on a data matrix")
    _add_data_args(t)
    t.add_argument("--alpha", type=float, default=0.1)
    t.add_argument("--strategy", choices=STRATEGIES, default="avbc")
    t.add_argument("--h", type=int, default=10)
    t.add_argument("--b", type=float, default=0.9)
    t.add_argument("--B-max", dest="B_max", type=int, default=None,
                   help="B for classical/BC, permutation cap otherwise")
    t.add_argument("--batch", type=int, default=1)
    t.add_argument("--stream-mode", choices=("independent", "shared"), default="independent")
    t.add_argument("--procedure", choices=("bh", "by", "holm"), default="bh")
    t.add_argument("--two-sided", action="store_true")
    t.add_argument("--alternative", choices=("greater", "less"), default="greater")
    t.add_argument("--out", default="results.tsv")
    t.add_argument("--manifest", default=None, help="defaults to <out>.manifest.json")
    t.add_argument("--from-manifest", default=None, help="re-run the configuration of a manifest")

    s = sub.add_parser("simulate", help="Gaussian mean-model simulation")
    s.add_argument("--M", type=int, default=1000)
    s.add_argument("--pi-A", dest="pi_A", type=float, default=0.4)
    s.add_argument("--mu-A", dest="mu_A", type=float, default=2.5)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=int, default=10)
    s.add_argument("--b", type=float, default=0.9)
    s.add_argument("--B", type=int, default=10000, help="classical and BC budget")
    s.add_argument("--cap", type=int, default=10000)
    s.add_argument("--methods", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    s.add_argument("--emit-csv", default=None)

    m = sub.add_parser("maxt", help="sequential MaxT (FWER) on a data matrix")
    _add_data_args(m)
    m.add_argument("--alpha", type=float, default=0.1)
    m.add_argument("--c", type=float, default=None, help="mixing parameter, default alpha/2")
    m.add_argument("--B-max", dest="B_max", type=int, default=10000)
    m.add_argument("--out", default="maxt.tsv")

    b = sub.add_parser("bound", help="adaptive thresholds and the worst-case mean bound")
    b.add_argument("--M", type=int, nargs="+", default=[1000])
    b.add_argument("--h", type=int, default=10)
    b.add_argument("--alpha", type=float, default=0.1)

    be = sub.add_parser("bench", help="compare strategies on synthetic count data")
    be.add_argument("--n", type=int, default=100)
    be.add_argument("--M", type=int, default=1000)
    be.add_argument("--alpha", type=float, default=0.1)
    be.add_argument("--h", type=int, default=10)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--strategies", nargs="+", choices=STRATEGIES,
                    default=["avbc", "aggressive", "binmix"])
    return ap


def _load_data(ns):
    if not ns.input:
        raise InvalidArgumentError("an input matrix is required")
    if not Path(ns.input).exists():
        raise DataError(f"input file not found: {ns.input}")
    ds = ingest_matrix(ns.input, ns.format, ns.label_col, ns.labels, ns.sample_col)
    if ns.normalize:
        ds = normalize_library_size(ds)
    removed = []
    if ns.filter_zeros:
        ds, removed = filter_zero_genes(ds)
    if ds.M == 0:
        raise DataError("no hypotheses left to test")
    return ds, removed


_REPLAY_KEYS = ("input", "format", "label_col", "labels", "sample_col", "normalize",
                "filter_zeros", "statistic", "alternative", "two_sided", "seed")


def cmd_test(ns) -> int:
    if ns.from_manifest:
        man = RunManifest.read(ns.from_manifest)
        for k in _REPLAY_KEYS:
            if k in man.inputs:
                setattr(ns, k, man.inputs[k])
        cfg_d = dict(man.config)
        cfg_d.pop("__type__", None)
        cfg_d["strategy"] = strategy_from_dict(cfg_d["strategy"])
        cfg = EngineConfig(**cfg_d)
    else:
        strategy, cap = make_strategy(ns.strategy, ns.h, ns.b, ns.B_max)
        cfg = EngineConfig(alpha=ns.alpha, strategy=strategy, procedure=ns.procedure,
                           max_permutations=cap, batch_size=ns.batch, seed=ns.seed,
                           stream_mode=ns.stream_mode, two_sided=ns.two_sided)
    ds, removed = _load_data(ns)
    t0 = time.perf_counter()
    mk = lambda alt: PermutationLosses(ds, ns.statistic, cfg.seed, cfg.stream_mode, alt)
    if cfg.two_sided:
        res = run(cfg, (mk("greater"), mk("less")))
    else:
        res = run(cfg, mk(ns.alternative))
    dur = time.perf_counter() - t0
    out = Path(ns.out)
    out.write_text(results_table(res, ds.names))
    inputs = {k: getattr(ns, k) for k in _REPLAY_KEYS}
    inputs["input"] = str(Path(ns.input).resolve())
    if ns.labels:
        inputs["labels"] = str(Path(ns.labels).resolve())
    inputs["removed"] = removed
    man_path = Path(ns.manifest) if ns.manifest else out.with_name(out.name + ".manifest.json")
    RunManifest.build(cfg, res, ds.names, dur, inputs).write(man_path)
    print(f"{len(res.rejections)} of {ds.M} rejected; {res.total_permutations} permutations; "
          f"{dur:.2f}s -> {out}")
    return 0


def cmd_simulate(ns) -> int:
    from .sim import GaussianSimConfig, MethodSpec, run_experiment, write_metrics_csv

    cfg = GaussianSimConfig(ns.M, ns.pi_A, ns.mu_A, ns.rho, ns.alpha, ns.reps, ns.seed)
    methods = []
    for name in ns.methods:
        strategy, cap = make_strategy(name, ns.h, ns.b, ns.B if name in ("classical", "bc") else ns.cap)
        methods.append(MethodSpec(name, strategy, cap))
    records = run_experiment(cfg, methods)
    print("method\tpower\tfdr\tavg_permutations")
    for r in records:
        print(f"{r.method}\t{r.power:.4f}\t{r.fdr:.4f}\t{r.avg_permutations:.1f}")
    if ns.emit_csv:
        write_metrics_csv(records, ns.emit_csv)
    return 0


def cmd_maxt(ns) -> int:
    from .maxt import SharedPermutationStatistics, maxt_sequential, sorted_source

    ds, _ = _load_data(ns)
    c = ns.c if ns.c is not None else ns.alpha / 2
    src, order = sorted_source(SharedPermutationStatistics(ds, ns.statistic, ns.seed))
    res = maxt_sequential(src, c, ns.alpha, ns.B_max)
    names = [ds.names[j] for j in order]
    Path(ns.out).write_text(results_table(res, names))
    print(f"{len(res.rejections)} of {ds.M} rejected (FWER {ns.alpha}) -> {ns.out}")
    return 0


def cmd_bound(ns) -> int:
    print("M\th\talpha\tB_1\tB_M\tworst_case_avg_bound\trounded")
    for M in ns.M:
        w = worst_case_avg_bound(M, ns.h, ns.alpha)
        print(f"{M}\t{ns.h}\t{ns.alpha:g}\t{adaptive_B(1, M, ns.h, ns.alpha)}\t"
              f"{adaptive_B(M, M, ns.h, ns.alpha)}\t{w:.4f}\t{round(w)}")
    return 0


def cmd_bench(ns) -> int:
    from .sim import synthetic_counts

    ds, shifted, _ = synthetic_counts(ns.n, ns.M, seed=ns.seed)
    print("strategy\tseconds\trejections\ttotal_permutations")
    for name in ns.strategies:
        strategy, cap = make_strategy(name, ns.h, 0.9, 10000)
        cfg = EngineConfig(alpha=ns.alpha, strategy=strategy, max_permutations=cap, seed=ns.seed)
        t0 = time.perf_counter()
        res = run(cfg, PermutationLosses(ds, "mann-whitney", ns.seed))
        print(f"{name}\t{time.perf_counter() - t0:.3f}\t{len(res.rejections)}\t{res.total_permutations}")
    return 0


COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "maxt": cmd_maxt,
            "bound": cmd_bound, "bench": cmd_bench}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[ns.command](ns)
    except InvalidArgumentError as exc:
        print(f"seqperm: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ConfigurationError, OSError, json.JSONDecodeError) as exc:
        print(f"seqperm: {exc}", file=sys.stderr)
        return 1
    except SeqPermError as exc:
        print(f"seqperm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
