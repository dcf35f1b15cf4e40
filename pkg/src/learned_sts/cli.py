"""``learned-sts`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .models.rmi import DEFAULT_BUDGETS
from .tables import LEVEL_SIZES, SYNTHETIC_KINDS


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("-v", "--verbose", action="store_true")


def _bench_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", nargs="+", type=Path, help="dataset files written by gen-dataset")
    p.add_argument("--level", action="append", choices=list(LEVEL_SIZES), help="only these levels")
    p.add_argument("--queries", type=int, default=bench.DEFAULT_QUERIES)
    p.add_argument("--reps", type=int, default=1, help="timed repetitions per cell (median)")
    p.add_argument("--train-reps", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="learned-sts", description="Learned sorted table search benchmarks")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth-source", help="write a synthetic SOSD key file")
    p.add_argument("kind", choices=SYNTHETIC_KINDS)
    p.add_argument("n", type=int)
    p.add_argument("--width", type=int, choices=(32, 64), default=64)
    _common(p)

    p = sub.add_parser("gen-dataset", help="sample a level-sized table with KS/KL screening")
    p.add_argument("source", type=Path)
    p.add_argument("--level", choices=list(LEVEL_SIZES), required=True)
    p.add_argument("--name")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--width", type=int, choices=(32, 64), default=64)
    p.add_argument("--size", type=int, help="override the level's table size")
    p.add_argument("--full-scale", action="store_true", help="L4 uses the whole source")
    _common(p)

    p = sub.add_parser("mine-syrmi", help="build RMI candidate grids and mine the SY-RMI spec")
    p.add_argument("data", nargs="+", type=Path)
    p.add_argument("--level", choices=list(LEVEL_SIZES), required=True)
    p.add_argument("--queries", type=int, default=bench.DEFAULT_QUERIES, help="full query count; 1%% is used")
    _common(p)

    p = sub.add_parser("bench-constant", help="constant-space models and search routines")
    _bench_flags(p)
    p.add_argument("--k", type=int, action="append", help="KO segment count (repeatable)")
    p.add_argument("--kary", type=int, default=6, help="k of the k-ary searches")
    p.add_argument("--models", nargs="+", choices=bench.CONSTANT_MODELS, default=list(bench.CONSTANT_MODELS))
    p.add_argument("--methods", nargs="+", choices=bench.CONSTANT_METHODS, default=list(bench.CONSTANT_METHODS))
    _common(p)

    p = sub.add_parser("bench-parametric", help="SY-RMI, bi-criteria PGM and best-of-class models")
    _bench_flags(p)
    p.add_argument("--budget", type=float, action="append", help="space budget in %% (repeatable)")
    p.add_argument("--cutoff", type=float, default=bench.DEFAULT_CUTOFF_PCT)
    p.add_argument("--a", type=float, action="append", help="bi-criteria multiplier (repeatable)")
    p.add_argument("--syrmi", type=Path, help="spec file or directory of syrmi_<level>.json")
    _common(p)

    p = sub.add_parser("report", help="merge JSON reports into CSV and plot-data tables")
    p.add_argument("reports", nargs="+", type=Path)
    _common(p)
    return ap


def _config(args, **kw) -> bench.RunConfig:
    levels = getattr(args, "level", None) or tuple(LEVEL_SIZES)
    if isinstance(levels, str):
        levels = (levels,)
    return bench.RunConfig(
        data=list(getattr(args, "data", [])),
        levels=tuple(levels),
        seed=args.seed,
        queries=getattr(args, "queries", bench.DEFAULT_QUERIES),
        reps=getattr(args, "reps", 1),
        train_reps=getattr(args, "train_reps", 5),
        out=args.out,
        **kw,
    )


def _print_rows(report: bench.BenchReport) -> None:
    for r in report.rows:
        print(
            f"{r.dataset:>12} {r.level} {r.model:>10} {r.method:>8} "
            f"space={r.space_pct:8.4f}% rf={r.rf_pct:8.4f}% q={r.query_ns_avg:8.1f}ns {r.flag}"
        )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (bench.BenchError, ValueError, FileNotFoundError) as e:
        print(f"learned-sts: error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.cmd == "synth-source":
        path = bench.cmd_synth_source(args.kind, args.n, args.out, args.seed, args.width)
        print(path)
        return 0

    if args.cmd == "gen-dataset":
        path, report = bench.cmd_gen(
            args.source, args.level, args.out, args.name, args.seed, args.trials,
            args.alpha, args.bins, args.width, args.size, args.full_scale,
        )
        print(path)
        print(f"accepted {report.accepted}/{report.trials} ({report.acceptance_pct:.0f}%), "
              f"chosen KL {report.chosen_kl:.4g}")
        return 0

    if args.cmd == "mine-syrmi":
        cfg = _config(args)
        spec, pool_path, spec_path = bench.cmd_mine(args.level, args.data, cfg)
        print(json.dumps(spec.to_dict()))
        print(spec_path)
        return 0

    if args.cmd == "bench-constant":
        cfg = _config(
            args,
            k_values=tuple(args.k or (15,)),
            kary_k=args.kary,
            models=tuple(args.models),
            methods=tuple(args.methods),
        )
        report = bench.cmd_bench_constant(cfg)
        path = report.save(Path(args.out) / "bench_constant.json")
        _print_rows(report)
        print(path)
        return 0 if report.all_verified else 1

    if args.cmd == "bench-parametric":
        cfg = _config(
            args,
            budgets=tuple(args.budget or DEFAULT_BUDGETS),
            cutoff_pct=args.cutoff,
            a_values=tuple(args.a or bench.DEFAULT_A_VALUES),
            syrmi=args.syrmi,
        )
        report = bench.cmd_bench_parametric(cfg)
        path = report.save(Path(args.out) / "bench_parametric.json")
        _print_rows(report)
        print(path)
        return 0 if report.all_verified else 1

    if args.cmd == "report":
        for name, path in bench.cmd_report(args.reports, args.out).items():
            print(f"{name}: {path}")
        return 0
    raise AssertionError(args.cmd)


if __name__ == "__main__":
    sys.exit(main())
