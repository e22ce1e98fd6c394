"""Command-line interface: run experiments, compare metric files, TT microbenchmarks."""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from .experiment import compare_report, fmt, run_experiment, write_compare_csv
from .scenes import SceneConfig, parse_config_file
from .synthetic import qtt_modes, tridiagonal_oracle
from .tt import tt_cross_matrix, tt_invert_als


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttdem",
        description="Granular frictional-contact simulation with a tensor-train "
                    "accelerated interior-point solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured scene",
                         formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    run.add_argument("--config", help="flat key=value configuration file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--scene", choices=["sedimentation-mixer", "blade-draft",
                                         "shear-box"], help="scene kind")
    run.add_argument("--seed", type=int, help="random seed")
    run.add_argument("--steps", type=int, help="number of timesteps")
    run.add_argument("--n", type=int, help="lattice parameter")
    run.add_argument("--solver", choices=["pdip", "pgs", "jacobi", "apgd"])
    run.add_argument("--precond", choices=["dense", "none", "ilu0", "tt"],
                     help="inner linear solver / preconditioner for pdip")
    run.add_argument("--tt-eps", type=float, dest="tt_eps",
                     help="TT compression target accuracy")
    run.add_argument("--tt-rank-cap", type=int, dest="tt_rank_cap",
                     help="maximum TT rank")
    run.add_argument("--no-timings", action="store_true",
                     help="write zeros for wall-clock columns (byte-stable outputs)")

    cmp_p = sub.add_parser("compare", help="binned summary of metrics files",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    cmp_p.add_argument("metrics", nargs="+", help="metrics.csv files; the first is "
                       "the speedup baseline")
    cmp_p.add_argument("--out", help="summary CSV path (default: stdout)")
    cmp_p.add_argument("--labels", nargs="*", help="labels for the input files")
    cmp_p.add_argument("--bin-width", type=float, default=0.25,
                       help="log10(N_c) bin width")

    bench = sub.add_parser("tt-bench", help="standalone TT microbenchmarks",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    bench.add_argument("--out", help="output CSV path (default: stdout)")
    bench.add_argument("--tt-eps", type=float, dest="tt_eps", default=1e-2)
    bench.add_argument("--tt-rank-cap", type=int, dest="tt_rank_cap", default=8)
    bench.add_argument("--sizes", type=int, nargs="*",
                       default=[2**8, 2**9, 2**10, 2**11, 2**12, 2**13, 2**14],
                       help="power-of-two matrix sizes for the scaling study")
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    config = parse_config_file(args.config) if args.config else SceneConfig()
    overrides = {"scene": args.scene, "seed": args.seed, "steps": args.steps,
                 "n": args.n, "solver": args.solver, "precond": args.precond,
                 "tt_eps": args.tt_eps, "tt_rank_cap": args.tt_rank_cap}
    values = {k: v for k, v in overrides.items() if v is not None}
    if args.no_timings:
        values["timings"] = False
    if values:
        import dataclasses
        config = dataclasses.replace(config, **values)
    return run_experiment(config, args.out)


def _cmd_compare(args) -> int:
    rows = compare_report(args.metrics, labels=args.labels, bin_width=args.bin_width)
    if args.out:
        write_compare_csv(rows, args.out)
    else:
        write_compare_csv(rows, "/dev/stdout")
    return 0


def _cmd_tt_bench(args) -> int:
    rng_base = args.seed
    rows = []
    for n in args.sizes:
        modes = qtt_modes(n)
        oracle = tridiagonal_oracle()
        best = None
        for rep in range(args.repeats):
            rng = np.random.default_rng((rng_base, n, rep))
            t0 = time.perf_counter()
            ttm, cstats = tt_cross_matrix(oracle, modes, modes, args.tt_eps,
                                          args.tt_rank_cap, rng=rng)
            t_compress = time.perf_counter() - t0
            t0 = time.perf_counter()
            inv, astats = tt_invert_als(ttm, args.tt_eps, args.tt_rank_cap, rng=rng)
            t_invert = time.perf_counter() - t0
            total = t_compress + t_invert
            if best is None or total < best[0]:
                best = (total, t_compress, t_invert, max(ttm.ranks),
                        max(inv.ranks), cstats.validation_error, astats.residual)
        rows.append({
            "case": "tridiagonal", "n": n, "d": len(modes),
            "compress_time": best[1], "invert_time": best[2], "total_time": best[0],
            "matrix_rank": best[3], "inverse_rank": best[4],
            "compress_error": best[5], "invert_residual": best[6]})
    columns = ["case", "n", "d", "compress_time", "invert_time", "total_time",
               "matrix_rank", "inverse_rank", "compress_error", "invert_residual"]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row["case"]] + [fmt(row[c]) for c in columns[1:]])
    if args.out:
        out.close()
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "compare":
        return _cmd_compare(args)
    if args.command == "tt-bench":
        return _cmd_tt_bench(args)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
