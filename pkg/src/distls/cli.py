"""Command line: ``distls run|validate|lemma-check|plot``.

Exit codes: 0 success, 1 lemma violation or missing metrics, 2 config error,
3 numerical failure inside an estimator or matrix routine.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import ConfigError, IoFailure, MissingMetrics, NumericalError
from .matrix_toolkit import DEFAULT_REL_TOL, LEMMAS, run_lemma_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distls", description="Distributed least-squares simulation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo experiment from a TOML config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output.dir)")
    run.add_argument("--workers", type=int, help="worker processes (overrides output.workers)")
    run.add_argument("--no-plots", action="store_true")

    val = sub.add_parser("validate", help="parse and cross-check a config without running it")
    val.add_argument("config")

    lem = sub.add_parser("lemma-check", help="randomized check of a matrix inequality")
    lem.add_argument("--lemma", choices=LEMMAS + ("all",), default="all")
    lem.add_argument("--draws", type=int, default=1000)
    lem.add_argument("--m", type=_int_list, default=(1, 2, 3), help="block sizes, e.g. 1,2,3")
    lem.add_argument("--n", type=_int_list, default=(2, 3, 5), help="node counts, e.g. 2,3,5")
    lem.add_argument("--seed", type=int, default=0)
    lem.add_argument("--rel-tol", type=float, default=DEFAULT_REL_TOL)

    plot = sub.add_parser("plot", help="render SVG figures from a run directory")
    plot.add_argument("summary_dir")
    return parser


def _cmd_run(args) -> int:
    from .harness.config import validate_config
    from .harness.runner import run_experiment

    config = validate_config(args.config)
    output = config.output
    changes = {}
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.no_plots:
        changes["plots"] = False
    if changes:
        from dataclasses import replace

        config = config.replace(output=replace(output, **changes))
    summary = run_experiment(config, out_dir=args.out)
    print(f"{config.name}: {config.runs} runs x T={config.horizon} -> {summary.out_dir}")
    for alg in summary.algorithms:
        final = summary.mean_sq_error[alg][-1]
        print(f"  {alg:<20} mean final sq error per node: "
              + " ".join(f"{v:.4g}" for v in final)
              + f"   mean accumulated regret: {np.mean(summary.accumulated_regret[alg]):.4g}")
    print(f"  wall time {summary.wall_time:.2f} s")
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .harness.config import validate_config

    config = validate_config(args.config)
    sc = config.scenario
    print(f"{args.config}: ok")
    print(f"  name={config.name} n={sc.n} m={sc.m} T={config.horizon} R={config.runs} "
          f"cadence={config.record_cadence} algorithms={','.join(config.algorithms)}")
    print(f"  regressors={type(sc.regressors).__name__} diameter={config.topology.diameter} "
          f"a_min={config.topology.a_min:.6g}")
    return EXIT_OK


def _cmd_lemma(args) -> int:
    lemmas = LEMMAS if args.lemma == "all" else (args.lemma,)
    failed = False
    for lemma in lemmas:
        rep = run_lemma_suite(lemma, draws=args.draws, m_values=args.m, n_values=args.n,
                              seed=args.seed, rel_tol=args.rel_tol)
        status = "ok" if rep.passed else "VIOLATED"
        print(f"{lemma:<24} draws={rep.draws:<6} violations={rep.violations:<4} "
              f"worst_margin={rep.worst_margin:.3e}  {status}")
        failed |= not rep.passed
    return EXIT_FAIL if failed else EXIT_OK


def _cmd_plot(args) -> int:
    from .harness.plots import emit_plots

    for path in emit_plots(args.summary_dir):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "validate": _cmd_validate, "lemma-check": _cmd_lemma, "plot": _cmd_plot}
    try:
        return handler[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MissingMetrics, IoFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
