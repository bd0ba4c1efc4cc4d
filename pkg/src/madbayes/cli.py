"""Command-line entry point: ``madbayes <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import data_io, oracle
from .model import ObjectiveBreakdown, SolveResult
from .objectives import asymptotic_gap, least_squares_means
from .priors import ModelKind
from .solvers import Problem, SolverConfig, run_restarts, stepwise_k_features

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

DEFAULT_SIGMA2_GRID = (1e-2, 1e-3, 1e-4, 1e-5)

# Small fixed instance used by ``verify-asymptotics``: two nearby points and one far away.
ASYMPTOTIC_X = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
ASYMPTOTIC_CLUSTERS = np.array([[1, 0], [1, 0], [0, 1]])
ASYMPTOTIC_FEATURES = np.array([[1, 0], [1, 0], [1, 1]])


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(text: str) -> Optional[int]:
    if text == "entropy":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned integer or 'entropy', got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not (value > 0 and np.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive finite number, got {text}")
    return value


def _add_io(p, *, output_help="result file (stdout when omitted)"):
    p.add_argument("--input", required=True, metavar="PATH", help="numeric CSV, one row per data point")
    p.add_argument("--header", action="store_true", help="skip the first line of the input")
    p.add_argument("--output", metavar="PATH", help=output_help)


def _add_run(p, *, lam=True, k=False):
    _add_io(p)
    if lam:
        p.add_argument("--lambda2", type=_positive_float, required=True, metavar="F")
    if k:
        p.add_argument("--k", type=_positive_int, required=True, metavar="N")
    p.add_argument("--restarts", type=_positive_int, default=1, metavar="N")
    p.add_argument("--seed", type=_seed, default=0, metavar="U64", help="base seed or 'entropy' (default 0)")
    p.add_argument("--max-iters", type=_positive_int, default=500, metavar="N")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--summary", action="store_true", help="print per-run seconds, total seconds and final K")
    p.add_argument("--threads", type=_positive_int, default=None, metavar="N",
                   help="worker threads for restarts (default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="madbayes", description="Small-variance asymptotic clustering and feature learning.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    for name, help_text in (("dpmeans", "DP-means hard clustering"),
                            ("bpmeans", "BP-means feature learning"),
                            ("collapsed-dp", "clustering with means integrated out"),
                            ("collapsed-bp", "feature learning with means integrated out"),
                            ("stepwise", "K-features for increasing K, scored with a per-feature penalty")):
        _add_run(sub.add_parser(name, help=help_text))
    _add_run(sub.add_parser("kfeatures", help="fixed-K feature learning"), lam=False, k=True)
    _add_run(sub.add_parser("mahalanobis", help="K-means with per-cluster covariances"), k=True)

    p = sub.add_parser("synth", help="generate planted linear-Gaussian data")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--true-k", type=int, required=True, help="feature count including the base feature")
    p.add_argument("--noise", type=float, default=0.0, help="noise standard deviation")
    p.add_argument("--p", type=float, default=0.5, help="membership probability of non-base features")
    p.add_argument("--no-base", action="store_true", help="omit the all-ones base feature")
    p.add_argument("--mean-scale", type=_positive_float, default=1.0)
    p.add_argument("--seed", type=_seed, default=0, metavar="U64")
    p.add_argument("--output", required=True, metavar="PATH")
    p.add_argument("--truth", metavar="PATH", help="also write the planted allocation and means as JSON")

    p = sub.add_parser("pca", help="project centered data onto its top principal directions")
    _add_io(p, output_help="CSV of scores (stdout when omitted)")
    p.add_argument("--components", type=_positive_int, required=True)

    p = sub.add_parser("verify-asymptotics", help="print the (sigma2, ratio) convergence table")
    p.add_argument("--model", choices=("crp", "ibp", "collapsed-crp", "collapsed-ibp"), required=True)
    p.add_argument("--lambda2", type=_positive_float, default=1.0, metavar="F")
    p.add_argument("--rho2", type=_positive_float, default=1.0)
    p.add_argument("--sigma2", type=_positive_float, nargs="+", default=list(DEFAULT_SIGMA2_GRID))
    p.add_argument("--output", metavar="PATH")

    p = sub.add_parser("oracle", help="exhaustive global optimum for tiny inputs")
    _add_io(p)
    p.add_argument("--lambda2", type=_positive_float, required=True, metavar="F")
    p.add_argument("--mode", choices=("cluster", "feature"), default="cluster")
    p.add_argument("--k", type=_positive_int, default=3, metavar="N", help="feature cap for --mode feature")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _emit_result(result: SolveResult, args) -> None:
    if args.output:
        data_io.write_result(result, args.output, args.format)
        return
    if args.format == "json":
        sys.stdout.write(json.dumps(data_io.result_to_dict(result), indent=2) + "\n")
    else:
        sys.stdout.write("row,features\n")
        for n, row in enumerate(result.allocation.Z):
            sys.stdout.write(f"{n},{';'.join(str(k) for k in np.flatnonzero(row))}\n")


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is None:
        return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
    return seed


def _run_solver(args) -> int:
    X = data_io.load_csv(args.input, args.header)
    cfg = SolverConfig(max_iters=args.max_iters, restarts=args.restarts, base_seed=_resolve_seed(args.seed),
                       threads=args.threads or os.cpu_count() or 1)
    t0 = time.perf_counter()
    if args.command == "stepwise":
        result = stepwise_k_features(X, args.lambda2, cfg)
        runs = None
    else:
        problem = Problem(args.command, X, getattr(args, "lambda2", None), getattr(args, "k", None))
        result, runs = run_restarts(problem, cfg, return_all=True)
    total = time.perf_counter() - t0
    result.runtime_ms = 1e3 * total
    _emit_result(result, args)
    if args.summary:
        per_run = total / args.restarts if runs is None else float(np.mean([r.runtime_ms for r in runs])) / 1e3
        stream = sys.stdout if args.output else sys.stderr
        print("per_run_seconds,total_seconds,final_k", file=stream)
        print(f"{per_run:.6f},{total:.6f},{result.K}", file=stream)
    return EXIT_OK


def _run_synth(args) -> int:
    spec = data_io.SyntheticSpec(N=args.n, D=args.d, true_k=args.true_k, noise_sigma=args.noise, p=args.p,
                                 include_base=not args.no_base, seed=_resolve_seed(args.seed),
                                 mean_scale=args.mean_scale)
    X, Z, A = data_io.synth_linear_gaussian(spec)
    data_io.save_csv(args.output, X)
    if args.truth:
        truth = {"Z": Z.astype(int).tolist(), "means": A.tolist(), "seed": spec.seed}
        with open(args.truth, "w") as fh:
            json.dump(truth, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def _run_pca(args) -> int:
    X = data_io.load_csv(args.input, args.header)
    scores = data_io.pca_reduce(X, args.components)
    if args.output:
        data_io.save_csv(args.output, scores)
    else:
        for row in scores:
            sys.stdout.write(",".join(repr(float(v)) for v in row) + "\n")
    return EXIT_OK


def asymptotic_table(model: str, lambda2: float = 1.0, sigma2_grid=DEFAULT_SIGMA2_GRID, rho2: float = 1.0):
    """``(sigma2, ratio)`` pairs for the built-in three-point instance."""
    kind = ModelKind(model)
    Z = ASYMPTOTIC_CLUSTERS if kind.clustering else ASYMPTOTIC_FEATURES
    A = least_squares_means(ASYMPTOTIC_X, Z)
    return asymptotic_gap(kind, ASYMPTOTIC_X, Z, A, lambda2, sigma2_grid, rho2=rho2)


def _run_asymptotics(args) -> int:
    grid = sorted(set(args.sigma2), reverse=True)
    rows = asymptotic_table(args.model, args.lambda2, grid, args.rho2)
    lines = ["sigma2,ratio,abs_gap"] + [f"{s2!r},{r!r},{abs(r - 1.0)!r}" for s2, r in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _run_oracle(args) -> int:
    X = data_io.load_csv(args.input, args.header)
    t0 = time.perf_counter()
    if args.mode == "cluster":
        alloc, value = oracle.oracle_dp_optimum(X, args.lambda2)
        penalty = (alloc.K - 1) * args.lambda2
    else:
        alloc, value = oracle.oracle_bp_optimum(X, args.lambda2, args.k)
        penalty = alloc.K * args.lambda2
        if not oracle.oracle_is_exact(X, args.lambda2, args.k):
            print(f"note: optimum is over allocations with at most {args.k} features", file=sys.stderr)
    means = least_squares_means(X, alloc.Z) if alloc.K else np.zeros((0, X.shape[1]))
    result = SolveResult(f"oracle-{args.mode}", alloc, means, ObjectiveBreakdown(value - penalty, penalty),
                         0, True, None, args.lambda2, [], 1e3 * (time.perf_counter() - t0))
    _emit_result(result, args)
    return EXIT_OK


_HANDLERS = {
    "synth": _run_synth,
    "pca": _run_pca,
    "verify-asymptotics": _run_asymptotics,
    "oracle": _run_oracle,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    handler = _HANDLERS.get(args.command, _run_solver)
    try:
        return handler(args)
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"madbayes {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
