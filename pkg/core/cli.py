"""Command-line surface: gen, maxnorm, argmax, verify, bench and rates."""

import argparse
import csv
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.argmax import binary_search_argmax
from core.container import load_tensor, save_tensor
from core.errors import EstimatorError, OracleMismatch, ValidationError, ZeroTensorError
from core.ht_arith import (
    add, dot, hadamard, ht_qr, norm, scale, slice, truncate,
)
from core.ht_core import (
    HtTensor, adversarial_tensor, balanced_tree, cheb_tensor, counterexample_matrix, from_elementary,
    linear_tree, random_ht, random_normal_ht,
)
from core.maxnorm import ALGORITHMS, IterationConfig, adaptive_maxnorm, convergence_rate
from core.oracle import (
    densify, dense_add, dense_dot, dense_from_frames, dense_hadamard, dense_maxnorm_argmax, dense_scale,
    dense_slice, matricization_singular_values, pattern_maxnorm_argmax,
)
from core.settings import Settings, load_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ESTIMATOR = 3
EXIT_MISMATCH = 4

FAMILIES = ("rand", "randn", "cheb", "counterexample", "adversarial", "elementary")
VERIFY_TOL = 1e-10
BENCH_FIELDS = ["family", "d", "n", "alg", "seconds", "rel_err"]
RATE_FIELDS = ["seed", "alg", "rate", "rel_err", "status"]


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}")


def _rank_arg(text: Optional[str]):
    if text is None:
        return None
    values = _int_list(text)
    if not values:
        raise ValidationError("empty --rank")
    return values[0] if len(values) == 1 else values


def _vectors_arg(text: str) -> List[List[float]]:
    try:
        return [[float(v) for v in part.split(",")] for part in text.split(";")]
    except ValueError:
        raise ValidationError(f"--vectors must look like '1,2;3,4', got {text!r}")


def _require(args, *names):
    missing = [f"--{name}" for name in names if getattr(args, name) is None]
    if missing:
        raise ValidationError(f"family {args.family} needs {', '.join(missing)}")


def build_tensor(args) -> HtTensor:
    """Load --input or generate the requested family"""
    if args.input and args.family:
        raise ValidationError("give either --input or --family, not both")
    if args.input:
        return load_tensor(args.input)
    if not args.family:
        raise ValidationError("no tensor source: give --input or --family")

    make_tree = linear_tree if args.tree == "linear" else balanced_tree
    family = args.family
    if family == "rand":
        _require(args, "d", "n", "r")
        return random_ht(args.d, args.n, args.r, args.seed, tree=make_tree(args.d))
    if family == "randn":
        _require(args, "sizes", "r")
        sizes = _int_list(args.sizes)
        return random_normal_ht(sizes, args.r, args.seed, tree=make_tree(len(sizes)))
    if family == "cheb":
        _require(args, "d", "n")
        return cheb_tensor(args.d, args.n, tree=make_tree(args.d))
    if family == "counterexample":
        _require(args, "n")
        return counterexample_matrix(args.n, args.sigma1, args.sigma2)
    if family == "adversarial":
        d = args.d or 10
        return adversarial_tensor(d, args.n or 8, args.seed, args.spike, tree=make_tree(d))
    _require(args, "vectors")
    vectors = _vectors_arg(args.vectors)
    return from_elementary(vectors, tree=make_tree(len(vectors)))


def _iteration_config(args, settings: Settings, a: Optional[HtTensor] = None, **extra) -> IterationConfig:
    cfg = IterationConfig.from_settings(
        settings,
        max_iters=getattr(args, "max_iters", None),
        ranks=_rank_arg(getattr(args, "rank", None)),
        tolerance=getattr(args, "tol", None),
        subspace_size=getattr(args, "k", None),
        ritz_steps=getattr(args, "ritz_steps", None),
        **extra,
    )
    if a is not None and not cfg.truncating and a.size > settings.dense_cap:
        # exact iterates grow to the matricization ranks
        logger.info(f"{a.size:.3g} entries exceed the dense cap; working rank {settings.working_rank} "
                    f"(override with --rank or --tol)")
        cfg = replace(cfg, ranks=int(settings.working_rank))
    return cfg


def cmd_gen(args, settings: Settings) -> int:
    a = build_tensor(args)
    path = save_tensor(a, args.output)
    print(f"wrote {a!r} to {path}")
    return EXIT_OK


def cmd_maxnorm(args, settings: Settings) -> int:
    a = build_tensor(args)
    cfg = _iteration_config(args, settings, a, trace_ritz=True if args.trace else None)
    result = ALGORITHMS[args.alg](a, cfg)
    truth = None
    if args.truth == "dense":
        truth, _ = dense_maxnorm_argmax(densify(a, settings.dense_cap))
    elif args.truth == "pattern":
        truth, _ = pattern_maxnorm_argmax(a, settings.dense_cap)

    print(f"algorithm: {args.alg}")
    print(f"estimate: {result.value!r}")
    print(f"status: {result.trace.status}")
    print(f"steps: {result.trace.records[-1].iteration}")
    print(f"max truncation error: {result.trace.max_trunc_err:.3e}")
    if truth is not None:
        print(f"true max-norm: {truth!r}")
        print(f"relative error: {abs(truth - result.value) / truth:.3e}")
        rate = convergence_rate(result.trace, truth)
        print(f"rate: {'n/a' if rate is None else f'{rate:.4f}'}")
    if args.trace:
        path = result.trace.to_csv(args.trace, truth)
        print(f"trace: {path}")
    if result.trace.status == "truncation-cap-exceeded":
        logger.warning(f"truncation error exceeded the cap {cfg.trunc_err_cap:g}; estimate may not be a lower bound")
    return EXIT_OK


def cmd_argmax(args, settings: Settings) -> int:
    a = build_tensor(args)
    cfg = _iteration_config(args, settings, a)
    result = binary_search_argmax(a, cfg)
    taken = [name for name, on in result.shortcuts.items() if on]
    print(f"index: {','.join(str(i) for i in result.index)}")
    print(f"value: {result.value!r}")
    print(f"estimated max-norm: {result.estimated_maxnorm!r}")
    print(f"iterations: {result.iterations_used} (bound {result.bound})")
    print(f"evaluations: {result.evaluations}")
    print(f"shortcuts: {', '.join(taken) if taken else 'none'}")
    return EXIT_OK


def _rel_diff(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ref = max(float(np.linalg.norm(y)), 1e-300)
    return float(np.linalg.norm(x - y)) / ref


def verification_checks(a: HtTensor, seed: int, cap: int) -> List[Tuple[str, float]]:
    """Relative discrepancy of every HT operation against the dense oracle"""
    y = random_normal_ht(a.mode_sizes, 2, seed, tree=a.tree)
    da, dy = densify(a, cap), densify(y, cap)
    checks = [
        ("entry", _rel_diff(da.values, dense_from_frames(a, cap).values)),
        ("dot", _rel_diff(dot(a, y), dense_dot(da, dy))),
        ("norm", _rel_diff(norm(a), np.sqrt(dense_dot(da, da)))),
        ("hadamard", _rel_diff(densify(hadamard(a, y), cap).values, dense_hadamard(da, dy).values)),
        ("add", _rel_diff(densify(add(a, y), cap).values, dense_add(da, dy).values)),
        ("scale", _rel_diff(densify(scale(a, -2.5), cap).values, dense_scale(da, -2.5).values)),
    ]
    half = (1, max(1, a.mode_sizes[0] // 2))
    checks.append(("slice", _rel_diff(densify(slice(a, 1, half), cap).values, dense_slice(da, 1, half).values)))

    if a.d > 1:
        z, report = truncate(a, 1)
        worst = 0.0
        total = max(dense_dot(da, da), 1e-300)
        for node in a.tree.nodes[1:]:
            sv = matricization_singular_values(da, node.modes)
            tail = float(np.sum(sv[1:] ** 2))
            worst = max(worst, abs(report.discarded[node.id] - tail) / total)
        checks.append(("truncate energies", worst))
        actual = _rel_diff(densify(z, cap).values, da.values)
        checks.append(("truncate bound", max(0.0, actual - report.rel_error)))

    qr = ht_qr([a, y])
    dq = np.column_stack([densify(q, cap).values for q in qr.q_tensors])
    gram = dq.T @ dq
    checks.append(("ht_qr orthonormal", float(np.max(np.abs(gram - np.eye(gram.shape[0]))))))
    rebuilt = dq @ qr.r_factor
    checks.append(("ht_qr reconstruct", _rel_diff(rebuilt, np.column_stack([da.values, dy.values]))))

    for n, s1, s2 in ((3, 2.0, 1.0), (5, 4.0, 1.0), (10, 9.0, 2.0)):
        z, report = truncate(counterexample_matrix(n, s1, s2), 1)
        top, _ = dense_maxnorm_argmax(densify(z, cap))
        closed = np.sqrt(s2 ** 2 / (s1 ** 2 + s2 ** 2))
        checks.append((f"counterexample ({n},{s1:g},{s2:g})",
                       max(abs(report.rel_error - closed), abs(top - s1 / (n - 1)))))
    return checks


def cmd_verify(args, settings: Settings) -> int:
    a = build_tensor(args)
    checks = verification_checks(a, args.seed + 1, settings.dense_cap)
    failed = []
    for name, err in checks:
        ok = err <= VERIFY_TOL
        print(f"{'PASS' if ok else 'FAIL'}  {name:<28} {err:.3e}")
        if not ok:
            failed.append(name)
    if failed:
        raise OracleMismatch(f"{len(failed)} check(s) disagree with the dense oracle: {', '.join(failed)}")
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def _timed(fn: Callable[[], float], repeats: int) -> Tuple[float, float]:
    seconds, rel_err = [], 0.0
    for _ in range(repeats):
        start = time.perf_counter()
        rel_err = fn()
        seconds.append(time.perf_counter() - start)
    return statistics.median(seconds), rel_err


def bench_rows(sweep: str, values: Sequence[int], fixed: int, cfg: IterationConfig, repeats: int) -> List[Dict]:
    """Median wall times of the adaptive estimator and the argmax search on cheb tensors (max-norm 1)"""
    rows = []
    for value in values:
        d, n = (value, fixed) if sweep == "d" else (fixed, value)
        a = cheb_tensor(d, n)
        runs = {
            "adaptive": lambda: abs(1.0 - adaptive_maxnorm(a, cfg).value),
            "argmax": lambda: abs(1.0 - abs(binary_search_argmax(a, cfg).value)),
        }
        for alg, fn in runs.items():
            seconds, rel_err = _timed(fn, repeats)
            logger.info(f"bench cheb d={d} n={n} {alg}: {seconds:.3f}s, rel_err={rel_err:.2e}")
            rows.append({"family": "cheb", "d": d, "n": n, "alg": alg,
                         "seconds": f"{seconds:.6f}", "rel_err": f"{rel_err:.6e}"})
    return rows


def _write_rows(path: Optional[str], fieldnames: List[str], rows: List[Dict]):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        f = open(path, "w", newline="", encoding="utf-8")
    else:
        f = sys.stdout
    try:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    finally:
        if path:
            f.close()


def cmd_bench(args, settings: Settings) -> int:
    if args.rank is None:
        args.rank = str(settings.bench.get("rank", 5))
    cfg = _iteration_config(args, settings)
    repeats = args.repeats or int(settings.bench.get("repeats", 3))
    values = _int_list(args.values)
    fixed = args.n if args.sweep == "d" else args.d
    rows = bench_rows(args.sweep, values, fixed, cfg, repeats)
    _write_rows(args.output, BENCH_FIELDS, rows)
    return EXIT_OK


def rate_rows(seeds: Sequence[int], d: int, n: int, r: int, algs: Sequence[str], cfg: IterationConfig) -> List[Dict]:
    """Convergence rate and final error per seeded rand instance, exact max-norm from the row patterns"""
    rows = []
    for seed in seeds:
        a = random_ht(d, n, r, seed)
        truth, _ = pattern_maxnorm_argmax(a)
        for alg in algs:
            try:
                result = ALGORITHMS[alg](a, cfg)
            except EstimatorError as e:
                logger.warning(f"seed {seed} {alg}: {e}")
                rows.append({"seed": seed, "alg": alg, "rate": "", "rel_err": "", "status": e.status})
                continue
            rate = convergence_rate(result.trace, truth)
            rows.append({"seed": seed, "alg": alg, "rate": "" if rate is None else f"{rate:.6f}",
                         "rel_err": f"{abs(truth - result.value) / truth:.6e}", "status": result.trace.status})
    return rows


def cmd_rates(args, settings: Settings) -> int:
    cfg = _iteration_config(args, settings)
    algs = [a.strip() for a in args.algs.split(",") if a.strip()]
    unknown = [a for a in algs if a not in ALGORITHMS]
    if unknown:
        raise ValidationError(f"unknown algorithm(s) {unknown}; choose from {sorted(ALGORITHMS)}")
    rows = rate_rows(range(args.first_seed, args.first_seed + args.seeds), args.d, args.n, args.r, algs, cfg)
    _write_rows(args.output, RATE_FIELDS, rows)
    return EXIT_OK


def _add_source(p: argparse.ArgumentParser):
    src = p.add_argument_group("tensor source")
    src.add_argument("-i", "--input", help="JSON tensor container to load")
    src.add_argument("--family", choices=FAMILIES, help="generate a tensor of this family instead")
    src.add_argument("--d", type=int, help="order (number of modes)")
    src.add_argument("--n", type=int, help="mode size")
    src.add_argument("--r", type=int, help="representation rank (rand, randn)")
    src.add_argument("--seed", type=int, default=0, help="random seed")
    src.add_argument("--sizes", help="comma-separated mode sizes (randn)")
    src.add_argument("--sigma1", type=float, default=2.0, help="block level (counterexample)")
    src.add_argument("--sigma2", type=float, default=1.0, help="corner value (counterexample)")
    src.add_argument("--spike", type=float, default=1.9, help="entry (1,...,1) of the adversarial tensor")
    src.add_argument("--vectors", help="factor vectors of an elementary tensor, e.g. '1,-3;2,1'")
    src.add_argument("--tree", choices=("balanced", "linear"), default="balanced", help="dimension tree")


def _add_iteration(p: argparse.ArgumentParser):
    it = p.add_argument_group("iteration")
    it.add_argument("--rank", help="working rank: one integer or a per-node list")
    it.add_argument("--tol", type=float, help="relative truncation tolerance (instead of --rank)")
    it.add_argument("--max-iters", type=int, help="iteration limit (settings file when omitted)")
    it.add_argument("--k", type=int, help="Rayleigh-Ritz subspace size")
    it.add_argument("--ritz-steps", type=int, help="Ritz steps per adaptive cycle")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="htmax", formatter_class=fmt,
                                     description="Maximum norm and argmax of tensors in hierarchical Tucker format")
    parser.add_argument("--config", help="settings JSON (default config/htmax.json or HTMAX_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a generated tensor to a JSON container", formatter_class=fmt)
    _add_source(p)
    p.add_argument("-o", "--output", required=True, help="container path")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("maxnorm", help="estimate the maximum norm", formatter_class=fmt)
    _add_source(p)
    _add_iteration(p)
    p.add_argument("--alg", choices=sorted(ALGORITHMS), default="adaptive", help="estimator")
    p.add_argument("--trace", help="write the convergence trace CSV here")
    p.add_argument("--truth", choices=("none", "dense", "pattern"), default="none",
                   help="exact max-norm source for relative errors")
    p.set_defaults(handler=cmd_maxnorm)

    p = sub.add_parser("argmax", help="locate a maximal entry by binary search", formatter_class=fmt)
    _add_source(p)
    _add_iteration(p)
    p.set_defaults(handler=cmd_argmax)

    p = sub.add_parser("verify", help="check the HT arithmetic against the dense oracle", formatter_class=fmt)
    _add_source(p)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("bench", help="runtime scaling of the adaptive estimator and argmax on cheb tensors",
                       formatter_class=fmt)
    _add_iteration(p)
    p.add_argument("--sweep", choices=("d", "n"), default="d", help="parameter to vary")
    p.add_argument("--values", default="4,8,16", help="comma-separated sweep values")
    p.add_argument("--d", type=int, default=8, help="order when sweeping n")
    p.add_argument("--n", type=int, default=100, help="mode size when sweeping d")
    p.add_argument("--repeats", type=int, help="timings per point (median reported)")
    p.add_argument("-o", "--output", help="CSV path (stdout when omitted)")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("rates", help="convergence rates over seeded rand tensors", formatter_class=fmt)
    _add_iteration(p)
    p.add_argument("--d", type=int, default=8, help="order")
    p.add_argument("--n", type=int, default=20, help="mode size")
    p.add_argument("--r", type=int, default=3, help="representation rank")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--first-seed", type=int, default=0, help="first seed")
    p.add_argument("--algs", default="pi,ritz,squaring", help="comma-separated estimators")
    p.add_argument("-o", "--output", help="CSV path (stdout when omitted)")
    p.set_defaults(handler=cmd_rates)
    return parser


def _configure_logging(args, settings: Settings):
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, str(settings.log_level).upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(args.config)
    except ValidationError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"Invalid settings: {e}")
        return EXIT_VALIDATION
    _configure_logging(args, settings)

    try:
        return args.handler(args, settings)
    except ValidationError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except (EstimatorError, ZeroTensorError) as e:
        status = getattr(e, "status", "zero-tensor")
        logger.error(f"Estimator failed ({status}): {e}")
        return EXIT_ESTIMATOR
    except OracleMismatch as e:
        logger.error(f"Oracle mismatch: {e}")
        return EXIT_MISMATCH
