"""Maximum-norm estimators built on the diagonal power iteration.

The tensor a acts as the diagonal operator x -> a o x. Its dominant eigenvalue
in magnitude is ||a||_inf, so power iterates a^(j) = a^{o j} / ||a^{o j}||
drive the estimators below towards the maximum norm from beneath.
"""

import csv
import math
import time
import logging
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Deque, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import EstimatorError, ValidationError, ZeroTensorError
from core.ht_arith import (
    DEPENDENT_TOL, RankTarget, add, check_compatible, dot, hadamard, ht_qr, norm, normalize,
    orthogonal_norm, orthogonalize, projected_matrix, scale, truncate, truncate_eps,
)
from core.ht_core import HtTensor, elementary_factors, from_elementary, is_elementary
from core.linalg import ritz_values
from core.settings import Settings, load_settings

logger = logging.getLogger(__name__)

CONVERGED = "converged"
STAGNATED = "stagnated"
MAX_ITERS = "max-iters"
CAP_EXCEEDED = "truncation-cap-exceeded"

RATE_FLOOR = 1e-12


@dataclass
class IterationConfig:
    """Knobs shared by every estimator and by the argmax search"""
    max_iters: int = 40
    ranks: Optional[RankTarget] = None
    tolerance: Optional[float] = None
    subspace_size: int = 5
    squaring_tol: float = 1e-13
    trunc_err_cap: float = 1e-8
    ritz_steps: int = 10
    max_cycles: int = 50
    stall_steps: int = 5
    trace_ritz: bool = False
    tie_tol: float = 1e-6
    zero_row_tol: float = 1e-10
    rank_one_tol: float = 1e-7

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.subspace_size < 1:
            raise ValidationError(f"subspace size k must be >= 1, got {self.subspace_size}")
        if self.ritz_steps < 1:
            raise ValidationError(f"ritz_steps must be >= 1, got {self.ritz_steps}")
        if self.max_cycles < 1 or self.stall_steps < 1:
            raise ValidationError("max_cycles and stall_steps must be >= 1")
        for name in ("squaring_tol", "trunc_err_cap", "tie_tol", "rank_one_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.zero_row_tol < 0:
            raise ValidationError(f"zero_row_tol must be nonnegative, got {self.zero_row_tol}")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValidationError(f"truncation tolerance must be positive, got {self.tolerance}")
        if self.ranks is not None and self.tolerance is not None:
            raise ValidationError("give either working ranks or a truncation tolerance, not both")

    @property
    def truncating(self) -> bool:
        return self.ranks is not None or self.tolerance is not None

    @classmethod
    def from_settings(cls, settings: Optional[Settings] = None, **overrides: Any) -> "IterationConfig":
        """Defaults from config/htmax.json, then non-None overrides"""
        settings = settings or load_settings()
        known = {f.name for f in fields(cls)}
        data = dict(settings.iteration)
        data.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown iteration settings: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TraceRecord:
    iteration: int
    estimate: float
    rel_trunc_err: float
    elapsed_s: float


@dataclass
class ConvergenceTrace:
    """Per-iteration estimator values of one run"""
    algorithm: str
    records: List[TraceRecord] = field(default_factory=list)
    status: str = MAX_ITERS

    def add(self, iteration: int, estimate: float, rel_trunc_err: float, elapsed_s: float):
        self.records.append(TraceRecord(iteration, float(estimate), float(rel_trunc_err), float(elapsed_s)))
        logger.debug(f"{self.algorithm} step {iteration}: estimate={estimate:.15g} trunc_err={rel_trunc_err:.3e}")

    @property
    def next_iteration(self) -> int:
        return self.records[-1].iteration + 1 if self.records else 0

    @property
    def estimates(self) -> List[float]:
        return [r.estimate for r in self.records]

    @property
    def max_trunc_err(self) -> float:
        return max((r.rel_trunc_err for r in self.records), default=0.0)

    def cap_exceeded(self, cap: float) -> bool:
        return self.max_trunc_err >= cap

    def rel_errors(self, truth: float) -> List[float]:
        if not truth > 0:
            raise ValidationError(f"true maximum norm must be positive, got {truth}")
        return [abs(truth - r.estimate) / truth for r in self.records]

    def to_csv(self, path, truth: Optional[float] = None) -> Path:
        """Write iter,estimate,rel_trunc_err,elapsed_s (plus rel_err when the truth is known)"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ["iter", "estimate", "rel_trunc_err", "elapsed_s"]
        errors = None
        if truth is not None:
            header.append("rel_err")
            errors = self.rel_errors(truth)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for pos, r in enumerate(self.records):
                row = [r.iteration, repr(r.estimate), repr(r.rel_trunc_err), f"{r.elapsed_s:.6f}"]
                if errors is not None:
                    row.append(repr(errors[pos]))
                writer.writerow(row)
        return path


@dataclass
class MaxNormEstimate:
    value: float
    trace: ConvergenceTrace
    final_iterate: HtTensor


def lower_bound_error(n_entries: float, j: int) -> float:
    """A-priori bound on the relative error of the improved estimator after j steps"""
    return 1.0 - float(n_entries) ** (-1.0 / (2.0 * (j + 1)))


def positive_tensor_error_bound(n_entries: float, j: int) -> float:
    """ln(N)/(j-1): sharper a-priori bound when every entry is positive"""
    if j < 2:
        raise ValidationError(f"bound needs j >= 2, got {j}")
    return math.log(float(n_entries)) / (j - 1)


def convergence_rate(trace: ConvergenceTrace, truth: float) -> Optional[float]:
    """error_j / error_(j-1) at the last j whose relative error exceeds 1e-12"""
    errors = trace.rel_errors(truth)
    last = max((i for i, e in enumerate(errors) if e > RATE_FLOOR), default=None)
    if last is None:
        return 0.0
    if last == 0 or errors[last - 1] == 0.0:
        return None
    return errors[last] / errors[last - 1]


class _Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


def _ones_like(a: HtTensor) -> HtTensor:
    return from_elementary([np.ones(n) for n in a.mode_sizes], tree=a.tree)


def _start(a: HtTensor) -> Tuple[HtTensor, float]:
    try:
        return normalize(a)
    except ZeroTensorError:
        raise ZeroTensorError("maximum norm of the zero tensor is not estimated")


def _initial_estimate(a: HtTensor, nrm: float, rayleigh: bool = False) -> float:
    # the estimators evaluated on the normalized all-ones tensor
    n_entries = a.size
    if rayleigh:
        return abs(dot(a, _ones_like(a))) / n_entries
    return nrm / math.sqrt(n_entries)


def _compress(h: HtTensor, cfg: IterationConfig) -> Tuple[HtTensor, float, float]:
    """Truncate per config; returns (tensor, relative truncation error, norm of h)"""
    if cfg.ranks is not None:
        y, report = truncate(h, cfg.ranks)
        return y, report.rel_error, report.input_norm
    if cfg.tolerance is not None:
        y, report = truncate_eps(h, cfg.tolerance)
        return y, report.rel_error, report.input_norm
    y = orthogonalize(h)
    return y, 0.0, orthogonal_norm(y)


def _next_iterate(y: HtTensor, h_norm: float) -> HtTensor:
    if not np.isfinite(h_norm):
        raise EstimatorError(f"iterate norm became {h_norm}", status="blow-up")
    try:
        x, _ = normalize(y)
    except ZeroTensorError:
        raise EstimatorError("truncation destroyed the iterate", status="truncation-destroyed-iterate")
    return x


def _check_finite(value: float, algorithm: str):
    if not np.isfinite(value):
        raise EstimatorError(f"{algorithm} estimate became {value}", status="blow-up")


def _finish(estimate: MaxNormEstimate) -> MaxNormEstimate:
    trace = estimate.trace
    logger.info(f"{trace.algorithm}: {trace.status} at {estimate.value:.15g} "
                f"after {trace.records[-1].iteration if trace.records else 0} steps")
    return estimate


def _elementary_estimate(a: HtTensor, algorithm: str, clock: _Clock) -> MaxNormEstimate:
    value = float(np.prod([np.max(np.abs(u)) for u in elementary_factors(a)]))
    x, _ = _start(a)
    trace = ConvergenceTrace(algorithm, status=CONVERGED)
    trace.add(1, value, 0.0, clock.elapsed())
    return _finish(MaxNormEstimate(value, trace, x))


def power_iteration_rayleigh(a: HtTensor, cfg: Optional[IterationConfig] = None) -> MaxNormEstimate:
    """Plain power iteration with the Rayleigh quotient <a^(j), a o a^(j)> (comparison only)"""
    cfg = cfg or IterationConfig()
    clock = _Clock()
    x, nrm = _start(a)
    trace = ConvergenceTrace("rayleigh")
    lam = _initial_estimate(a, nrm, rayleigh=True)
    trace.add(0, lam, 0.0, clock.elapsed())
    for j in range(1, cfg.max_iters + 1):
        h = hadamard(a, x)
        lam = abs(dot(x, h))
        _check_finite(lam, trace.algorithm)
        y, err, h_norm = _compress(h, cfg)
        x = _next_iterate(y, h_norm)
        trace.add(j, lam, err, clock.elapsed())
    return _finish(MaxNormEstimate(lam, trace, x))


def power_iteration_improved(a: HtTensor, cfg: Optional[IterationConfig] = None) -> MaxNormEstimate:
    """Power iteration with alpha = ||a o a^(j)||, a lower bound on ||a||_inf"""
    cfg = cfg or IterationConfig()
    clock = _Clock()
    x, nrm = _start(a)
    trace = ConvergenceTrace("pi")
    alpha = _initial_estimate(a, nrm)
    trace.add(0, alpha, 0.0, clock.elapsed())
    for j in range(1, cfg.max_iters + 1):
        y, err, alpha = _compress(hadamard(a, x), cfg)
        _check_finite(alpha, trace.algorithm)
        x = _next_iterate(y, alpha)
        trace.add(j, alpha, err, clock.elapsed())
    if cfg.truncating and trace.cap_exceeded(cfg.trunc_err_cap):
        trace.status = CAP_EXCEEDED
    return _finish(MaxNormEstimate(alpha, trace, x))


def rayleigh_ritz_estimate(a: HtTensor, iterates: Sequence[HtTensor],
                           ranks: Optional[RankTarget] = None) -> Tuple[float, np.ndarray]:
    """Largest |Ritz value| of the diagonal operator on span(iterates).

    Dependent directions (R diagonal below 1e-12 relative) are dropped before
    the projected matrix is formed.
    """
    iterates = list(iterates)
    if not iterates:
        raise ValidationError("need at least one iterate")
    for x in iterates:
        check_compatible(a, x)
    qr = ht_qr(iterates, target_ranks=ranks)
    diag = np.abs(np.diag(qr.r_factor))
    top = diag.max() if diag.size else 0.0
    basis = [q for j, q in enumerate(qr.q_tensors) if diag[j] > DEPENDENT_TOL * top]
    if not basis:
        raise ZeroTensorError("iterates span only the zero tensor")
    values = ritz_values(projected_matrix(a, basis))
    return float(np.max(np.abs(values))), values


def _ritz_phase(a: HtTensor, x: HtTensor, cfg: IterationConfig, steps: int, trace: ConvergenceTrace,
                clock: _Clock) -> Tuple[HtTensor, float]:
    window: Deque[HtTensor] = deque([x], maxlen=cfg.subspace_size)
    alpha = 0.0
    for step in range(1, steps + 1):
        y, err, h_norm = _compress(hadamard(a, x), cfg)
        _check_finite(h_norm, trace.algorithm)
        x = _next_iterate(y, h_norm)
        window.append(x)
        if cfg.trace_ritz or step == steps:
            alpha, _ = rayleigh_ritz_estimate(a, list(window), ranks=cfg.ranks)
        else:
            alpha = h_norm
        trace.add(trace.next_iteration, alpha, err, clock.elapsed())
    return x, alpha


def power_iteration_ritz(a: HtTensor, cfg: Optional[IterationConfig] = None) -> MaxNormEstimate:
    """Power iteration accelerated by Rayleigh-Ritz projection onto the last k iterates"""
    cfg = cfg or IterationConfig()
    clock = _Clock()
    if is_elementary(a):
        return _elementary_estimate(a, "ritz", clock)
    x, nrm = _start(a)
    trace = ConvergenceTrace("ritz")
    trace.add(0, _initial_estimate(a, nrm), 0.0, clock.elapsed())
    x, alpha = _ritz_phase(a, x, cfg, cfg.max_iters, trace, clock)
    if cfg.truncating and trace.cap_exceeded(cfg.trunc_err_cap):
        trace.status = CAP_EXCEEDED
    return _finish(MaxNormEstimate(alpha, trace, x))


def _squaring_phase(a: HtTensor, x: HtTensor, cfg: IterationConfig, trace: ConvergenceTrace,
                    clock: _Clock, cap: Optional[float] = None) -> Tuple[HtTensor, float, str]:
    alpha = 0.0
    best = -math.inf
    stall = 0
    status = MAX_ITERS
    for _ in range(cfg.max_iters):
        y, err, h_norm = _compress(hadamard(x, x), cfg)
        x_next = _next_iterate(y, h_norm)
        ax = hadamard(a, x_next)
        alpha = math.sqrt(max(dot(ax, ax), 0.0))
        _check_finite(alpha, trace.algorithm)
        trace.add(trace.next_iteration, alpha, err, clock.elapsed())
        if cap is not None and err >= cap:
            x, status = x_next, CAP_EXCEEDED
            break
        change = norm(add(x_next, scale(x, -1.0)))
        x = x_next
        if change < cfg.squaring_tol:
            status = CONVERGED
            break
        if alpha > best:
            best, stall = alpha, 0
        else:
            stall += 1
            if stall >= cfg.stall_steps:
                status = STAGNATED
                break
    return x, alpha, status


def power_iteration_squaring(a: HtTensor, cfg: Optional[IterationConfig] = None) -> MaxNormEstimate:
    """Iterate a^(j+1) = a^(j) o a^(j) / ||.||, which doubles the power each step"""
    cfg = cfg or IterationConfig()
    clock = _Clock()
    x, nrm = _start(a)
    trace = ConvergenceTrace("squaring")
    trace.add(0, _initial_estimate(a, nrm), 0.0, clock.elapsed())
    x, alpha, status = _squaring_phase(a, x, cfg, trace, clock)
    trace.status = status
    if cfg.truncating and trace.cap_exceeded(cfg.trunc_err_cap):
        logger.warning(f"squaring: truncation error {trace.max_trunc_err:.3e} exceeded cap {cfg.trunc_err_cap:g}")
        trace.status = CAP_EXCEEDED
    return _finish(MaxNormEstimate(alpha, trace, x))


def adaptive_maxnorm(a: HtTensor, cfg: Optional[IterationConfig] = None) -> MaxNormEstimate:
    """Alternate Ritz-accelerated steps with squaring until a squaring run stays under the error cap"""
    cfg = cfg or IterationConfig()
    clock = _Clock()
    if is_elementary(a):
        return _elementary_estimate(a, "adaptive", clock)
    x, nrm = _start(a)
    trace = ConvergenceTrace("adaptive")
    alpha = _initial_estimate(a, nrm)
    trace.add(0, alpha, 0.0, clock.elapsed())

    for cycle in range(1, cfg.max_cycles + 1):
        x, alpha = _ritz_phase(a, x, cfg, cfg.ritz_steps, trace, clock)
        mark = len(trace.records)
        try:
            x_sq, alpha_sq, status = _squaring_phase(a, x, cfg, trace, clock, cap=cfg.trunc_err_cap)
        except EstimatorError as e:
            logger.warning(f"adaptive cycle {cycle}: squaring failed ({e.status}), continuing")
            continue
        worst = max((r.rel_trunc_err for r in trace.records[mark:]), default=0.0)
        if worst < cfg.trunc_err_cap:
            trace.status = status
            return _finish(MaxNormEstimate(alpha_sq, trace, x_sq))
        logger.debug(f"adaptive cycle {cycle}: truncation error {worst:.3e} above cap, back to Ritz steps")

    logger.warning(f"adaptive: no squaring run stayed under the cap in {cfg.max_cycles} cycles")
    trace.status = CAP_EXCEEDED
    return _finish(MaxNormEstimate(alpha, trace, x))


ALGORITHMS = {
    "rayleigh": power_iteration_rayleigh,
    "pi": power_iteration_improved,
    "ritz": power_iteration_ritz,
    "squaring": power_iteration_squaring,
    "adaptive": adaptive_maxnorm,
}
