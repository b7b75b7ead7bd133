"""Locating a maximizing multi-index of an HT tensor."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from core.errors import EstimatorError, SearchError, ValidationError, ZeroTensorError
from core.ht_arith import hadamard, norm, numerical_ranks, remove_zero_rows, restrict, slice, truncate
from core.ht_core import HtTensor, MultiIndex, elementary_factors, entry, is_elementary
from core.maxnorm import IterationConfig, adaptive_maxnorm

logger = logging.getLogger(__name__)


@dataclass
class ArgmaxResult:
    index: MultiIndex
    value: float
    estimated_maxnorm: float
    iterations_used: int = 0
    evaluations: int = 0
    bound: int = 0
    shortcuts: Dict[str, bool] = field(default_factory=lambda: {"rank_one": False, "zero_rows_removed": False})


def search_iteration_bound(d: int, mode_sizes: Sequence[int]) -> int:
    """Number of halvings needed to pin down every mode: sum of ceil(log2 n_mu)"""
    mode_sizes = list(mode_sizes)
    if len(mode_sizes) != d:
        raise ValidationError(f"expected {d} mode sizes, got {len(mode_sizes)}")
    if any(int(n) < 1 for n in mode_sizes):
        raise ValidationError(f"mode sizes must be positive, got {mode_sizes}")
    return sum((int(n) - 1).bit_length() for n in mode_sizes)


def elementary_argmax(a: HtTensor) -> ArgmaxResult:
    """Maximize each factor of a rank-1 tensor separately (smallest index on ties)"""
    factors = elementary_factors(a)
    index = tuple(int(np.argmax(np.abs(u))) + 1 for u in factors)
    value = float(np.prod([u[i - 1] for u, i in zip(factors, index)]))
    maxnorm = float(np.prod([np.max(np.abs(u)) for u in factors]))
    result = ArgmaxResult(index=index, value=value, estimated_maxnorm=maxnorm,
                          bound=search_iteration_bound(a.d, a.mode_sizes))
    result.shortcuts["rank_one"] = True
    return result


def _score(a_half: HtTensor, x_half: HtTensor) -> float:
    x_norm = norm(x_half)
    if x_norm == 0.0:
        return 0.0
    return norm(hadamard(a_half, x_half)) / x_norm


def _halves(size: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    cut = (size + 1) // 2
    return (1, cut), (cut + 1, size)


class _Search:
    """Halving state: current restricted tensors and the offset of their first row per mode"""

    def __init__(self, a: HtTensor, x: HtTensor, maps: List[List[int]], tie_tol: float):
        self.a = a
        self.x = x
        self.maps = maps
        self.tie_tol = tie_tol
        self.offsets = [0] * a.d
        self.iterations = 0
        self.evaluations = 0

    def active(self) -> List[int]:
        return [mu for mu in range(1, self.a.d + 1) if self.a.mode_sizes[mu - 1] > 1]

    def ranges(self) -> List[Tuple[int, int]]:
        out = []
        for mu in range(1, self.a.d + 1):
            lo = self.offsets[mu - 1]
            hi = lo + self.a.mode_sizes[mu - 1] - 1
            out.append((self.maps[mu - 1][lo], self.maps[mu - 1][hi]))
        return out

    def scores(self, mu: int) -> Tuple[float, float, Tuple[int, int], Tuple[int, int]]:
        first, second = _halves(self.a.mode_sizes[mu - 1])
        s1 = _score(slice(self.a, mu, first), slice(self.x, mu, first))
        s2 = _score(slice(self.a, mu, second), slice(self.x, mu, second))
        self.evaluations += 2
        return s1, s2, first, second

    def is_tie(self, s1: float, s2: float) -> bool:
        top = max(s1, s2)
        return top == 0.0 or abs(s1 - s2) < self.tie_tol * top

    def descend(self, mu: int, half: Tuple[int, int]):
        self.a = slice(self.a, mu, half)
        self.x = slice(self.x, mu, half)
        self.offsets[mu - 1] += half[0] - 1
        self.iterations += 1

    def index(self) -> MultiIndex:
        return tuple(self.maps[mu][self.offsets[mu]] for mu in range(self.a.d))


def _run_search(search: _Search):
    cursor = 0
    deferred: Set[int] = set()
    cached: Dict[int, Tuple[float, float, Tuple[int, int], Tuple[int, int]]] = {}
    while True:
        active = search.active()
        if not active:
            return
        ordered = [mu for mu in active if mu > cursor] + [mu for mu in active if mu <= cursor]
        pending = [mu for mu in ordered if mu not in deferred]
        if pending:
            mu = pending[0]
            s1, s2, first, second = cached[mu] = search.scores(mu)
            if search.is_tie(s1, s2):
                logger.debug(f"mode {mu}: halves tie ({s1:.6g} vs {s2:.6g}), trying another mode first")
                deferred.add(mu)
                continue
            keep_first = s1 > s2
        else:
            # every remaining mode is tied; force the first one, larger estimate wins
            mu = active[0]
            s1, s2, first, second = cached[mu]
            keep_first = s1 >= s2
        search.descend(mu, first if keep_first else second)
        logger.debug(f"mode {mu}: kept {'first' if keep_first else 'second'} half, scores {s1:.6g} / {s2:.6g}")
        cursor = mu
        deferred.clear()
        cached.clear()


def _support(x: HtTensor, tol: float) -> Tuple[HtTensor, List[List[int]]]:
    """Reduce x to its numerical ranks, then drop the rows it does not touch.

    Orthonormal frames of a full-rank representation span every row; only the
    dominant subspaces vanish on rows outside the support.
    """
    ranks = numerical_ranks(x, tol)
    x, _ = truncate(x, {node.id: r for node, r in zip(x.tree.nodes, ranks)})
    return remove_zero_rows(x, tol)


def binary_search_argmax(a: HtTensor, cfg: Optional[IterationConfig] = None) -> ArgmaxResult:
    """Find an index of a (nearly) maximal entry by halving one mode at a time.

    The adaptive estimator's final iterate concentrates on the maximal entries of a;
    each half of a mode is scored by ||a_h o x_h|| / ||x_h|| and the search keeps
    the better half. The returned value is always re-evaluated on a.
    """
    cfg = cfg or IterationConfig()
    bound = search_iteration_bound(a.d, a.mode_sizes)
    if norm(a) == 0.0:
        raise ZeroTensorError("the zero tensor has no distinguished maximal entry")
    if is_elementary(a):
        return elementary_argmax(a)

    estimate = adaptive_maxnorm(a, cfg)
    x, maps = _support(estimate.final_iterate, cfg.zero_row_tol)
    removed = tuple(len(m) for m in maps) != a.mode_sizes
    reduced = restrict(a, maps) if removed else a
    shortcuts = {"rank_one": False, "zero_rows_removed": removed}

    if all(r == 1 for r in numerical_ranks(x, cfg.rank_one_tol)):
        x1, _ = truncate(x, 1)
        local = elementary_argmax(x1).index
        index = tuple(maps[mu][i - 1] for mu, i in enumerate(local))
        shortcuts["rank_one"] = True
        logger.info(f"argmax: iterate is numerically rank one, index {index}")
        return ArgmaxResult(index=index, value=entry(a, index), estimated_maxnorm=estimate.value,
                            bound=bound, shortcuts=shortcuts)

    search = _Search(reduced, x, maps, cfg.tie_tol)
    try:
        _run_search(search)
    except (EstimatorError, ZeroTensorError) as e:
        raise SearchError(f"binary search failed: {e}", partial_ranges=search.ranges())
    index = search.index()
    value = entry(a, index)
    logger.info(f"argmax: index {index}, value {value:.15g}, {search.iterations}/{bound} halvings")
    return ArgmaxResult(index=index, value=value, estimated_maxnorm=estimate.value,
                        iterations_used=search.iterations, evaluations=search.evaluations,
                        bound=bound, shortcuts=shortcuts)
