"""Dense brute-force reference for the HT operations, usable at desk scale only."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from numpy.polynomial import chebyshev

from core.errors import DenseCapError, ValidationError
from core.ht_core import HtTensor, MultiIndex, entries
from core.settings import dense_cap

logger = logging.getLogger(__name__)

EXACT_INDEX_LIMIT = 2 ** 53
CHUNK_ROWS = 1 << 16


@dataclass
class DenseTensor:
    """Flat values in row-major order, mode 1 varying slowest"""
    mode_sizes: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.mode_sizes = tuple(int(n) for n in self.mode_sizes)
        self.values = np.asarray(self.values, dtype=float).ravel()
        expected = int(np.prod(self.mode_sizes, dtype=np.int64)) if self.mode_sizes else 0
        if self.values.size != expected:
            raise ValidationError(f"{self.values.size} values for mode sizes {self.mode_sizes}")

    @property
    def d(self) -> int:
        return len(self.mode_sizes)

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.mode_sizes)


def _check_cap(n_entries: float, cap: Optional[int]):
    cap = dense_cap() if cap is None else cap
    if n_entries > cap:
        raise DenseCapError(f"{n_entries:.0f} entries exceed the densification cap {cap} (HTMAX_DENSE_CAP)")


def densify(a: HtTensor, cap: Optional[int] = None) -> DenseTensor:
    """Evaluate every entry of a"""
    _check_cap(a.size, cap)
    grid = np.indices(a.mode_sizes).reshape(a.d, -1).T + 1
    parts = [entries(a, grid[lo:lo + CHUNK_ROWS]) for lo in range(0, grid.shape[0], CHUNK_ROWS)]
    return DenseTensor(a.mode_sizes, np.concatenate(parts))


def dense_from_frames(a: HtTensor, cap: Optional[int] = None) -> DenseTensor:
    """Full tensor from the nested frames, independent of the entry recursion"""
    _check_cap(a.size, cap)
    full = {}
    for node in a.tree.post_order():
        if node.is_leaf:
            full[node.id] = (a.leaf_frames[node.id], list(node.modes))
            continue
        s1, s2 = node.children
        (left, lmodes), (right, rmodes) = full.pop(s1), full.pop(s2)
        b = a.transfer_tensors[node.id]
        out = np.einsum("xa,yb,kab->xyk", left.reshape(-1, left.shape[-1]),
                        right.reshape(-1, right.shape[-1]), b, optimize=True)
        shape = left.shape[:-1] + right.shape[:-1] + (b.shape[0],)
        full[node.id] = (out.reshape(shape), lmodes + rmodes)
    values, modes = full[0]
    values = np.transpose(values[..., 0], np.argsort(modes))
    return DenseTensor(a.mode_sizes, values)


def _same_shape(x: DenseTensor, y: DenseTensor):
    if x.mode_sizes != y.mode_sizes:
        raise ValidationError(f"mode sizes differ: {x.mode_sizes} vs {y.mode_sizes}")


def dense_maxnorm_argmax(x: DenseTensor) -> Tuple[float, MultiIndex]:
    """max |x[i]| and the smallest index attaining it"""
    if x.values.size == 0:
        raise ValidationError("empty tensor has no maximum")
    flat = int(np.argmax(np.abs(x.values)))
    index = tuple(int(i) + 1 for i in np.unravel_index(flat, x.mode_sizes))
    return float(abs(x.values[flat])), index


def dense_pnorm(x: DenseTensor, p: float) -> float:
    """(sum |x|^p)^(1/p) with max scaling; p = inf gives the maximum norm"""
    if not p > 0:
        raise ValidationError(f"p must be positive, got {p}")
    top = float(np.max(np.abs(x.values))) if x.values.size else 0.0
    if top == 0.0 or np.isinf(p):
        return top
    scaled = np.abs(x.values) / top
    return top * float(np.sum(scaled ** p)) ** (1.0 / p)


def dense_alpha(x: DenseTensor, j: int) -> float:
    """||x o x^(j)|| for the normalized power x^(j) = x^{o j}/||x^{o j}|| (all ones for j = 0)"""
    if j < 0:
        raise ValidationError(f"power must be nonnegative, got {j}")
    top = float(np.max(np.abs(x.values)))
    if top == 0.0:
        return 0.0
    scaled = np.abs(x.values) / top
    return top * float(np.sqrt(np.sum(scaled ** (2 * (j + 1))) / np.sum(scaled ** (2 * j))))


def dense_hadamard(x: DenseTensor, y: DenseTensor) -> DenseTensor:
    _same_shape(x, y)
    return DenseTensor(x.mode_sizes, x.values * y.values)


def dense_dot(x: DenseTensor, y: DenseTensor) -> float:
    _same_shape(x, y)
    return float(np.dot(x.values, y.values))


def dense_add(x: DenseTensor, y: DenseTensor) -> DenseTensor:
    _same_shape(x, y)
    return DenseTensor(x.mode_sizes, x.values + y.values)


def dense_scale(x: DenseTensor, c: float) -> DenseTensor:
    return DenseTensor(x.mode_sizes, c * x.values)


def dense_slice(x: DenseTensor, mode: int, index_range: Tuple[int, int]) -> DenseTensor:
    lo, hi = index_range
    if not 1 <= mode <= x.d or not 1 <= lo <= hi <= x.mode_sizes[mode - 1]:
        raise ValidationError(f"bad slice {index_range} of mode {mode}")
    part = np.take(x.array, np.arange(lo - 1, hi), axis=mode - 1)
    return DenseTensor(part.shape, part)


def dense_entries(x: DenseTensor, indices) -> np.ndarray:
    idx = np.atleast_2d(np.asarray(indices, dtype=np.int64)) - 1
    return x.array[tuple(idx.T)]


def matricization_singular_values(x: DenseTensor, modes: Sequence[int]) -> np.ndarray:
    """Singular values of the matricization with row modes `modes`"""
    rows = [mu - 1 for mu in modes]
    cols = [mu for mu in range(x.d) if mu not in rows]
    m = np.transpose(x.array, rows + cols).reshape(int(np.prod([x.mode_sizes[mu] for mu in rows])), -1)
    return scipy.linalg.svdvals(m)


def dense_cheb(d: int, n: int, cap: Optional[int] = None) -> DenseTensor:
    """T4 on the n^d equidistant points of [-1, 1], linear index order"""
    n_entries = float(n) ** d
    if n_entries > EXACT_INDEX_LIMIT:
        raise ValidationError(f"{n}^{d} points cannot be indexed exactly in double precision")
    _check_cap(n_entries, cap)
    total = int(n) ** int(d)
    grid = -1.0 + 2.0 * np.arange(total, dtype=float) / (total - 1)
    return DenseTensor((n,) * d, chebyshev.chebval(grid, [0, 0, 0, 0, 1]))


def pattern_maxnorm_argmax(a: HtTensor, cap: Optional[int] = None) -> Tuple[float, MultiIndex]:
    """Exact max |a[i]| when every leaf frame has few distinct rows.

    Entries only depend on which distinct row each mode picks, so every pattern
    of distinct rows is evaluated once; ties go to the smallest original index.
    """
    reps = []
    for mu in range(1, a.d + 1):
        _, first = np.unique(a.frame(mu), axis=0, return_index=True)
        reps.append(np.sort(first) + 1)
    counts = tuple(len(r) for r in reps)
    n_patterns = float(np.prod([float(c) for c in counts]))
    _check_cap(n_patterns, cap)
    logger.debug(f"Enumerating {n_patterns:.0f} row patterns")

    choice = np.indices(counts).reshape(a.d, -1).T
    index = np.column_stack([reps[mu][choice[:, mu]] for mu in range(a.d)])
    values = np.abs(np.concatenate([entries(a, index[lo:lo + CHUNK_ROWS])
                                    for lo in range(0, index.shape[0], CHUNK_ROWS)]))
    top = values.max()
    best = index[values == top]
    # lexsort keys run last-to-first: mode 1 is the primary key
    winner = best[np.lexsort(best.T[::-1])[0]]
    return float(top), tuple(int(i) for i in winner)
