"""Dimension trees, the hierarchical Tucker tensor and its constructors.

Node frames are nested: for an interior node t with children (s1, s2)

    U_t[:, k] = sum_{a, b} B_t[k, a, b] * (U_s1[:, a] kron U_s2[:, b])

and the tensor is the single column of the root frame (root rank 1).
Public indices are 1-based; arrays are indexed from 0 internally.
"""

import logging
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ValidationError

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]

# T4(x) = 8x^4 - 8x^2 + 1, coefficients by ascending power
CHEB_T4 = (1.0, 0.0, -8.0, 0.0, 8.0)


@dataclass(frozen=True)
class TreeNode:
    """One node of a dimension tree"""
    id: int
    modes: Tuple[int, ...]
    children: Optional[Tuple[int, int]] = None
    parent: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(frozen=True)
class DimensionTree:
    """Binary tree over the modes {1, ..., d}; node 0 is the root"""
    nodes: Tuple[TreeNode, ...]
    _leaf_of: Dict[int, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise ValidationError("dimension tree needs at least one node")
        for pos, node in enumerate(nodes):
            if node.id != pos:
                raise ValidationError(f"node ids must be 0..{len(nodes) - 1} in order, got {node.id} at {pos}")

        root = nodes[0]
        d = len(root.modes)
        if root.parent is not None or tuple(root.modes) != tuple(range(1, d + 1)):
            raise ValidationError("root must have no parent and carry modes 1..d")

        leaf_of = {}
        for node in nodes:
            if node.is_leaf:
                if len(node.modes) != 1:
                    raise ValidationError(f"leaf {node.id} must be a singleton, got {node.modes}")
                leaf_of[node.modes[0]] = node.id
                continue
            s1, s2 = node.children
            if not (0 <= s1 < len(nodes) and 0 <= s2 < len(nodes)) or s1 == node.id or s2 == node.id:
                raise ValidationError(f"node {node.id} has invalid children {node.children}")
            left, right = nodes[s1], nodes[s2]
            if left.parent != node.id or right.parent != node.id:
                raise ValidationError(f"children of node {node.id} do not point back to it")
            if set(left.modes) & set(right.modes):
                raise ValidationError(f"children of node {node.id} overlap")
            if tuple(sorted(left.modes + right.modes)) != tuple(node.modes):
                raise ValidationError(f"children of node {node.id} do not partition {node.modes}")

        if len(leaf_of) != d or len(nodes) != 2 * d - 1:
            raise ValidationError(f"tree over {d} modes needs {d} leaves and {d - 1} interior nodes")
        # every node must hang below the root
        seen = set()
        stack = [0]
        while stack:
            t = stack.pop()
            if t in seen:
                raise ValidationError("dimension tree contains a cycle")
            seen.add(t)
            if not nodes[t].is_leaf:
                stack.extend(nodes[t].children)
        if len(seen) != len(nodes):
            raise ValidationError("dimension tree has nodes unreachable from the root")
        object.__setattr__(self, "_leaf_of", leaf_of)

    @property
    def d(self) -> int:
        return len(self.nodes[0].modes)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def leaf_of(self, mode: int) -> int:
        """Node id of the leaf carrying the given 1-based mode"""
        return self._leaf_of[mode]

    def leaves(self) -> List[int]:
        """Leaf node ids ordered by mode"""
        return [self._leaf_of[mu] for mu in range(1, self.d + 1)]

    def interior(self) -> List[int]:
        return [node.id for node in self.nodes if not node.is_leaf]

    def pre_order(self) -> List[TreeNode]:
        """Parents before children"""
        order, stack = [], [0]
        while stack:
            node = self.nodes[stack.pop()]
            order.append(node)
            if not node.is_leaf:
                stack.extend(reversed(node.children))
        return order

    def post_order(self) -> List[TreeNode]:
        """Children before parents"""
        return list(reversed(self.pre_order()))


def _grow_tree(d: int, split: Callable[[Tuple[int, ...]], Tuple[Tuple[int, ...], Tuple[int, ...]]]) -> DimensionTree:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValidationError(f"tree order must be a positive integer, got {d!r}")
    slots: List[Optional[TreeNode]] = []

    def grow(modes: Tuple[int, ...], parent: Optional[int]) -> int:
        nid = len(slots)
        slots.append(None)
        if len(modes) == 1:
            slots[nid] = TreeNode(nid, modes, None, parent)
        else:
            left, right = split(modes)
            s1 = grow(left, nid)
            s2 = grow(right, nid)
            slots[nid] = TreeNode(nid, modes, (s1, s2), parent)
        return nid

    grow(tuple(range(1, int(d) + 1)), None)
    return DimensionTree(tuple(slots))


def balanced_tree(d: int) -> DimensionTree:
    """Each node keeps the first ceil(|t|/2) modes left and the rest right"""
    return _grow_tree(d, lambda modes: (modes[:(len(modes) + 1) // 2], modes[(len(modes) + 1) // 2:]))


def linear_tree(d: int) -> DimensionTree:
    """Degenerate tree splitting off the first mode at every level"""
    return _grow_tree(d, lambda modes: (modes[:1], modes[1:]))


def _frozen(a, ndim: int, what: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValidationError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HtTensor:
    """Immutable HT tensor: leaf frames and transfer tensors keyed by node id"""
    tree: DimensionTree
    mode_sizes: Tuple[int, ...]
    leaf_frames: Dict[int, np.ndarray]
    transfer_tensors: Dict[int, np.ndarray]

    def __post_init__(self):
        tree = self.tree
        sizes = tuple(int(n) for n in self.mode_sizes)
        if len(sizes) != tree.d:
            raise ValidationError(f"expected {tree.d} mode sizes, got {len(sizes)}")
        if any(n < 1 for n in sizes):
            raise ValidationError(f"mode sizes must be positive, got {sizes}")

        leaf_ids = set(tree.leaves())
        interior_ids = set(tree.interior())
        if set(self.leaf_frames) != leaf_ids:
            raise ValidationError(f"leaf frames given for nodes {sorted(self.leaf_frames)}, tree leaves are {sorted(leaf_ids)}")
        if set(self.transfer_tensors) != interior_ids:
            raise ValidationError(f"transfer tensors given for nodes {sorted(self.transfer_tensors)}, "
                                  f"tree interior is {sorted(interior_ids)}")

        frames = {}
        for t, u in self.leaf_frames.items():
            u = _frozen(u, 2, f"leaf frame {t}")
            mu = tree.node(t).modes[0]
            if u.shape[0] != sizes[mu - 1] or u.shape[1] < 1:
                raise ValidationError(f"leaf frame {t} has shape {u.shape}, mode {mu} has size {sizes[mu - 1]}")
            frames[t] = u
        transfers = {t: _frozen(b, 3, f"transfer tensor {t}") for t, b in self.transfer_tensors.items()}

        for t, b in transfers.items():
            s1, s2 = tree.node(t).children
            r1 = frames[s1].shape[1] if s1 in frames else transfers[s1].shape[0]
            r2 = frames[s2].shape[1] if s2 in frames else transfers[s2].shape[0]
            if b.shape[0] < 1 or b.shape[1:] != (r1, r2):
                raise ValidationError(f"transfer tensor {t} has shape {b.shape}, children ranks are ({r1}, {r2})")
        root_rank = frames[0].shape[1] if 0 in frames else transfers[0].shape[0]
        if root_rank != 1:
            raise ValidationError(f"root rank must be 1, got {root_rank}")

        object.__setattr__(self, "mode_sizes", sizes)
        object.__setattr__(self, "leaf_frames", frames)
        object.__setattr__(self, "transfer_tensors", transfers)

    @property
    def d(self) -> int:
        return self.tree.d

    @property
    def ranks(self) -> Tuple[int, ...]:
        """Rank per node id"""
        out = []
        for node in self.tree.nodes:
            if node.is_leaf:
                out.append(self.leaf_frames[node.id].shape[1])
            else:
                out.append(self.transfer_tensors[node.id].shape[0])
        return tuple(out)

    @property
    def size(self) -> float:
        """Number of entries N as a float (may exceed any integer type)"""
        return float(np.prod([float(n) for n in self.mode_sizes]))

    def frame(self, mode: int) -> np.ndarray:
        return self.leaf_frames[self.tree.leaf_of(mode)]

    def __repr__(self):
        return f"HtTensor(d={self.d}, mode_sizes={self.mode_sizes}, ranks={self.ranks})"


def entries(a: HtTensor, indices) -> np.ndarray:
    """Evaluate many entries at once; indices is an m x d array of 1-based indices"""
    idx = np.asarray(indices)
    if idx.ndim == 1:
        idx = idx.reshape(1, -1)
    if idx.ndim != 2 or idx.shape[1] != a.d:
        raise ValidationError(f"indices must have shape (m, {a.d}), got {idx.shape}")
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        if not np.all(np.equal(np.mod(idx, 1), 0)):
            raise ValidationError("indices must be integers")
    idx = idx.astype(np.int64)
    sizes = np.asarray(a.mode_sizes)
    if idx.size and (np.any(idx < 1) or np.any(idx > sizes)):
        raise ValidationError(f"index out of range for mode sizes {a.mode_sizes}")

    values: Dict[int, np.ndarray] = {}
    for node in a.tree.post_order():
        if node.is_leaf:
            mu = node.modes[0]
            values[node.id] = a.leaf_frames[node.id][idx[:, mu - 1] - 1]
        else:
            s1, s2 = node.children
            left = np.tensordot(values.pop(s1), a.transfer_tensors[node.id], axes=([1], [1]))
            values[node.id] = np.einsum("mkb,mb->mk", left, values.pop(s2))
    return values[0][:, 0]


def entry(a: HtTensor, index: Sequence[int]) -> float:
    """a[i] through the leaves-to-root recursion"""
    index = tuple(index)
    if len(index) != a.d:
        raise ValidationError(f"index {index} has {len(index)} components, tensor order is {a.d}")
    return float(entries(a, np.array([index]))[0])


def storage_size(a: HtTensor) -> int:
    return int(sum(u.size for u in a.leaf_frames.values()) + sum(b.size for b in a.transfer_tensors.values()))


def is_elementary(a: HtTensor) -> bool:
    return all(r == 1 for r in a.ranks)


def elementary_factors(a: HtTensor) -> List[np.ndarray]:
    """Factor vectors of a rank-1 tensor; transfer scalars are folded into the first one"""
    if not is_elementary(a):
        raise ValidationError(f"tensor with ranks {a.ranks} is not elementary")
    scale = float(np.prod([b[0, 0, 0] for b in a.transfer_tensors.values()])) if a.transfer_tensors else 1.0
    factors = [np.array(a.frame(mu)[:, 0]) for mu in range(1, a.d + 1)]
    factors[0] = factors[0] * scale
    return factors


def from_elementary(vectors: Sequence[Sequence[float]], tree: Optional[DimensionTree] = None) -> HtTensor:
    """Rank-1 tensor u1 (x) u2 (x) ... (x) ud"""
    vectors = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if not vectors:
        raise ValidationError("need at least one factor vector")
    if any(v.size == 0 for v in vectors):
        raise ValidationError("factor vectors must be nonempty")
    tree = tree or balanced_tree(len(vectors))
    if tree.d != len(vectors):
        raise ValidationError(f"tree has {tree.d} modes, got {len(vectors)} vectors")
    frames = {tree.leaf_of(mu): vectors[mu - 1][:, None] for mu in range(1, tree.d + 1)}
    transfers = {t: np.ones((1, 1, 1)) for t in tree.interior()}
    return HtTensor(tree, tuple(v.size for v in vectors), frames, transfers)


def _check_positive(**params):
    for name, value in params.items():
        if not isinstance(value, (int, np.integer)) or value < 1:
            raise ValidationError(f"{name} must be a positive integer, got {value!r}")


def random_ht(d: int, n: int, r: int, seed: int, tree: Optional[DimensionTree] = None) -> HtTensor:
    """rand(d, n, r): uniform [-1.5, 1.5] data; each leaf frame repeats two random rows"""
    _check_positive(d=d, n=n, r=r)
    tree = tree or balanced_tree(d)
    rng = np.random.default_rng(seed)
    frames, transfers = {}, {}
    for node in tree.nodes:
        rank = 1 if node.id == 0 else r
        if node.is_leaf:
            rows = rng.uniform(-1.5, 1.5, size=(2, rank))
            frames[node.id] = rows[rng.integers(0, 2, size=n)]
        else:
            transfers[node.id] = rng.uniform(-1.5, 1.5, size=(rank, r, r))
    return HtTensor(tree, (n,) * d, frames, transfers)


def random_normal_ht(mode_sizes: Sequence[int], r: int, seed: int,
                     tree: Optional[DimensionTree] = None) -> HtTensor:
    """Standard normal frames and transfer tensors with arbitrary mode sizes"""
    mode_sizes = tuple(int(n) for n in mode_sizes)
    if not mode_sizes:
        raise ValidationError("need at least one mode size")
    _check_positive(r=r, **{f"n{mu}": n for mu, n in enumerate(mode_sizes, 1)})
    tree = tree or balanced_tree(len(mode_sizes))
    rng = np.random.default_rng(seed)
    frames, transfers = {}, {}
    for node in tree.nodes:
        rank = 1 if node.id == 0 else r
        if node.is_leaf:
            frames[node.id] = rng.standard_normal((mode_sizes[node.modes[0] - 1], rank))
        else:
            transfers[node.id] = rng.standard_normal((rank, r, r))
    return HtTensor(tree, mode_sizes, frames, transfers)


def _shifted_poly(coeffs: Sequence[float], shift: float) -> np.ndarray:
    """Coefficients of p(shift + s) in powers of s"""
    out = np.zeros(len(coeffs))
    for m, cm in enumerate(coeffs):
        for p in range(m + 1):
            out[p] += cm * comb(m, p) * shift ** (m - p)
    return out


def cheb_tensor(d: int, n: int, tree: Optional[DimensionTree] = None) -> HtTensor:
    """cheb(d, n): T4 sampled on n^d equidistant points of [-1, 1] in linear index order.

    x = -1 + sum_mu c_mu (i_mu - 1) with c_mu = 2 n^(d - mu) / (N - 1). Every node
    frame spans the powers 0..4 of its partial sum, so all ranks are 5.

    Grids beyond 2^53 points are accepted here (cheb(16, 100) has 10^32); only the
    dense reference refuses them, since linear indices stop being exact doubles.
    """
    _check_positive(d=d, n=n)
    if d < 2 or n < 2:
        raise ValidationError(f"cheb tensor needs d, n >= 2, got d={d}, n={n}")
    with np.errstate(over="ignore"):
        grid = float(n) ** d
    if not np.isfinite(grid):
        raise ValidationError(f"grid size {n}^{d} overflows double precision")
    tree = tree or balanced_tree(d)
    degree = len(CHEB_T4) - 1
    tail = float(n) ** (-d)

    binom = np.zeros((degree + 1,) * 3)
    for p in range(degree + 1):
        for q in range(p + 1):
            binom[p, q, p - q] = comb(p, q)

    frames, transfers = {}, {}
    for node in tree.nodes:
        if node.is_leaf:
            mu = node.modes[0]
            c_mu = 2.0 / (float(n) ** mu * (1.0 - tail))
            s = c_mu * np.arange(n, dtype=float)
            frames[node.id] = s[:, None] ** np.arange(degree + 1)
        elif node.id == 0:
            coeffs = _shifted_poly(CHEB_T4, -1.0)
            transfers[0] = np.einsum("p,pqs->qs", coeffs, binom)[None, :, :]
        else:
            transfers[node.id] = binom.copy()
    logger.debug(f"Built cheb({d}, {n}) with {len(tree.nodes)} nodes")
    return HtTensor(tree, (n,) * d, frames, transfers)


def counterexample_matrix(n: int, sigma1: float, sigma2: float) -> HtTensor:
    """M = sigma1/(n-1) on the trailing (n-1)x(n-1) block plus sigma2 in the corner"""
    _check_positive(n=n)
    if n < 2:
        raise ValidationError(f"counterexample matrix needs n >= 2, got {n}")
    if not sigma1 > sigma2 or sigma2 < 0:
        raise ValidationError(f"need sigma1 > sigma2 >= 0, got sigma1={sigma1}, sigma2={sigma2}")
    tree = balanced_tree(2)
    corner = np.zeros(n)
    corner[0] = 1.0
    block = np.ones(n)
    block[0] = 0.0
    level = sigma1 / (n - 1)
    if sigma2 == 0:
        u = block[:, None]
        core = np.array([[[level]]])
    else:
        u = np.column_stack([corner, block])
        core = np.array([[[sigma2, 0.0], [0.0, level]]])
    frames = {tree.leaf_of(1): u, tree.leaf_of(2): u}
    return HtTensor(tree, (n, n), frames, {0: core})


def adversarial_tensor(d: int = 10, n: int = 8, seed: int = 0, spike: float = 1.9,
                       tree: Optional[DimensionTree] = None) -> HtTensor:
    """Elementary tensor with factors in [0.91, 1.0] whose entry (1, ..., 1) is replaced by the spike.

    The first entry of every factor is drawn from {30, 31, 32}/32 so the product
    at (1, ..., 1) and the correction term are exact and the spike evaluates to
    exactly `spike`.
    """
    _check_positive(d=d, n=n)
    if d < 2:
        raise ValidationError(f"adversarial tensor needs d >= 2, got {d}")
    tree = tree or balanced_tree(d)
    rng = np.random.default_rng(seed)
    factors = rng.uniform(0.91, 1.0, size=(d, n))
    factors[:, 0] = rng.integers(30, 33, size=d) / 32.0
    correction = spike - float(np.prod(factors[:, 0]))

    unit = np.zeros(n)
    unit[0] = 1.0
    diag = np.zeros((2, 2, 2))
    diag[0, 0, 0] = diag[1, 1, 1] = 1.0
    frames = {tree.leaf_of(mu): np.column_stack([factors[mu - 1], unit]) for mu in range(1, d + 1)}
    transfers = {t: diag.copy() for t in tree.interior() if t != 0}
    transfers[0] = np.array([[[1.0, 0.0], [0.0, correction]]])
    return HtTensor(tree, (n,) * d, frames, transfers)
