"""Arithmetic on HT tensors without densifying.

Everything here is a pure function of immutable HtTensor values. Contractions
run over the dimension tree, leaves to root (Gram products, orthogonalization)
or root to leaves (reduced Gram matrices for the HSVD).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import ValidationError, ZeroTensorError
from core.ht_core import DimensionTree, HtTensor
from core.linalg import qr_thin, sym_eig_desc

logger = logging.getLogger(__name__)

RankTarget = Union[int, Sequence[int], Dict[int, int]]

DEPENDENT_TOL = 1e-12


@dataclass
class TruncationReport:
    """Outcome of an HSVD truncation"""
    ranks: Tuple[int, ...]
    discarded: Dict[int, float] = field(default_factory=dict)
    rel_error: float = 0.0
    input_norm: float = 0.0


@dataclass
class HtQrResult:
    """Orthonormal HT tensors sharing every non-root node, and the R factor"""
    q_tensors: List[HtTensor]
    r_factor: np.ndarray
    rank_deficient: bool = False


def check_compatible(x: HtTensor, y: HtTensor):
    if x.tree != y.tree:
        raise ValidationError("tensors live on different dimension trees")
    if x.mode_sizes != y.mode_sizes:
        raise ValidationError(f"mode sizes differ: {x.mode_sizes} vs {y.mode_sizes}")


def _rebuild(x: HtTensor, frames: Dict[int, np.ndarray], transfers: Dict[int, np.ndarray],
             mode_sizes: Optional[Tuple[int, ...]] = None) -> HtTensor:
    return HtTensor(x.tree, mode_sizes or x.mode_sizes, frames, transfers)


def _root_data(x: HtTensor) -> np.ndarray:
    return x.leaf_frames[0] if x.d == 1 else x.transfer_tensors[0]


def _apply_children(b: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """b[k, a, c] f1[i, a] f2[j, c] -> [k, i, j]"""
    out = np.tensordot(b, f1, axes=([1], [1]))
    return np.tensordot(out, f2, axes=([1], [1]))


def _child_grams(b: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reduced Grams of both children from the parent transfer tensor and Gram"""
    gb = np.tensordot(g, b, axes=([1], [0]))
    return np.tensordot(b, gb, axes=([0, 2], [0, 2])), np.tensordot(b, gb, axes=([0, 1], [0, 1]))


def _gram(x: HtTensor, y: HtTensor) -> np.ndarray:
    grams: Dict[int, np.ndarray] = {}
    for node in x.tree.post_order():
        t = node.id
        if node.is_leaf:
            # plain einsum: the BLAS product fuses multiply-adds and breaks exact cancellation
            grams[t] = np.einsum("ia,ib->ab", x.leaf_frames[t], y.leaf_frames[t])
        else:
            s1, s2 = node.children
            inner = _apply_children(x.transfer_tensors[t], grams.pop(s1).T, grams.pop(s2).T)
            grams[t] = np.tensordot(inner, y.transfer_tensors[t], axes=([1, 2], [1, 2]))
    return grams[0]


def dot(x: HtTensor, y: HtTensor) -> float:
    """Euclidean inner product sum_i x[i] y[i]"""
    check_compatible(x, y)
    return float(_gram(x, y)[0, 0])


def trilinear(a: HtTensor, x: HtTensor, y: HtTensor) -> float:
    """sum_i a[i] x[i] y[i] without forming the Hadamard product"""
    check_compatible(a, x)
    check_compatible(a, y)
    return float(_trilinear_grams(a, x, y, stop_below_root=False)[0][0, 0, 0])


def _trilinear_grams(a: HtTensor, x: HtTensor, y: HtTensor, stop_below_root: bool) -> Dict[int, np.ndarray]:
    grams: Dict[int, np.ndarray] = {}
    for node in a.tree.post_order():
        t = node.id
        if node.is_leaf:
            grams[t] = np.einsum("ia,ik,il->akl", a.leaf_frames[t], x.leaf_frames[t], y.leaf_frames[t])
        elif t == 0 and stop_below_root:
            break
        else:
            s1, s2 = node.children
            # a[a,b,c] g1[b,p,r] g2[c,q,s] x[k,p,q] y[l,r,s] -> [a,k,l]
            out = np.tensordot(a.transfer_tensors[t], grams.pop(s1), axes=([1], [0]))
            out = np.tensordot(out, grams.pop(s2), axes=([1], [0]))
            out = np.tensordot(out, x.transfer_tensors[t], axes=([1, 3], [1, 2]))
            grams[t] = np.tensordot(out, y.transfer_tensors[t], axes=([1, 2], [1, 2]))
    return grams


def orthogonalize(x: HtTensor) -> HtTensor:
    """Same tensor with orthonormal frames at every non-root node; ranks may shrink"""
    frames, transfers = {}, {}
    factors: Dict[int, np.ndarray] = {}
    for node in x.tree.post_order():
        t = node.id
        if node.is_leaf:
            if t == 0:
                frames[t] = x.leaf_frames[t]
                continue
            q, r = qr_thin(x.leaf_frames[t])
            frames[t], factors[t] = q, r
            continue
        s1, s2 = node.children
        b = _apply_children(x.transfer_tensors[t], factors.pop(s1), factors.pop(s2))
        if t == 0:
            transfers[t] = b
            continue
        k, m1, m2 = b.shape
        q, r = qr_thin(b.reshape(k, m1 * m2).T)
        transfers[t] = q.T.reshape(-1, m1, m2)
        factors[t] = r
    return _rebuild(x, frames, transfers)


def orthogonal_norm(y: HtTensor) -> float:
    """Norm of a tensor whose non-root frames are already orthonormal"""
    return float(np.linalg.norm(_root_data(y)))


def norm(x: HtTensor) -> float:
    """Euclidean norm, read off the root of the orthogonalized representation"""
    return orthogonal_norm(orthogonalize(x))


def normalize(x: HtTensor) -> Tuple[HtTensor, float]:
    """Orthogonalized x / ||x|| together with ||x||"""
    y = orthogonalize(x)
    nrm = orthogonal_norm(y)
    if not np.isfinite(nrm):
        raise ZeroTensorError(f"tensor norm is not finite ({nrm})")
    if nrm == 0.0:
        raise ZeroTensorError("cannot normalize the zero tensor")
    return scale(y, 1.0 / nrm), nrm


def scale(x: HtTensor, c: float) -> HtTensor:
    """c * x, applied to the root"""
    frames, transfers = dict(x.leaf_frames), dict(x.transfer_tensors)
    if x.d == 1:
        frames[0] = frames[0] * c
    else:
        transfers[0] = transfers[0] * c
    return _rebuild(x, frames, transfers)


def hadamard(x: HtTensor, y: HtTensor) -> HtTensor:
    """Entrywise product; ranks multiply node by node"""
    check_compatible(x, y)
    frames = {}
    for t, u in x.leaf_frames.items():
        v = y.leaf_frames[t]
        frames[t] = np.einsum("ia,ib->iab", u, v).reshape(u.shape[0], u.shape[1] * v.shape[1])
    transfers = {}
    for t, b in x.transfer_tensors.items():
        c = y.transfer_tensors[t]
        kb, ab, bb = b.shape
        kc, ac, bc = c.shape
        transfers[t] = np.einsum("kab,lcd->klacbd", b, c).reshape(kb * kc, ab * ac, bb * bc)
    return _rebuild(x, frames, transfers)


def add(x: HtTensor, y: HtTensor) -> HtTensor:
    """x + y with block-diagonal transfer tensors; the root sums both blocks"""
    check_compatible(x, y)
    if x.d == 1:
        return _rebuild(x, {0: x.leaf_frames[0] + y.leaf_frames[0]}, {})
    frames = {t: np.hstack([u, y.leaf_frames[t]]) for t, u in x.leaf_frames.items()}
    transfers = {}
    for t, b in x.transfer_tensors.items():
        c = y.transfer_tensors[t]
        kb, ab, bb = b.shape
        kc, ac, bc = c.shape
        if t == 0:
            out = np.zeros((1, ab + ac, bb + bc))
            out[0, :ab, :bb] = b[0]
            out[0, ab:, bb:] = c[0]
        else:
            out = np.zeros((kb + kc, ab + ac, bb + bc))
            out[:kb, :ab, :bb] = b
            out[kb:, ab:, bb:] = c
        transfers[t] = out
    return _rebuild(x, frames, transfers)


def _take_rows(x: HtTensor, rows_per_mode: Dict[int, np.ndarray]) -> HtTensor:
    frames = dict(x.leaf_frames)
    sizes = list(x.mode_sizes)
    for mu, rows in rows_per_mode.items():
        t = x.tree.leaf_of(mu)
        frames[t] = x.leaf_frames[t][rows]
        sizes[mu - 1] = len(rows)
    return _rebuild(x, frames, dict(x.transfer_tensors), tuple(sizes))


def slice(x: HtTensor, mode: int, index_range: Tuple[int, int]) -> HtTensor:
    """Restrict mode `mode` to the 1-based inclusive range (lo, hi)"""
    if not 1 <= mode <= x.d:
        raise ValidationError(f"mode {mode} outside 1..{x.d}")
    lo, hi = int(index_range[0]), int(index_range[1])
    n = x.mode_sizes[mode - 1]
    if lo > hi:
        raise ValidationError(f"empty range {lo}..{hi}")
    if lo < 1 or hi > n:
        raise ValidationError(f"range {lo}..{hi} outside 1..{n} of mode {mode}")
    if (lo, hi) == (1, n):
        return x
    return _take_rows(x, {mode: np.arange(lo - 1, hi)})


def restrict(x: HtTensor, index_maps: Sequence[Sequence[int]]) -> HtTensor:
    """Keep, per mode, the listed 1-based rows in the listed order"""
    if len(index_maps) != x.d:
        raise ValidationError(f"expected {x.d} index maps, got {len(index_maps)}")
    rows = {}
    for mu, kept in enumerate(index_maps, 1):
        kept = np.asarray(kept, dtype=np.int64)
        if kept.size == 0:
            raise ValidationError(f"index map for mode {mu} is empty")
        if np.any(kept < 1) or np.any(kept > x.mode_sizes[mu - 1]):
            raise ValidationError(f"index map for mode {mu} out of range")
        rows[mu] = kept - 1
    return _take_rows(x, rows)


def remove_zero_rows(x: HtTensor, tol: float) -> Tuple[HtTensor, List[List[int]]]:
    """Drop leaf-frame rows with sup-norm <= tol * (frame max abs).

    Returns the reduced tensor and, per mode, the original 1-based index of every kept row.
    """
    if tol < 0:
        raise ValidationError(f"tolerance must be nonnegative, got {tol}")
    maps, rows = [], {}
    for mu in range(1, x.d + 1):
        u = np.abs(x.frame(mu))
        row_max = u.max(axis=1)
        kept = np.flatnonzero(row_max > tol * u.max())
        if kept.size == 0:
            raise ZeroTensorError(f"mode {mu} lost every row; tensor is numerically zero")
        maps.append([int(i) + 1 for i in kept])
        if kept.size < x.mode_sizes[mu - 1]:
            rows[mu] = kept
    if rows:
        logger.debug(f"Removed zero rows, sizes {x.mode_sizes} -> {tuple(len(m) for m in maps)}")
    return (_take_rows(x, rows) if rows else x), maps


def _reduced_grams(y: HtTensor) -> Dict[int, np.ndarray]:
    """Reduced Gram matrices of an orthogonalized tensor, root to leaves"""
    grams = {0: np.ones((1, 1))}
    for node in y.tree.pre_order():
        if node.is_leaf:
            continue
        t = node.id
        s1, s2 = node.children
        grams[s1], grams[s2] = _child_grams(y.transfer_tensors[t], grams[t])
    return grams


def _resolve_targets(tree: DimensionTree, target: RankTarget) -> Dict[int, int]:
    if isinstance(target, dict):
        targets = {int(t): int(k) for t, k in target.items()}
    elif isinstance(target, (int, np.integer)):
        targets = {node.id: int(target) for node in tree.nodes}
    else:
        target = list(target)
        if len(target) != len(tree.nodes):
            raise ValidationError(f"rank vector needs {len(tree.nodes)} entries, got {len(target)}")
        targets = {t: int(k) for t, k in enumerate(target)}
    targets.pop(0, None)
    for node in tree.nodes[1:]:
        if node.id not in targets:
            raise ValidationError(f"no target rank for node {node.id}")
        if targets[node.id] < 1:
            raise ValidationError(f"target ranks must be >= 1, got {targets[node.id]} at node {node.id}")
    return targets


def _pair_energy(tree: DimensionTree, discarded: Dict[int, float]) -> float:
    # the root's children share their singular values; count that pair once
    energy = sum(discarded.values())
    if tree.d > 1:
        s1, s2 = tree.root.children
        energy -= min(discarded.get(s1, 0.0), discarded.get(s2, 0.0))
    return max(energy, 0.0)


def _error_terms(tree: DimensionTree) -> int:
    return max(1, len(tree.nodes) - 2)


def _project(y: HtTensor, bases: Dict[int, np.ndarray]) -> HtTensor:
    frames, transfers = {}, {}
    for node in y.tree.nodes:
        t = node.id
        if node.is_leaf:
            frames[t] = y.leaf_frames[t] @ bases[t] if t in bases else y.leaf_frames[t]
            continue
        s1, s2 = node.children
        b = _apply_children(y.transfer_tensors[t], bases[s1].T, bases[s2].T)
        if t != 0:
            b = np.tensordot(bases[t], b, axes=([0], [0]))
        transfers[t] = b
    return _rebuild(y, frames, transfers)


def _hsvd(x: HtTensor, choose: Callable[[int, np.ndarray], int]) -> Tuple[HtTensor, TruncationReport]:
    y = orthogonalize(x)
    nrm = orthogonal_norm(y)
    if y.d == 1:
        return y, TruncationReport(ranks=y.ranks, input_norm=nrm)
    grams = _reduced_grams(y)
    bases, discarded = {}, {}
    for node in y.tree.nodes[1:]:
        w, v = sym_eig_desc(grams[node.id])
        keep = max(1, min(choose(node.id, w), w.size))
        bases[node.id] = v[:, :keep]
        discarded[node.id] = float(w[keep:].sum())
    z = _project(y, bases)
    rel = float(np.sqrt(_pair_energy(y.tree, discarded)) / nrm) if nrm > 0 else 0.0
    return z, TruncationReport(ranks=z.ranks, discarded=discarded, rel_error=rel, input_norm=nrm)


def truncate(x: HtTensor, target_ranks: RankTarget) -> Tuple[HtTensor, TruncationReport]:
    """HSVD projection onto ranks <= target_ranks (root excluded)"""
    targets = _resolve_targets(x.tree, target_ranks)
    ranks = x.ranks
    if all(targets[t] >= ranks[t] for t in targets):
        return x, TruncationReport(ranks=ranks, discarded={t: 0.0 for t in targets}, input_norm=norm(x))
    z, report = _hsvd(x, lambda t, w: targets[t])
    logger.debug(f"Truncated ranks {ranks} -> {report.ranks}, rel error {report.rel_error:.3e}")
    return z, report


def truncate_eps(x: HtTensor, eps: float) -> Tuple[HtTensor, TruncationReport]:
    """Smallest ranks whose HSVD error estimate stays <= eps * ||x||"""
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    terms = _error_terms(x.tree)

    def choose(t: int, w: np.ndarray) -> int:
        budget = (eps ** 2) * w.sum() / terms
        tails = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
        return int(np.argmax(tails <= budget))

    z, report = _hsvd(x, choose)
    logger.debug(f"Truncated to eps={eps:g}: ranks {report.ranks}, rel error {report.rel_error:.3e}")
    return z, report


def numerical_ranks(x: HtTensor, rel_tol: float) -> Tuple[int, ...]:
    """Per node, the number of singular values above rel_tol * ||x|| (root reported as 1)"""
    y = orthogonalize(x)
    nrm = orthogonal_norm(y)
    if y.d == 1 or nrm == 0.0:
        return tuple(1 for _ in y.tree.nodes)
    grams = _reduced_grams(y)
    out = [1]
    for node in y.tree.nodes[1:]:
        w, _ = sym_eig_desc(grams[node.id])
        out.append(max(1, int(np.count_nonzero(w > (rel_tol * nrm) ** 2))))
    return tuple(out)


def _split_rows(r: np.ndarray, widths: Sequence[int]) -> List[np.ndarray]:
    cuts = np.cumsum(widths)[:-1]
    return np.split(r, cuts, axis=1)


def _shared_truncate(frames: Dict[int, np.ndarray], transfers: Dict[int, np.ndarray], roots: List[np.ndarray],
                     tree: DimensionTree, targets: Dict[int, int]):
    """Jointly truncate tensors that share every non-root node (orthonormal frames)"""
    grams: Dict[int, np.ndarray] = {}
    for root in roots:
        single = {0: np.ones((1, 1))}
        for node in tree.pre_order():
            if node.is_leaf:
                continue
            t = node.id
            s1, s2 = node.children
            b = root[None, :, :] if t == 0 else transfers[t]
            single[s1], single[s2] = _child_grams(b, single[t])
        for t, g in single.items():
            if t != 0:
                grams[t] = grams[t] + g if t in grams else g
    bases = {}
    for node in tree.nodes[1:]:
        w, v = sym_eig_desc(grams[node.id])
        bases[node.id] = v[:, :max(1, min(targets[node.id], w.size))]
    new_frames = {t: u @ bases[t] for t, u in frames.items()}
    # projected transfer tensors are no longer orthonormal; QR them again leaves to root
    new_transfers, factors = {}, {}
    for node in tree.post_order():
        if node.is_leaf or node.id == 0:
            continue
        t = node.id
        s1, s2 = node.children
        b = _apply_children(transfers[t], bases[s1].T, bases[s2].T)
        b = np.tensordot(bases[t], b, axes=([0], [0]))
        if s1 in factors or s2 in factors:
            f1 = factors.pop(s1, np.eye(b.shape[1]))
            f2 = factors.pop(s2, np.eye(b.shape[2]))
            b = _apply_children(b, f1, f2)
        k, m1, m2 = b.shape
        q, r = qr_thin(b.reshape(k, m1 * m2).T)
        new_transfers[t] = q.T.reshape(-1, m1, m2)
        factors[t] = r
    s1, s2 = tree.root.children
    f1 = factors.get(s1, np.eye(bases[s1].shape[1]))
    f2 = factors.get(s2, np.eye(bases[s2].shape[1]))
    new_roots = [f1 @ bases[s1].T @ c @ bases[s2] @ f2.T for c in roots]
    return new_frames, new_transfers, new_roots


def ht_qr(tensors: Sequence[HtTensor], target_ranks: Optional[RankTarget] = None) -> HtQrResult:
    """Joint orthonormal basis of the given tensors.

    Stacked frames are QR-factored node by node, leaves to root, with the R factors
    pushed into the parents; the root coefficient vectors are then QR-factored.
    With target_ranks the shared basis is truncated before the root step.
    """
    tensors = list(tensors)
    if not tensors:
        raise ValidationError("ht_qr needs at least one tensor")
    base = tensors[0]
    for other in tensors[1:]:
        check_compatible(base, other)
    tree = base.tree
    k = len(tensors)

    frames, transfers = {}, {}
    factors: Dict[int, List[np.ndarray]] = {}
    columns = None
    for node in tree.post_order():
        t = node.id
        if node.is_leaf and t == 0:
            columns = np.hstack([x.leaf_frames[0] for x in tensors])
            continue
        if node.is_leaf:
            parts = [x.leaf_frames[t] for x in tensors]
            q, r = qr_thin(np.hstack(parts))
            frames[t] = q
            factors[t] = _split_rows(r, [p.shape[1] for p in parts])
            continue
        s1, s2 = node.children
        blocks = [_apply_children(x.transfer_tensors[t], r1, r2)
                  for x, r1, r2 in zip(tensors, factors.pop(s1), factors.pop(s2))]
        if t == 0:
            roots = [b[0] for b in blocks]
            break
        m1, m2 = blocks[0].shape[1:]
        q, r = qr_thin(np.hstack([b.reshape(b.shape[0], m1 * m2).T for b in blocks]))
        transfers[t] = q.T.reshape(-1, m1, m2)
        factors[t] = _split_rows(r, [b.shape[0] for b in blocks])

    if columns is None:
        if target_ranks is not None:
            frames, transfers, roots = _shared_truncate(frames, transfers, roots, tree,
                                                        _resolve_targets(tree, target_ranks))
        m1, m2 = roots[0].shape
        columns = np.column_stack([c.reshape(-1) for c in roots])

    q, r = qr_thin(columns)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q = q * signs[None, :]
    r = r * signs[:, None]

    q_tensors = []
    for j in range(q.shape[1]):
        if tree.d == 1:
            q_tensors.append(HtTensor(tree, base.mode_sizes, {0: q[:, j:j + 1]}, {}))
        else:
            shared = dict(transfers)
            shared[0] = q[:, j].reshape(1, m1, m2)
            q_tensors.append(HtTensor(tree, base.mode_sizes, frames, shared))

    diag = np.abs(np.diag(r))
    top = diag.max() if diag.size else 0.0
    deficient = q.shape[1] < k or bool(np.any(diag <= DEPENDENT_TOL * top))
    if deficient:
        logger.debug(f"HT-QR of {k} tensors is rank deficient (R diagonal {diag})")
    return HtQrResult(q_tensors=q_tensors, r_factor=r, rank_deficient=deficient)


def projected_matrix(a: HtTensor, q_tensors: Sequence[HtTensor]) -> np.ndarray:
    """Matrix of <q_i, a o q_j> for tensors that share every non-root node (as ht_qr returns them)"""
    q_tensors = list(q_tensors)
    if not q_tensors:
        raise ValidationError("need at least one basis tensor")
    head = q_tensors[0]
    for q in q_tensors:
        check_compatible(a, q)
    if a.d == 1:
        cols = np.hstack([q.leaf_frames[0] for q in q_tensors])
        return cols.T @ (a.leaf_frames[0][:, :1] * cols)
    grams = _trilinear_grams(a, head, head, stop_below_root=True)
    s1, s2 = a.tree.root.children
    coeff = np.stack([q.transfer_tensors[0][0] for q in q_tensors])
    # coeff[i,p,q] a[b,c] g1[b,p,r] g2[c,q,s] coeff[j,r,s] -> [i,j]
    inner = np.tensordot(a.transfer_tensors[0][0], grams[s1], axes=([0], [0]))
    inner = np.tensordot(inner, grams[s2], axes=([0], [0]))
    inner = np.tensordot(coeff, inner, axes=([1, 2], [0, 2]))
    return np.tensordot(inner, coeff, axes=([1, 2], [1, 2]))
