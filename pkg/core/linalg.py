"""Small dense kernels used by the HT arithmetic.

Matrices handled here are frames (n x r), matricized transfer tensors
(r1*r2 x r) and Gram matrices (r x r), so LAPACK through scipy is used as is.
"""

from typing import Tuple

import numpy as np
import scipy.linalg

EIG_FLOOR = 1e-14


def qr_thin(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Economic QR; for a wide m x n input q is m x m and r is m x n"""
    q, r = scipy.linalg.qr(np.asarray(a, dtype=float), mode="economic")
    return q, r


def sym_eig_desc(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric PSD matrix, largest first, noise floored at zero"""
    g = np.asarray(g, dtype=float)
    w, v = scipy.linalg.eigh((g + g.T) / 2.0)
    w, v = w[::-1], v[:, ::-1]
    top = w[0] if w.size else 0.0
    w = np.where(w > EIG_FLOOR * max(top, 0.0), w, 0.0)
    return w, v


def ritz_values(b: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetrized matrix ordered by decreasing magnitude"""
    b = np.asarray(b, dtype=float)
    w = scipy.linalg.eigvalsh((b + b.T) / 2.0)
    order = np.argsort(-np.abs(w), kind="stable")
    return w[order]
