"""Dense numeric kernels shared by every other module.

Matrices are plain 2-D numpy arrays, row-major, in float32 or float64.
Verification suites run in float64; inference and benchmarking default to
float32. Kernels never let NaN/Inf escape: a non-finite result raises
instead of propagating.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

DEFAULT_DTYPE = np.float32
VERIFY_DTYPE = np.float64


class Activation(str, Enum):
    """Attention activation kind.

    SOFTMAX is the usual row-normalized exponential of scaled dot products.
    SOFT is an unnormalized Gaussian kernel on pairwise squared Euclidean
    distances; the absence of row normalization is what makes attention
    outputs additive over key/value partitions.
    """

    SOFTMAX = "softmax"
    SOFT = "soft"


def as_matrix(x, dtype=None) -> np.ndarray:
    """Coerce to a 2-D contiguous array, optionally casting."""
    m = np.asarray(x, dtype=dtype)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return np.ascontiguousarray(m)


def check_finite(m: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"non-finite values in {what}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed accumulation order.

    Delegates to numpy's single product routine, which is deterministic for
    identical inputs within one build: repeated calls are bit-identical.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul result")


def row_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability.

    Each output row is non-negative and sums to 1 (within 1e-6).
    """
    scores = np.asarray(scores)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite input to row_softmax")
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return check_finite(out, "row_softmax result")


def pairwise_sq_euclid(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance between every row of q and every row of k.

    Entry (i, j) = sum_c (q[i,c] - k[j,c])^2, computed from the literal
    definition (not the norm expansion) so all entries are exactly >= 0.
    """
    q = as_matrix(q)
    k = as_matrix(k)
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"feature dims differ: {q.shape[1]} vs {k.shape[1]}")
    diff = q[:, None, :] - k[None, :, :]
    return check_finite(np.einsum("ijc,ijc->ij", diff, diff), "pairwise_sq_euclid result")


def soft_activation(q: np.ndarray, k: np.ndarray, head_dim: int) -> np.ndarray:
    """Unnormalized distance-kernel attention weights.

    Entry (i, j) = exp(-||q_i - k_j||^2 / (2 sqrt(head_dim))). No row
    normalization is applied; every entry lies in (0, 1].
    """
    if head_dim == 0:
        raise ValueError("head_dim must be positive")
    q = as_matrix(q)
    k = as_matrix(k)
    if q.shape[1] != head_dim or k.shape[1] != head_dim:
        raise ValueError(
            f"expected feature dim {head_dim}, got q {q.shape[1]} / k {k.shape[1]}"
        )
    d2 = pairwise_sq_euclid(q, k)
    out = np.exp(-d2 / (2.0 * math.sqrt(head_dim)))
    return check_finite(out, "soft_activation result")
