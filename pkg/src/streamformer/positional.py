"""Circular positional embeddings for unbounded step indices.

Two kinds are supported: rotary embeddings (pairwise feature rotation by a
position-dependent angle, circular by construction) and a recycling table
added to the token modulo a fixed period. Both keep working at arbitrary
step indices, which absolute learned embeddings cannot do.
"""

from __future__ import annotations

import numpy as np


def _rope_angles(head_dim: int, base: float) -> np.ndarray:
    # theta_i = base^(-2i/head_dim), one angle rate per feature pair
    i = np.arange(head_dim // 2, dtype=np.float64)
    return base ** (-2.0 * i / head_dim)


def rope_rotate(x: np.ndarray, position: int, base: float = 10000.0) -> np.ndarray:
    """Rotate consecutive feature pairs of a vector by position * theta_i.

    Norm-preserving; position 0 returns x unchanged.
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    return rope_rotate_rows(x[None, :], np.array([position]), base)[0]


def rope_rotate_rows(
    x: np.ndarray, positions: np.ndarray, base: float = 10000.0
) -> np.ndarray:
    """Rotate each row of x at its own position index."""
    x = np.asarray(x)
    rows, head_dim = x.shape
    if head_dim % 2 != 0:
        raise ValueError(f"rotary embedding needs an even dimension, got {head_dim}")
    theta = _rope_angles(head_dim, base)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * theta[None, :]
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def recycling_embed(token: np.ndarray, step: int, table: np.ndarray) -> np.ndarray:
    """Add the table row for this step, wrapping modulo the table period."""
    token = np.asarray(token)
    table = np.asarray(table)
    if table.ndim != 2 or token.shape[-1] != table.shape[1]:
        raise ValueError(
            f"token dim {token.shape[-1]} does not match table row dim {table.shape}"
        )
    period = table.shape[0]
    return token + table[step % period].astype(token.dtype)
