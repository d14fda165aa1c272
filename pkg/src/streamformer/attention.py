"""Attention kernels: full-window reference attention and the continual
single-output / m-output steps over a rolling key/value memory.

A mask is expressed as a band width: ``band=None`` means full bidirectional
attention, ``band=w`` lets row i attend to rows max(0, i-w+1)..i. Computed
incrementally, band-w attention is exactly what the continual step does.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import Activation, check_finite, row_softmax, soft_activation


class KVMemory:
    """Fixed-capacity FIFO ring holding the most recent key/value rows.

    Once full, every push evicts exactly the oldest row. Reads return rows in
    oldest-to-newest order, so after t >= capacity pushes the contents are
    exactly the rows pushed at steps t-capacity .. t-1.
    """

    def __init__(self, capacity: int, head_dim: int, dtype=np.float32):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.head_dim = head_dim
        self._k = np.zeros((capacity, head_dim), dtype=dtype)
        self._v = np.zeros((capacity, head_dim), dtype=dtype)
        self._start = 0  # index of the oldest row
        self.fill = 0

    def push(self, k: np.ndarray, v: np.ndarray) -> None:
        k = np.asarray(k)
        v = np.asarray(v)
        if k.shape != (self.head_dim,) or v.shape != (self.head_dim,):
            raise ValueError(
                f"expected rows of dim {self.head_dim}, got {k.shape} / {v.shape}"
            )
        if self.capacity == 0:
            return
        if self.fill < self.capacity:
            pos = (self._start + self.fill) % self.capacity
            self.fill += 1
        else:
            pos = self._start
            self._start = (self._start + 1) % self.capacity
        self._k[pos] = k
        self._v[pos] = v

    def _ordered(self, buf: np.ndarray) -> np.ndarray:
        if self.fill < self.capacity:
            return buf[: self.fill]
        return np.concatenate([buf[self._start :], buf[: self._start]], axis=0)

    def keys(self) -> np.ndarray:
        """Stored key rows, oldest first."""
        return self._ordered(self._k)

    def values(self) -> np.ndarray:
        """Stored value rows, oldest first."""
        return self._ordered(self._v)

    def clear(self) -> None:
        self._start = 0
        self.fill = 0


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray,
            activation: Activation, mask: np.ndarray | None) -> np.ndarray:
    """Shared core: activation over permitted columns, then weighted sum."""
    head_dim = q.shape[1]
    if activation is Activation.SOFTMAX:
        scores = (q @ k.T) / math.sqrt(head_dim)
        if mask is not None:
            # Masked entries become -inf; exp turns them into exact zeros,
            # so normalization runs over the permitted columns only.
            scores = np.where(mask, scores, -np.inf)
            shifted = scores - scores.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            weights = e / e.sum(axis=-1, keepdims=True)
        else:
            weights = row_softmax(scores)
    else:
        weights = soft_activation(q, k, head_dim)
        if mask is not None:
            weights = np.where(mask, weights, 0.0)
    return check_finite(weights @ v, "attention output")


def band_mask(rows: int, cols: int, band: int | None,
              col_offset: int = 0) -> np.ndarray | None:
    """Boolean permission mask; None means everything is permitted.

    Row i may attend columns whose absolute index j (col index + col_offset)
    satisfies i-band+1 <= j <= i.
    """
    if band is None:
        return None
    if band < 1:
        raise ValueError("band must be >= 1")
    i = np.arange(rows)[:, None]
    j = np.arange(cols)[None, :] + col_offset
    return (j <= i) & (j >= i - band + 1)


def base_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                   activation: Activation, band: int | None = None) -> np.ndarray:
    """Full-window attention over n rows, bidirectional or causal-banded."""
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    if not (q.shape == k.shape == v.shape) or q.ndim != 2:
        raise ValueError(f"inconsistent shapes: {q.shape}, {k.shape}, {v.shape}")
    mask = band_mask(q.shape[0], k.shape[0], band)
    return _attend(q, k, v, activation, mask)


def continual_so_step(q_t: np.ndarray, k_t: np.ndarray, v_t: np.ndarray,
                      mem: KVMemory, activation: Activation) -> np.ndarray:
    """One single-output attention step against the rolling memory.

    Attends q_t over the stored rows plus (k_t, v_t), pushes (k_t, v_t) into
    the memory, and returns the attended output for the newest position only.
    While the memory is filling, attention simply runs over fewer rows.
    """
    q_t, k_t, v_t = np.asarray(q_t), np.asarray(k_t), np.asarray(v_t)
    if not (q_t.shape == k_t.shape == v_t.shape == (mem.head_dim,)):
        raise ValueError(
            f"expected vectors of dim {mem.head_dim}, got "
            f"{q_t.shape}/{k_t.shape}/{v_t.shape}"
        )
    keys = np.concatenate([mem.keys(), k_t[None, :]], axis=0)
    values = np.concatenate([mem.values(), v_t[None, :]], axis=0)
    out = _attend(q_t[None, :], keys, values, activation, None)[0]
    mem.push(k_t, v_t)
    return out


def m_output_step(q_new: np.ndarray, k_new: np.ndarray, v_new: np.ndarray,
                  mem: KVMemory, activation: Activation) -> np.ndarray:
    """Attention step ingesting m tokens at once.

    Every new token attends jointly over all memory rows plus all m new
    tokens (for softmax the normalization runs over that concatenated row),
    then the memory rolls by m: the m new rows are pushed, evicting the m
    oldest. The implied window size is mem.capacity + m, so a step with more
    new tokens than the window admits is unrepresentable by construction.
    m == 1 reduces to continual_so_step.
    """
    q_new, k_new, v_new = np.asarray(q_new), np.asarray(k_new), np.asarray(v_new)
    if not (q_new.shape == k_new.shape == v_new.shape) or q_new.ndim != 2:
        raise ValueError(
            f"inconsistent shapes: {q_new.shape}, {k_new.shape}, {v_new.shape}"
        )
    if q_new.shape[1] != mem.head_dim:
        raise ValueError(f"expected feature dim {mem.head_dim}, got {q_new.shape[1]}")
    m = q_new.shape[0]
    if m < 1:
        raise ValueError("need at least one new token")
    keys = np.concatenate([mem.keys(), k_new], axis=0)
    values = np.concatenate([mem.values(), v_new], axis=0)
    out = _attend(q_new, keys, values, activation, None)
    for i in range(m):
        mem.push(k_new[i], v_new[i])
    return out
