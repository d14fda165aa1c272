"""One transformer encoder layer around an attention kernel.

Both execution forms live here: the continual step (one token against the
per-head rolling memories) and the windowed form used by the recompute
oracles. The layer supports post-norm LayerNorm or ReZero residuals, a GELU
or purely linear feed-forward block, and optional rotary embeddings applied
to queries and keys per head just before scoring. Keys enter the memory
already rotated, once, at insertion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import KVMemory, band_mask, _attend, continual_so_step
from .config import FeedForward, ModelConfig, Norm
from .numerics import check_finite
from .positional import rope_rotate_rows

LN_EPS = 1e-5


@dataclass
class LayerWeights:
    """Projection, feed-forward and normalization parameters of one layer.

    All matrices right-multiply row vectors (y = x @ w). Biases may be None,
    which means zero. norm1/norm2 hold (scale, offset) pairs; rezero_scale is
    the learned residual scale used when the config selects learned mode.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ff_w1: np.ndarray
    ff_w2: np.ndarray
    b_q: np.ndarray | None = None
    b_k: np.ndarray | None = None
    b_v: np.ndarray | None = None
    b_o: np.ndarray | None = None
    b_ff1: np.ndarray | None = None
    b_ff2: np.ndarray | None = None
    norm1_scale: np.ndarray = field(default=None)  # type: ignore[assignment]
    norm1_offset: np.ndarray = field(default=None)  # type: ignore[assignment]
    norm2_scale: np.ndarray = field(default=None)  # type: ignore[assignment]
    norm2_offset: np.ndarray = field(default=None)  # type: ignore[assignment]
    rezero_scale: float = 1.0

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.norm1_scale is None:
            self.norm1_scale = np.ones(d, dtype=self.w_q.dtype)
        if self.norm1_offset is None:
            self.norm1_offset = np.zeros(d, dtype=self.w_q.dtype)
        if self.norm2_scale is None:
            self.norm2_scale = np.ones(d, dtype=self.w_q.dtype)
        if self.norm2_offset is None:
            self.norm2_offset = np.zeros(d, dtype=self.w_q.dtype)

    def validate(self, config: ModelConfig) -> "LayerWeights":
        d, d_ff = config.dim, config.d_ff
        shapes = {
            "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
            "ff_w1": (d, d_ff), "ff_w2": (d_ff, d),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        for name in ("b_q", "b_k", "b_v", "b_o", "b_ff2"):
            b = getattr(self, name)
            if b is not None and b.shape != (d,):
                raise ValueError(f"{name} has shape {b.shape}, expected ({d},)")
        if self.b_ff1 is not None and self.b_ff1.shape != (d_ff,):
            raise ValueError(f"b_ff1 has shape {self.b_ff1.shape}, expected ({d_ff},)")
        for arr in self.arrays().values():
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite values in layer weights")
        return self

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("w_q", "w_k", "w_v", "w_o", "ff_w1", "ff_w2",
                     "b_q", "b_k", "b_v", "b_o", "b_ff1", "b_ff2",
                     "norm1_scale", "norm1_offset", "norm2_scale", "norm2_offset"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out

    def astype(self, dtype) -> "LayerWeights":
        kw = {name: arr.astype(dtype) for name, arr in self.arrays().items()}
        for name in ("b_q", "b_k", "b_v", "b_o", "b_ff1", "b_ff2"):
            kw.setdefault(name, None)
        return LayerWeights(rezero_scale=self.rezero_scale, **kw)


def _layer_norm(x: np.ndarray, scale: np.ndarray, offset: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * scale + offset


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh form, kept identical across ecosystems that lack an erf primitive
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x ** 3)))


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    y = x @ w
    return y if b is None else y + b


def _feed_forward(z: np.ndarray, w: LayerWeights, kind: FeedForward) -> np.ndarray:
    hidden = _affine(z, w.ff_w1, w.b_ff1)
    if kind is FeedForward.GELU:
        hidden = gelu(hidden)
    return _affine(hidden, w.ff_w2, w.b_ff2)


def combined_ff(weights: LayerWeights, kind: FeedForward) -> np.ndarray:
    """The feed-forward block collapsed to a single d x d map.

    Only meaningful when the block is linear; with an activation in between
    no single matrix exists and this raises.
    """
    if kind is not FeedForward.LINEAR:
        raise ValueError("combined_ff is only defined for a linear feed-forward block")
    return weights.ff_w1 @ weights.ff_w2


def _split_heads(x: np.ndarray, heads: int) -> list[np.ndarray]:
    # contiguous feature slices, one per head; works for vectors and matrices
    dh = x.shape[-1] // heads
    return [x[..., i * dh : (i + 1) * dh] for i in range(heads)]


def _residual_block(x, branch, scale, offset, config: ModelConfig, w: LayerWeights):
    if config.norm is Norm.LAYERNORM:
        return _layer_norm(x + branch, scale, offset)
    return x + config.effective_rezero_scale(w.rezero_scale) * branch


def layer_step_continual(
    x_t: np.ndarray,
    weights: LayerWeights,
    mems: list[KVMemory],
    config: ModelConfig,
    position: int,
    collect_alpha: list | None = None,
) -> np.ndarray:
    """Run one token through the layer, updating each head's memory once.

    ``position`` is the absolute step index, used only by rotary embeddings.
    When ``collect_alpha`` is given, the concatenated per-head attention
    output (before the out projection) is appended to it.
    """
    x_t = np.asarray(x_t)
    d = config.dim
    if x_t.shape != (d,):
        raise ValueError(f"expected a token of dim {d}, got shape {x_t.shape}")
    if len(mems) != config.heads:
        raise ValueError(f"expected {config.heads} head memories, got {len(mems)}")

    q = _affine(x_t, weights.w_q, weights.b_q)
    k = _affine(x_t, weights.w_k, weights.b_k)
    v = _affine(x_t, weights.w_v, weights.b_v)

    head_outs = []
    pos = np.array([position])
    for h, (qh, kh, vh) in enumerate(
        zip(_split_heads(q, config.heads), _split_heads(k, config.heads),
            _split_heads(v, config.heads))
    ):
        if config.positional == "rope":
            qh = rope_rotate_rows(qh[None, :], pos, config.rope_base)[0]
            kh = rope_rotate_rows(kh[None, :], pos, config.rope_base)[0]
        head_outs.append(continual_so_step(qh, kh, vh, mems[h], config.activation))
    alpha = np.concatenate(head_outs)
    if collect_alpha is not None:
        collect_alpha.append(alpha)

    attn_branch = _affine(alpha, weights.w_o, weights.b_o)
    z = _residual_block(x_t, attn_branch, weights.norm1_scale, weights.norm1_offset,
                        config, weights)
    ff_branch = _feed_forward(z, weights, config.ff)
    y = _residual_block(z, ff_branch, weights.norm2_scale, weights.norm2_offset,
                        config, weights)
    return check_finite(y[None, :], "layer output")[0]


def layer_forward_window(
    X: np.ndarray,
    weights: LayerWeights,
    config: ModelConfig,
    band: int | None = None,
    pos_offset: int = 0,
    collect_alpha: list | None = None,
) -> np.ndarray:
    """Windowed (recompute) form of the same layer over all rows of X.

    ``band=None`` gives full bidirectional attention; ``band=w`` restricts
    row i to rows i-w+1..i. ``pos_offset`` is the absolute index of row 0,
    so rotary embeddings see the same positions the continual form saw.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != config.dim:
        raise ValueError(f"expected (rows, {config.dim}), got {X.shape}")

    q = _affine(X, weights.w_q, weights.b_q)
    k = _affine(X, weights.w_k, weights.b_k)
    v = _affine(X, weights.w_v, weights.b_v)

    positions = np.arange(X.shape[0]) + pos_offset
    mask = band_mask(X.shape[0], X.shape[0], band)
    head_outs = []
    for qh, kh, vh in zip(_split_heads(q, config.heads),
                          _split_heads(k, config.heads),
                          _split_heads(v, config.heads)):
        if config.positional == "rope":
            qh = rope_rotate_rows(qh, positions, config.rope_base)
            kh = rope_rotate_rows(kh, positions, config.rope_base)
        head_outs.append(_attend(qh, kh, vh, config.activation, mask))
    alpha = np.concatenate(head_outs, axis=1)
    if collect_alpha is not None:
        collect_alpha.append(alpha)

    attn_branch = _affine(alpha, weights.w_o, weights.b_o)
    z = _residual_block(X, attn_branch, weights.norm1_scale, weights.norm1_offset,
                        config, weights)
    ff_branch = _feed_forward(z, weights, config.ff)
    y = _residual_block(z, ff_branch, weights.norm2_scale, weights.norm2_offset,
                        config, weights)
    return check_finite(y, "layer output")
