"""Layer stacks and stream state.

Three execution forms of the same weights:

* continual streaming: one token in, one attended token out, each layer
  keeping a rolling key/value memory (linear per-step cost);
* causal-banded oracle: full recompute over the whole history with every
  layer restricted to a backward band of the window size -- step for step
  this reproduces the continual outputs exactly;
* bidirectional oracle: per step, full recompute of the stack over the most
  recent window only, reading the last position -- the conventional
  sliding-window model the continual stack is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import KVMemory
from .config import Mode, ModelConfig
from .encoder import LayerWeights, layer_forward_window, layer_step_continual
from .positional import recycling_embed


@dataclass
class Model:
    config: ModelConfig
    layers: list[LayerWeights]
    recycling_table: np.ndarray | None = None

    def validate(self) -> "Model":
        self.config.validate()
        if len(self.layers) != self.config.depth:
            raise ValueError(
                f"config says depth {self.config.depth}, got {len(self.layers)} layers"
            )
        for w in self.layers:
            w.validate(self.config)
        if self.config.positional == "recycling":
            if self.recycling_table is None:
                raise ValueError("recycling positional embedding needs a table")
            if self.recycling_table.shape != (self.config.recycling_period, self.config.dim):
                raise ValueError(
                    f"recycling table shape {self.recycling_table.shape} does not match "
                    f"(period {self.config.recycling_period}, dim {self.config.dim})"
                )
        return self

    def astype(self, dtype) -> "Model":
        table = None if self.recycling_table is None else self.recycling_table.astype(dtype)
        return Model(self.config, [w.astype(dtype) for w in self.layers], table)


class StreamState:
    """Per-stream stack of head memories plus a monotone step counter."""

    def __init__(self, model: Model):
        cfg = model.config
        self._capacity = cfg.window - 1
        self._head_dim = cfg.head_dim
        self._heads = cfg.heads
        self._depth = cfg.depth
        self._dtype = model.layers[0].w_q.dtype
        self.mems: list[list[KVMemory]] = []
        self.step = 0
        self.reset()

    def reset(self) -> "StreamState":
        """Empty all memories and zero the step counter."""
        self.mems = [
            [KVMemory(self._capacity, self._head_dim, self._dtype)
             for _ in range(self._heads)]
            for _ in range(self._depth)
        ]
        self.step = 0
        return self


def new_state(model: Model) -> StreamState:
    return StreamState(model)


def _embed(model: Model, x_t: np.ndarray, step: int) -> np.ndarray:
    if model.config.positional == "recycling":
        return recycling_embed(x_t, step, model.recycling_table)
    return x_t


def stream_step(model: Model, state: StreamState, x_t: np.ndarray) -> np.ndarray:
    """Advance the stream by one token; returns the newest attended token.

    The token passes through the positional embedding at the current step
    index, then through every layer's continual step, each layer feeding the
    next. Memories receive exactly one push per layer per call.
    """
    x = np.asarray(x_t)
    if x.shape != (model.config.dim,):
        raise ValueError(f"expected a token of dim {model.config.dim}, got {x.shape}")
    x = _embed(model, x, state.step)
    for layer_idx, weights in enumerate(model.layers):
        x = layer_step_continual(
            x, weights, state.mems[layer_idx], model.config, position=state.step
        )
    state.step += 1
    return x


def stream_forward(model: Model, X: np.ndarray, state: StreamState | None = None) -> np.ndarray:
    """Stream every row of X in order; returns the stacked outputs."""
    X = np.asarray(X)
    if state is None:
        state = new_state(model)
    if X.shape[0] == 0:
        return np.zeros((0, model.config.dim), dtype=X.dtype)
    return np.stack([stream_step(model, state, row) for row in X])


def window_forward(model: Model, X: np.ndarray, band: int | None = None,
                   pos_offset: int = 0) -> np.ndarray:
    """One recompute of the whole stack over the given rows."""
    Y = np.asarray(X)
    if Y.shape[0] == 0:
        return np.zeros((0, model.config.dim), dtype=Y.dtype)
    if model.config.positional == "recycling":
        Y = np.stack([
            recycling_embed(row, pos_offset + i, model.recycling_table)
            for i, row in enumerate(Y)
        ])
    for weights in model.layers:
        Y = layer_forward_window(Y, weights, model.config, band=band,
                                 pos_offset=pos_offset)
    return Y


def oracle_causal_banded(model: Model, X: np.ndarray) -> np.ndarray:
    """Full recompute with a backward band of the window size at every layer.

    Row t of the result equals the continual stream's output at step t.
    """
    return window_forward(model, X, band=model.config.window, pos_offset=0)


def oracle_bidirectional(model: Model, X: np.ndarray) -> np.ndarray:
    """Sliding-window recompute trajectory.

    Row t is the last-position output of the full stack recomputed
    bidirectionally over the most recent window ending at t (all available
    tokens while the history is shorter than the window).
    """
    X = np.asarray(X)
    if X.shape[0] == 0:
        return np.zeros((0, model.config.dim), dtype=X.dtype)
    n = model.config.window
    rows = []
    for t in range(X.shape[0]):
        start = max(0, t - n + 1)
        out = window_forward(model, X[start : t + 1], band=None, pos_offset=start)
        rows.append(out[-1])
    return np.stack(rows)


def forward(model: Model, X: np.ndarray) -> np.ndarray:
    """Run X under the execution mode named in the config."""
    mode = model.config.mode
    if mode is Mode.CONTINUAL:
        return stream_forward(model, X)
    if mode is Mode.ORACLE_BIDIRECTIONAL:
        return oracle_bidirectional(model, X)
    return oracle_causal_banded(model, X)


def effective_receptive_field(depth: int, window: int) -> int:
    """How many inputs can influence the newest output of a deep stack.

    Each layer reaches window-1 steps further into the past, so a stack of
    depth layers sees depth*(window-1) past tokens plus the current one.
    """
    if depth < 1 or window < 1:
        raise ValueError("depth and window must be >= 1")
    return depth * (window - 1) + 1


def random_model(config: ModelConfig, seed: int, scale: float = 1.0) -> Model:
    """Gaussian-initialized weights for tests, benchmarks and fixtures.

    Projections are scaled by 1/sqrt(dim) so activations stay O(1) through
    deep stacks; normalization scales start at one, offsets at zero.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    d, d_ff = config.dim, config.d_ff
    dtype = config.dtype

    def mat(rows, cols, denom):
        return (scale * rng.standard_normal((rows, cols)) / np.sqrt(denom)).astype(dtype)

    layers = []
    for _ in range(config.depth):
        layers.append(LayerWeights(
            w_q=mat(d, d, d), w_k=mat(d, d, d), w_v=mat(d, d, d), w_o=mat(d, d, d),
            ff_w1=mat(d, d_ff, d), ff_w2=mat(d_ff, d, d_ff),
            rezero_scale=1.0 / config.depth,
        ))
    table = None
    if config.positional == "recycling":
        table = (0.1 * rng.standard_normal((config.recycling_period, d))).astype(dtype)
    return Model(config, layers, table).validate()
