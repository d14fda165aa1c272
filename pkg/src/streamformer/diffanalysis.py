"""Numerical study of how the streaming stack differs from the
bidirectional sliding-window stack it was derived from.

For a stream of length L with window n, the comparison fixes the final step
t = L-1 and looks at the positions of the final window. The bidirectional
stack recomputes everything over that window; the streaming stack's value
for position i is whatever it computed back when i was the newest token.
Per layer and position we record the difference of the attention-branch
outputs (after the residual scale, before the out projection): that is the
quantity whose propagation into the next layer's key/value inputs is exactly
linear in the decoupled profile, where the out projection, feed-forward and
skip contributions collapse into a single matrix acting on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, Norm
from .encoder import (LayerWeights, _affine, _split_heads, combined_ff,
                      layer_forward_window, layer_step_continual)
from .model import Model, _embed, new_state
from .numerics import Activation, row_softmax, soft_activation
from .positional import recycling_embed, rope_rotate_rows


@dataclass
class StackTrace:
    """Per-layer internals of one run: inputs, attention outputs, outputs.

    Every field is a list over layers of (steps, dim) arrays. inputs[0] is
    the token stream after positional embedding; outputs[l] == inputs[l+1].
    """

    inputs: list[np.ndarray]
    alphas: list[np.ndarray]
    outputs: list[np.ndarray]


def stream_trace(model: Model, X: np.ndarray) -> StackTrace:
    """Stream X and record every layer's per-step internals."""
    X = np.asarray(X)
    depth = model.config.depth
    inputs = [[] for _ in range(depth)]
    alphas = [[] for _ in range(depth)]
    outputs = [[] for _ in range(depth)]
    state = new_state(model)
    for row in X:
        x = _embed(model, row, state.step)
        for l, weights in enumerate(model.layers):
            inputs[l].append(x)
            bucket: list = []
            x = layer_step_continual(x, weights, state.mems[l], model.config,
                                     position=state.step, collect_alpha=bucket)
            alphas[l].append(bucket[0])
            outputs[l].append(x)
        state.step += 1
    return StackTrace([np.stack(r) for r in inputs],
                      [np.stack(r) for r in alphas],
                      [np.stack(r) for r in outputs])


def window_trace(model: Model, X: np.ndarray, band: int | None,
                 pos_offset: int) -> StackTrace:
    """One recompute over the given rows, recording per-layer internals."""
    Y = np.asarray(X)
    if model.config.positional == "recycling":
        Y = np.stack([recycling_embed(row, pos_offset + i, model.recycling_table)
                      for i, row in enumerate(Y)])
    inputs, alphas, outputs = [], [], []
    for weights in model.layers:
        inputs.append(Y)
        bucket: list = []
        Y = layer_forward_window(Y, weights, model.config, band=band,
                                 pos_offset=pos_offset, collect_alpha=bucket)
        alphas.append(bucket[0])
        outputs.append(Y)
    return StackTrace(inputs, alphas, outputs)


def _branch_scale(config: ModelConfig, weights: LayerWeights) -> float:
    if config.norm is Norm.REZERO:
        return config.effective_rezero_scale(weights.rezero_scale)
    return 1.0


@dataclass
class DeltaReport:
    """Measured per-layer, per-position streaming-vs-bidirectional deltas."""

    config: ModelConfig
    seed: int | None
    positions: list[int]                 # absolute indices of the final window
    delta: list[list[float]]             # [layer][position] norm of the raw vector
    raw: list[np.ndarray]                # [layer] (n, dim) difference vectors
    recon_max_err: float | None = None   # first-layer reconstruction mismatch, SOFT only

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "positions": self.positions,
            "delta": self.delta,
            "raw": [r.tolist() for r in self.raw],
            "recon_max_err": self.recon_max_err,
        }


def _final_window_traces(model: Model, X: np.ndarray):
    X = np.asarray(X)
    n = model.config.window
    L = X.shape[0]
    if L < n:
        raise ValueError(f"stream length {L} is shorter than the window {n}")
    t = L - 1
    w0 = t - n + 1
    ct = stream_trace(model, X)
    bt = window_trace(model, X[w0:], band=None, pos_offset=w0)
    return ct, bt, w0, t


def _raw_deltas(model: Model, ct: StackTrace, bt: StackTrace, w0: int) -> list[np.ndarray]:
    return [
        _branch_scale(model.config, weights) * (ct.alphas[l][w0:] - bt.alphas[l])
        for l, weights in enumerate(model.layers)
    ]


def measure_deltas(model: Model, X: np.ndarray, seed: int | None = None) -> DeltaReport:
    """Run both stacks on X with identical weights and report the deltas.

    For SOFT configurations the first-layer deltas are additionally
    reconstructed from scratch out of the two attention terms that do not
    cancel between the stacks' windows (the streaming-only tokens minus the
    bidirectional-only tokens), and the worst mismatch against the measured
    vectors is reported.
    """
    ct, bt, w0, t = _final_window_traces(model, X)
    raw = _raw_deltas(model, ct, bt, w0)
    delta = [[float(np.linalg.norm(row)) for row in r] for r in raw]

    recon_max_err = None
    if model.config.activation is Activation.SOFT:
        recon_max_err = _first_layer_reconstruction_error(model, ct, raw[0], w0, t)

    return DeltaReport(config=model.config, seed=seed,
                       positions=list(range(w0, t + 1)),
                       delta=delta, raw=raw, recon_max_err=recon_max_err)


def _project_heads(rows: np.ndarray, w: np.ndarray, b, config: ModelConfig,
                   positions: np.ndarray | None) -> list[np.ndarray]:
    parts = _split_heads(_affine(rows, w, b), config.heads)
    if config.positional == "rope" and positions is not None:
        parts = [rope_rotate_rows(p, positions, config.rope_base) for p in parts]
    return parts


def _first_layer_reconstruction_error(model: Model, ct: StackTrace,
                                      raw0: np.ndarray, w0: int, t: int) -> float:
    """Rebuild the first-layer deltas from explicit attention terms.

    The streaming window for position i and the bidirectional window ending
    at t share the tokens in between; under the unnormalized activation the
    shared part cancels, leaving attention over the streaming-only tokens
    minus attention over the bidirectional-only ones.
    """
    cfg = model.config
    weights = model.layers[0]
    scale = _branch_scale(cfg, weights)
    n, heads, dh = cfg.window, cfg.heads, cfg.head_dim
    tokens = ct.inputs[0]  # post-embedding layer-0 inputs for the whole stream
    all_pos = np.arange(tokens.shape[0])
    q_heads = _project_heads(tokens, weights.w_q, weights.b_q, cfg, all_pos)
    k_heads = _project_heads(tokens, weights.w_k, weights.b_k, cfg, all_pos)
    v_heads = _split_heads(_affine(tokens, weights.w_v, weights.b_v), heads)

    worst = 0.0
    for i in range(w0, t + 1):
        stream_only = np.arange(max(0, i - n + 1), max(0, t - n + 1))
        base_only = np.arange(i + 1, t + 1)
        parts = []
        for h in range(heads):
            q_i = q_heads[h][i][None, :]
            acc = np.zeros(dh, dtype=tokens.dtype)
            if stream_only.size:
                acc = acc + (soft_activation(q_i, k_heads[h][stream_only], dh)
                             @ v_heads[h][stream_only])[0]
            if base_only.size:
                acc = acc - (soft_activation(q_i, k_heads[h][base_only], dh)
                             @ v_heads[h][base_only])[0]
            parts.append(acc)
        recon = scale * np.concatenate(parts)
        worst = max(worst, float(np.max(np.abs(recon - raw0[i - w0]))))
    return worst


@dataclass
class PropagationFactors:
    """Linear maps carrying attention-branch differences across one layer
    boundary into the next layer's key and value inputs."""

    mu: np.ndarray
    lambda_k: np.ndarray
    lambda_v: np.ndarray


def propagation_factors(w_prev: LayerWeights, w_next: LayerWeights,
                        config: ModelConfig) -> PropagationFactors:
    """mu = W_O (I + W_FF * scale); lambda chains mu into the next layer's
    key/value projections. All maps right-multiply row vectors."""
    w_ff = combined_ff(w_prev, config.ff)
    scale = config.effective_rezero_scale(w_prev.rezero_scale)
    eye = np.eye(w_ff.shape[0], dtype=w_ff.dtype)
    mu = w_prev.w_o @ (eye + scale * w_ff)
    return PropagationFactors(mu=mu, lambda_k=mu @ w_next.w_k, lambda_v=mu @ w_next.w_v)


@dataclass
class PropagationReport:
    factors: PropagationFactors
    max_k_err: float
    max_v_err: float
    q_newest_max_diff: float
    positions: list[int]
    seed: int | None
    tolerance: float

    @property
    def passed(self) -> bool:
        return (self.max_k_err <= self.tolerance
                and self.max_v_err <= self.tolerance
                and self.q_newest_max_diff <= 1e-12)

    def to_dict(self) -> dict:
        return {
            "max_k_err": self.max_k_err,
            "max_v_err": self.max_v_err,
            "q_newest_max_diff": self.q_newest_max_diff,
            "positions": self.positions,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def verify_linear_propagation(model: Model, X: np.ndarray, seed: int | None = None,
                              tolerance: float = 1e-8) -> PropagationReport:
    """Check the exact linear facts behind the difference propagation.

    In the decoupled profile the second layer's key/value input differences
    between the two stacks must equal the first layer's raw delta matrix
    times lambda, and the newest position's query input must be identical
    across stacks (its first-layer window is the same in both).
    """
    cfg = model.config
    if not cfg.is_decoupled:
        raise ValueError("linear propagation is only defined for the decoupled profile "
                         "(unnormalized activation, rezero residuals, linear feed-forward)")
    if cfg.depth < 2:
        raise ValueError("needs at least two layers")
    for w in model.layers[:2]:
        for b in (w.b_q, w.b_k, w.b_v, w.b_o, w.b_ff1, w.b_ff2):
            if b is not None and np.any(b != 0):
                raise ValueError("decoupled profile requires zero biases")

    ct, bt, w0, t = _final_window_traces(model, X)
    raw0 = _raw_deltas(model, ct, bt, w0)[0]
    factors = propagation_factors(model.layers[0], model.layers[1], cfg)

    input_diff = ct.inputs[1][w0:] - bt.inputs[1]
    measured_k = input_diff @ model.layers[1].w_k
    measured_v = input_diff @ model.layers[1].w_v
    predicted_k = raw0 @ factors.lambda_k
    predicted_v = raw0 @ factors.lambda_v
    max_k_err = float(np.max(np.abs(measured_k - predicted_k)))
    max_v_err = float(np.max(np.abs(measured_v - predicted_v)))

    q_cont = ct.inputs[1][t] @ model.layers[1].w_q
    q_base = bt.inputs[1][-1] @ model.layers[1].w_q
    q_diff = float(np.max(np.abs(q_cont - q_base)))

    return PropagationReport(factors=factors, max_k_err=max_k_err,
                             max_v_err=max_v_err, q_newest_max_diff=q_diff,
                             positions=list(range(w0, t + 1)), seed=seed,
                             tolerance=tolerance)


def additive_split_check(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         split: int, activation: Activation) -> float:
    """Norm of alpha(all rows) - alpha(first part) - alpha(second part).

    Near zero for the unnormalized activation (sums split exactly), and
    generically far from zero for softmax, whose normalization couples the
    partitions.
    """
    q = np.atleast_2d(np.asarray(q))
    k, v = np.asarray(k), np.asarray(v)
    if not 0 < split < k.shape[0]:
        raise ValueError(f"split must lie strictly inside 1..{k.shape[0] - 1}")

    def alpha(kk, vv):
        if activation is Activation.SOFT:
            return soft_activation(q, kk, q.shape[1]) @ vv
        return row_softmax((q @ kk.T) / math.sqrt(q.shape[1])) @ vv

    whole = alpha(k, v)
    left = alpha(k[:split], v[:split])
    right = alpha(k[split:], v[split:])
    return float(np.linalg.norm(whole - left - right))
