import numpy as np
import pytest

from streamformer.attention import KVMemory, base_attention
from streamformer.config import FeedForward, ModelConfig, Norm
from streamformer.encoder import (combined_ff, gelu, layer_forward_window,
                                  layer_step_continual)
from streamformer.numerics import Activation
from streamformer.model import random_model


def make_config(**kw):
    base = dict(depth=1, window=4, dim=8, heads=2, precision=64)
    base.update(kw)
    return ModelConfig(**base)


def fresh_mems(config):
    return [KVMemory(config.window - 1, config.head_dim, dtype=np.float64)
            for _ in range(config.heads)]


def layer_of(config, seed=0):
    return random_model(config, seed).layers[0]


class TestContinualLayerStep:
    def test_zero_rezero_scale_is_identity(self):
        cfg = make_config(norm=Norm.REZERO, rezero_scale=0.0)
        w = layer_of(cfg)
        x = np.random.default_rng(0).standard_normal(8)
        y = layer_step_continual(x, w, fresh_mems(cfg), cfg, position=0)
        np.testing.assert_array_equal(y, x)

    def test_zero_weights_layernorm_output(self):
        cfg = make_config(norm=Norm.LAYERNORM)
        w = layer_of(cfg)
        for arr in (w.w_q, w.w_k, w.w_v, w.w_o, w.ff_w1, w.ff_w2):
            arr[:] = 0.0
        x = np.random.default_rng(1).standard_normal(8)
        y = layer_step_continual(x, w, fresh_mems(cfg), cfg, position=0)
        # attention and ff branches vanish, so the output is norm(norm(x))
        mean = x.mean()
        z = (x - mean) / np.sqrt(((x - mean) ** 2).mean() + 1e-5)
        z2 = (z - z.mean()) / np.sqrt(((z - z.mean()) ** 2).mean() + 1e-5)
        np.testing.assert_allclose(y, z2, rtol=1e-12)

    @pytest.mark.parametrize("act", [Activation.SOFTMAX, Activation.SOFT])
    @pytest.mark.parametrize("norm", [Norm.LAYERNORM, Norm.REZERO])
    @pytest.mark.parametrize("ff", [FeedForward.GELU, FeedForward.LINEAR])
    @pytest.mark.parametrize("positional", ["none", "rope"])
    def test_stream_equals_windowed_last_row(self, act, norm, ff, positional):
        cfg = make_config(activation=act, norm=norm, ff=ff, positional=positional)
        w = layer_of(cfg, seed=3)
        rng = np.random.default_rng(17)
        X = rng.standard_normal((10, 8))
        mems = fresh_mems(cfg)
        for t in range(10):
            y_stream = layer_step_continual(X[t], w, mems, cfg, position=t)
            start = max(0, t - cfg.window + 1)
            y_window = layer_forward_window(X[start: t + 1], w, cfg,
                                            pos_offset=start)[-1]
            np.testing.assert_allclose(y_stream, y_window, atol=1e-10)

    def test_single_head_matches_manual_computation(self):
        cfg = make_config(heads=1, dim=4, window=3, ff=FeedForward.LINEAR,
                          norm=Norm.REZERO, rezero_scale=0.5)
        w = layer_of(cfg, seed=5)
        x = np.random.default_rng(6).standard_normal(4)
        y = layer_step_continual(x, w, fresh_mems(cfg), cfg, position=0)
        # single token, empty memory: softmax weight is 1 on itself
        alpha = x @ w.w_v
        z = x + 0.5 * (alpha @ w.w_o)
        want = z + 0.5 * (z @ w.ff_w1 @ w.ff_w2)
        np.testing.assert_allclose(y, want, rtol=1e-12)

    def test_multi_head_consistency_with_one_wide_head(self):
        # h=1 with dim == head_dim equals computing the single head by hand
        cfg = make_config(heads=1, dim=6, window=4)
        w = layer_of(cfg, seed=9)
        rng = np.random.default_rng(10)
        X = rng.standard_normal((6, 6))
        got = layer_forward_window(X, w, cfg)
        q, k, v = X @ w.w_q, X @ w.w_k, X @ w.w_v
        alpha = base_attention(q, k, v, cfg.activation)
        z = alpha @ w.w_o + X
        mean = z.mean(axis=1, keepdims=True)
        z = (z - mean) / np.sqrt(((z - mean) ** 2).mean(axis=1, keepdims=True) + 1e-5)
        f = gelu(z @ w.ff_w1) @ w.ff_w2 + z
        mean = f.mean(axis=1, keepdims=True)
        want = (f - mean) / np.sqrt(((f - mean) ** 2).mean(axis=1, keepdims=True) + 1e-5)
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_wrong_input_dim(self):
        cfg = make_config()
        with pytest.raises(ValueError):
            layer_step_continual(np.zeros(5), layer_of(cfg), fresh_mems(cfg),
                                 cfg, position=0)


class TestWindowedLayer:
    def test_window_one_reduces_to_continual_step(self):
        cfg = make_config(window=1)
        w = layer_of(cfg, seed=2)
        x = np.random.default_rng(2).standard_normal(8)
        stepped = layer_step_continual(x, w, fresh_mems(cfg), cfg, position=0)
        windowed = layer_forward_window(x[None, :], w, cfg)[0]
        np.testing.assert_allclose(stepped, windowed, atol=1e-12)

    def test_identical_rows_give_identical_outputs(self):
        cfg = make_config()
        w = layer_of(cfg, seed=4)
        X = np.tile(np.random.default_rng(3).standard_normal(8), (5, 1))
        out = layer_forward_window(X, w, cfg)
        for row in out[1:]:
            np.testing.assert_allclose(row, out[0], rtol=1e-12)

    def test_decoupled_value_path_superposition(self):
        # the token-mixing path is linear in the value projection, so
        # f(w_v = A + B) == f(A) + f(B) - f(0)
        cfg = make_config(activation=Activation.SOFT, norm=Norm.REZERO,
                          ff=FeedForward.LINEAR)
        rng = np.random.default_rng(8)
        X = rng.standard_normal((6, 8))
        w = layer_of(cfg, seed=7)
        wa = rng.standard_normal((8, 8)) / np.sqrt(8)
        wb = rng.standard_normal((8, 8)) / np.sqrt(8)

        def run(w_v):
            w.w_v = w_v
            return layer_forward_window(X, w, cfg)

        combined = run(wa + wb)
        parts = run(wa) + run(wb) - run(np.zeros((8, 8)))
        np.testing.assert_allclose(combined, parts, atol=1e-8)

    def test_shape_mismatch(self):
        cfg = make_config()
        with pytest.raises(ValueError):
            layer_forward_window(np.zeros((3, 5)), layer_of(cfg), cfg)


class TestCombinedFF:
    def test_identity_blocks(self):
        cfg = make_config(dim=4, d_ff=4, ff=FeedForward.LINEAR)
        w = layer_of(cfg)
        w.ff_w1 = np.eye(4)
        w.ff_w2 = np.eye(4)
        np.testing.assert_array_equal(combined_ff(w, FeedForward.LINEAR), np.eye(4))

    def test_matches_direct_product(self):
        rng = np.random.default_rng(11)
        cfg = make_config(dim=4, d_ff=8, ff=FeedForward.LINEAR)
        w = layer_of(cfg)
        w.ff_w1 = rng.standard_normal((4, 8))
        w.ff_w2 = rng.standard_normal((8, 4))
        np.testing.assert_array_equal(combined_ff(w, FeedForward.LINEAR),
                                      w.ff_w1 @ w.ff_w2)
        # the collapsed map reproduces the block itself
        x = rng.standard_normal((3, 4))
        np.testing.assert_allclose(x @ combined_ff(w, FeedForward.LINEAR),
                                   (x @ w.ff_w1) @ w.ff_w2, rtol=1e-12)

    def test_zero_second_projection(self):
        cfg = make_config(dim=4, d_ff=8, ff=FeedForward.LINEAR)
        w = layer_of(cfg)
        w.ff_w2 = np.zeros((8, 4))
        np.testing.assert_array_equal(combined_ff(w, FeedForward.LINEAR),
                                      np.zeros((4, 4)))

    def test_rejected_for_nonlinear_block(self):
        cfg = make_config()
        with pytest.raises(ValueError):
            combined_ff(layer_of(cfg), FeedForward.GELU)


class TestLayerWeights:
    def test_validate_checks_shapes(self):
        cfg = make_config()
        w = layer_of(cfg)
        w.w_q = np.zeros((3, 3))
        with pytest.raises(ValueError):
            w.validate(cfg)

    def test_validate_rejects_nonfinite(self):
        cfg = make_config()
        w = layer_of(cfg)
        w.w_o[0, 0] = np.nan
        with pytest.raises(ValueError):
            w.validate(cfg)

    def test_astype_round_trip(self):
        cfg = make_config()
        w = layer_of(cfg)
        w32 = w.astype(np.float32)
        assert w32.w_q.dtype == np.float32
        assert w32.rezero_scale == w.rezero_scale
