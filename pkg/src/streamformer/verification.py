"""Self-verification suites: every deterministic correctness property the
engine guarantees, runnable as one battery with a per-suite report.

The wall-clock latency shape check lives in the bench module and is not part
of this battery, so a fixed seed yields byte-identical report text.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .bench import count_flops
from .config import FeedForward, Mode, ModelConfig, Norm
from .diffanalysis import additive_split_check, measure_deltas, verify_linear_propagation
from .model import (effective_receptive_field, oracle_bidirectional,
                    oracle_causal_banded, random_model, stream_forward)
from .numerics import Activation
from .persistence import ChecksumError, load_model, save_model
from .positional import rope_rotate


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_err: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{self.name:<26} {status}  max_err={self.max_err:.3e}"
        if self.detail:
            text += f"  ({self.detail})"
        return text


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(want))), 1e-30)
    return float(np.max(np.abs(got - want))) / scale


def _config(depth, window, dim, heads, activation, norm, ff=FeedForward.GELU,
            positional="none") -> ModelConfig:
    return ModelConfig(depth=depth, window=window, dim=dim, heads=heads,
                       activation=activation, norm=norm, ff=ff,
                       positional=positional, precision=64)


def _decoupled(depth, window, dim, heads) -> ModelConfig:
    return _config(depth, window, dim, heads, Activation.SOFT, Norm.REZERO,
                   ff=FeedForward.LINEAR)


FULL_GRID = dict(depths=(1, 2, 4), windows=(1, 2, 4, 8), dims=(4, 16), heads=(1, 2))
QUICK_GRID = dict(depths=(1, 2), windows=(2, 4), dims=(4,), heads=(2,))


def suite_kv_cache_equivalence(seed: int, sizes: dict = FULL_GRID) -> SuiteResult:
    """Streaming equals the banded full recompute, config by config."""
    worst = 0.0
    count = 0
    for depth, window, dim, heads, act, norm in product(
        sizes["depths"], sizes["windows"], sizes["dims"], sizes["heads"],
        (Activation.SOFTMAX, Activation.SOFT), (Norm.LAYERNORM, Norm.REZERO),
    ):
        cfg = _config(depth, window, dim, heads, act, norm)
        model = random_model(cfg, seed + count)
        rng = np.random.default_rng(seed + 1000 + count)
        X = rng.standard_normal((3 * window, dim))
        worst = max(worst, _rel_err(stream_forward(model, X),
                                    oracle_causal_banded(model, X)))
        count += 1
    return SuiteResult("kv_cache_equivalence", worst <= 1e-10, worst,
                       f"{count} configs")


def suite_single_layer_base(seed: int, sizes: dict = FULL_GRID) -> SuiteResult:
    """A one-layer stream matches the bidirectional sliding-window model."""
    worst = 0.0
    count = 0
    for window, act, norm in product(
        sizes["windows"], (Activation.SOFTMAX, Activation.SOFT),
        (Norm.LAYERNORM, Norm.REZERO),
    ):
        cfg = _config(1, window, 8, 2, act, norm)
        model = random_model(cfg, seed + count)
        rng = np.random.default_rng(seed + 2000 + count)
        X = rng.standard_normal((3 * window, 8))
        worst = max(worst, _rel_err(stream_forward(model, X),
                                    oracle_bidirectional(model, X)))
        count += 1
    return SuiteResult("single_layer_base", worst <= 1e-10, worst,
                       f"{count} configs")


def suite_first_layer_delta(seed: int, cases: int = 10) -> SuiteResult:
    """Newest-position first-layer delta is zero and the explicit two-term
    reconstruction reproduces the measured per-position deltas."""
    rng = np.random.default_rng(seed)
    worst_at_t = 0.0
    worst_recon = 0.0
    for i in range(cases):
        window = int(rng.choice([2, 3, 4, 8]))
        dim = int(rng.choice([4, 8]))
        depth = int(rng.choice([1, 2]))
        cfg = _decoupled(depth, window, dim, heads=1 if dim == 4 else 2)
        model = random_model(cfg, seed + 30 + i)
        X = np.random.default_rng(seed + 60 + i).standard_normal((3 * window, dim))
        report = measure_deltas(model, X, seed=seed + i)
        worst_at_t = max(worst_at_t, report.delta[0][-1])
        worst_recon = max(worst_recon, report.recon_max_err)
    passed = worst_at_t <= 1e-12 and worst_recon <= 1e-10
    return SuiteResult("first_layer_delta", passed, max(worst_at_t, worst_recon),
                       f"delta_at_t={worst_at_t:.2e} recon={worst_recon:.2e}")


def suite_additive_decoupling(seed: int, cases: int = 100) -> SuiteResult:
    """Partition additivity holds for the unnormalized activation across
    random instances and fails for softmax (negative control)."""
    rng = np.random.default_rng(seed)
    soft_worst = 0.0
    softmax_big = 0
    for _ in range(cases):
        dh = int(rng.integers(2, 8))
        rows = int(rng.integers(3, 10))
        q = rng.standard_normal((1, dh))
        k = rng.standard_normal((rows, dh))
        v = rng.standard_normal((rows, dh))
        c = int(rng.integers(1, rows))
        soft_worst = max(soft_worst, additive_split_check(q, k, v, c, Activation.SOFT))
        if additive_split_check(q, k, v, c, Activation.SOFTMAX) > 1e-3:
            softmax_big += 1
    passed = soft_worst <= 1e-6 and softmax_big >= cases - 1
    return SuiteResult("additive_decoupling", passed, soft_worst,
                       f"softmax_nonadditive={softmax_big}/{cases}")


def suite_linear_propagation(seed: int, seeds: int = 20) -> SuiteResult:
    """Second-layer K/V input differences equal the first-layer delta matrix
    times the propagation factors, across random two-layer models."""
    combos = list(product((2, 4, 8), (4, 8)))
    worst = 0.0
    worst_q = 0.0
    for i in range(seeds):
        window, dim = combos[i % len(combos)]
        cfg = _decoupled(2, window, dim, heads=2)
        model = random_model(cfg, seed + 100 + i)
        X = np.random.default_rng(seed + 200 + i).standard_normal((3 * window, dim))
        report = verify_linear_propagation(model, X, seed=seed + i)
        worst = max(worst, report.max_k_err, report.max_v_err)
        worst_q = max(worst_q, report.q_newest_max_diff)
    passed = worst <= 1e-8 and worst_q <= 1e-12
    return SuiteResult("linear_propagation", passed, worst,
                       f"{seeds} seeds, q_diff={worst_q:.2e}")


def suite_receptive_field(seed: int) -> SuiteResult:
    """Perturbing an input changes the newest output exactly when it lies
    within depth*(window-1) steps of the present, bit for bit."""
    failures = 0
    checked = 0
    for depth, window in product((1, 2, 3), (2, 3, 4)):
        reach = effective_receptive_field(depth, window) - 1
        cfg = _config(depth, window, 8, 2, Activation.SOFTMAX, Norm.LAYERNORM)
        model = random_model(cfg, seed + depth * 10 + window)
        length = reach + 4
        rng = np.random.default_rng(seed + depth * 100 + window)
        X = rng.standard_normal((length, 8))
        t = length - 1
        y_base = stream_forward(model, X)[t]
        for j in range(1, t + 1):
            Xp = X.copy()
            Xp[t - j] += 1.0
            y_pert = stream_forward(model, Xp)[t]
            identical = np.array_equal(y_base, y_pert)
            checked += 1
            if j <= reach and identical:
                failures += 1
            if j > reach and not identical:
                failures += 1
    return SuiteResult("receptive_field", failures == 0, float(failures),
                       f"{checked} perturbations")


def suite_flops_shape(seed: int) -> SuiteResult:
    """Continual attention terms scale linearly in n, recompute score terms
    quadratically, and totals scale with depth."""
    cfg = ModelConfig(depth=1, window=8, dim=16, heads=2)
    errs = []
    for n in (4, 8, 16, 64):
        c1 = count_flops(cfg, Mode.CONTINUAL, n)
        c2 = count_flops(cfg, Mode.CONTINUAL, 2 * n)
        errs.append(abs(c2.scores - 2 * c1.scores))
        errs.append(abs(c2.weighted_sum - 2 * c1.weighted_sum))
        o1 = count_flops(cfg, Mode.ORACLE_BIDIRECTIONAL, n)
        o2 = count_flops(cfg, Mode.ORACLE_BIDIRECTIONAL, 2 * n)
        errs.append(abs(o2.scores - 4 * o1.scores))
    two = replace(cfg, depth=2)
    errs.append(abs(count_flops(two, Mode.CONTINUAL, 8).total_per_step
                    - 2 * count_flops(cfg, Mode.CONTINUAL, 8).total_per_step))
    worst = float(max(errs))
    return SuiteResult("flops_shape", worst == 0.0, worst)


def suite_rope_circularity(seed: int, samples: int = 100) -> SuiteResult:
    """Rotary scores depend only on index differences, and a rotary
    continual run still matches the banded recompute at absolute indices."""
    rng = np.random.default_rng(seed)
    worst_shift = 0.0
    for _ in range(samples):
        dh = int(rng.choice([4, 8, 16]))
        q = rng.standard_normal(dh)
        k = rng.standard_normal(dh)
        m = int(rng.integers(0, 500))
        n = int(rng.integers(0, 500))
        s = int(rng.integers(1, 1000))
        a = float(np.dot(rope_rotate(q, m), rope_rotate(k, n)))
        b = float(np.dot(rope_rotate(q, m + s), rope_rotate(k, n + s)))
        worst_shift = max(worst_shift, abs(a - b))

    cfg = _config(2, 4, 8, 2, Activation.SOFTMAX, Norm.LAYERNORM, positional="rope")
    model = random_model(cfg, seed)
    X = np.random.default_rng(seed + 1).standard_normal((12, 8))
    stream_vs_oracle = _rel_err(stream_forward(model, X), oracle_causal_banded(model, X))
    passed = worst_shift <= 1e-6 and stream_vs_oracle <= 1e-8
    return SuiteResult("rope_circularity", passed, max(worst_shift, stream_vs_oracle),
                       f"shift={worst_shift:.2e} stream={stream_vs_oracle:.2e}")


def _roundtrip_configs() -> list[ModelConfig]:
    return [
        ModelConfig(2, 4, 8, 2),
        ModelConfig(1, 2, 4, 1, activation=Activation.SOFT, norm=Norm.REZERO,
                    ff=FeedForward.LINEAR),
        ModelConfig(3, 4, 8, 2, positional="rope"),
        ModelConfig(2, 4, 8, 2, positional="recycling", recycling_period=8),
        ModelConfig(1, 8, 16, 4, norm=Norm.REZERO, rezero_mode="learned"),
    ]


def suite_persistence_roundtrip(seed: int) -> SuiteResult:
    """Save/load is byte-identical and every single-byte blob corruption is
    caught by the checksum."""
    failures = 0
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for i, cfg in enumerate(_roundtrip_configs()):
            model = random_model(cfg, seed + i)
            d1, d2 = tmp / f"a{i}", tmp / f"b{i}"
            d1.mkdir(), d2.mkdir()
            man1, blob1 = d1 / "model.json", d1 / "model.bin"
            man2, blob2 = d2 / "model.json", d2 / "model.bin"
            save_model(model, man1, blob1)
            save_model(load_model(man1, blob1), man2, blob2)
            if man2.read_bytes() != man1.read_bytes():
                failures += 1
            if blob2.read_bytes() != blob1.read_bytes():
                failures += 1

            raw = bytearray(blob1.read_bytes())
            rng = np.random.default_rng(seed + 50 + i)
            positions = {0, len(raw) - 1} | {
                int(p) for p in rng.integers(0, len(raw), size=8)
            }
            for pos in positions:
                corrupt = bytearray(raw)
                corrupt[pos] ^= 0x40
                bad = tmp / "bad.bin"
                bad.write_bytes(bytes(corrupt))
                try:
                    load_model(man1, bad)
                    failures += 1
                except ChecksumError:
                    pass
    return SuiteResult("persistence_roundtrip", failures == 0, float(failures))


SUITES = (
    suite_kv_cache_equivalence,
    suite_single_layer_base,
    suite_first_layer_delta,
    suite_additive_decoupling,
    suite_linear_propagation,
    suite_receptive_field,
    suite_flops_shape,
    suite_rope_circularity,
    suite_persistence_roundtrip,
)


def run_all(seed: int = 0, sizes: str = "full") -> list[SuiteResult]:
    grid = FULL_GRID if sizes == "full" else QUICK_GRID
    results = []
    for suite in SUITES:
        if suite in (suite_kv_cache_equivalence, suite_single_layer_base):
            results.append(suite(seed, grid))
        else:
            results.append(suite(seed))
    return results
