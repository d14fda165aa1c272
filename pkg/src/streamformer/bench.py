"""Analytic FLOPs accounting and wall-clock latency sweeps over window sizes.

The FLOP counter is a closed-form contract (multiply-add counted as 2):

continual step, per layer:   qkv 6d^2; scores 2nd; activation n*c_act;
                             weighted sum 2nd; out projection 2d^2;
                             feed-forward 4*d*d_ff
window recompute, per layer: qkv 6nd^2; scores 2n^2 d; activation n^2 c_act;
                             weighted sum 2n^2 d; out projection 2nd^2;
                             feed-forward 4n*d*d_ff

with c_act = 1 for the softmax exponential and 4 for the distance kernel
(distance, scale, exponential). Totals multiply by the layer count.

The latency sweep reports measured seconds per token; only growth-shape
ratios are ever asserted, absolute numbers are machine-specific.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .config import Mode, ModelConfig
from .model import Model, new_state, random_model, stream_step, window_forward
from .numerics import Activation

CSV_HEADER = "mode,n,batch,steps,seconds_per_token,tokens_per_second"


@dataclass
class FlopsBreakdown:
    mode: Mode
    n: int
    depth: int
    qkv_proj: int
    scores: int
    activation: int
    weighted_sum: int
    out_proj: int
    ff: int

    @property
    def per_layer_total(self) -> int:
        return (self.qkv_proj + self.scores + self.activation
                + self.weighted_sum + self.out_proj + self.ff)

    @property
    def total_per_step(self) -> int:
        """Cost of producing one new output token."""
        return self.depth * self.per_layer_total

    @property
    def total_per_window(self) -> int:
        """Cost attributed to one full window of n tokens.

        The continual form pays its step cost n times; a window recompute
        already prices the whole window in one step.
        """
        if self.mode is Mode.CONTINUAL:
            return self.n * self.total_per_step
        return self.total_per_step

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value, "n": self.n, "depth": self.depth,
            "qkv_proj": self.qkv_proj, "scores": self.scores,
            "activation": self.activation, "weighted_sum": self.weighted_sum,
            "out_proj": self.out_proj, "ff": self.ff,
            "per_layer_total": self.per_layer_total,
            "total_per_step": self.total_per_step,
            "total_per_window": self.total_per_window,
        }


def count_flops(config: ModelConfig, mode: Mode | None = None,
                n: int | None = None) -> FlopsBreakdown:
    """Exact deterministic FLOP counts for one step at window size n."""
    mode = config.mode if mode is None else Mode(mode)
    n = config.window if n is None else int(n)
    d, d_ff = config.dim, config.d_ff
    c_act = 1 if config.activation is Activation.SOFTMAX else 4
    if mode is Mode.CONTINUAL:
        parts = dict(qkv_proj=6 * d * d, scores=2 * n * d, activation=n * c_act,
                     weighted_sum=2 * n * d, out_proj=2 * d * d, ff=4 * d * d_ff)
    else:
        parts = dict(qkv_proj=6 * n * d * d, scores=2 * n * n * d,
                     activation=n * n * c_act, weighted_sum=2 * n * n * d,
                     out_proj=2 * n * d * d, ff=4 * n * d * d_ff)
    return FlopsBreakdown(mode=mode, n=n, depth=config.depth, **parts)


@dataclass
class SweepRow:
    mode: Mode
    n: int
    batch: int
    steps: int
    seconds_per_token: float | None   # None marks an out-of-memory cell
    tokens_per_second: float | None

    @property
    def oom(self) -> bool:
        return self.seconds_per_token is None

    def csv_line(self) -> str:
        spt = "oom" if self.oom else f"{self.seconds_per_token:.9g}"
        tps = "oom" if self.oom else f"{self.tokens_per_second:.9g}"
        return f"{self.mode.value},{self.n},{self.batch},{self.steps},{spt},{tps}"


def _time_cell(model: Model, mode: Mode, batch: int, steps: int,
               warmup: int, rng: np.random.Generator) -> float:
    """Wall-clock seconds for `steps` timed steps across `batch` lanes.

    Every lane is brought to steady state first (full window / full memory),
    then `warmup` untimed steps run before the timed section.
    """
    cfg = model.config
    n, d = cfg.window, cfg.dim
    tokens = rng.standard_normal((warmup + steps, batch, d)).astype(cfg.dtype)
    prefill = rng.standard_normal((n, batch, d)).astype(cfg.dtype)

    if mode is Mode.CONTINUAL:
        lanes = [new_state(model) for _ in range(batch)]
        for i in range(n):
            for b, state in enumerate(lanes):
                stream_step(model, state, prefill[i, b])
        for i in range(warmup):
            for b, state in enumerate(lanes):
                stream_step(model, state, tokens[i, b])
        start = time.perf_counter()
        for i in range(warmup, warmup + steps):
            for b, state in enumerate(lanes):
                stream_step(model, state, tokens[i, b])
        return time.perf_counter() - start

    band = None if mode is Mode.ORACLE_BIDIRECTIONAL else n
    windows = [deque((prefill[i, b] for i in range(n)), maxlen=n)
               for b in range(batch)]
    pos = n - 1

    def recompute_step(i):
        for b, win in enumerate(windows):
            win.append(tokens[i, b])
            window_forward(model, np.stack(win), band=band,
                           pos_offset=pos - n + 1)

    for i in range(warmup):
        pos += 1
        recompute_step(i)
    start = time.perf_counter()
    for i in range(warmup, warmup + steps):
        pos += 1
        recompute_step(i)
    return time.perf_counter() - start


def latency_sweep(config: ModelConfig, window_sizes: list[int], batch: int,
                  steps: int, seed: int, warmup: int | None = None,
                  modes: tuple[Mode, ...] = (Mode.CONTINUAL, Mode.ORACLE_BIDIRECTIONAL),
                  ) -> list[SweepRow]:
    """Measure seconds per token for each (mode, window size) cell.

    Synthetic tokens are drawn i.i.d. standard normal from the seed; latency
    of these dense kernels does not depend on token content. A cell that runs
    out of memory is reported as such instead of crashing the sweep.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if warmup is None:
        warmup = steps // 4
    if steps < 2 * warmup:
        raise ValueError(f"steps ({steps}) must be at least twice warmup ({warmup})")
    if batch < 1:
        raise ValueError("batch must be >= 1")

    rows = []
    for mode in modes:
        for n in window_sizes:
            cell_cfg = replace(config, window=n, mode=mode,
                               recycling_period=max(config.recycling_period, n))
            try:
                model = random_model(cell_cfg, seed)
                elapsed = _time_cell(model, mode, batch, steps, warmup,
                                     np.random.default_rng(seed + n))
                total = steps * batch
                rows.append(SweepRow(mode, n, batch, steps,
                                     elapsed / total, total / elapsed))
            except MemoryError:
                rows.append(SweepRow(mode, n, batch, steps, None, None))
    return rows


def write_csv(rows: list[SweepRow], path) -> None:
    lines = [CSV_HEADER] + [r.csv_line() for r in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def plot_sweep(rows: list[SweepRow], path) -> None:
    """Line chart of seconds per token vs window size, one line per mode.

    Display-only artifact; the CSV is the record.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in dict.fromkeys(r.mode for r in rows):
        pts = [(r.n, r.seconds_per_token) for r in rows
               if r.mode is mode and not r.oom]
        if pts:
            xs, ys = zip(*sorted(pts))
            ax.plot(xs, ys, marker="o", label=mode.value)
    ax.set_xlabel("window size n")
    ax.set_ylabel("seconds per token")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
