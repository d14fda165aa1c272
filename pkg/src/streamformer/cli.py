"""Command-line entry point.

Exit codes: 0 ok, 1 verification failure, 2 usage error, 3 I/O or format
error. All flags are long-form; every command that takes a seed is
deterministic in its file outputs (wall-clock fields aside).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import count_flops, latency_sweep, plot_sweep, write_csv
from .config import ConfigError, FeedForward, Mode, ModelConfig, Norm
from .diffanalysis import measure_deltas
from .model import forward, random_model
from .numerics import Activation
from .persistence import (PersistenceError, convert_manifest, load_model,
                          load_stream, read_manifest, save_report, save_stream)
from .verification import run_all

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _load_config(text: str) -> ModelConfig:
    """Accept inline JSON, a bare config file, or a model manifest path."""
    if text.strip().startswith("{"):
        data = json.loads(text)
    else:
        data = json.loads(Path(text).read_text())
    if "config" in data and "format_version" in data:
        data = data["config"]
    return ModelConfig.from_dict(data)


def _resolve_blob(manifest_path: str, blob_arg: str | None) -> Path:
    if blob_arg:
        return Path(blob_arg)
    manifest = read_manifest(manifest_path)
    return Path(manifest_path).parent / manifest.get("blob", "")


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed, sizes=args.sizes)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all suites passed" if ok else "FAILURES present")
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


def cmd_run(args) -> int:
    model = load_model(args.model, _resolve_blob(args.model, args.blob))
    X = load_stream(args.stream)
    if X.shape[1] != model.config.dim:
        raise ConfigError(
            f"stream tokens have dim {X.shape[1]}, model expects {model.config.dim}"
        )
    Y = forward(model.astype(model.config.dtype), X.astype(model.config.dtype))
    save_stream(Y, args.out)
    print(f"wrote {Y.shape[0]} tokens to {args.out}")
    return EXIT_OK


def _delta_model(args):
    if args.model:
        model = load_model(args.model, _resolve_blob(args.model, args.blob))
        return model.astype(np.float64), args.seed
    cfg = (_load_config(args.config) if args.config else ModelConfig(
        depth=2, window=4, dim=8, heads=2, activation=Activation.SOFT,
        norm=Norm.REZERO, ff=FeedForward.LINEAR))
    cfg = ModelConfig.from_dict({**cfg.to_dict(), "precision": 64})
    return random_model(cfg, args.seed), args.seed


def cmd_delta(args) -> int:
    model, seed = _delta_model(args)
    n = model.config.window
    length = args.length if args.length else 3 * n
    X = np.random.default_rng(seed).standard_normal((length, model.config.dim))
    report = measure_deltas(model, X, seed=seed)
    save_report(report.to_dict(), args.out)
    print(f"wrote delta report for positions {report.positions[0]}..{report.positions[-1]} "
          f"to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _load_config(args.config) if args.config else ModelConfig(
        depth=2, window=64, dim=32, heads=1, d_ff=64)
    windows = [int(w) for w in args.windows.split(",") if w]
    if not windows:
        raise ConfigError("need at least one window size")
    modes = []
    for name in args.modes.split(","):
        modes.append(Mode(name.strip()))
    rows = latency_sweep(config, windows, batch=args.batch, steps=args.steps,
                         seed=args.seed, warmup=args.warmup, modes=tuple(modes))
    write_csv(rows, args.csv)
    print(f"wrote {len(rows)} rows to {args.csv}")
    if args.svg:
        plot_sweep(rows, args.svg)
        print(f"wrote plot to {args.svg}")
    return EXIT_OK


def cmd_flops(args) -> int:
    config = _load_config(args.config)
    mode = Mode(args.mode) if args.mode else None
    breakdown = count_flops(config, mode=mode, n=args.window)
    text = json.dumps(breakdown.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote FLOPs breakdown to {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_convert(args) -> int:
    converted = convert_manifest(args.in_manifest, args.out_manifest)
    print(f"wrote continual-mode manifest to {args.out_manifest} "
          f"(positional: {converted.positional})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamformer",
        description="Streaming transformer-encoder engine: verification, "
                    "inference, delta analysis, benchmarks, conversion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the deterministic correctness suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", choices=("quick", "full"), default="full")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("run", help="stream a token file through a saved model")
    p.add_argument("--model", required=True, help="manifest path")
    p.add_argument("--blob", help="blob path (default: next to the manifest)")
    p.add_argument("--stream", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("delta", help="measure streaming-vs-window deltas")
    p.add_argument("--model", help="manifest path (default: random model)")
    p.add_argument("--blob")
    p.add_argument("--config", help="inline JSON or path, for the random model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=0, help="stream length (default 3n)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_delta)

    p = sub.add_parser("bench", help="latency sweep over window sizes")
    p.add_argument("--config", help="inline JSON or manifest/config path")
    p.add_argument("--windows", default="64,128,256,512,1024",
                   help="comma-separated window sizes")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", default="continual,oracle_bidirectional")
    p.add_argument("--csv", required=True)
    p.add_argument("--svg", help="optional plot file (svg/png by extension)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("flops", help="analytic FLOPs breakdown")
    p.add_argument("--config", required=True, help="inline JSON or path")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("convert", help="flip a sliding-window manifest to continual mode")
    p.add_argument("--in-manifest", required=True)
    p.add_argument("--out-manifest", required=True)
    p.set_defaults(fn=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PersistenceError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
