"""Bit-exact file formats: weights, token streams, reports.

A model is stored as a JSON manifest plus one binary blob. The blob is the
concatenation of all tensors as little-endian 32-bit floats in row-major
order; the manifest records the architecture config, a CRC-32 of the blob,
and one descriptor {name, rows, cols, byte_offset} per tensor. Tensor names
follow ``layer{i}.{wq|wk|wv|wo|ff1|ff2|norm1|norm2|rezero}``, with optional
bias entries ``layer{i}.{bq|bk|bv|bo|bff1|bff2}`` and a reserved
``positional.table`` for the recycling embedding. norm1/norm2 are (2, dim)
matrices holding the scale row above the offset row; rezero is 1x1.

Token streams are a 12-byte header of three little-endian uint32 values
(dim, count, precision=32) followed by count*dim little-endian floats.
"""

from __future__ import annotations

import json
import warnings
import zlib
from pathlib import Path

import numpy as np

from .config import ConfigError, Mode, ModelConfig
from .encoder import LayerWeights
from .model import Model

FORMAT_VERSION = 1

_BIAS_FIELDS = {
    "bq": "b_q", "bk": "b_k", "bv": "b_v", "bo": "b_o",
    "bff1": "b_ff1", "bff2": "b_ff2",
}


class PersistenceError(Exception):
    pass


class FormatError(PersistenceError):
    pass


class ChecksumError(FormatError):
    pass


def _as_f32_matrix(arr: np.ndarray) -> np.ndarray:
    m = np.asarray(arr, dtype="<f4")
    if m.ndim == 1:
        m = m[None, :]
    return np.ascontiguousarray(m)


def _canonical_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = []
    for i, w in enumerate(model.layers):
        p = f"layer{i}"
        tensors.append((f"{p}.wq", w.w_q))
        tensors.append((f"{p}.wk", w.w_k))
        tensors.append((f"{p}.wv", w.w_v))
        tensors.append((f"{p}.wo", w.w_o))
        tensors.append((f"{p}.ff1", w.ff_w1))
        tensors.append((f"{p}.ff2", w.ff_w2))
        tensors.append((f"{p}.norm1", np.stack([w.norm1_scale, w.norm1_offset])))
        tensors.append((f"{p}.norm2", np.stack([w.norm2_scale, w.norm2_offset])))
        tensors.append((f"{p}.rezero", np.array([[w.rezero_scale]])))
        for short, attr in _BIAS_FIELDS.items():
            b = getattr(w, attr)
            if b is not None:
                tensors.append((f"{p}.{short}", b))
    if model.recycling_table is not None:
        tensors.append(("positional.table", model.recycling_table))
    return tensors


def save_model(model: Model, manifest_path, blob_path) -> None:
    """Write the manifest/blob pair; the manifest is canonicalized so that
    save(load(x)) reproduces both files byte for byte."""
    model.validate()
    manifest_path, blob_path = Path(manifest_path), Path(blob_path)
    chunks: list[bytes] = []
    descriptors = []
    offset = 0
    for name, arr in _canonical_tensors(model):
        m = _as_f32_matrix(arr)
        raw = m.tobytes()
        descriptors.append({
            "name": name, "rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "byte_offset": offset,
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "checksum": zlib.crc32(blob) & 0xFFFFFFFF,
        "blob": blob_path.name,
        "config": model.config.to_dict(),
        "tensors": descriptors,
    }
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(manifest_path) -> dict:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unknown format_version {manifest.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    for key in ("checksum", "config", "tensors"):
        if key not in manifest:
            raise FormatError(f"manifest missing key {key!r}")
    return manifest


def _extract_tensor(blob: bytes, desc: dict) -> np.ndarray:
    try:
        name, rows, cols, off = (desc["name"], int(desc["rows"]),
                                 int(desc["cols"]), int(desc["byte_offset"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad tensor descriptor: {desc}") from exc
    nbytes = rows * cols * 4
    if rows < 0 or cols < 0 or off < 0 or off + nbytes > len(blob):
        raise FormatError(
            f"tensor {name} ({rows}x{cols} at byte {off}) does not fit in a "
            f"{len(blob)}-byte blob"
        )
    arr = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"tensor {name} holds non-finite values")
    return arr.reshape(rows, cols)


def load_model(manifest_path, blob_path) -> Model:
    """Load and fully validate a manifest/blob pair."""
    manifest = read_manifest(manifest_path)
    blob = Path(blob_path).read_bytes()
    if (zlib.crc32(blob) & 0xFFFFFFFF) != manifest["checksum"]:
        raise ChecksumError(
            f"blob checksum {zlib.crc32(blob) & 0xFFFFFFFF} does not match "
            f"manifest checksum {manifest['checksum']}"
        )
    try:
        config = ModelConfig.from_dict(manifest["config"]).validate()
    except ConfigError as exc:
        raise FormatError(f"bad config in manifest: {exc}") from exc

    tensors = {d["name"]: _extract_tensor(blob, d) for d in manifest["tensors"]}
    dtype = config.dtype

    def take(name, required=True):
        if name not in tensors:
            if required:
                raise FormatError(f"manifest is missing tensor {name}")
            return None
        return tensors.pop(name).astype(dtype)

    layers = []
    for i in range(config.depth):
        p = f"layer{i}"
        norm1 = take(f"{p}.norm1")
        norm2 = take(f"{p}.norm2")
        rezero = take(f"{p}.rezero")
        if norm1.shape[0] != 2 or norm2.shape[0] != 2 or rezero.shape != (1, 1):
            raise FormatError(f"{p} normalization tensors have wrong shapes")
        kw = {}
        for short, attr in _BIAS_FIELDS.items():
            b = take(f"{p}.{short}", required=False)
            kw[attr] = None if b is None else b[0]
        try:
            layers.append(LayerWeights(
                w_q=take(f"{p}.wq"), w_k=take(f"{p}.wk"), w_v=take(f"{p}.wv"),
                w_o=take(f"{p}.wo"), ff_w1=take(f"{p}.ff1"), ff_w2=take(f"{p}.ff2"),
                norm1_scale=norm1[0], norm1_offset=norm1[1],
                norm2_scale=norm2[0], norm2_offset=norm2[1],
                rezero_scale=float(rezero[0, 0]), **kw,
            ).validate(config))
        except ValueError as exc:
            raise FormatError(f"{p}: {exc}") from exc

    table = take("positional.table", required=False)
    if tensors:
        raise FormatError(f"manifest holds unknown tensors: {sorted(tensors)}")
    try:
        return Model(config, layers, table).validate()
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


STREAM_PRECISION = 32
_HEADER = np.dtype("<u4")


def save_stream(X: np.ndarray, path) -> None:
    """Write a (count, dim) float array as a token stream file."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise FormatError(f"expected (count, dim) tokens, got shape {X.shape}")
    if X.shape[1] == 0:
        raise FormatError("token dim must be positive")
    header = np.array([X.shape[1], X.shape[0], STREAM_PRECISION], dtype=_HEADER)
    payload = np.ascontiguousarray(X, dtype="<f4")
    Path(path).write_bytes(header.tobytes() + payload.tobytes())


def load_stream(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError("stream file too short for its header")
    d, count, precision = (int(v) for v in np.frombuffer(raw[:12], dtype=_HEADER))
    if d == 0:
        raise FormatError("token dim must be positive")
    if precision != STREAM_PRECISION:
        raise FormatError(f"unsupported stream precision {precision}")
    expected = 12 + count * d * 4
    if len(raw) != expected:
        raise FormatError(
            f"stream payload is {len(raw) - 12} bytes, header implies {expected - 12}"
        )
    return np.frombuffer(raw, dtype="<f4", count=count * d, offset=12).reshape(count, d)


def save_report(report: dict, path) -> None:
    """Structured text report with stable key ordering."""
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


_CIRCULAR_KINDS = ("none", "rope", "recycling")


def convert_config(config: ModelConfig) -> ModelConfig:
    """Flip a bidirectional sliding-window config to continual execution.

    Weights are untouched; this is a parameter-identical transfer. Only
    circular positional embeddings survive the switch -- an embedding whose
    last and first positions are unrelated cannot follow an unbounded stream
    index, so any other kind is rejected.
    """
    if config.mode is not Mode.ORACLE_BIDIRECTIONAL:
        raise ConfigError(
            f"expected a bidirectional sliding-window config, got mode {config.mode.value}"
        )
    if config.positional not in _CIRCULAR_KINDS:
        raise ConfigError(
            f"positional kind {config.positional!r} is not circular; continual "
            "execution needs a wrap-around embedding (rotary or recycling) "
            "because stream indices grow without bound"
        )
    if config.positional == "none":
        warnings.warn(
            "converting a model with no positional embedding: outputs will be "
            "order-aware only through the window contents",
            stacklevel=2,
        )
    d = config.to_dict()
    d["mode"] = Mode.CONTINUAL.value
    return ModelConfig.from_dict(d)


def convert_manifest(in_manifest, out_manifest) -> ModelConfig:
    """Rewrite a manifest with the config flipped to continual mode.

    The blob reference, tensor table and checksum are preserved verbatim:
    the transfer reuses the weights unchanged.
    """
    manifest = read_manifest(in_manifest)
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except ConfigError as exc:
        raise FormatError(f"bad config in manifest: {exc}") from exc
    converted = convert_config(config)
    manifest["config"] = converted.to_dict()
    Path(out_manifest).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return converted
