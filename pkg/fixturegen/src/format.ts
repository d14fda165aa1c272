/**
 * Writers for the engine's on-disk formats.
 *
 * Weight files: a JSON manifest (format_version, CRC-32 checksum of the
 * blob, config, tensor descriptors) plus one blob of little-endian float32
 * row-major tensors. Tensor names: layer{i}.{wq|wk|wv|wo|ff1|ff2|norm1|
 * norm2|rezero}, optional layer{i}.{bq|bk|bv|bo|bff1|bff2}, and
 * positional.table for the recycling embedding. norm tensors are (2, dim)
 * scale-over-offset; rezero is 1x1.
 *
 * Token streams: three little-endian uint32 (dim, count, precision=32)
 * followed by count*dim little-endian float32 values.
 */

import { crc32 } from "node:zlib";
import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import { Config, LayerParams } from "./engine.js";
import { Matrix } from "./tensor.js";

const FORMAT_VERSION = 1;

export interface NamedTensor {
  name: string;
  rows: number;
  cols: number;
  values: Float64Array; // row-major; written as f32
}

function vectorTensor(name: string, values: Float64Array): NamedTensor {
  return { name, rows: 1, cols: values.length, values };
}

function matrixTensor(name: string, m: Matrix): NamedTensor {
  return { name, rows: m.rows, cols: m.cols, values: m.data };
}

function stacked(name: string, top: Float64Array, bottom: Float64Array): NamedTensor {
  const values = new Float64Array(top.length * 2);
  values.set(top, 0);
  values.set(bottom, top.length);
  return { name, rows: 2, cols: top.length, values };
}

/** Canonical tensor order; mirrors what the engine writes itself. */
export function modelTensors(layers: LayerParams[],
                             recyclingTable: Matrix | null): NamedTensor[] {
  const tensors: NamedTensor[] = [];
  layers.forEach((w, i) => {
    const p = `layer${i}`;
    tensors.push(matrixTensor(`${p}.wq`, w.wq));
    tensors.push(matrixTensor(`${p}.wk`, w.wk));
    tensors.push(matrixTensor(`${p}.wv`, w.wv));
    tensors.push(matrixTensor(`${p}.wo`, w.wo));
    tensors.push(matrixTensor(`${p}.ff1`, w.ff1));
    tensors.push(matrixTensor(`${p}.ff2`, w.ff2));
    tensors.push(stacked(`${p}.norm1`, w.norm1Scale, w.norm1Offset));
    tensors.push(stacked(`${p}.norm2`, w.norm2Scale, w.norm2Offset));
    tensors.push({ name: `${p}.rezero`, rows: 1, cols: 1,
                   values: Float64Array.of(w.rezero) });
    const biases: [string, Float64Array | null | undefined][] = [
      ["bq", w.bq], ["bk", w.bk], ["bv", w.bv], ["bo", w.bo],
      ["bff1", w.bff1], ["bff2", w.bff2],
    ];
    for (const [short, b] of biases) {
      if (b) tensors.push(vectorTensor(`${p}.${short}`, b));
    }
  });
  if (recyclingTable) tensors.push(matrixTensor("positional.table", recyclingTable));
  return tensors;
}

function packBlob(tensors: NamedTensor[]): { blob: Buffer; descriptors: object[] } {
  let total = 0;
  for (const t of tensors) total += t.rows * t.cols * 4;
  const blob = Buffer.alloc(total);
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const descriptors = [];
  let offset = 0;
  for (const t of tensors) {
    descriptors.push({ name: t.name, rows: t.rows, cols: t.cols, byte_offset: offset });
    for (let i = 0; i < t.values.length; i++) {
      view.setFloat32(offset + i * 4, t.values[i], true);
    }
    offset += t.values.length * 4;
  }
  return { blob, descriptors };
}

/** JSON.stringify with keys sorted at every level, 2-space indent. */
export function stableJson(value: unknown): string {
  const sort = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sort);
    if (v && typeof v === "object") {
      return Object.fromEntries(
        Object.keys(v as object).sort().map((k) => [k, sort((v as any)[k])]),
      );
    }
    return v;
  };
  return JSON.stringify(sort(value), null, 2) + "\n";
}

export function writeModel(manifestPath: string, blobPath: string, config: Config,
                           layers: LayerParams[],
                           recyclingTable: Matrix | null): void {
  const { blob, descriptors } = packBlob(modelTensors(layers, recyclingTable));
  const manifest = {
    format_version: FORMAT_VERSION,
    checksum: crc32(blob) >>> 0,
    blob: blobPath.split("/").pop(),
    config,
    tensors: descriptors,
  };
  mkdirSync(dirname(blobPath), { recursive: true });
  writeFileSync(blobPath, blob);
  writeFileSync(manifestPath, stableJson(manifest));
}

export function encodeStream(tokens: Matrix): Buffer {
  if (tokens.cols === 0) throw new Error("token dim must be positive");
  const buf = Buffer.alloc(12 + tokens.rows * tokens.cols * 4);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  view.setUint32(0, tokens.cols, true);
  view.setUint32(4, tokens.rows, true);
  view.setUint32(8, 32, true);
  for (let i = 0; i < tokens.data.length; i++) {
    view.setFloat32(12 + i * 4, tokens.data[i], true);
  }
  return buf;
}

export function writeStream(path: string, tokens: Matrix): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, encodeStream(tokens));
}
