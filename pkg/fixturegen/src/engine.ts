/**
 * Reference encoder stack, computed in one shot as masked attention over the
 * whole input. There is no streaming and no key/value memory here on
 * purpose: a backward band of the window size reproduces what the streaming
 * engine produces step by step, and computing it by a completely different
 * route is what makes the fixtures worth checking against.
 *
 * All math runs in float64 on float32-quantized parameters and inputs, so
 * an engine loading the same files computes from bit-identical values.
 */

import {
  Matrix, addBias, addInto, at, clone, concatCols, matmul, row, set,
  slice_cols, zeros,
} from "./tensor.js";

export type Activation = "softmax" | "soft";
export type NormKind = "layernorm" | "rezero";
export type FfKind = "gelu" | "linear";
export type PositionalKind = "none" | "rope" | "recycling";

export interface Config {
  depth: number;
  window: number;
  dim: number;
  heads: number;
  d_ff: number;
  activation: Activation;
  norm: NormKind;
  ff: FfKind;
  positional: PositionalKind;
  rope_base: number;
  recycling_period: number;
  rezero_mode: "constant" | "learned";
  rezero_scale: number | null;
  mode: "continual" | "oracle_bidirectional" | "oracle_causal_banded";
  precision: 32 | 64;
}

export interface LayerParams {
  wq: Matrix; wk: Matrix; wv: Matrix; wo: Matrix;
  ff1: Matrix; ff2: Matrix;
  norm1Scale: Float64Array; norm1Offset: Float64Array;
  norm2Scale: Float64Array; norm2Offset: Float64Array;
  rezero: number;
  bq?: Float64Array | null; bk?: Float64Array | null; bv?: Float64Array | null;
  bo?: Float64Array | null; bff1?: Float64Array | null; bff2?: Float64Array | null;
}

const LN_EPS = 1e-5;

export function gelu(x: number): number {
  // tanh form, matching the engine across ecosystems without erf
  return 0.5 * x * (1.0 + Math.tanh(0.7978845608028654 * (x + 0.044715 * x ** 3)));
}

function layerNorm(m: Matrix, scale: Float64Array, offset: Float64Array): Matrix {
  const out = clone(m);
  for (let i = 0; i < m.rows; i++) {
    let mean = 0;
    for (let j = 0; j < m.cols; j++) mean += at(m, i, j);
    mean /= m.cols;
    let variance = 0;
    for (let j = 0; j < m.cols; j++) variance += (at(m, i, j) - mean) ** 2;
    variance /= m.cols;
    const denom = Math.sqrt(variance + LN_EPS);
    for (let j = 0; j < m.cols; j++) {
      set(out, i, j, ((at(m, i, j) - mean) / denom) * scale[j] + offset[j]);
    }
  }
  return out;
}

export function ropeRotateRows(m: Matrix, positions: number[], base: number): Matrix {
  if (m.cols % 2 !== 0) throw new Error("rotary embedding needs an even dimension");
  const out = clone(m);
  for (let i = 0; i < m.rows; i++) {
    for (let p = 0; p < m.cols / 2; p++) {
      const theta = base ** ((-2 * p) / m.cols);
      const angle = positions[i] * theta;
      const c = Math.cos(angle);
      const s = Math.sin(angle);
      const even = at(m, i, 2 * p);
      const odd = at(m, i, 2 * p + 1);
      set(out, i, 2 * p, even * c - odd * s);
      set(out, i, 2 * p + 1, even * s + odd * c);
    }
  }
  return out;
}

/**
 * Masked attention over all rows. band === null means full bidirectional;
 * band w lets row i attend rows max(0, i-w+1)..i. Softmax normalizes over
 * the permitted columns only; the soft kernel applies no normalization.
 */
export function maskedAttention(q: Matrix, k: Matrix, v: Matrix,
                                activation: Activation,
                                band: number | null): Matrix {
  const n = q.rows;
  const dh = q.cols;
  const out = zeros(n, dh);
  for (let i = 0; i < n; i++) {
    const lo = band === null ? 0 : Math.max(0, i - band + 1);
    const hi = band === null ? n : i + 1;
    const weights: number[] = [];
    if (activation === "softmax") {
      const logits: number[] = [];
      for (let j = lo; j < hi; j++) {
        let dot = 0;
        for (let c = 0; c < dh; c++) dot += at(q, i, c) * at(k, j, c);
        logits.push(dot / Math.sqrt(dh));
      }
      const max = Math.max(...logits);
      const exps = logits.map((x) => Math.exp(x - max));
      const total = exps.reduce((a, b) => a + b, 0);
      for (const e of exps) weights.push(e / total);
    } else {
      for (let j = lo; j < hi; j++) {
        let d2 = 0;
        for (let c = 0; c < dh; c++) d2 += (at(q, i, c) - at(k, j, c)) ** 2;
        weights.push(Math.exp(-d2 / (2 * Math.sqrt(dh))));
      }
    }
    for (let idx = 0; idx < weights.length; idx++) {
      const j = lo + idx;
      for (let c = 0; c < dh; c++) {
        set(out, i, c, at(out, i, c) + weights[idx] * at(v, j, c));
      }
    }
  }
  return out;
}

function feedForward(z: Matrix, layer: LayerParams, kind: FfKind): Matrix {
  const hidden = addBias(matmul(z, layer.ff1), layer.bff1 ?? null);
  if (kind === "gelu") {
    for (let i = 0; i < hidden.data.length; i++) hidden.data[i] = gelu(hidden.data[i]);
  }
  return addBias(matmul(hidden, layer.ff2), layer.bff2 ?? null);
}

function residual(x: Matrix, branch: Matrix, scale: Float64Array,
                  offset: Float64Array, config: Config, layer: LayerParams): Matrix {
  if (config.norm === "layernorm") {
    return layerNorm(addInto(clone(x), branch), scale, offset);
  }
  const s = config.rezero_mode === "learned"
    ? layer.rezero
    : config.rezero_scale ?? 1.0 / config.depth;
  return addInto(clone(x), branch, s);
}

export function layerForward(X: Matrix, layer: LayerParams, config: Config,
                             band: number | null, posOffset: number): Matrix {
  const dh = config.dim / config.heads;
  const positions = Array.from({ length: X.rows }, (_, i) => posOffset + i);
  const q = addBias(matmul(X, layer.wq), layer.bq ?? null);
  const k = addBias(matmul(X, layer.wk), layer.bk ?? null);
  const v = addBias(matmul(X, layer.wv), layer.bv ?? null);
  const heads: Matrix[] = [];
  for (let h = 0; h < config.heads; h++) {
    let qh = slice_cols(q, h * dh, (h + 1) * dh);
    let kh = slice_cols(k, h * dh, (h + 1) * dh);
    const vh = slice_cols(v, h * dh, (h + 1) * dh);
    if (config.positional === "rope") {
      qh = ropeRotateRows(qh, positions, config.rope_base);
      kh = ropeRotateRows(kh, positions, config.rope_base);
    }
    heads.push(maskedAttention(qh, kh, vh, config.activation, band));
  }
  const alpha = concatCols(heads);
  const attnBranch = addBias(matmul(alpha, layer.wo), layer.bo ?? null);
  const z = residual(X, attnBranch, layer.norm1Scale, layer.norm1Offset, config, layer);
  const ffBranch = feedForward(z, layer, config.ff);
  return residual(z, ffBranch, layer.norm2Scale, layer.norm2Offset, config, layer);
}

export function applyRecycling(X: Matrix, table: Matrix, posOffset: number): Matrix {
  const out = clone(X);
  for (let i = 0; i < X.rows; i++) {
    const tr = row(table, (posOffset + i) % table.rows);
    for (let j = 0; j < X.cols; j++) set(out, i, j, at(out, i, j) + tr[j]);
  }
  return out;
}

/**
 * Whole-stack forward. band = config.window reproduces, row for row, the
 * outputs a streaming engine with rolling memories emits step by step.
 */
export function stackForward(X: Matrix, layers: LayerParams[], config: Config,
                             band: number | null, posOffset = 0,
                             recyclingTable: Matrix | null = null): Matrix {
  let Y = X;
  if (config.positional === "recycling") {
    if (!recyclingTable) throw new Error("recycling positional embedding needs a table");
    Y = applyRecycling(Y, recyclingTable, posOffset);
  }
  for (const layer of layers) {
    Y = layerForward(Y, layer, config, band, posOffset);
  }
  return Y;
}

/**
 * The sliding-window trajectory: for each step, recompute the whole stack
 * bidirectionally over the window ending there and keep the last row. Used
 * by the self-checks to confirm the one-layer banded/bidirectional identity.
 */
export function bidirectionalTrajectory(X: Matrix, layers: LayerParams[],
                                        config: Config,
                                        recyclingTable: Matrix | null = null): Matrix {
  const out = zeros(X.rows, config.dim);
  for (let t = 0; t < X.rows; t++) {
    const start = Math.max(0, t - config.window + 1);
    const windowRows = zeros(t - start + 1, X.cols);
    for (let i = start; i <= t; i++) {
      for (let j = 0; j < X.cols; j++) set(windowRows, i - start, j, at(X, i, j));
    }
    const y = stackForward(windowRows, layers, config, null, start, recyclingTable);
    for (let j = 0; j < config.dim; j++) set(out, t, j, at(y, y.rows - 1, j));
  }
  return out;
}
