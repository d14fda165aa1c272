/**
 * Minimal float64 matrix helpers. Everything is row-major; shapes are
 * carried explicitly so blob serialization stays trivial.
 */

export interface Matrix {
  rows: number;
  cols: number;
  data: Float64Array;
}

export function zeros(rows: number, cols: number): Matrix {
  return { rows, cols, data: new Float64Array(rows * cols) };
}

export function fromRows(rows: number[][]): Matrix {
  const m = zeros(rows.length, rows[0]?.length ?? 0);
  rows.forEach((r, i) => r.forEach((v, j) => (m.data[i * m.cols + j] = v)));
  return m;
}

export function at(m: Matrix, i: number, j: number): number {
  return m.data[i * m.cols + j];
}

export function set(m: Matrix, i: number, j: number, v: number): void {
  m.data[i * m.cols + j] = v;
}

export function row(m: Matrix, i: number): Float64Array {
  return m.data.subarray(i * m.cols, (i + 1) * m.cols);
}

export function clone(m: Matrix): Matrix {
  return { rows: m.rows, cols: m.cols, data: new Float64Array(m.data) };
}

/** Quantize every entry to its nearest float32 value (still stored as f64). */
export function quantizeF32(m: Matrix): Matrix {
  const out = clone(m);
  for (let i = 0; i < out.data.length; i++) out.data[i] = Math.fround(out.data[i]);
  return out;
}

export function matmul(a: Matrix, b: Matrix): Matrix {
  if (a.cols !== b.rows) {
    throw new Error(`matmul shape mismatch: ${a.rows}x${a.cols} @ ${b.rows}x${b.cols}`);
  }
  const out = zeros(a.rows, b.cols);
  for (let i = 0; i < a.rows; i++) {
    for (let k = 0; k < a.cols; k++) {
      const aik = a.data[i * a.cols + k];
      if (aik === 0) continue;
      for (let j = 0; j < b.cols; j++) {
        out.data[i * out.cols + j] += aik * b.data[k * b.cols + j];
      }
    }
  }
  return out;
}

export function addInto(target: Matrix, other: Matrix, scale = 1.0): Matrix {
  for (let i = 0; i < target.data.length; i++) target.data[i] += scale * other.data[i];
  return target;
}

export function addBias(m: Matrix, bias: Float64Array | null): Matrix {
  if (!bias) return m;
  for (let i = 0; i < m.rows; i++) {
    for (let j = 0; j < m.cols; j++) m.data[i * m.cols + j] += bias[j];
  }
  return m;
}

export function slice_cols(m: Matrix, lo: number, hi: number): Matrix {
  const out = zeros(m.rows, hi - lo);
  for (let i = 0; i < m.rows; i++) {
    for (let j = lo; j < hi; j++) set(out, i, j - lo, at(m, i, j));
  }
  return out;
}

export function concatCols(parts: Matrix[]): Matrix {
  const rows = parts[0].rows;
  const cols = parts.reduce((s, p) => s + p.cols, 0);
  const out = zeros(rows, cols);
  let off = 0;
  for (const p of parts) {
    for (let i = 0; i < rows; i++) {
      for (let j = 0; j < p.cols; j++) set(out, i, off + j, at(p, i, j));
    }
    off += p.cols;
  }
  return out;
}

export function maxAbsDiff(a: Matrix, b: Matrix): number {
  let worst = 0;
  for (let i = 0; i < a.data.length; i++) {
    worst = Math.max(worst, Math.abs(a.data[i] - b.data[i]));
  }
  return worst;
}

export function randomMatrix(rng: { gauss(): number }, rows: number, cols: number,
                             scale = 1.0): Matrix {
  const out = zeros(rows, cols);
  for (let i = 0; i < out.data.length; i++) out.data[i] = scale * rng.gauss();
  return out;
}
