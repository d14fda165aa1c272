/**
 * Golden-fixture generator.
 *
 * Reads a grid spec, builds seeded random models and inputs, computes the
 * expected streaming outputs with the one-shot banded reference stack, and
 * writes everything in the engine's file formats plus an index.json. A fixed
 * seed yields a byte-identical fixture directory.
 *
 * Usage: tsx src/generate.ts [--grid grid.json] [--out fixtures] [--seed N]
 */

import { readFileSync, mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import {
  Activation, Config, FfKind, LayerParams, NormKind, PositionalKind,
  maskedAttention, stackForward,
} from "./engine.js";
import { stableJson, writeModel, writeStream } from "./format.js";
import { Rng } from "./rng.js";
import { Matrix, quantizeF32, randomMatrix } from "./tensor.js";

export interface GridEntry {
  depth: number;
  window: number;
  dim: number;
  heads: number;
  d_ff?: number;
  activation: Activation;
  norm: NormKind;
  ff: FfKind;
  positional: PositionalKind;
  biases?: boolean;
}

interface CaseRecord {
  case_id: string;
  kind: "attention" | "layer" | "stack";
  tolerance: number;
  files: Record<string, string>;
  config?: Config;
  params?: Record<string, unknown>;
}

const DEFAULT_TOLERANCE = 1e-6;

function buildConfig(entry: GridEntry): Config {
  if (entry.dim % entry.heads !== 0) {
    throw new Error(`dim ${entry.dim} not divisible by heads ${entry.heads}`);
  }
  return {
    depth: entry.depth,
    window: entry.window,
    dim: entry.dim,
    heads: entry.heads,
    d_ff: entry.d_ff ?? 2 * entry.dim,
    activation: entry.activation,
    norm: entry.norm,
    ff: entry.ff,
    positional: entry.positional,
    rope_base: 10000.0,
    recycling_period: Math.max(entry.window, 4),
    rezero_mode: "constant",
    rezero_scale: 1.0 / entry.depth,
    mode: "continual",
    precision: 32,
  };
}

function randomVector(rng: Rng, length: number, scale: number): Float64Array {
  const v = new Float64Array(length);
  for (let i = 0; i < length; i++) v[i] = Math.fround(scale * rng.gauss());
  return v;
}

function randomLayer(rng: Rng, config: Config, richParams: boolean): LayerParams {
  // richParams additionally randomizes norm scales/offsets and adds biases,
  // exercising the optional parts of the weight format
  const d = config.dim;
  const dff = config.d_ff;
  const mat = (rows: number, cols: number, denom: number) =>
    quantizeF32(randomMatrix(rng, rows, cols, 1 / Math.sqrt(denom)));
  const onesJitter = () => {
    const v = randomVector(rng, d, 0.1);
    for (let i = 0; i < d; i++) v[i] = Math.fround(v[i] + 1);
    return v;
  };
  const layer: LayerParams = {
    wq: mat(d, d, d), wk: mat(d, d, d), wv: mat(d, d, d), wo: mat(d, d, d),
    ff1: mat(d, dff, d), ff2: mat(dff, d, dff),
    norm1Scale: richParams ? onesJitter() : new Float64Array(d).fill(1),
    norm1Offset: richParams ? randomVector(rng, d, 0.1) : new Float64Array(d),
    norm2Scale: richParams ? onesJitter() : new Float64Array(d).fill(1),
    norm2Offset: richParams ? randomVector(rng, d, 0.1) : new Float64Array(d),
    rezero: Math.fround(config.rezero_scale ?? 1.0 / config.depth),
  };
  if (richParams) {
    layer.bq = randomVector(rng, d, 0.1);
    layer.bk = randomVector(rng, d, 0.1);
    layer.bv = randomVector(rng, d, 0.1);
    layer.bo = randomVector(rng, d, 0.1);
    layer.bff1 = randomVector(rng, dff, 0.1);
    layer.bff2 = randomVector(rng, d, 0.1);
  }
  return layer;
}

function caseId(entry: GridEntry): string {
  const kind = entry.depth === 1 ? "layer" : "stack";
  return [kind, entry.activation, entry.norm, entry.ff, entry.positional,
          `l${entry.depth}`, `n${entry.window}`, `d${entry.dim}`, `h${entry.heads}`]
    .join("_");
}

export function generateModelCase(entry: GridEntry, seed: number,
                                  outDir: string): CaseRecord {
  const rng = new Rng(seed);
  const config = buildConfig(entry);
  const layers = Array.from({ length: config.depth },
                            () => randomLayer(rng, config, entry.biases ?? false));
  const table = config.positional === "recycling"
    ? quantizeF32(randomMatrix(rng, config.recycling_period, config.dim, 0.1))
    : null;
  const input = quantizeF32(randomMatrix(rng, 3 * config.window, config.dim, 1.0));
  // band = window reproduces the streaming outputs row by row
  const expected = stackForward(input, layers, config, config.window, 0, table);

  const id = caseId(entry);
  const dir = join(outDir, id);
  mkdirSync(dir, { recursive: true });
  writeModel(join(dir, "model.json"), join(dir, "model.bin"), config, layers, table);
  writeStream(join(dir, "input.bin"), input);
  writeStream(join(dir, "expected.bin"), expected);
  return {
    case_id: id,
    kind: entry.depth === 1 ? "layer" : "stack",
    tolerance: DEFAULT_TOLERANCE,
    files: {
      manifest: `${id}/model.json`,
      blob: `${id}/model.bin`,
      input: `${id}/input.bin`,
      expected: `${id}/expected.bin`,
    },
    config,
  };
}

export function generateAttentionCase(activation: Activation, band: number | null,
                                      seed: number, outDir: string): CaseRecord {
  const rng = new Rng(seed);
  const rows = 6;
  const dh = 4;
  const q = quantizeF32(randomMatrix(rng, rows, dh, 1.0));
  const k = quantizeF32(randomMatrix(rng, rows, dh, 1.0));
  const v = quantizeF32(randomMatrix(rng, rows, dh, 1.0));
  const expected = maskedAttention(q, k, v, activation, band);

  const id = `attention_${activation}_${band === null ? "bidirectional" : "band" + band}`;
  const dir = join(outDir, id);
  mkdirSync(dir, { recursive: true });
  const files: Record<string, string> = {};
  for (const [name, m] of [["q", q], ["k", k], ["v", v], ["expected", expected]] as const) {
    writeStream(join(dir, `${name}.bin`), m as Matrix);
    files[name] = `${id}/${name}.bin`;
  }
  return {
    case_id: id,
    kind: "attention",
    tolerance: DEFAULT_TOLERANCE,
    files,
    params: { activation, band, head_dim: dh },
  };
}

export function generate(gridPath: string, outDir: string, seed: number): CaseRecord[] {
  const grid: GridEntry[] = JSON.parse(readFileSync(gridPath, "utf8"));
  const cases: CaseRecord[] = [];
  grid.forEach((entry, i) => {
    cases.push(generateModelCase(entry, seed + 1000 * (i + 1), outDir));
  });
  let attSeed = seed + 77;
  for (const activation of ["softmax", "soft"] as Activation[]) {
    for (const band of [null, 3]) {
      cases.push(generateAttentionCase(activation, band, attSeed, outDir));
      attSeed += 13;
    }
  }
  const index = { seed, format_version: 1, default_tolerance: DEFAULT_TOLERANCE, cases };
  writeFileSync(join(outDir, "index.json"), stableJson(index));
  return cases;
}

function parseArgs(argv: string[]): { grid: string; out: string; seed: number } {
  const args = { grid: "grid.json", out: "fixtures", seed: 20240808 };
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (key === "--grid") args.grid = value;
    else if (key === "--out") args.out = value;
    else if (key === "--seed") args.seed = Number(value);
    else throw new Error(`unknown flag ${key}`);
  }
  return args;
}

const isMain = process.argv[1]?.endsWith("generate.ts")
  || process.argv[1]?.endsWith("generate.js");
if (isMain) {
  const { grid, out, seed } = parseArgs(process.argv.slice(2));
  const cases = generate(grid, out, seed);
  console.log(`wrote ${cases.length} cases to ${out}/`);
}
