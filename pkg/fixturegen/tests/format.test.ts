import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { crc32 } from "node:zlib";

import { describe, expect, it } from "vitest";

import { encodeStream, stableJson, writeModel } from "../src/format.js";
import { Config, LayerParams } from "../src/engine.js";
import { Rng } from "../src/rng.js";
import { fromRows, randomMatrix } from "../src/tensor.js";

function tinyConfig(): Config {
  return {
    depth: 1, window: 2, dim: 4, heads: 1, d_ff: 8,
    activation: "softmax", norm: "layernorm", ff: "gelu", positional: "none",
    rope_base: 10000, recycling_period: 2, rezero_mode: "constant",
    rezero_scale: 1, mode: "continual", precision: 32,
  };
}

function tinyLayer(seed: number): LayerParams {
  const rng = new Rng(seed);
  return {
    wq: randomMatrix(rng, 4, 4), wk: randomMatrix(rng, 4, 4),
    wv: randomMatrix(rng, 4, 4), wo: randomMatrix(rng, 4, 4),
    ff1: randomMatrix(rng, 4, 8), ff2: randomMatrix(rng, 8, 4),
    norm1Scale: new Float64Array(4).fill(1), norm1Offset: new Float64Array(4),
    norm2Scale: new Float64Array(4).fill(1), norm2Offset: new Float64Array(4),
    rezero: 1,
  };
}

describe("stream encoding", () => {
  it("writes the 12-byte header and little-endian payload", () => {
    const buf = encodeStream(fromRows([[1.5, -2.0], [0.25, 4.0]]));
    const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
    expect(view.getUint32(0, true)).toBe(2);   // dim
    expect(view.getUint32(4, true)).toBe(2);   // count
    expect(view.getUint32(8, true)).toBe(32);  // precision
    expect(view.getFloat32(12, true)).toBe(1.5);
    expect(view.getFloat32(16, true)).toBe(-2.0);
    expect(buf.length).toBe(12 + 4 * 4);
  });

  it("rejects zero-dim tokens", () => {
    expect(() => encodeStream({ rows: 3, cols: 0, data: new Float64Array(0) }))
      .toThrow();
  });
});

describe("model files", () => {
  it("manifest checksum matches the blob and descriptors tile it exactly", () => {
    const dir = mkdtempSync(join(tmpdir(), "fmt-"));
    writeModel(join(dir, "m.json"), join(dir, "m.bin"), tinyConfig(),
               [tinyLayer(1)], null);
    const manifest = JSON.parse(readFileSync(join(dir, "m.json"), "utf8"));
    const blob = readFileSync(join(dir, "m.bin"));
    expect(manifest.format_version).toBe(1);
    expect(manifest.checksum).toBe(crc32(blob) >>> 0);
    let expectedOffset = 0;
    for (const t of manifest.tensors) {
      expect(t.byte_offset).toBe(expectedOffset);
      expectedOffset += t.rows * t.cols * 4;
    }
    expect(expectedOffset).toBe(blob.length);
    const names = manifest.tensors.map((t: { name: string }) => t.name);
    expect(names).toContain("layer0.wq");
    expect(names).toContain("layer0.norm1");
    expect(names).toContain("layer0.rezero");
  });

  it("norm tensors are (2, dim) and rezero is 1x1", () => {
    const dir = mkdtempSync(join(tmpdir(), "fmt-"));
    writeModel(join(dir, "m.json"), join(dir, "m.bin"), tinyConfig(),
               [tinyLayer(2)], null);
    const manifest = JSON.parse(readFileSync(join(dir, "m.json"), "utf8"));
    const byName = Object.fromEntries(
      manifest.tensors.map((t: { name: string }) => [t.name, t]));
    expect(byName["layer0.norm1"].rows).toBe(2);
    expect(byName["layer0.norm1"].cols).toBe(4);
    expect(byName["layer0.rezero"].rows).toBe(1);
    expect(byName["layer0.rezero"].cols).toBe(1);
  });
});

describe("stable json", () => {
  it("sorts keys at every level", () => {
    const text = stableJson({ b: 1, a: { d: 2, c: 3 } });
    expect(text.indexOf('"a"')).toBeLessThan(text.indexOf('"b"'));
    expect(text.indexOf('"c"')).toBeLessThan(text.indexOf('"d"'));
    expect(text.endsWith("\n")).toBe(true);
  });
});
