/**
 * Feature embedders behind a small registry.
 *
 * The engine only needs per-patch vectors at the configured layer taps and
 * one text vector per task; where they come from is this module's business.
 * The built-in "projection" model is a seeded random projection of raw
 * patch pixels — fully deterministic, no downloads, good enough to exercise
 * the whole pipeline.  A real backbone (e.g. a transformers.js vision
 * tower) plugs in by implementing the same two interfaces and registering
 * under a new identifier.
 */

import seedrandom from "seedrandom";

import { RasterImage } from "./image.js";

export class ModelError extends Error {}

export interface PatchEmbedder {
  /** Layer taps produced per image, ascending. */
  readonly taps: number[];
  readonly dim: number;
  /**
   * Embed one preprocessed image on a gridH x gridW patch grid.
   * Returns taps x (gridH*gridW) vectors of length dim, tap-major.
   */
  embed(image: RasterImage, gridH: number, gridW: number): Float64Array[][];
}

export interface TextEmbedder {
  readonly dim: number;
  embed(text: string): Float64Array;
}

export interface ModelOptions {
  dim: number;
  taps: number[];
  seed: number;
  /** Square side images are resized to before patching. */
  inputSize: number;
}

/** Standard-normal stream over a seeded uniform generator (Box-Muller). */
function gaussianStream(key: string): () => number {
  const uniform = seedrandom(key);
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    let u = 0;
    while (u === 0) u = uniform.double();
    const v = uniform.double();
    const r = Math.sqrt(-2 * Math.log(u));
    spare = r * Math.sin(2 * Math.PI * v);
    return r * Math.cos(2 * Math.PI * v);
  };
}

/** dim x inputLen matrix with N(0, 1/inputLen) entries, row-major. */
function projectionMatrix(key: string, dim: number, inputLen: number): Float64Array {
  const next = gaussianStream(key);
  const w = new Float64Array(dim * inputLen);
  const scale = 1 / Math.sqrt(inputLen);
  for (let i = 0; i < w.length; i++) w[i] = next() * scale;
  return w;
}

/**
 * Random projection of raw patch pixels, one matrix per layer tap.
 *
 * The patch vector is the patch's RGB pixels scaled to 0..1 with a trailing
 * constant 1, so even an all-black patch maps to a nonzero feature.
 */
export class ProjectionPatchEmbedder implements PatchEmbedder {
  readonly taps: number[];
  readonly dim: number;
  private readonly inputSize: number;
  private readonly seed: number;
  private readonly matrices = new Map<number, Float64Array>();

  constructor(opts: ModelOptions) {
    if (opts.taps.length === 0) {
      throw new ModelError("at least one layer tap is required");
    }
    if (opts.dim < 1) {
      throw new ModelError(`dim must be >= 1, got ${opts.dim}`);
    }
    this.taps = [...opts.taps].sort((a, b) => a - b);
    this.dim = opts.dim;
    this.inputSize = opts.inputSize;
    this.seed = opts.seed;
  }

  private matrix(tap: number, inputLen: number): Float64Array {
    let w = this.matrices.get(tap);
    if (!w) {
      w = projectionMatrix(`${this.seed}/vision/${tap}`, this.dim, inputLen);
      this.matrices.set(tap, w);
    }
    return w;
  }

  embed(image: RasterImage, gridH: number, gridW: number): Float64Array[][] {
    if (image.width !== this.inputSize || image.height !== this.inputSize) {
      throw new ModelError(
        `expected a ${this.inputSize}x${this.inputSize} input, got ${image.width}x${image.height}`
      );
    }
    if (this.inputSize % gridH !== 0 || this.inputSize % gridW !== 0) {
      throw new ModelError(
        `input size ${this.inputSize} does not tile into a ${gridH}x${gridW} grid`
      );
    }
    const ph = this.inputSize / gridH;
    const pw = this.inputSize / gridW;
    const inputLen = ph * pw * 3 + 1;
    const patch = new Float64Array(inputLen);
    patch[inputLen - 1] = 1;

    const out: Float64Array[][] = [];
    for (const tap of this.taps) {
      const w = this.matrix(tap, inputLen);
      const vectors: Float64Array[] = [];
      for (let gy = 0; gy < gridH; gy++) {
        for (let gx = 0; gx < gridW; gx++) {
          let k = 0;
          for (let y = gy * ph; y < (gy + 1) * ph; y++) {
            for (let x = gx * pw; x < (gx + 1) * pw; x++) {
              const base = 3 * (y * image.width + x);
              patch[k++] = image.pixels[base] / 255;
              patch[k++] = image.pixels[base + 1] / 255;
              patch[k++] = image.pixels[base + 2] / 255;
            }
          }
          const v = new Float64Array(this.dim);
          for (let r = 0; r < this.dim; r++) {
            let acc = 0;
            const row = r * inputLen;
            for (let c = 0; c < inputLen; c++) acc += w[row + c] * patch[c];
            v[r] = acc;
          }
          vectors.push(v);
        }
      }
      out.push(vectors);
    }
    return out;
  }
}

const TEXT_BUCKETS = 1024;

/** FNV-1a over a short string; stable across runs and platforms. */
function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/**
 * Character-trigram hashing into a fixed bucket vector, then the same
 * seeded projection as the vision side; output is L2-normalized.  A
 * reserved bias bucket keeps empty strings away from the zero vector.
 */
export class HashingTextEmbedder implements TextEmbedder {
  readonly dim: number;
  private readonly w: Float64Array;

  constructor(opts: Pick<ModelOptions, "dim" | "seed">) {
    if (opts.dim < 1) {
      throw new ModelError(`dim must be >= 1, got ${opts.dim}`);
    }
    this.dim = opts.dim;
    this.w = projectionMatrix(`${opts.seed}/text`, opts.dim, TEXT_BUCKETS);
  }

  embed(text: string): Float64Array {
    const counts = new Float64Array(TEXT_BUCKETS);
    counts[0] = 1; // bias bucket
    const padded = `^${text.toLowerCase()}$`;
    for (let i = 0; i + 3 <= padded.length; i++) {
      const bucket = 1 + (fnv1a(padded.slice(i, i + 3)) % (TEXT_BUCKETS - 1));
      counts[bucket] += 1;
    }
    const v = new Float64Array(this.dim);
    for (let r = 0; r < this.dim; r++) {
      let acc = 0;
      const row = r * TEXT_BUCKETS;
      for (let c = 0; c < TEXT_BUCKETS; c++) {
        if (counts[c] !== 0) acc += this.w[row + c] * counts[c];
      }
      v[r] = acc;
    }
    let norm = 0;
    for (let r = 0; r < this.dim; r++) norm += v[r] * v[r];
    norm = Math.sqrt(norm);
    if (norm === 0) {
      throw new ModelError("text embedding collapsed to zero");
    }
    for (let r = 0; r < this.dim; r++) v[r] /= norm;
    return v;
  }
}

export function resolveVisionModel(id: string, opts: ModelOptions): PatchEmbedder {
  if (id === "projection") {
    return new ProjectionPatchEmbedder(opts);
  }
  throw new ModelError(`unknown vision model ${JSON.stringify(id)}`);
}

export function resolveTextModel(
  id: string,
  opts: Pick<ModelOptions, "dim" | "seed">
): TextEmbedder {
  if (id === "projection") {
    return new HashingTextEmbedder(opts);
  }
  throw new ModelError(`unknown text model ${JSON.stringify(id)}`);
}
