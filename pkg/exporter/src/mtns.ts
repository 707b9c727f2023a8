/**
 * MTNS tensor container (little-endian throughout):
 *
 *   bytes 0..3   magic "MTNS"
 *   byte  4      format version (1)
 *   byte  5      dtype code (0 = f32, 1 = u32)
 *   byte  6      rank (1..4)
 *   byte  7      padding (0)
 *   next  8*rank u64 dims
 *   rest         row-major payload, 4 bytes per element
 *
 * The encoder is explicit about byte order so output is identical on any
 * host; payload length must match the dims exactly.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC = "MTNS";
export const FORMAT_VERSION = 1;

export type Dtype = "f32" | "u32";

const DTYPE_CODES: Record<Dtype, number> = { f32: 0, u32: 1 };
const CODE_DTYPES: Record<number, Dtype> = { 0: "f32", 1: "u32" };

export interface Tensor {
  dtype: Dtype;
  dims: number[];
  /** Row-major values; length must equal the product of dims. */
  data: Float32Array | Uint32Array;
}

export class TensorFormatError extends Error {}

function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

function checkTensor(t: Tensor): void {
  if (!(t.dtype in DTYPE_CODES)) {
    throw new TensorFormatError(`unsupported dtype ${t.dtype}`);
  }
  if (t.dims.length < 1 || t.dims.length > 4) {
    throw new TensorFormatError(`rank must be 1..4, got ${t.dims.length}`);
  }
  for (const d of t.dims) {
    if (!Number.isInteger(d) || d < 1) {
      throw new TensorFormatError(`dims must all be >= 1, got [${t.dims}]`);
    }
  }
  if (t.data.length !== elementCount(t.dims)) {
    throw new TensorFormatError(
      `payload has ${t.data.length} elements, dims [${t.dims}] need ${elementCount(t.dims)}`
    );
  }
  const wantFloat = t.dtype === "f32";
  const isFloat = t.data instanceof Float32Array;
  if (wantFloat !== isFloat) {
    throw new TensorFormatError(`payload array does not match dtype ${t.dtype}`);
  }
}

export function f32Tensor(dims: number[], values: ArrayLike<number>): Tensor {
  return { dtype: "f32", dims, data: Float32Array.from(values) };
}

export function u32Tensor(dims: number[], values: ArrayLike<number>): Tensor {
  return { dtype: "u32", dims, data: Uint32Array.from(values) };
}

export function encodeTensor(t: Tensor): Buffer {
  checkTensor(t);
  const rank = t.dims.length;
  const buf = Buffer.alloc(8 + 8 * rank + 4 * t.data.length);
  buf.write(MAGIC, 0, "ascii");
  buf[4] = FORMAT_VERSION;
  buf[5] = DTYPE_CODES[t.dtype];
  buf[6] = rank;
  buf[7] = 0;
  for (let i = 0; i < rank; i++) {
    buf.writeBigUInt64LE(BigInt(t.dims[i]), 8 + 8 * i);
  }
  const view = new DataView(buf.buffer, buf.byteOffset + 8 + 8 * rank);
  if (t.dtype === "f32") {
    for (let i = 0; i < t.data.length; i++) view.setFloat32(4 * i, t.data[i], true);
  } else {
    for (let i = 0; i < t.data.length; i++) view.setUint32(4 * i, t.data[i], true);
  }
  return buf;
}

export function decodeTensor(raw: Buffer): Tensor {
  if (raw.length < 8 || raw.toString("ascii", 0, 4) !== MAGIC) {
    throw new TensorFormatError("bad magic");
  }
  const [version, dtypeCode, rank, pad] = [raw[4], raw[5], raw[6], raw[7]];
  if (version !== FORMAT_VERSION) {
    throw new TensorFormatError(`unsupported version ${version}`);
  }
  if (!(dtypeCode in CODE_DTYPES)) {
    throw new TensorFormatError(`unknown dtype code ${dtypeCode}`);
  }
  if (rank < 1 || rank > 4 || pad !== 0) {
    throw new TensorFormatError(`bad rank/padding (${rank}, ${pad})`);
  }
  if (raw.length < 8 + 8 * rank) {
    throw new TensorFormatError("header truncated");
  }
  const dims: number[] = [];
  for (let i = 0; i < rank; i++) {
    const d = raw.readBigUInt64LE(8 + 8 * i);
    if (d < 1n || d > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new TensorFormatError(`dims must be >= 1, got ${d}`);
    }
    dims.push(Number(d));
  }
  const count = elementCount(dims);
  const payload = raw.subarray(8 + 8 * rank);
  if (payload.length !== 4 * count) {
    throw new TensorFormatError(
      `payload has ${payload.length} bytes, expected ${4 * count}`
    );
  }
  const view = new DataView(payload.buffer, payload.byteOffset, payload.length);
  const dtype = CODE_DTYPES[dtypeCode];
  if (dtype === "f32") {
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = view.getFloat32(4 * i, true);
    return { dtype, dims, data };
  }
  const data = new Uint32Array(count);
  for (let i = 0; i < count; i++) data[i] = view.getUint32(4 * i, true);
  return { dtype, dims, data };
}

export function writeTensor(path: string, t: Tensor): void {
  writeFileSync(path, encodeTensor(t));
}

export function readTensor(path: string): Tensor {
  return decodeTensor(readFileSync(path));
}
