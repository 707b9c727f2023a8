/**
 * Image loading and preprocessing.
 *
 * Binary PPM (P6) and PGM (P5) are decoded natively; PNG goes through
 * pngjs.  Everything lands in a single RGB raster type so downstream code
 * never branches on the source format.  Grayscale sources are replicated
 * across channels.
 */

import { readFileSync } from "node:fs";

import { PNG } from "pngjs";

export class ImageDecodeError extends Error {}

export interface RasterImage {
  width: number;
  height: number;
  /** Interleaved RGB, row-major, values 0..255. */
  pixels: Uint8Array;
}

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export function decodeImage(raw: Buffer, name = "<buffer>"): RasterImage {
  if (raw.length >= 2 && raw[0] === 0x50 && (raw[1] === 0x35 || raw[1] === 0x36)) {
    return decodePnm(raw, name);
  }
  if (raw.length >= 8 && raw.subarray(0, 8).equals(PNG_SIGNATURE)) {
    return decodePng(raw, name);
  }
  throw new ImageDecodeError(`${name}: not a P5/P6 PNM or PNG file`);
}

export function loadImage(path: string): RasterImage {
  return decodeImage(readFileSync(path), path);
}

function decodePng(raw: Buffer, name: string): RasterImage {
  let png: PNG;
  try {
    png = PNG.sync.read(raw);
  } catch (err) {
    throw new ImageDecodeError(`${name}: ${(err as Error).message}`);
  }
  const pixels = new Uint8Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    pixels[3 * i] = png.data[4 * i];
    pixels[3 * i + 1] = png.data[4 * i + 1];
    pixels[3 * i + 2] = png.data[4 * i + 2];
  }
  return { width: png.width, height: png.height, pixels };
}

/** Parse the three whitespace/comment-separated header integers of a PNM. */
function pnmHeader(raw: Buffer, name: string): { values: number[]; offset: number } {
  const values: number[] = [];
  let i = 2; // past the magic
  while (values.length < 3) {
    while (i < raw.length && isSpace(raw[i])) i++;
    if (i < raw.length && raw[i] === 0x23 /* '#' */) {
      while (i < raw.length && raw[i] !== 0x0a) i++;
      continue;
    }
    let start = i;
    while (i < raw.length && !isSpace(raw[i])) i++;
    if (i === start) {
      throw new ImageDecodeError(`${name}: truncated PNM header`);
    }
    const token = raw.toString("ascii", start, i);
    const value = Number(token);
    if (!Number.isInteger(value) || value < 0) {
      throw new ImageDecodeError(`${name}: bad PNM header token ${JSON.stringify(token)}`);
    }
    values.push(value);
  }
  // exactly one whitespace byte separates the header from the payload
  if (i >= raw.length || !isSpace(raw[i])) {
    throw new ImageDecodeError(`${name}: truncated PNM header`);
  }
  return { values, offset: i + 1 };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d || b === 0x0b || b === 0x0c;
}

export function decodePnm(raw: Buffer, name = "<buffer>"): RasterImage {
  const channels = raw[1] === 0x36 ? 3 : 1; // P6 vs P5
  const { values, offset } = pnmHeader(raw, name);
  const [width, height, maxval] = values;
  if (width < 1 || height < 1) {
    throw new ImageDecodeError(`${name}: bad PNM size ${width}x${height}`);
  }
  if (maxval < 1 || maxval > 255) {
    throw new ImageDecodeError(`${name}: only 8-bit PNM supported (maxval ${maxval})`);
  }
  const need = width * height * channels;
  if (raw.length - offset < need) {
    throw new ImageDecodeError(
      `${name}: payload has ${raw.length - offset} bytes, expected ${need}`
    );
  }
  const body = raw.subarray(offset, offset + need);
  const pixels = new Uint8Array(width * height * 3);
  if (channels === 3) {
    pixels.set(body);
  } else {
    for (let i = 0; i < width * height; i++) {
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = body[i];
    }
  }
  return { width, height, pixels };
}

/** Grayscale view of a raster (ITU-R 601 luma), values 0..255 as doubles. */
export function toGray(img: RasterImage): Float64Array {
  const out = new Float64Array(img.width * img.height);
  for (let i = 0; i < out.length; i++) {
    out[i] =
      0.299 * img.pixels[3 * i] +
      0.587 * img.pixels[3 * i + 1] +
      0.114 * img.pixels[3 * i + 2];
  }
  return out;
}

/**
 * Center-aligned separable bilinear resize to outW x outH.
 *
 * Identity when the size already matches: source positions land exactly on
 * integer pixels, so values pass through unchanged.
 */
export function resizeBilinear(img: RasterImage, outW: number, outH: number): RasterImage {
  if (outW < 1 || outH < 1) {
    throw new ImageDecodeError(`bad resize target ${outW}x${outH}`);
  }
  if (outW === img.width && outH === img.height) {
    return { width: img.width, height: img.height, pixels: img.pixels.slice() };
  }
  const xLo = new Int32Array(outW);
  const xHi = new Int32Array(outW);
  const xFrac = new Float64Array(outW);
  fillAxis(outW, img.width, xLo, xHi, xFrac);
  const yLo = new Int32Array(outH);
  const yHi = new Int32Array(outH);
  const yFrac = new Float64Array(outH);
  fillAxis(outH, img.height, yLo, yHi, yFrac);

  const out = new Uint8Array(outW * outH * 3);
  for (let y = 0; y < outH; y++) {
    for (let x = 0; x < outW; x++) {
      for (let c = 0; c < 3; c++) {
        const tl = img.pixels[3 * (yLo[y] * img.width + xLo[x]) + c];
        const tr = img.pixels[3 * (yLo[y] * img.width + xHi[x]) + c];
        const bl = img.pixels[3 * (yHi[y] * img.width + xLo[x]) + c];
        const br = img.pixels[3 * (yHi[y] * img.width + xHi[x]) + c];
        const top = tl + (tr - tl) * xFrac[x];
        const bot = bl + (br - bl) * xFrac[x];
        out[3 * (y * outW + x) + c] = Math.round(top + (bot - top) * yFrac[y]);
      }
    }
  }
  return { width: outW, height: outH, pixels: out };
}

function fillAxis(
  outN: number,
  srcN: number,
  lo: Int32Array,
  hi: Int32Array,
  frac: Float64Array
): void {
  for (let i = 0; i < outN; i++) {
    let pos = (i + 0.5) * (srcN / outN) - 0.5;
    pos = Math.min(Math.max(pos, 0), srcN - 1);
    const l = Math.min(Math.floor(pos), srcN - 1);
    lo[i] = l;
    hi[i] = Math.min(l + 1, srcN - 1);
    frac[i] = pos - l;
  }
}
