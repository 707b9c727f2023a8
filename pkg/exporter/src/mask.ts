/**
 * Mask re-encoding.  The exporter never segments anything; it converts
 * mask rasters produced elsewhere into the u32 label grids the engine
 * reads.  Training masks carry region pseudo-labels (each distinct gray
 * value becomes one region id); test masks are binary anomaly ground truth
 * (any nonzero pixel is anomalous).
 */

import { RasterImage, toGray } from "./image.js";
import { Tensor, u32Tensor } from "./mtns.js";

/** Distinct gray values, ascending, remapped to dense region ids 0..K-1. */
export function encodeRegionMask(img: RasterImage): Tensor {
  const gray = toGray(img);
  const values = new Uint32Array(gray.length);
  for (let i = 0; i < gray.length; i++) values[i] = Math.round(gray[i]);
  const distinct = [...new Set(values)].sort((a, b) => a - b);
  const ids = new Map<number, number>(distinct.map((v, i) => [v, i]));
  const labels = new Uint32Array(gray.length);
  for (let i = 0; i < gray.length; i++) labels[i] = ids.get(values[i])!;
  return u32Tensor([img.height, img.width], labels);
}

/** Nonzero pixels become 1; everything else 0. */
export function encodeBinaryMask(img: RasterImage): Tensor {
  const gray = toGray(img);
  const labels = new Uint32Array(gray.length);
  for (let i = 0; i < gray.length; i++) labels[i] = Math.round(gray[i]) > 0 ? 1 : 0;
  return u32Tensor([img.height, img.width], labels);
}

/** Single-region fallback for training images that ship without a mask. */
export function uniformRegionMask(height: number, width: number): Tensor {
  return u32Tensor([height, width], new Uint32Array(height * width));
}
