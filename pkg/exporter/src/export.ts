/**
 * The export pipeline: discover tasks, embed images, re-encode masks, and
 * write an MTNS dataset (feature tensors + sidecar tap indexes + text
 * vectors + manifest JSON) that the engine loads unchanged.
 *
 * Per image the feature file is rank-3 [taps, M, D] with a
 * `<file>.layers.json` sidecar naming the taps and the patch grid.  An
 * undecodable image is skipped with a warning and recorded in
 * `export_log.txt`; a model that fails to resolve is fatal.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join, relative, sep } from "node:path";

import { SourceImage, SourceTask, discoverTasks } from "./dataset.js";
import {
  ModelOptions,
  PatchEmbedder,
  TextEmbedder,
  resolveTextModel,
  resolveVisionModel,
} from "./embed.js";
import { ImageDecodeError, RasterImage, decodeImage, resizeBilinear } from "./image.js";
import { encodeBinaryMask, encodeRegionMask, uniformRegionMask } from "./mask.js";
import { Tensor, f32Tensor, writeTensor } from "./mtns.js";

export class ExportError extends Error {}

export interface ExportConfig {
  inputDir: string;
  outDir: string;
  visionModel: string;
  textModel: string;
  dim: number;
  taps: number[];
  gridH: number;
  gridW: number;
  inputSize: number;
  seed: number;
  /** Task text overrides; tasks not listed use their own name as text. */
  taskText: Map<string, string>;
}

export interface ExportSummary {
  manifestPath: string;
  logPath: string;
  tasks: number;
  images: number;
  skipped: number;
}

interface ManifestTrainItem {
  features: string;
  mask: string;
}

interface ManifestTestItem {
  features: string;
  image_label: number;
  pixel_mask?: string;
}

interface ManifestTask {
  name: string;
  text_feature: string;
  train_items: ManifestTrainItem[];
  test_items: ManifestTestItem[];
}

export function defaultConfig(inputDir: string, outDir: string): ExportConfig {
  return {
    inputDir,
    outDir,
    visionModel: "projection",
    textModel: "projection",
    dim: 32,
    taps: [5, 11],
    gridH: 8,
    gridW: 8,
    inputSize: 224,
    seed: 0,
    taskText: new Map(),
  };
}

function relPath(root: string, path: string): string {
  return relative(root, path).split(sep).join("/");
}

/** Stack per-tap patch vectors into one rank-3 [taps, M, D] tensor. */
function featureTensor(vectors: Float64Array[][], dim: number): Tensor {
  const taps = vectors.length;
  const m = vectors[0].length;
  const flat = new Float64Array(taps * m * dim);
  for (let t = 0; t < taps; t++) {
    for (let p = 0; p < m; p++) {
      flat.set(vectors[t][p], (t * m + p) * dim);
    }
  }
  return f32Tensor([taps, m, dim], flat);
}

function writeSidecar(featurePath: string, taps: number[], gridH: number, gridW: number): void {
  const sidecar = `${featurePath}.layers.json`;
  writeFileSync(sidecar, JSON.stringify({ layers: taps, grid: [gridH, gridW] }) + "\n");
}

class ExportLog {
  readonly lines: string[] = [];

  warn(message: string): void {
    this.lines.push(`WARN ${message}`);
    console.warn(`warning: ${message}`);
  }

  info(message: string): void {
    this.lines.push(`INFO ${message}`);
  }

  write(path: string): void {
    writeFileSync(path, this.lines.map((l) => l + "\n").join(""));
  }
}

interface EmbeddedImage {
  features: Tensor;
  raster: RasterImage;
}

function embedOne(
  src: SourceImage,
  embedder: PatchEmbedder,
  cfg: ExportConfig,
  log: ExportLog
): EmbeddedImage | null {
  let raster: RasterImage;
  try {
    raster = decodeImage(readFileSync(src.path), src.path);
  } catch (err) {
    if (err instanceof ImageDecodeError) {
      log.warn(`skipping ${src.path}: ${err.message}`);
      return null;
    }
    throw err;
  }
  const resized = resizeBilinear(raster, cfg.inputSize, cfg.inputSize);
  const vectors = embedder.embed(resized, cfg.gridH, cfg.gridW);
  return { features: featureTensor(vectors, cfg.dim), raster };
}

function loadMask(path: string, log: ExportLog): RasterImage | null {
  try {
    return decodeImage(readFileSync(path), path);
  } catch (err) {
    if (err instanceof ImageDecodeError) {
      log.warn(`ignoring mask ${path}: ${err.message}`);
      return null;
    }
    throw err;
  }
}

function exportTask(
  task: SourceTask,
  cfg: ExportConfig,
  vision: PatchEmbedder,
  text: TextEmbedder,
  log: ExportLog
): { doc: ManifestTask; images: number; skipped: number } {
  const taskDir = join(cfg.outDir, task.name);
  mkdirSync(join(taskDir, "train"), { recursive: true });
  let images = 0;
  let skipped = 0;

  const textPath = join(taskDir, "text.mtns");
  const textValue = cfg.taskText.get(task.name) ?? task.name;
  writeTensor(textPath, f32Tensor([text.dim], text.embed(textValue)));

  const trainItems: ManifestTrainItem[] = [];
  for (const src of task.train) {
    const embedded = embedOne(src, vision, cfg, log);
    if (!embedded) {
      skipped++;
      continue;
    }
    const featurePath = join(taskDir, "train", `${src.stem}.features.mtns`);
    writeTensor(featurePath, embedded.features);
    writeSidecar(featurePath, vision.taps, cfg.gridH, cfg.gridW);

    const maskPath = join(taskDir, "train", `${src.stem}.mask.mtns`);
    const maskRaster = src.maskPath ? loadMask(src.maskPath, log) : null;
    const mask = maskRaster
      ? encodeRegionMask(maskRaster)
      : uniformRegionMask(embedded.raster.height, embedded.raster.width);
    writeTensor(maskPath, mask);

    trainItems.push({
      features: relPath(cfg.outDir, featurePath),
      mask: relPath(cfg.outDir, maskPath),
    });
    images++;
  }
  if (trainItems.length === 0) {
    throw new ExportError(`task ${task.name}: every training image was skipped`);
  }

  const testItems: ManifestTestItem[] = [];
  for (const src of task.test) {
    const embedded = embedOne(src, vision, cfg, log);
    if (!embedded) {
      skipped++;
      continue;
    }
    const condDir = join(taskDir, "test", src.condition);
    mkdirSync(condDir, { recursive: true });
    const featurePath = join(condDir, `${src.stem}.features.mtns`);
    writeTensor(featurePath, embedded.features);
    writeSidecar(featurePath, vision.taps, cfg.gridH, cfg.gridW);

    const item: ManifestTestItem = {
      features: relPath(cfg.outDir, featurePath),
      image_label: src.imageLabel,
    };
    if (src.maskPath) {
      const maskRaster = loadMask(src.maskPath, log);
      if (maskRaster) {
        const maskPath = join(condDir, `${src.stem}.mask.mtns`);
        writeTensor(maskPath, encodeBinaryMask(maskRaster));
        item.pixel_mask = relPath(cfg.outDir, maskPath);
      }
    }
    testItems.push(item);
    images++;
  }

  return {
    doc: {
      name: task.name,
      text_feature: relPath(cfg.outDir, textPath),
      train_items: trainItems,
      test_items: testItems,
    },
    images,
    skipped,
  };
}

export function runExport(cfg: ExportConfig): ExportSummary {
  const tasks = discoverTasks(cfg.inputDir);
  const modelOpts: ModelOptions = {
    dim: cfg.dim,
    taps: cfg.taps,
    seed: cfg.seed,
    inputSize: cfg.inputSize,
  };
  const vision = resolveVisionModel(cfg.visionModel, modelOpts);
  const text = resolveTextModel(cfg.textModel, modelOpts);

  mkdirSync(cfg.outDir, { recursive: true });
  const log = new ExportLog();
  log.info(
    `export: input=${cfg.inputDir} vision=${cfg.visionModel} text=${cfg.textModel} ` +
      `dim=${cfg.dim} taps=[${vision.taps}] grid=${cfg.gridH}x${cfg.gridW} ` +
      `input_size=${cfg.inputSize} seed=${cfg.seed}`
  );

  const taskDocs: ManifestTask[] = [];
  let images = 0;
  let skipped = 0;
  for (const task of tasks) {
    const result = exportTask(task, cfg, vision, text, log);
    taskDocs.push(result.doc);
    images += result.images;
    skipped += result.skipped;
  }

  const manifestPath = join(cfg.outDir, "manifest.json");
  writeFileSync(manifestPath, JSON.stringify({ tasks: taskDocs }, null, 2) + "\n");
  log.info(`wrote ${images} items across ${tasks.length} tasks (${skipped} skipped)`);
  const logPath = join(cfg.outDir, "export_log.txt");
  log.write(logPath);

  return { manifestPath, logPath, tasks: tasks.length, images, skipped };
}
