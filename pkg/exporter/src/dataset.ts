/**
 * Input-folder discovery.  The expected layout is the MVTec-style
 * convention:
 *
 *   input/
 *     <task>/
 *       train/                 normal training images
 *       test/<condition>/      test images; condition "good" means normal
 *
 * A mask for image `foo.ppm` is a sibling named `foo.mask.pgm` (any
 * decodable extension works).  Train masks are optional region
 * pseudo-labels; test masks are optional binary anomaly ground truth and
 * only make sense for non-good conditions.
 */

import { readdirSync, statSync } from "node:fs";
import { basename, extname, join } from "node:path";

export class LayoutError extends Error {}

export const IMAGE_EXTENSIONS = new Set([".ppm", ".pgm", ".pnm", ".png"]);

export interface SourceImage {
  path: string;
  /** Image filename without extension; output files reuse it. */
  stem: string;
  maskPath: string | null;
}

export interface SourceTestImage extends SourceImage {
  condition: string;
  imageLabel: 0 | 1;
}

export interface SourceTask {
  name: string;
  train: SourceImage[];
  test: SourceTestImage[];
}

function isDir(path: string): boolean {
  try {
    return statSync(path).isDirectory();
  } catch {
    return false;
  }
}

function isMaskName(name: string): boolean {
  return basename(name, extname(name)).endsWith(".mask");
}

function listImages(dir: string): SourceImage[] {
  const names = readdirSync(dir).sort();
  const out: SourceImage[] = [];
  for (const name of names) {
    const ext = extname(name).toLowerCase();
    if (!IMAGE_EXTENSIONS.has(ext) || isMaskName(name)) continue;
    const stem = basename(name, ext);
    let maskPath: string | null = null;
    for (const maskExt of IMAGE_EXTENSIONS) {
      const candidate = join(dir, `${stem}.mask${maskExt}`);
      if (names.includes(`${stem}.mask${maskExt}`)) {
        maskPath = candidate;
        break;
      }
    }
    out.push({ path: join(dir, name), stem, maskPath });
  }
  return out;
}

export function discoverTasks(inputDir: string): SourceTask[] {
  if (!isDir(inputDir)) {
    throw new LayoutError(`input directory not found: ${inputDir}`);
  }
  const taskNames = readdirSync(inputDir)
    .filter((name) => isDir(join(inputDir, name)))
    .sort();
  const tasks: SourceTask[] = [];
  for (const name of taskNames) {
    const trainDir = join(inputDir, name, "train");
    const testDir = join(inputDir, name, "test");
    if (!isDir(trainDir)) {
      throw new LayoutError(`task ${name}: missing train/ directory`);
    }
    const train = listImages(trainDir);
    if (train.length === 0) {
      throw new LayoutError(`task ${name}: no training images`);
    }
    const test: SourceTestImage[] = [];
    if (isDir(testDir)) {
      for (const condition of readdirSync(testDir)
        .filter((c) => isDir(join(testDir, c)))
        .sort()) {
        const imageLabel = condition === "good" ? 0 : 1;
        for (const img of listImages(join(testDir, condition))) {
          test.push({ ...img, condition, imageLabel });
        }
      }
    }
    tasks.push({ name, train, test });
  }
  if (tasks.length === 0) {
    throw new LayoutError(`no task directories under ${inputDir}`);
  }
  return tasks;
}
