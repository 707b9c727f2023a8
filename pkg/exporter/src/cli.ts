#!/usr/bin/env node
/**
 * feature-exporter CLI.
 *
 *   export    embed an image folder into an MTNS dataset
 *   inspect   print the header of one MTNS file
 *
 * Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
 * stdout carries the produced manifest path only; diagnostics go to stderr.
 */

import { parseArgs } from "node:util";

import { LayoutError } from "./dataset.js";
import { ModelError } from "./embed.js";
import { ImageDecodeError } from "./image.js";
import { ExportError, defaultConfig, runExport } from "./export.js";
import { TensorFormatError, readTensor } from "./mtns.js";

const USAGE = `usage:
  feature-exporter export --input DIR --out DIR [options]
  feature-exporter inspect FILE.mtns

export options:
  --vision-model ID   patch embedder (default "projection")
  --text-model ID     text embedder (default "projection")
  --dim N             feature dimension (default 32)
  --taps L,L          layer taps (default 5,11)
  --grid HxW          patch grid (default 8x8)
  --input-size N      resize side before patching (default 224)
  --seed N            RNG seed (default 0)
  --text TASK=TEXT    per-task text (repeatable; default: the task name)
`;

class UsageError extends Error {}

function parsePositiveInt(value: string, flag: string): number {
  const n = Number(value);
  if (!Number.isInteger(n) || n < 1) {
    throw new UsageError(`${flag} must be a positive integer, got ${JSON.stringify(value)}`);
  }
  return n;
}

function parseNonNegativeInt(value: string, flag: string): number {
  const n = Number(value);
  if (!Number.isInteger(n) || n < 0) {
    throw new UsageError(`${flag} must be a non-negative integer, got ${JSON.stringify(value)}`);
  }
  return n;
}

function parseGrid(value: string): [number, number] {
  const m = /^(\d+)x(\d+)$/.exec(value);
  if (!m) {
    throw new UsageError(`--grid must look like 8x8, got ${JSON.stringify(value)}`);
  }
  return [parsePositiveInt(m[1], "--grid"), parsePositiveInt(m[2], "--grid")];
}

function parseTaps(value: string): number[] {
  const taps = value.split(",").map((part) => parseNonNegativeInt(part.trim(), "--taps"));
  if (taps.length === 0 || new Set(taps).size !== taps.length) {
    throw new UsageError(`--taps must be distinct layers, got ${JSON.stringify(value)}`);
  }
  return taps;
}

function parseTaskText(entries: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (const entry of entries) {
    const eq = entry.indexOf("=");
    if (eq <= 0) {
      throw new UsageError(`--text expects TASK=TEXT, got ${JSON.stringify(entry)}`);
    }
    out.set(entry.slice(0, eq), entry.slice(eq + 1));
  }
  return out;
}

function runExportCommand(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      input: { type: "string" },
      out: { type: "string" },
      "vision-model": { type: "string", default: "projection" },
      "text-model": { type: "string", default: "projection" },
      dim: { type: "string", default: "32" },
      taps: { type: "string", default: "5,11" },
      grid: { type: "string", default: "8x8" },
      "input-size": { type: "string", default: "224" },
      seed: { type: "string", default: "0" },
      text: { type: "string", multiple: true, default: [] },
    },
    allowPositionals: false,
  });
  if (!values.input || !values.out) {
    throw new UsageError("export requires --input and --out");
  }
  const cfg = defaultConfig(values.input, values.out);
  cfg.visionModel = values["vision-model"]!;
  cfg.textModel = values["text-model"]!;
  cfg.dim = parsePositiveInt(values.dim!, "--dim");
  cfg.taps = parseTaps(values.taps!);
  [cfg.gridH, cfg.gridW] = parseGrid(values.grid!);
  cfg.inputSize = parsePositiveInt(values["input-size"]!, "--input-size");
  cfg.seed = parseNonNegativeInt(values.seed!, "--seed");
  cfg.taskText = parseTaskText(values.text!);
  if (cfg.inputSize % cfg.gridH !== 0 || cfg.inputSize % cfg.gridW !== 0) {
    throw new UsageError(
      `--input-size ${cfg.inputSize} does not tile into a ${cfg.gridH}x${cfg.gridW} grid`
    );
  }

  const summary = runExport(cfg);
  console.error(
    `exported ${summary.images} items across ${summary.tasks} tasks` +
      (summary.skipped ? ` (${summary.skipped} skipped, see ${summary.logPath})` : "")
  );
  console.log(summary.manifestPath);
  return 0;
}

function runInspectCommand(argv: string[]): number {
  const { positionals } = parseArgs({ args: argv, options: {}, allowPositionals: true });
  if (positionals.length !== 1) {
    throw new UsageError("inspect expects exactly one FILE.mtns argument");
  }
  const t = readTensor(positionals[0]);
  console.log(JSON.stringify({ dtype: t.dtype, dims: t.dims, elements: t.data.length }));
  return 0;
}

export function dispatch(argv: string[]): number {
  try {
    const [command, ...rest] = argv;
    if (command === "export") return runExportCommand(rest);
    if (command === "inspect") return runInspectCommand(rest);
    if (command === "--help" || command === "-h" || command === undefined) {
      process.stderr.write(USAGE);
      return command === undefined ? 1 : 0;
    }
    throw new UsageError(`unknown command ${JSON.stringify(command)}`);
  } catch (err) {
    if (
      err instanceof UsageError ||
      err instanceof LayoutError ||
      err instanceof ModelError ||
      (err as { code?: string }).code === "ERR_PARSE_ARGS_UNKNOWN_OPTION" ||
      (err as { code?: string }).code === "ERR_PARSE_ARGS_INVALID_OPTION_VALUE"
    ) {
      console.error(`error: ${(err as Error).message}`);
      process.stderr.write(USAGE);
      return 1;
    }
    if (
      err instanceof ExportError ||
      err instanceof ImageDecodeError ||
      err instanceof TensorFormatError
    ) {
      console.error(`error: ${(err as Error).message}`);
      return 2;
    }
    throw err;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(dispatch(process.argv.slice(2)));
}
