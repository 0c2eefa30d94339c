/**
 * Extraction jobs: image tree -> embedding directory, prompt JSON ->
 * prompt embedding directory. Both outputs share one class ordering
 * (sorted class directory names) and record the encoder name and
 * preprocessing recipe in their manifests so mismatched banks are
 * detectable downstream.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { createEncoder, Encoder } from "./encoder";
import {
  EmbeddingManifest,
  FORMAT_VERSION,
  PromptManifest,
  writeFeatures,
  writeLabels,
  writeManifest,
} from "./format";
import { decodeImage, listClassDirs, listImageFiles } from "./images";
import { loadPrompts, requireClasses } from "./prompts";

export interface ExtractJob {
  imagesRoot: string;
  promptsPath: string;
  encoderName: string;
  outDir: string;
  /** defaults to `<outDir>/prompts` */
  promptOutDir?: string;
  /** reserved for real batched backends; the built-in encoder is per-item */
  batchSize?: number;
  /** device hint for real backends ("cpu", "gpu:0", ...) */
  device?: string;
}

export interface ExtractResult {
  outDir: string;
  classes: string[];
  rows: number;
  dim: number;
  skipped: string[];
}

function checkFinite(row: Float32Array, context: string): void {
  for (const value of row) {
    if (!Number.isFinite(value)) {
      throw new Error(`${context}: encoder produced a non-finite value`);
    }
  }
}

export function extractImages(job: ExtractJob, encoder?: Encoder): ExtractResult {
  const enc = encoder ?? createEncoder(job.encoderName);
  const classes = listClassDirs(job.imagesRoot);
  const rows: Float32Array[] = [];
  const labels: number[] = [];
  const skipped: string[] = [];

  classes.forEach((name, label) => {
    const files = listImageFiles(path.join(job.imagesRoot, name));
    let decoded = 0;
    for (const file of files) {
      let image;
      try {
        image = decodeImage(file);
      } catch (err) {
        skipped.push(file);
        console.warn(`skipping undecodable image ${file}: ${(err as Error).message}`);
        continue;
      }
      const row = enc.encodeImage(image);
      checkFinite(row, file);
      rows.push(row);
      labels.push(label);
      decoded += 1;
    }
    if (decoded === 0) {
      throw new Error(`class ${JSON.stringify(name)} has no decodable images`);
    }
  });

  fs.mkdirSync(job.outDir, { recursive: true });
  writeFeatures(path.join(job.outDir, "features.bin"), rows, enc.dim);
  writeLabels(path.join(job.outDir, "labels.bin"), labels);
  const manifest: EmbeddingManifest = {
    format_version: FORMAT_VERSION,
    n: rows.length,
    d: enc.dim,
    classes,
    features_file: "features.bin",
    labels_file: "labels.bin",
    dtype: "f32le",
    encoder: enc.name,
    preprocess: enc.preprocessId,
  };
  writeManifest(job.outDir, manifest);
  return { outDir: job.outDir, classes, rows: rows.length, dim: enc.dim, skipped };
}

export function extractPrompts(job: ExtractJob, encoder?: Encoder): ExtractResult {
  const enc = encoder ?? createEncoder(job.encoderName);
  const classes = listClassDirs(job.imagesRoot);
  const prompts = loadPrompts(job.promptsPath);
  requireClasses(prompts, classes);

  const rows: Float32Array[] = [];
  const promptRows: [number, number][] = [];
  const texts: Record<string, string[]> = {};
  for (const name of classes) {
    const classPrompts = prompts.get(name)!;
    promptRows.push([rows.length, classPrompts.length]);
    texts[name] = classPrompts;
    for (const text of classPrompts) {
      const row = enc.encodeText(text);
      checkFinite(row, `prompt for ${name}`);
      rows.push(row);
    }
  }

  const outDir = job.promptOutDir ?? path.join(job.outDir, "prompts");
  fs.mkdirSync(outDir, { recursive: true });
  writeFeatures(path.join(outDir, "features.bin"), rows, enc.dim);
  const textNames = Object.keys(texts).sort();
  fs.writeFileSync(
    path.join(outDir, "prompts.json"),
    JSON.stringify(Object.fromEntries(textNames.map((k) => [k, texts[k]])), null, 2) + "\n"
  );
  const manifest: PromptManifest = {
    format_version: FORMAT_VERSION,
    n: rows.length,
    d: enc.dim,
    classes,
    features_file: "features.bin",
    prompt_rows: promptRows,
    texts_file: "prompts.json",
    dtype: "f32le",
    encoder: enc.name,
    preprocess: enc.preprocessId,
  };
  writeManifest(outDir, manifest);
  return { outDir, classes, rows: rows.length, dim: enc.dim, skipped: [] };
}

/** Full job: images plus prompts, one encoder instance, shared ordering. */
export function extract(job: ExtractJob): { images: ExtractResult; prompts: ExtractResult } {
  const encoder = createEncoder(job.encoderName);
  const images = extractImages(job, encoder);
  const prompts = extractPrompts(job, encoder);
  return { images, prompts };
}
