/**
 * Binary embedding-directory format shared with the Python side.
 *
 * All payloads are little-endian, version 1:
 *   features.bin  magic "PWEB" | u32 version | u64 n | u32 d | n*d float32
 *   labels.bin    magic "PWLB" | u32 version | u64 n | n * u32
 *   splits.bin    magic "PWSP" | u32 version | u64 n | n * u8
 *
 * Writers produce byte-identical output for identical input, which is what
 * makes re-extraction reproducible.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const FORMAT_VERSION = 1;

const FEATURE_MAGIC = "PWEB";
const LABEL_MAGIC = "PWLB";
const SPLIT_MAGIC = "PWSP";

function header(magic: string, n: number): Buffer {
  const buf = Buffer.alloc(16);
  buf.write(magic, 0, 4, "ascii");
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeBigUInt64LE(BigInt(n), 8);
  return buf;
}

export function encodeFeatures(rows: Float32Array[], dim: number): Buffer {
  for (const row of rows) {
    if (row.length !== dim) {
      throw new Error(`feature row has ${row.length} values, expected ${dim}`);
    }
  }
  const head = Buffer.alloc(20);
  header(FEATURE_MAGIC, rows.length).copy(head);
  head.writeUInt32LE(dim, 16);
  const body = Buffer.alloc(rows.length * dim * 4);
  let offset = 0;
  for (const row of rows) {
    for (let j = 0; j < dim; j++) {
      body.writeFloatLE(row[j], offset);
      offset += 4;
    }
  }
  return Buffer.concat([head, body]);
}

export function writeFeatures(file: string, rows: Float32Array[], dim: number): void {
  fs.writeFileSync(file, encodeFeatures(rows, dim));
}

export function writeLabels(file: string, labels: number[]): void {
  const body = Buffer.alloc(labels.length * 4);
  labels.forEach((label, i) => {
    if (!Number.isInteger(label) || label < 0) {
      throw new Error(`invalid label ${label} at row ${i}`);
    }
    body.writeUInt32LE(label, i * 4);
  });
  fs.writeFileSync(file, Buffer.concat([header(LABEL_MAGIC, labels.length), body]));
}

export function writeSplits(file: string, tags: number[]): void {
  const body = Buffer.from(
    tags.map((tag, i) => {
      if (tag !== 0 && tag !== 1 && tag !== 2) {
        throw new Error(`invalid split tag ${tag} at row ${i}`);
      }
      return tag;
    })
  );
  fs.writeFileSync(file, Buffer.concat([header(SPLIT_MAGIC, tags.length), body]));
}

export interface EmbeddingManifest {
  format_version: number;
  n: number;
  d: number;
  classes: string[];
  features_file: string;
  labels_file: string;
  splits_file?: string;
  dtype: "f32le";
  encoder?: string;
  preprocess?: string;
}

export interface PromptManifest {
  format_version: number;
  n: number;
  d: number;
  classes: string[];
  features_file: string;
  prompt_rows: [number, number][];
  texts_file?: string;
  dtype: "f32le";
  encoder?: string;
  preprocess?: string;
}

export function writeManifest(
  dir: string,
  manifest: EmbeddingManifest | PromptManifest
): void {
  // stable key order for byte-identical re-extraction
  const sorted = Object.fromEntries(
    Object.entries(manifest).sort(([a], [b]) => (a < b ? -1 : 1))
  );
  fs.writeFileSync(path.join(dir, "manifest.json"), JSON.stringify(sorted, null, 2) + "\n");
}

// ---------------------------------------------------------------------------
// readers (used by the tests to verify what was written)

export function readFeatures(file: string): { n: number; d: number; data: Float32Array } {
  const raw = fs.readFileSync(file);
  if (raw.subarray(0, 4).toString("ascii") !== FEATURE_MAGIC) {
    throw new Error(`${file}: bad magic`);
  }
  if (raw.readUInt32LE(4) !== FORMAT_VERSION) {
    throw new Error(`${file}: unsupported version`);
  }
  const n = Number(raw.readBigUInt64LE(8));
  const d = raw.readUInt32LE(16);
  if (raw.length !== 20 + n * d * 4) {
    throw new Error(`${file}: payload is ${raw.length - 20} bytes, expected ${n * d * 4}`);
  }
  const data = new Float32Array(n * d);
  for (let i = 0; i < n * d; i++) {
    data[i] = raw.readFloatLE(20 + i * 4);
  }
  return { n, d, data };
}

export function readLabels(file: string): number[] {
  const raw = fs.readFileSync(file);
  if (raw.subarray(0, 4).toString("ascii") !== LABEL_MAGIC) {
    throw new Error(`${file}: bad magic`);
  }
  const n = Number(raw.readBigUInt64LE(8));
  const labels: number[] = [];
  for (let i = 0; i < n; i++) {
    labels.push(raw.readUInt32LE(16 + i * 4));
  }
  return labels;
}
