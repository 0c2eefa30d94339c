/**
 * Dual encoders: one interface, two modalities, one shared output space.
 *
 * The built-in `dev-proj-<D>` encoder is a deterministic stand-in for a
 * pretrained vision-language model: it reduces an image to fixed pixel
 * statistics (pooled grayscale thumbnail, channel histograms, channel
 * moments) and a text to a hashed bag of byte n-grams, then applies a
 * frozen pseudo-random projection keyed by the encoder name into D
 * dimensions. It is fully offline and byte-reproducible, which is what the
 * pipeline tests need; it does NOT semantically align the two modalities,
 * so zero-shot transfer requires plugging in a real model behind the same
 * interface.
 */

import * as crypto from "node:crypto";

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel, row-major */
  pixels: Uint8Array;
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  /** identifies the exact preprocessing recipe baked into the features */
  readonly preprocessId: string;
  encodeImage(image: DecodedImage): Float32Array;
  encodeText(text: string): Float32Array;
}

const THUMB = 8; // pooled grayscale thumbnail is THUMB x THUMB
const HIST_BINS = 16; // per-channel intensity histogram bins
const IMAGE_DESC_DIM = THUMB * THUMB + 3 * HIST_BINS + 6;
const TEXT_BUCKETS = 256; // hashed n-gram vocabulary size

/** xorshift128+ seeded from a SHA-256 of the key; uniform in [-1, 1). */
function projectionRow(key: string, length: number, scale: number): Float64Array {
  const seed = crypto.createHash("sha256").update(key).digest();
  let s0 = seed.readBigUInt64LE(0) | 1n;
  let s1 = seed.readBigUInt64LE(8) | 1n;
  const mask = (1n << 64n) - 1n;
  const row = new Float64Array(length);
  for (let i = 0; i < length; i++) {
    let x = s0;
    const y = s1;
    s0 = y;
    x = (x ^ (x << 23n)) & mask;
    x ^= x >> 17n;
    x ^= y ^ (y >> 26n);
    s1 = x;
    const value = Number(((x + y) & mask) >> 11n) / 2 ** 53; // [0, 1)
    row[i] = (2 * value - 1) * scale;
  }
  return row;
}

class ProjectionEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  readonly preprocessId = `thumb${THUMB}x${THUMB}-hist${HIST_BINS}-ngram3x${TEXT_BUCKETS}-v2`;

  private imageRows: Float64Array[];
  private textRows: Float64Array[];

  constructor(name: string, dim: number) {
    this.name = name;
    this.dim = dim;
    // fixed per-modality gains keep typical output norms O(1); tiny-norm
    // features would make cosine gradients blow up downstream
    const imageScale = 1 / Math.sqrt(IMAGE_DESC_DIM);
    const textScale = 4 / Math.sqrt(TEXT_BUCKETS);
    this.imageRows = [];
    this.textRows = [];
    for (let i = 0; i < dim; i++) {
      this.imageRows.push(projectionRow(`${name}:image:${i}`, IMAGE_DESC_DIM, imageScale));
      this.textRows.push(projectionRow(`${name}:text:${i}`, TEXT_BUCKETS, textScale));
    }
  }

  encodeImage(image: DecodedImage): Float32Array {
    const desc = imageDescriptor(image);
    return this.project(desc, this.imageRows);
  }

  encodeText(text: string): Float32Array {
    const desc = textDescriptor(text);
    return this.project(desc, this.textRows);
  }

  private project(desc: Float64Array, rows: Float64Array[]): Float32Array {
    const out = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      const row = rows[i];
      let acc = 0;
      for (let j = 0; j < desc.length; j++) {
        acc += row[j] * desc[j];
      }
      out[i] = Math.fround(acc);
    }
    return out;
  }
}

export function imageDescriptor(image: DecodedImage): Float64Array {
  const { width, height, pixels } = image;
  if (width < 1 || height < 1 || pixels.length < width * height * 4) {
    throw new Error(`malformed decoded image (${width}x${height}, ${pixels.length} bytes)`);
  }
  const desc = new Float64Array(IMAGE_DESC_DIM);

  // average-pooled grayscale thumbnail
  const sums = new Float64Array(THUMB * THUMB);
  const counts = new Float64Array(THUMB * THUMB);
  for (let y = 0; y < height; y++) {
    const ty = Math.min(THUMB - 1, Math.floor((y * THUMB) / height));
    for (let x = 0; x < width; x++) {
      const tx = Math.min(THUMB - 1, Math.floor((x * THUMB) / width));
      const px = (y * width + x) * 4;
      const gray = (pixels[px] + pixels[px + 1] + pixels[px + 2]) / 3;
      sums[ty * THUMB + tx] += gray;
      counts[ty * THUMB + tx] += 1;
    }
  }
  for (let cell = 0; cell < THUMB * THUMB; cell++) {
    desc[cell] = counts[cell] > 0 ? sums[cell] / counts[cell] / 255 : 0;
  }

  // per-channel histograms and moments
  const total = width * height;
  const histBase = THUMB * THUMB;
  const momentBase = histBase + 3 * HIST_BINS;
  for (let channel = 0; channel < 3; channel++) {
    let mean = 0;
    for (let p = 0; p < total; p++) {
      const value = pixels[p * 4 + channel];
      const bin = Math.min(HIST_BINS - 1, Math.floor((value * HIST_BINS) / 256));
      desc[histBase + channel * HIST_BINS + bin] += 1 / total;
      mean += value / 255;
    }
    mean /= total;
    let variance = 0;
    for (let p = 0; p < total; p++) {
      const value = pixels[p * 4 + channel] / 255;
      variance += (value - mean) ** 2;
    }
    desc[momentBase + channel * 2] = mean;
    desc[momentBase + channel * 2 + 1] = Math.sqrt(variance / total);
  }
  return desc;
}

export function textDescriptor(text: string): Float64Array {
  const desc = new Float64Array(TEXT_BUCKETS);
  const bytes = Buffer.from(text.normalize("NFC").toLowerCase(), "utf-8");
  for (let n = 1; n <= 3; n++) {
    for (let i = 0; i + n <= bytes.length; i++) {
      // FNV-1a over the n-gram bytes, salted per n
      let hash = 0x811c9dc5 ^ n;
      for (let k = 0; k < n; k++) {
        hash ^= bytes[i + k];
        hash = Math.imul(hash, 0x01000193) >>> 0;
      }
      desc[hash % TEXT_BUCKETS] += 1;
    }
  }
  let norm = 0;
  for (let b = 0; b < TEXT_BUCKETS; b++) {
    norm += desc[b] * desc[b];
  }
  norm = Math.sqrt(norm);
  if (norm > 0) {
    for (let b = 0; b < TEXT_BUCKETS; b++) {
      desc[b] /= norm;
    }
  }
  return desc;
}

const DEV_NAME = /^dev-proj-(\d+)$/;

/**
 * Resolve an encoder by name. Built in: `dev-proj-<D>` (e.g. dev-proj-512).
 * Real vision-language backbones plug in by implementing {@link Encoder}
 * and extending this registry.
 */
export function createEncoder(name: string): Encoder {
  const match = DEV_NAME.exec(name);
  if (match) {
    const dim = Number(match[1]);
    if (dim < 1 || dim > 65536) {
      throw new Error(`encoder ${name}: dimension out of range`);
    }
    return new ProjectionEncoder(name, dim);
  }
  throw new Error(
    `unknown encoder ${JSON.stringify(name)}; built-in encoders match dev-proj-<dim>`
  );
}
