import * as fs from "node:fs";
import * as path from "node:path";

import * as jpeg from "jpeg-js";
import { PNG } from "pngjs";

/** tiny deterministic PRNG so test images are stable across runs */
export function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

export function writePng(
  file: string,
  width: number,
  height: number,
  base: [number, number, number],
  seed: number
): void {
  const png = new PNG({ width, height });
  const rand = lcg(seed);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const noisy = base[c] + Math.floor(rand() * 40) - 20;
      png.data[i * 4 + c] = Math.max(0, Math.min(255, noisy));
    }
    png.data[i * 4 + 3] = 255;
  }
  fs.writeFileSync(file, PNG.sync.write(png));
}

export function writeJpeg(
  file: string,
  width: number,
  height: number,
  base: [number, number, number],
  seed: number
): void {
  const data = Buffer.alloc(width * height * 4);
  const rand = lcg(seed);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const noisy = base[c] + Math.floor(rand() * 40) - 20;
      data[i * 4 + c] = Math.max(0, Math.min(255, noisy));
    }
    data[i * 4 + 3] = 255;
  }
  fs.writeFileSync(file, jpeg.encode({ data, width, height }, 90).data);
}

export interface TreeSpec {
  [className: string]: { color: [number, number, number]; count: number };
}

/** one subdirectory per class, PNG images with class-specific colors */
export function buildImageTree(root: string, spec: TreeSpec): void {
  let seed = 1;
  for (const [name, { color, count }] of Object.entries(spec)) {
    const dir = path.join(root, name);
    fs.mkdirSync(dir, { recursive: true });
    for (let i = 0; i < count; i++) {
      writePng(path.join(dir, `img_${String(i).padStart(2, "0")}.png`), 16, 16, color, seed++);
    }
  }
}

export function writePromptFile(file: string, prompts: Record<string, string[]>): void {
  fs.writeFileSync(file, JSON.stringify(prompts, null, 2));
}

export function snapshotDir(dir: string): Map<string, Buffer> {
  const out = new Map<string, Buffer>();
  const walk = (sub: string) => {
    for (const entry of fs.readdirSync(sub, { withFileTypes: true })) {
      const full = path.join(sub, entry.name);
      if (entry.isDirectory()) {
        walk(full);
      } else {
        out.set(path.relative(dir, full), fs.readFileSync(full));
      }
    }
  };
  walk(dir);
  return out;
}

export function sameSnapshots(a: Map<string, Buffer>, b: Map<string, Buffer>): boolean {
  if (a.size !== b.size) return false;
  for (const [name, bytes] of a) {
    const other = b.get(name);
    if (other === undefined || !bytes.equals(other)) return false;
  }
  return true;
}
