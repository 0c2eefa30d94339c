/**
 * Class-folder walking and image decoding.
 *
 * The image root holds one subdirectory per class; sorted directory names
 * define the class ordering used everywhere downstream. PNG and JPEG files
 * are decoded to RGBA; anything that fails to decode is skipped with a
 * warning rather than aborting the run.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import * as jpeg from "jpeg-js";
import { PNG } from "pngjs";

import { DecodedImage } from "./encoder";

const IMAGE_EXTENSIONS = new Set([".png", ".jpg", ".jpeg"]);

export function listClassDirs(root: string): string[] {
  if (!fs.existsSync(root) || !fs.statSync(root).isDirectory()) {
    throw new Error(`image root is not a directory: ${root}`);
  }
  const classes = fs
    .readdirSync(root, { withFileTypes: true })
    .filter((entry) => entry.isDirectory())
    .map((entry) => entry.name)
    .sort();
  if (classes.length === 0) {
    throw new Error(`image root has no class subdirectories: ${root}`);
  }
  return classes;
}

export function listImageFiles(dir: string): string[] {
  return fs
    .readdirSync(dir, { withFileTypes: true })
    .filter((entry) => entry.isFile() && IMAGE_EXTENSIONS.has(path.extname(entry.name).toLowerCase()))
    .map((entry) => path.join(dir, entry.name))
    .sort();
}

export function decodeImage(file: string): DecodedImage {
  const raw = fs.readFileSync(file);
  const ext = path.extname(file).toLowerCase();
  if (ext === ".png") {
    const png = PNG.sync.read(raw);
    return { width: png.width, height: png.height, pixels: png.data };
  }
  const decoded = jpeg.decode(raw, { useTArray: true, formatAsRGBA: true });
  return { width: decoded.width, height: decoded.height, pixels: decoded.data };
}
