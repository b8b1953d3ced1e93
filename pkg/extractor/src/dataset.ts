/**
 * Labeled PNG datasets: a directory with a labels.csv manifest
 * (`relative/path.png,label` per line, optional `path,label` header).
 */

import { readFileSync } from 'fs';
import { join } from 'path';
import { PNG } from 'pngjs';
import * as tf from '@tensorflow/tfjs';

export interface DatasetEntry {
  path: string;
  label: number;
}

export function loadManifest(dataDir: string): DatasetEntry[] {
  const raw = readFileSync(join(dataDir, 'labels.csv'), 'utf-8');
  const entries: DatasetEntry[] = [];
  for (const line of raw.split('\n')) {
    const trimmed = line.trim();
    if (!trimmed || trimmed === 'path,label') continue;
    const comma = trimmed.lastIndexOf(',');
    if (comma < 0) throw new Error(`labels.csv: malformed line: ${trimmed}`);
    const label = Number(trimmed.slice(comma + 1));
    if (!Number.isInteger(label) || label < 0) {
      throw new Error(`labels.csv: bad label in line: ${trimmed}`);
    }
    entries.push({ path: trimmed.slice(0, comma), label });
  }
  if (entries.length === 0) throw new Error(`labels.csv in ${dataDir} lists no images`);
  return entries;
}

/** Decode a PNG into an (H, W, 3) float tensor scaled to [0, 1]. */
export function loadImage(filePath: string): tf.Tensor3D {
  const png = PNG.sync.read(readFileSync(filePath));
  const { width, height, data } = png; // RGBA bytes
  const pixels = new Float32Array(height * width * 3);
  for (let i = 0; i < height * width; i++) {
    pixels[i * 3] = data[i * 4] / 255;
    pixels[i * 3 + 1] = data[i * 4 + 1] / 255;
    pixels[i * 3 + 2] = data[i * 4 + 2] / 255;
  }
  return tf.tensor3d(pixels, [height, width, 3]);
}
