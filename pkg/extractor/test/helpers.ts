import { mkdirSync, writeFileSync } from 'fs';
import { join } from 'path';
import { PNG } from 'pngjs';
import * as tf from '@tensorflow/tfjs';

import { Rng } from '../src/rng.js';
import { saveModel } from '../src/modelio.js';

export const IMG_SIZE = 32;
export const N_CLASSES = 5;

export async function buildTestModel(dir: string): Promise<tf.LayersModel> {
  const model = tf.sequential();
  model.add(
    tf.layers.conv2d({
      inputShape: [IMG_SIZE, IMG_SIZE, 3],
      filters: 6,
      kernelSize: 3,
      activation: 'relu',
      kernelInitializer: tf.initializers.glorotUniform({ seed: 7 }),
      biasInitializer: 'zeros',
    }),
  );
  model.add(tf.layers.maxPooling2d({ poolSize: 2 }));
  model.add(tf.layers.flatten());
  model.add(
    tf.layers.dense({
      units: N_CLASSES,
      kernelInitializer: tf.initializers.glorotUniform({ seed: 11 }),
      biasInitializer: 'zeros',
    }),
  );
  await saveModel(model, dir);
  return model;
}

export interface PixelImage {
  name: string;
  label: number;
  pixels: Uint8Array; // RGB, row-major
}

export function randomImages(count: number, seed: number): PixelImage[] {
  const rng = new Rng(seed, 'test-images');
  const images: PixelImage[] = [];
  for (let i = 0; i < count; i++) {
    const pixels = new Uint8Array(IMG_SIZE * IMG_SIZE * 3);
    for (let p = 0; p < pixels.length; p++) pixels[p] = rng.int(0, 255);
    images.push({ name: `img_${i}.png`, label: i % N_CLASSES, pixels });
  }
  return images;
}

export function flipImage(image: PixelImage): PixelImage {
  const flipped = new Uint8Array(image.pixels.length);
  for (let y = 0; y < IMG_SIZE; y++) {
    for (let x = 0; x < IMG_SIZE; x++) {
      const src = (y * IMG_SIZE + x) * 3;
      const dst = (y * IMG_SIZE + (IMG_SIZE - 1 - x)) * 3;
      flipped[dst] = image.pixels[src];
      flipped[dst + 1] = image.pixels[src + 1];
      flipped[dst + 2] = image.pixels[src + 2];
    }
  }
  return { ...image, pixels: flipped };
}

export function writeDataset(dir: string, images: PixelImage[]): void {
  mkdirSync(dir, { recursive: true });
  const lines = ['path,label'];
  for (const image of images) {
    const png = new PNG({ width: IMG_SIZE, height: IMG_SIZE });
    for (let i = 0; i < IMG_SIZE * IMG_SIZE; i++) {
      png.data[i * 4] = image.pixels[i * 3];
      png.data[i * 4 + 1] = image.pixels[i * 3 + 1];
      png.data[i * 4 + 2] = image.pixels[i * 3 + 2];
      png.data[i * 4 + 3] = 255;
    }
    writeFileSync(join(dir, image.name), PNG.sync.write(png));
    lines.push(`${image.name},${image.label}`);
  }
  writeFileSync(join(dir, 'labels.csv'), lines.join('\n') + '\n');
}

export function imageToTensor(image: PixelImage): tf.Tensor3D {
  const floats = new Float32Array(image.pixels.length);
  for (let i = 0; i < image.pixels.length; i++) floats[i] = image.pixels[i] / 255;
  return tf.tensor3d(floats, [IMG_SIZE, IMG_SIZE, 3]);
}
