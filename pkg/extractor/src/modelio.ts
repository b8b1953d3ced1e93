/**
 * Disk persistence for tfjs LayersModels without the native node backend:
 * a model directory holds model.json (topology + weight specs) and
 * weights.bin (raw little-endian weight data).
 */

import { mkdirSync, readFileSync, writeFileSync } from 'fs';
import { join } from 'path';
import * as tf from '@tensorflow/tfjs';

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  mkdirSync(dir, { recursive: true });
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const { weightData, ...rest } = artifacts;
      writeFileSync(
        join(dir, 'model.json'),
        JSON.stringify({
          modelTopology: rest.modelTopology,
          weightSpecs: rest.weightSpecs,
          format: rest.format,
          generatedBy: rest.generatedBy,
        }),
      );
      const data = weightData as ArrayBuffer;
      writeFileSync(join(dir, 'weights.bin'), Buffer.from(data));
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
    }),
  );
}

export async function loadModel(dir: string): Promise<tf.LayersModel> {
  const meta = JSON.parse(readFileSync(join(dir, 'model.json'), 'utf-8'));
  const weights = readFileSync(join(dir, 'weights.bin'));
  const weightData = weights.buffer.slice(
    weights.byteOffset,
    weights.byteOffset + weights.byteLength,
  );
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: meta.modelTopology,
      weightSpecs: meta.weightSpecs,
      weightData,
    }),
  );
}

export interface ModelShape {
  height: number;
  width: number;
  channels: number;
  classes: number;
}

export function modelShape(model: tf.LayersModel): ModelShape {
  const input = model.inputs[0].shape; // [null, H, W, C]
  const output = model.outputs[0].shape;
  if (input.length !== 4) throw new Error(`expected image input, got shape ${input}`);
  return {
    height: input[1] as number,
    width: input[2] as number,
    channels: input[3] as number,
    classes: output[output.length - 1] as number,
  };
}
