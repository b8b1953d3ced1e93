/**
 * Core extraction: run the classifier over every image under every
 * augmentation in the policy and collect pre-softmax logits.
 *
 * Row 0 of each example is the un-augmented forward pass, computed as its
 * own single-image predict() call so it is bit-identical to running the
 * model directly. Stochastic augmentation parameters are sampled once per
 * (image, augmentation) from seed-derived streams and recorded in a
 * sidecar manifest next to the output file.
 */

import { writeFileSync } from 'fs';
import { join } from 'path';
import * as tf from '@tensorflow/tfjs';

import { Augmentation, AugParams, PolicyName, buildPolicy, policyParameters } from './augment.js';
import { DatasetEntry, loadImage, loadManifest } from './dataset.js';
import { loadModel, modelShape } from './modelio.js';
import { Rng } from './rng.js';
import { writeTtac } from './ttac.js';

export interface ExtractOptions {
  modelDir: string;
  dataDir: string;
  policy: PolicyName;
  seed: number;
  outPath: string;
}

export interface ExtractManifest {
  format: string;
  model: string;
  data: string;
  policy: PolicyName;
  policy_params: Record<string, unknown>;
  seed: number;
  input: { height: number; width: number; channels: number; classes: number };
  aug_names: string[];
  n_examples: number;
  skipped: string[];
  /** stochastic params per kept example, keyed by augmentation name */
  stochastic_params: Array<Record<string, AugParams>>;
}

function toModelInput(view: tf.Tensor3D, height: number, width: number): tf.Tensor3D {
  if (view.shape[0] === height && view.shape[1] === width) return view;
  const resized = tf.image.resizeBilinear(view, [height, width]);
  view.dispose();
  return resized as tf.Tensor3D;
}

export async function extract(options: ExtractOptions): Promise<ExtractManifest> {
  const model = await loadModel(options.modelDir);
  const shape = modelShape(model);
  const entries = loadManifest(options.dataDir);
  const badLabel = entries.find((e) => e.label >= shape.classes);
  if (badLabel) {
    throw new Error(
      `label ${badLabel.label} for ${badLabel.path} exceeds model classes (${shape.classes})`,
    );
  }
  const policy = buildPolicy(options.policy);
  const augNames = policy.map((a) => a.name);

  const kept: DatasetEntry[] = [];
  const skipped: string[] = [];
  const allParams: Array<Record<string, AugParams>> = [];
  const logitRows: Float32Array[] = [];

  for (let index = 0; index < entries.length; index++) {
    const entry = entries[index];
    let image: tf.Tensor3D;
    try {
      image = loadImage(join(options.dataDir, entry.path));
    } catch {
      skipped.push(entry.path);
      continue;
    }
    const params = samplePolicyParams(policy, options.seed, index, image.shape);
    logitRows.push(forwardAllViews(model, image, policy, params, shape));
    allParams.push(params);
    kept.push(entry);
    image.dispose();
  }
  if (kept.length === 0) throw new Error('every image failed to load');

  const n = kept.length;
  const m = policy.length;
  const k = shape.classes;
  const logits = new Float32Array(n * m * k);
  logitRows.forEach((row, i) => logits.set(row, i * m * k));
  writeTtac(options.outPath, {
    augNames,
    labels: Uint32Array.from(kept.map((e) => e.label)),
    logits,
    nExamples: n,
    nAugs: m,
    nClasses: k,
  });

  const manifest: ExtractManifest = {
    format: 'ttac-extract-manifest-v1',
    model: options.modelDir,
    data: options.dataDir,
    policy: options.policy,
    policy_params: policyParameters(options.policy),
    seed: options.seed,
    input: shape,
    aug_names: augNames,
    n_examples: n,
    skipped,
    stochastic_params: allParams,
  };
  writeFileSync(manifestPath(options.outPath), JSON.stringify(manifest, null, 2) + '\n');
  return manifest;
}

export function manifestPath(outPath: string): string {
  return `${outPath}.manifest.json`;
}

function samplePolicyParams(
  policy: Augmentation[],
  seed: number,
  imageIndex: number,
  shape: number[],
): Record<string, AugParams> {
  const params: Record<string, AugParams> = {};
  for (const aug of policy) {
    if (!aug.stochastic) continue;
    const rng = new Rng(seed, `img:${imageIndex}/aug:${aug.name}`);
    params[aug.name] = aug.sample(rng, shape[0], shape[1]);
  }
  return params;
}

function forwardAllViews(
  model: tf.LayersModel,
  image: tf.Tensor3D,
  policy: Augmentation[],
  params: Record<string, AugParams>,
  shape: { height: number; width: number; classes: number },
): Float32Array {
  const m = policy.length;
  const k = shape.classes;
  const out = new Float32Array(m * k);

  // identity row: a plain single-image forward pass
  const identityLogits = tf.tidy(() => {
    const input = image.expandDims(0) as tf.Tensor4D;
    return model.predict(input) as tf.Tensor2D;
  });
  out.set(identityLogits.dataSync() as Float32Array, 0);
  identityLogits.dispose();

  for (let a = 1; a < m; a++) {
    const aug = policy[a];
    const logits = tf.tidy(() => {
      const view = aug.apply(image, params[aug.name] ?? {});
      const sized = toModelInput(view, shape.height, shape.width);
      const input = sized.expandDims(0) as tf.Tensor4D;
      return model.predict(input) as tf.Tensor2D;
    });
    out.set(logits.dataSync() as Float32Array, a * k);
    logits.dispose();
  }
  return out;
}
