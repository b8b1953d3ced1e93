import * as tf from '@tensorflow/tfjs';
import { describe, expect, it } from 'vitest';

import { buildPolicy, policySize } from '../src/augment.js';
import { Rng } from '../src/rng.js';
import { encodeTtac, readTtac, writeTtac } from '../src/ttac.js';
import { mkdtempSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';

function testImage(seed = 1): tf.Tensor3D {
  const rng = new Rng(seed, 'aug-test');
  const data = new Float32Array(16 * 16 * 3);
  for (let i = 0; i < data.length; i++) data[i] = rng.next();
  return tf.tensor3d(data, [16, 16, 3]);
}

function maxAbsDiff(a: tf.Tensor, b: tf.Tensor): number {
  return tf.tidy(() => a.sub(b).abs().max().dataSync()[0]);
}

describe('policies', () => {
  it('have identity first and the documented sizes', () => {
    expect(policySize('simple')).toBe(3);
    expect(policySize('expanded')).toBe(13);
    for (const name of ['simple', 'expanded'] as const) {
      const policy = buildPolicy(name);
      expect(policy[0].name).toBe('identity');
      expect(new Set(policy.map((a) => a.name)).size).toBe(policy.length);
    }
  });

  it('expanded policy lists the twelve named augmentations', () => {
    const names = buildPolicy('expanded').map((a) => a.name);
    for (const required of [
      'increase-sharpness', 'decrease-sharpness', 'autocontrast', 'invert',
      'blur', 'posterize', 'shear', 'translate', 'color-jitter',
      'random-crop', 'horizontal-flip', 'random-rotation',
    ]) {
      expect(names).toContain(required);
    }
  });
});

describe('augmentation behavior', () => {
  const byName = Object.fromEntries(buildPolicy('expanded').map((a) => [a.name, a]));

  it('identity is a no-op', () => {
    const x = testImage();
    expect(maxAbsDiff(byName['identity'].apply(x, {}), x)).toBe(0);
  });

  it('horizontal flip is an involution', () => {
    const x = testImage();
    const once = byName['horizontal-flip'].apply(x, {});
    const twice = byName['horizontal-flip'].apply(once, {});
    expect(maxAbsDiff(twice, x)).toBe(0);
  });

  it('invert is an involution', () => {
    const x = testImage();
    const twice = byName['invert'].apply(byName['invert'].apply(x, {}), {});
    expect(maxAbsDiff(twice, x)).toBeLessThan(1e-7);
  });

  it('autocontrast stretches each channel to the full range', () => {
    const x = tf.tidy(() => testImage().mul(0.4).add(0.2)) as tf.Tensor3D;
    const out = byName['autocontrast'].apply(x, {});
    const lo = out.min([0, 1]).dataSync();
    const hi = out.max([0, 1]).dataSync();
    for (let c = 0; c < 3; c++) {
      expect(lo[c]).toBeCloseTo(0, 6);
      expect(hi[c]).toBeCloseTo(1, 6);
    }
  });

  it('posterize quantizes to 16 levels', () => {
    const out = byName['posterize'].apply(testImage(), {});
    const values = out.mul(255).dataSync();
    for (const v of values) expect(Math.abs(v / 16 - Math.round(v / 16))).toBeLessThan(1e-4);
  });

  it('stochastic samplers stay inside their documented ranges', () => {
    const rng = new Rng(5, 'ranges');
    for (let trial = 0; trial < 50; trial++) {
      const shear = byName['shear'].sample(rng, 16, 16);
      expect(Math.abs(shear.degrees)).toBeLessThanOrEqual(10);
      const translate = byName['translate'].sample(rng, 16, 16);
      expect(translate.fraction).toBeGreaterThanOrEqual(0);
      expect(translate.fraction).toBeLessThanOrEqual(0.1);
      const crop = byName['random-crop'].sample(rng, 16, 16);
      expect(crop.dy).toBeGreaterThanOrEqual(0);
      expect(crop.dy).toBeLessThanOrEqual(8);
    }
  });

  it('augmented views keep finite values in [0, 1] ranges where promised', () => {
    const x = testImage();
    for (const aug of buildPolicy('expanded')) {
      const params = aug.sample(new Rng(3, aug.name), 16, 16);
      const out = aug.apply(x, params);
      const data = out.dataSync();
      for (const v of data) expect(Number.isFinite(v)).toBe(true);
    }
  });
});

describe('ttac round trip', () => {
  it('writes and reads back the same tensor', () => {
    const dir = mkdtempSync(join(tmpdir(), 'ttac-rt-'));
    const path = join(dir, 'rt.ttac');
    const tensor = {
      augNames: ['identity', 'flip'],
      labels: Uint32Array.from([1, 0, 2]),
      logits: Float32Array.from(Array.from({ length: 3 * 2 * 4 }, (_, i) => i / 7)),
      nExamples: 3,
      nAugs: 2,
      nClasses: 4,
    };
    writeTtac(path, tensor);
    const loaded = readTtac(path);
    expect(loaded.augNames).toEqual(tensor.augNames);
    expect(Array.from(loaded.labels)).toEqual(Array.from(tensor.labels));
    expect(Array.from(loaded.logits)).toEqual(Array.from(tensor.logits));
  });

  it('rejects inconsistent dimensions', () => {
    expect(() =>
      encodeTtac({
        augNames: ['identity'],
        labels: Uint32Array.from([0]),
        logits: new Float32Array(3),
        nExamples: 1,
        nAugs: 1,
        nClasses: 4,
      }),
    ).toThrow(/mismatch/);
  });
});
