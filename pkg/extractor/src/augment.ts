/**
 * Test-time augmentation policies over [0,1] float images (H, W, C).
 *
 * simple: identity, random-crop (pad 4, crop back to the source
 * resolution), horizontal-flip.
 *
 * expanded: identity plus 12 augmentations: increase-sharpness (1.3),
 * decrease-sharpness (0.7), autocontrast, invert, blur (5x5 gaussian,
 * sigma in [0.1, 0.2]), posterize (4 bits), shear ([-10, 10] degrees),
 * translate (vertical fraction [0, 0.1]), color-jitter (brightness,
 * contrast, saturation factors in [0.9, 1.1]), random-crop,
 * horizontal-flip, random-rotation ([-10, 10] degrees).
 *
 * Stochastic parameters are sampled once per image from a per-(image,
 * augmentation) stream and recorded in the extraction manifest.
 */

import * as tf from '@tensorflow/tfjs';
import { Rng } from './rng.js';

export type AugParams = Record<string, number>;

export interface Augmentation {
  name: string;
  stochastic: boolean;
  sample(rng: Rng, height: number, width: number): AugParams;
  apply(image: tf.Tensor3D, params: AugParams): tf.Tensor3D;
}

export type PolicyName = 'simple' | 'expanded';

const CROP_PAD = 4;
/** expanded-policy random crop ends with a center crop at this ratio (224/256) */
const CENTER_CROP_RATIO = 224 / 256;

function noParams(): AugParams {
  return {};
}

/** output->input affine map [a0, a1, a2, b0, b1, b2, 0, 0] */
function affine(image: tf.Tensor3D, coeffs: number[]): tf.Tensor3D {
  return tf.tidy(() => {
    const batched = image.expandDims(0) as tf.Tensor4D;
    const transform = tf.tensor2d([coeffs], [1, 8]);
    const out = tf.image.transform(batched, transform, 'bilinear', 'constant', 0);
    return out.squeeze([0]) as tf.Tensor3D;
  });
}

const identity: Augmentation = {
  name: 'identity',
  stochastic: false,
  sample: noParams,
  apply: (image) => image.clone(),
};

const horizontalFlip: Augmentation = {
  name: 'horizontal-flip',
  stochastic: false,
  sample: noParams,
  apply: (image) => tf.tidy(() => tf.reverse(image, 1) as tf.Tensor3D),
};

function padAndCrop(image: tf.Tensor3D, dy: number, dx: number): tf.Tensor3D {
  return tf.tidy(() => {
    const [h, w] = image.shape;
    const padded = tf.pad(image, [[CROP_PAD, CROP_PAD], [CROP_PAD, CROP_PAD], [0, 0]]);
    return tf.slice(padded, [dy, dx, 0], [h, w, -1]) as tf.Tensor3D;
  });
}

function centerCrop(image: tf.Tensor3D, ratio: number): tf.Tensor3D {
  return tf.tidy(() => {
    const [h, w] = image.shape;
    const ch = Math.max(1, Math.round(h * ratio));
    const cw = Math.max(1, Math.round(w * ratio));
    const top = Math.floor((h - ch) / 2);
    const left = Math.floor((w - cw) / 2);
    return tf.slice(image, [top, left, 0], [ch, cw, -1]) as tf.Tensor3D;
  });
}

function randomCrop(keepResolution: boolean): Augmentation {
  return {
    name: 'random-crop',
    stochastic: true,
    sample: (rng) => ({
      dy: rng.int(0, 2 * CROP_PAD),
      dx: rng.int(0, 2 * CROP_PAD),
    }),
    apply: (image, params) => {
      const cropped = padAndCrop(image, params.dy, params.dx);
      if (keepResolution) return cropped;
      const centered = centerCrop(cropped, CENTER_CROP_RATIO);
      cropped.dispose();
      return centered;
    },
  };
}

const shear: Augmentation = {
  name: 'shear',
  stochastic: true,
  sample: (rng) => ({ degrees: rng.uniform(-10, 10) }),
  apply: (image, params) => {
    const k = Math.tan((params.degrees * Math.PI) / 180);
    const cy = (image.shape[0] - 1) / 2;
    return affine(image, [1, k, -k * cy, 0, 1, 0, 0, 0]);
  },
};

const translate: Augmentation = {
  name: 'translate',
  stochastic: true,
  sample: (rng) => ({ fraction: rng.uniform(0, 0.1) }),
  apply: (image, params) =>
    affine(image, [1, 0, 0, 0, 1, -params.fraction * image.shape[0], 0, 0]),
};

const randomRotation: Augmentation = {
  name: 'random-rotation',
  stochastic: true,
  sample: (rng) => ({ degrees: rng.uniform(-10, 10) }),
  apply: (image, params) => {
    const rad = (params.degrees * Math.PI) / 180;
    const cos = Math.cos(rad);
    const sin = Math.sin(rad);
    const cy = (image.shape[0] - 1) / 2;
    const cx = (image.shape[1] - 1) / 2;
    // rotate about the image center: input = R(-rad) . (output - c) + c
    return affine(image, [
      cos, sin, cx - cos * cx - sin * cy,
      -sin, cos, cy + sin * cx - cos * cy,
      0, 0,
    ]);
  },
};

const autocontrast: Augmentation = {
  name: 'autocontrast',
  stochastic: false,
  sample: noParams,
  apply: (image) =>
    tf.tidy(() => {
      // per-channel remap so the darkest pixel maps to 0, brightest to 1
      const lo = image.min([0, 1], true);
      const hi = image.max([0, 1], true);
      const span = hi.sub(lo);
      const safe = tf.where(span.greater(0), span, tf.onesLike(span));
      const scaled = image.sub(lo).div(safe);
      return tf.where(
        span.greater(0).broadcastTo(image.shape),
        scaled,
        image,
      ) as tf.Tensor3D;
    }),
};

const invert: Augmentation = {
  name: 'invert',
  stochastic: false,
  sample: noParams,
  apply: (image) => tf.tidy(() => tf.sub(1, image) as tf.Tensor3D),
};

function gaussianKernel(size: number, sigma: number): tf.Tensor4D {
  const half = Math.floor(size / 2);
  const values: number[] = [];
  let total = 0;
  for (let y = -half; y <= half; y++) {
    for (let x = -half; x <= half; x++) {
      const v = Math.exp(-(x * x + y * y) / (2 * sigma * sigma));
      values.push(v);
      total += v;
    }
  }
  return tf.tensor4d(values.map((v) => v / total), [size, size, 1, 1]);
}

function depthwiseSame(image: tf.Tensor3D, kernel2d: tf.Tensor4D): tf.Tensor3D {
  return tf.tidy(() => {
    const channels = image.shape[2];
    const kernel = kernel2d.tile([1, 1, channels, 1]) as tf.Tensor4D;
    const batched = image.expandDims(0) as tf.Tensor4D;
    return tf.depthwiseConv2d(batched, kernel, 1, 'same').squeeze([0]) as tf.Tensor3D;
  });
}

const blur: Augmentation = {
  name: 'blur',
  stochastic: true,
  sample: (rng) => ({ sigma: rng.uniform(0.1, 0.2) }),
  apply: (image, params) =>
    tf.tidy(() => depthwiseSame(image, gaussianKernel(5, params.sigma))),
};

const posterize: Augmentation = {
  name: 'posterize',
  stochastic: false,
  sample: noParams,
  apply: (image) =>
    tf.tidy(() => {
      // keep the 4 high bits of each 8-bit channel value
      const bytes = image.mul(255);
      return bytes.div(16).floor().mul(16).div(255) as tf.Tensor3D;
    }),
};

function luminance(image: tf.Tensor3D): tf.Tensor3D {
  return tf.tidy(() => {
    if (image.shape[2] !== 3) return image.mean(2, true) as tf.Tensor3D;
    const weights = tf.tensor1d([0.299, 0.587, 0.114]);
    return image.mul(weights).sum(2, true) as tf.Tensor3D;
  });
}

const colorJitter: Augmentation = {
  name: 'color-jitter',
  stochastic: true,
  sample: (rng) => ({
    brightness: rng.uniform(0.9, 1.1),
    contrast: rng.uniform(0.9, 1.1),
    saturation: rng.uniform(0.9, 1.1),
  }),
  apply: (image, params) =>
    tf.tidy(() => {
      let out = image.mul(params.brightness).clipByValue(0, 1) as tf.Tensor3D;
      const mean = luminance(out).mean();
      out = out.sub(mean).mul(params.contrast).add(mean).clipByValue(0, 1) as tf.Tensor3D;
      const gray = luminance(out);
      out = gray
        .mul(1 - params.saturation)
        .add(out.mul(params.saturation))
        .clipByValue(0, 1) as tf.Tensor3D;
      return out;
    }),
};

/** PIL-style sharpness: blend toward/away from a 3x3 smoothed image,
 *  leaving the one-pixel border untouched. */
function sharpness(name: string, factor: number): Augmentation {
  const smoothKernel = [1, 1, 1, 1, 5, 1, 1, 1, 1].map((v) => v / 13);
  return {
    name,
    stochastic: false,
    sample: noParams,
    apply: (image) =>
      tf.tidy(() => {
        const kernel = tf.tensor4d(smoothKernel, [3, 3, 1, 1]);
        const smooth = depthwiseSame(image, kernel);
        const blended = image.mul(factor).add(smooth.mul(1 - factor)).clipByValue(0, 1);
        const [h, w] = image.shape;
        if (h <= 2 || w <= 2) return image.clone();
        const interior = tf.pad(
          tf.ones([h - 2, w - 2, 1]),
          [[1, 1], [1, 1], [0, 0]],
        );
        return blended.mul(interior).add(image.mul(tf.sub(1, interior))) as tf.Tensor3D;
      }),
  };
}

export function buildPolicy(name: PolicyName): Augmentation[] {
  if (name === 'simple') {
    return [identity, randomCrop(true), horizontalFlip];
  }
  return [
    identity,
    sharpness('increase-sharpness', 1.3),
    sharpness('decrease-sharpness', 0.7),
    autocontrast,
    invert,
    blur,
    posterize,
    shear,
    translate,
    colorJitter,
    randomCrop(false),
    horizontalFlip,
    randomRotation,
  ];
}

export function policySize(name: PolicyName): number {
  return buildPolicy(name).length;
}

/** Fixed (non-sampled) parameters of a policy, for the extraction manifest. */
export function policyParameters(name: PolicyName): Record<string, unknown> {
  const crop = {
    pad: CROP_PAD,
    offset_range: [0, 2 * CROP_PAD],
    center_crop_ratio: name === 'expanded' ? CENTER_CROP_RATIO : null,
  };
  if (name === 'simple') {
    return { 'random-crop': crop };
  }
  return {
    'increase-sharpness': { factor: 1.3 },
    'decrease-sharpness': { factor: 0.7 },
    blur: { kernel_size: 5, sigma_range: [0.1, 0.2] },
    posterize: { bits: 4 },
    shear: { degrees_range: [-10, 10] },
    translate: { vertical_fraction_range: [0, 0.1] },
    'color-jitter': { factor_range: [0.9, 1.1] },
    'random-crop': crop,
    'random-rotation': { degrees_range: [-10, 10] },
  };
}
