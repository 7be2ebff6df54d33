/**
 * Weight-free monocular inverse-depth proxy.
 *
 * Combines a ground-plane position prior (lower image rows are closer in
 * typical forward-facing footage) with local contrast (in-focus regions
 * tend to be nearer). The output is a relative inverse-depth map: larger
 * values mean closer to the camera, which is the orientation the dataset
 * pipeline expects. Values are finite and positive for any input.
 */

import { GrayImage } from "./formats.js";

export interface VerticalPriorOptions {
  positionWeight?: number;
  contrastWeight?: number;
  /** Floor added everywhere so the map never reaches zero. */
  base?: number;
  contrastRadius?: number;
}

const DEFAULTS: Required<VerticalPriorOptions> = {
  positionWeight: 0.7,
  contrastWeight: 0.2,
  base: 0.1,
  contrastRadius: 3,
};

function localContrast(img: GrayImage, radius: number): Float32Array {
  const { width: w, height: h, data } = img;
  const out = new Float32Array(w * h);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const lo_y = Math.max(0, y - radius);
      const hi_y = Math.min(h - 1, y + radius);
      const lo_x = Math.max(0, x - radius);
      const hi_x = Math.min(w - 1, x + radius);
      let sum = 0;
      let sumSq = 0;
      let n = 0;
      for (let yy = lo_y; yy <= hi_y; yy++) {
        for (let xx = lo_x; xx <= hi_x; xx++) {
          const s = data[yy * w + xx];
          sum += s;
          sumSq += s * s;
          n += 1;
        }
      }
      const mean = sum / n;
      out[y * w + x] = Math.sqrt(Math.max(0, sumSq / n - mean * mean));
    }
  }
  return out;
}

export function verticalPriorDepth(img: GrayImage,
                                   options: VerticalPriorOptions = {}): Float32Array {
  const opts = { ...DEFAULTS, ...options };
  const { width: w, height: h } = img;
  const contrast = localContrast(img, opts.contrastRadius);
  let maxContrast = 0;
  for (let i = 0; i < contrast.length; i++) {
    if (contrast[i] > maxContrast) maxContrast = contrast[i];
  }
  const denom = maxContrast > 0 ? maxContrast : 1;
  const out = new Float32Array(w * h);
  const rows = h > 1 ? h - 1 : 1;
  for (let y = 0; y < h; y++) {
    const position = y / rows;
    for (let x = 0; x < w; x++) {
      const i = y * w + x;
      out[i] = opts.base
        + opts.positionWeight * position
        + opts.contrastWeight * (contrast[i] / denom);
    }
  }
  return out;
}

export function uniformDepth(img: GrayImage): Float32Array {
  return new Float32Array(img.width * img.height).fill(1);
}
