/**
 * Dense pyramidal Lucas-Kanade optical flow.
 *
 * A classical coarse-to-fine estimator that needs no learned weights:
 * per pixel, the brightness-constancy normal equations are solved over a
 * box window of the structure tensor, iterated a few times per pyramid
 * level, with the coarse solution upsampled and rescaled into the finer
 * level. Identical input frames yield an exactly zero field (the temporal
 * derivative vanishes, so every update is zero).
 */

import { AdapterError, FlowResult, GrayImage } from "./formats.js";

export interface PyrLkOptions {
  /** Pyramid depth; 0 picks one from the image size (coarsest side >= 16). */
  levels?: number;
  /** Half-width of the integration window. */
  windowRadius?: number;
  /** Refinement iterations per level. */
  iterations?: number;
  /** Per-iteration update clamp in pixels, for stability on poor texture. */
  maxStep?: number;
}

const DEFAULTS: Required<PyrLkOptions> = {
  levels: 0,
  windowRadius: 4,
  iterations: 3,
  maxStep: 1.0,
};

function autoLevels(width: number, height: number): number {
  let levels = 1;
  let side = Math.min(width, height);
  while (side >= 32 && levels < 4) {
    side = Math.floor(side / 2);
    levels += 1;
  }
  return levels;
}

function downsample2(img: GrayImage): GrayImage {
  const w = Math.max(1, Math.floor(img.width / 2));
  const h = Math.max(1, Math.floor(img.height / 2));
  const out = new Float32Array(w * h);
  for (let y = 0; y < h; y++) {
    const y0 = 2 * y;
    const y1 = Math.min(2 * y + 1, img.height - 1);
    for (let x = 0; x < w; x++) {
      const x0 = 2 * x;
      const x1 = Math.min(2 * x + 1, img.width - 1);
      out[y * w + x] = 0.25 * (
        img.data[y0 * img.width + x0] + img.data[y0 * img.width + x1] +
        img.data[y1 * img.width + x0] + img.data[y1 * img.width + x1]
      );
    }
  }
  return { width: w, height: h, data: out };
}

function gradients(img: GrayImage): { ix: Float32Array; iy: Float32Array } {
  const { width: w, height: h, data } = img;
  const ix = new Float32Array(w * h);
  const iy = new Float32Array(w * h);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const xm = Math.max(0, x - 1);
      const xp = Math.min(w - 1, x + 1);
      const ym = Math.max(0, y - 1);
      const yp = Math.min(h - 1, y + 1);
      ix[y * w + x] = 0.5 * (data[y * w + xp] - data[y * w + xm]);
      iy[y * w + x] = 0.5 * (data[yp * w + x] - data[ym * w + x]);
    }
  }
  return { ix, iy };
}

/** Windowed sums with border-clamped extents via row/column prefix sums. */
function boxSum(src: Float32Array, w: number, h: number, r: number): Float32Array {
  const rows = new Float32Array(w * h);
  const prefix = new Float64Array(w + 1);
  for (let y = 0; y < h; y++) {
    prefix[0] = 0;
    for (let x = 0; x < w; x++) {
      prefix[x + 1] = prefix[x] + src[y * w + x];
    }
    for (let x = 0; x < w; x++) {
      const lo = Math.max(0, x - r);
      const hi = Math.min(w - 1, x + r);
      rows[y * w + x] = prefix[hi + 1] - prefix[lo];
    }
  }
  const out = new Float32Array(w * h);
  const colPrefix = new Float64Array(h + 1);
  for (let x = 0; x < w; x++) {
    colPrefix[0] = 0;
    for (let y = 0; y < h; y++) {
      colPrefix[y + 1] = colPrefix[y] + rows[y * w + x];
    }
    for (let y = 0; y < h; y++) {
      const lo = Math.max(0, y - r);
      const hi = Math.min(h - 1, y + r);
      out[y * w + x] = colPrefix[hi + 1] - colPrefix[lo];
    }
  }
  return out;
}

function sampleBilinear(data: Float32Array, w: number, h: number,
                        x: number, y: number): number {
  const cx = Math.min(Math.max(x, 0), w - 1);
  const cy = Math.min(Math.max(y, 0), h - 1);
  const x0 = Math.floor(cx);
  const y0 = Math.floor(cy);
  const x1 = Math.min(x0 + 1, w - 1);
  const y1 = Math.min(y0 + 1, h - 1);
  const fx = cx - x0;
  const fy = cy - y0;
  const top = (1 - fx) * data[y0 * w + x0] + fx * data[y0 * w + x1];
  const bot = (1 - fx) * data[y1 * w + x0] + fx * data[y1 * w + x1];
  return (1 - fy) * top + fy * bot;
}

function refineLevel(i1: GrayImage, i2: GrayImage, u: Float32Array, v: Float32Array,
                     opts: Required<PyrLkOptions>): void {
  const { width: w, height: h } = i1;
  const { ix, iy } = gradients(i1);
  const ixx = new Float32Array(w * h);
  const ixy = new Float32Array(w * h);
  const iyy = new Float32Array(w * h);
  for (let i = 0; i < w * h; i++) {
    ixx[i] = ix[i] * ix[i];
    ixy[i] = ix[i] * iy[i];
    iyy[i] = iy[i] * iy[i];
  }
  const r = opts.windowRadius;
  const sxx = boxSum(ixx, w, h, r);
  const sxy = boxSum(ixy, w, h, r);
  const syy = boxSum(iyy, w, h, r);

  const it = new Float32Array(w * h);
  const ixt = new Float32Array(w * h);
  const iyt = new Float32Array(w * h);
  for (let iter = 0; iter < opts.iterations; iter++) {
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const i = y * w + x;
        const warped = sampleBilinear(i2.data, w, h, x + u[i], y + v[i]);
        it[i] = warped - i1.data[i];
        ixt[i] = ix[i] * it[i];
        iyt[i] = iy[i] * it[i];
      }
    }
    const sxt = boxSum(ixt, w, h, r);
    const syt = boxSum(iyt, w, h, r);
    for (let i = 0; i < w * h; i++) {
      const det = sxx[i] * syy[i] - sxy[i] * sxy[i];
      if (det <= 1e-9) {
        continue;
      }
      let du = -(syy[i] * sxt[i] - sxy[i] * syt[i]) / det;
      let dv = -(sxx[i] * syt[i] - sxy[i] * sxt[i]) / det;
      du = Math.min(Math.max(du, -opts.maxStep), opts.maxStep);
      dv = Math.min(Math.max(dv, -opts.maxStep), opts.maxStep);
      u[i] += du;
      v[i] += dv;
    }
  }
}

function upsampleFlow(u: Float32Array, v: Float32Array, w: number, h: number,
                      newW: number, newH: number): { u: Float32Array; v: Float32Array } {
  const scaleX = newW / w;
  const scaleY = newH / h;
  const newU = new Float32Array(newW * newH);
  const newV = new Float32Array(newW * newH);
  for (let y = 0; y < newH; y++) {
    for (let x = 0; x < newW; x++) {
      const sx = (x + 0.5) / scaleX - 0.5;
      const sy = (y + 0.5) / scaleY - 0.5;
      newU[y * newW + x] = sampleBilinear(u, w, h, sx, sy) * scaleX;
      newV[y * newW + x] = sampleBilinear(v, w, h, sx, sy) * scaleY;
    }
  }
  return { u: newU, v: newV };
}

export function pyramidalLucasKanade(img1: GrayImage, img2: GrayImage,
                                     options: PyrLkOptions = {}): FlowResult {
  if (img1.width !== img2.width || img1.height !== img2.height) {
    throw new AdapterError(
      `frame sizes differ: ${img1.width}x${img1.height} vs ${img2.width}x${img2.height}`,
    );
  }
  const opts: Required<PyrLkOptions> = { ...DEFAULTS, ...options };
  const levels = opts.levels > 0 ? opts.levels : autoLevels(img1.width, img1.height);

  const pyr1: GrayImage[] = [img1];
  const pyr2: GrayImage[] = [img2];
  for (let l = 1; l < levels; l++) {
    pyr1.push(downsample2(pyr1[l - 1]));
    pyr2.push(downsample2(pyr2[l - 1]));
  }

  const coarse = pyr1[levels - 1];
  let u: Float32Array = new Float32Array(coarse.width * coarse.height);
  let v: Float32Array = new Float32Array(coarse.width * coarse.height);
  for (let l = levels - 1; l >= 0; l--) {
    refineLevel(pyr1[l], pyr2[l], u, v, opts);
    if (l > 0) {
      const finer = pyr1[l - 1];
      ({ u, v } = upsampleFlow(u, v, pyr1[l].width, pyr1[l].height,
                               finer.width, finer.height));
    }
  }
  return { width: img1.width, height: img1.height, u, v };
}
